from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from src.densela import SymMatrix
from src.errors import InstanceError
from src.lmo import BoxLmo, ExplicitLmo, LmoDescriptor, PolytopeLmo
from src.model import Cut, ProblemInstance, QuadraticObjective, ReferenceOpt


# Schema definition (fields of an instance JSON file)

REQUIRED_FIELDS = ["n", "Q", "q", "lmo", "x0"]
OPTIONAL_FIELDS = ["r", "reference_opt", "metadata"]

LMO_FIELDS: Dict[str, Dict[str, List[str]]] = {
    "explicit": {"required": ["cuts"], "optional": []},
    "box": {"required": ["half_width", "intercept_range"], "optional": []},
    "polytope": {"required": ["A", "b"], "optional": ["lower", "upper"]},
}


# ============================================================
# Validation helpers
# ============================================================

def _validate_fields(obj: Mapping[str, Any], required: List[str], optional: List[str], where: str) -> None:
    """
    Fail fast on missing or unknown fields.

    Raises:
        InstanceError naming every offending field.
    """
    if not isinstance(obj, Mapping):
        raise InstanceError(f"{where} must be a JSON object")
    missing = [k for k in required if k not in obj]
    if missing:
        raise InstanceError(f"{where} is missing required fields: {missing}")
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        raise InstanceError(f"{where} has unknown fields: {unknown}")


def _vector(value: Any, name: str, n: Optional[int] = None) -> np.ndarray:
    try:
        a = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"{name} must be a numeric array") from exc
    if a.ndim != 1:
        raise InstanceError(f"{name} must be a flat array, got shape {a.shape}")
    if n is not None and a.shape[0] != n:
        raise InstanceError(f"{name} has length {a.shape[0]}, expected {n}")
    return a


def _scalar(value: Any, name: str) -> float:
    if isinstance(value, bool):
        raise InstanceError(f"{name} must be a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"{name} must be a number, got {value!r}") from exc


def _matrix(value: Any, name: str) -> np.ndarray:
    try:
        a = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"{name} must be a numeric matrix") from exc
    if a.ndim != 2:
        raise InstanceError(f"{name} must be a list of rows, got shape {a.shape}")
    return a


# ============================================================
# Parsing (JSON dict -> domain objects)
# ============================================================

def parse_lmo(obj: Mapping[str, Any], n: int) -> LmoDescriptor:
    if not isinstance(obj, Mapping) or "variant" not in obj:
        raise InstanceError("lmo must be an object with a 'variant' field")
    variant = obj["variant"]
    if variant not in LMO_FIELDS:
        raise InstanceError(f"unknown lmo variant {variant!r}; expected one of {sorted(LMO_FIELDS)}")
    spec = LMO_FIELDS[variant]
    _validate_fields(obj, ["variant"] + spec["required"], spec["optional"], f"lmo ({variant})")

    if variant == "explicit":
        cuts = []
        for i, c in enumerate(obj["cuts"]):
            _validate_fields(c, ["v", "b"], [], f"lmo cut {i}")
            cuts.append(Cut(_vector(c["v"], f"cut {i} v", n), _scalar(c["b"], f"cut {i} b")))
        return ExplicitLmo(cuts)

    if variant == "box":
        hw = obj["half_width"]
        half_width = np.full(n, _scalar(hw, "half_width")) if np.isscalar(hw) else _vector(hw, "half_width", n)
        lo_hi = _vector(obj["intercept_range"], "intercept_range", 2)
        return BoxLmo(half_width, (lo_hi[0], lo_hi[1]))

    A = _matrix(obj["A"], "lmo A")
    if A.shape[1] != n + 1:
        raise InstanceError(f"lmo A has {A.shape[1]} columns, expected n + 1 = {n + 1}")
    lower = _vector(obj["lower"], "lmo lower", n + 1) if "lower" in obj else None
    upper = _vector(obj["upper"], "lmo upper", n + 1) if "upper" in obj else None
    return PolytopeLmo(A, _vector(obj["b"], "lmo b", A.shape[0]), lower, upper)


def parse_instance(raw: Mapping[str, Any]) -> ProblemInstance:
    """
    Build a ProblemInstance from a decoded JSON object.

    Field order is irrelevant; unknown fields are rejected. A polytope LMO is
    checked for nonemptiness here.
    """
    _validate_fields(raw, REQUIRED_FIELDS, OPTIONAL_FIELDS, "instance")
    n = raw["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise InstanceError(f"n must be a positive integer, got {n!r}")

    Q_raw = raw["Q"]
    if Q_raw == "identity":
        Q = np.eye(n)
    else:
        Q = _matrix(Q_raw, "Q")
        if Q.shape != (n, n):
            raise InstanceError(f"Q has shape {Q.shape}, expected ({n}, {n})")
    try:
        Qm = SymMatrix(Q)
    except ValueError as exc:
        raise InstanceError(f"invalid Q: {exc}") from exc
    objective = QuadraticObjective(Qm, _vector(raw["q"], "q", n), _scalar(raw.get("r", 0.0), "r"))

    lmo = parse_lmo(raw["lmo"], n)
    x0 = _vector(raw["x0"], "x0", n)

    ref = None
    if raw.get("reference_opt") is not None:
        ref = parse_reference(raw["reference_opt"], n)
    metadata = raw.get("metadata") or {}
    if not isinstance(metadata, Mapping):
        raise InstanceError("metadata must be a JSON object")
    return ProblemInstance(objective, lmo, x0, ref, dict(metadata))


def parse_reference(obj: Mapping[str, Any], n: int) -> ReferenceOpt:
    _validate_fields(obj, ["x_star", "h_star"], [], "reference_opt")
    return ReferenceOpt(_vector(obj["x_star"], "x_star", n), _scalar(obj["h_star"], "h_star"))


# ============================================================
# Serialisation (domain objects -> JSON dict)
# ============================================================

def lmo_to_dict(lmo: LmoDescriptor) -> Dict[str, Any]:
    if isinstance(lmo, ExplicitLmo):
        return {"variant": "explicit", "cuts": [{"v": c.v.tolist(), "b": c.b} for c in lmo.cuts]}
    if isinstance(lmo, BoxLmo):
        return {
            "variant": "box",
            "half_width": lmo.half_width.tolist(),
            "intercept_range": list(lmo.intercept_range),
        }
    if isinstance(lmo, PolytopeLmo):
        return {
            "variant": "polytope",
            "A": lmo.A.tolist(),
            "b": lmo.b.tolist(),
            "lower": lmo.lower.tolist(),
            "upper": lmo.upper.tolist(),
        }
    raise InstanceError(f"cannot serialise LMO of type {type(lmo).__name__}")


def instance_to_dict(instance: ProblemInstance) -> Dict[str, Any]:
    Q = instance.objective.Q.entries
    out: Dict[str, Any] = {
        "n": instance.n,
        "Q": "identity" if np.array_equal(Q, np.eye(instance.n)) else Q.tolist(),
        "q": instance.objective.q.tolist(),
        "r": instance.objective.r,
        "lmo": lmo_to_dict(instance.lmo),
        "x0": instance.x0.tolist(),
    }
    if instance.reference_opt is not None:
        out["reference_opt"] = reference_to_dict(instance.reference_opt)
    if instance.metadata:
        out["metadata"] = dict(instance.metadata)
    return out


def reference_to_dict(ref: ReferenceOpt) -> Dict[str, Any]:
    return {"x_star": ref.x_star.tolist(), "h_star": ref.h_star}


# ============================================================
# File IO
# ============================================================

def _read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path} is not valid JSON: {exc}") from exc


def load_instance(path: str | Path) -> ProblemInstance:
    """
    Load and validate an instance JSON file.

    Raises:
        FileNotFoundError if the file does not exist
        InstanceError on malformed content
    """
    return parse_instance(_read_json(path))


def save_instance(path: str | Path, instance: ProblemInstance) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(instance_to_dict(instance), indent=2), encoding="utf-8")
    return path


def load_reference(path: str | Path, n: int) -> ReferenceOpt:
    return parse_reference(_read_json(path), n)


def save_reference(path: str | Path, ref: ReferenceOpt) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(reference_to_dict(ref), indent=2), encoding="utf-8")
    return path


def reference_cache_path(instance_path: Optional[str | Path], out_dir: str | Path, tag: str) -> Path:
    """<stem>.ref.json beside an instance file, else <out_dir>/refs/<tag>.ref.json."""
    if instance_path is not None:
        p = Path(instance_path)
        return p.with_name(f"{p.stem}.ref.json")
    return Path(out_dir) / "refs" / f"{tag}.ref.json"


# Cached loader (instance + its reference optimum cache location)
@dataclass
class InstanceFile:
    """
    Loads and caches an instance file.

    Useful to avoid re-parsing (and re-checking polytope feasibility) when
    several commands touch the same file.
    """
    path: Path
    _instance: Optional[ProblemInstance] = None

    def load(self) -> "InstanceFile":
        self._instance = load_instance(self.path)
        return self

    @property
    def instance(self) -> ProblemInstance:
        if self._instance is None:
            raise RuntimeError("Instance not loaded. Call .load() first.")
        return self._instance

    @property
    def reference_path(self) -> Path:
        return reference_cache_path(self.path, self.path.parent, self.path.stem)


# Script-mode check of the bundled example instance
if __name__ == "__main__":
    root = Path(__file__).resolve().parents[1]
    f = InstanceFile(root / "data" / "one_dim.json").load()
    inst = f.instance

    print("\n--- Instance Summary ---")
    print(f"n: {inst.n}")
    print(f"LMO variant: {inst.lmo.variant}")
    print(f"L_g = {inst.objective.L_g}, mu_g = {inst.objective.mu_g}")
    print(f"x0: {inst.x0.tolist()}")
