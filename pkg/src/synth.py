# src/synth.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from src.densela import SymMatrix
from src.errors import InstanceError, PreconditionError
from src.lmo import ExplicitLmo, PolytopeLmo
from src.lp import LpProblem, feasibility_check
from src.model import Cut, ProblemInstance, QuadraticObjective


LOGGER = logging.getLogger(__name__)

UINT64_MASK = (1 << 64) - 1
DEFAULT_RESAMPLE_CAP = 100


def rng_for(seed: int, stream: int) -> np.random.Generator:
    """
    Counter-based generator keyed by (seed, stream).

    Streams are independent of the order in which they are drawn, so batches
    can be generated in parallel.
    """
    key = np.array([seed & UINT64_MASK, stream & UINT64_MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SynthSpec:
    """
    Random instance  min 1/2 ||x||^2 + max{x^T y + d : (y, d) in [-1, 1]^{n+1}, A y + c d <= b}.

    m defaults to max(1, n // 5).
    """
    n: int
    seed: int = 0
    resample_cap: int = DEFAULT_RESAMPLE_CAP
    m: Optional[int] = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise PreconditionError(f"n must be >= 1, got {self.n}")
        if self.resample_cap < 1:
            raise PreconditionError(f"resample_cap must be >= 1, got {self.resample_cap}")
        if self.m is None:
            object.__setattr__(self, "m", max(1, self.n // 5))
        elif self.m < 1:
            raise PreconditionError(f"m must be >= 1, got {self.m}")


def generate(spec: SynthSpec) -> ProblemInstance:
    """
    Draw A and c once from stream 0 and redraw b (streams 1, 2, ...) until
    the polytope is nonempty.

    Raises:
        InstanceError("could not generate feasible polytope") after resample_cap draws.
    """
    n, m = spec.n, int(spec.m)
    rng = rng_for(spec.seed, 0)
    A = rng.uniform(-1.0, 1.0, size=(m, n))
    c = rng.uniform(-1.0, 1.0, size=m)
    rows = np.hstack([A, c[:, None]])
    box_lo, box_hi = -np.ones(n + 1), np.ones(n + 1)

    for attempt in range(1, spec.resample_cap + 1):
        b = rng_for(spec.seed, attempt).uniform(-1.0, 1.0, size=m)
        if not feasibility_check(LpProblem(np.zeros(n + 1), rows, b, box_lo, box_hi)):
            LOGGER.debug("seed %d attempt %d: empty polytope, redrawing b", spec.seed, attempt)
            continue
        if attempt > 1:
            LOGGER.info("seed %d: feasible polytope after %d draws of b", spec.seed, attempt)
        return ProblemInstance(
            QuadraticObjective.identity(n),
            PolytopeLmo(rows, b, box_lo, box_hi),
            np.zeros(n),
            metadata={"generator": "synth", "n": n, "m": m, "seed": spec.seed, "attempts": attempt},
        )
    raise InstanceError("could not generate feasible polytope")


def random_explicit_instance(
    n: int,
    n_cuts: int,
    seed: int,
    mu: float = 1.0,
) -> ProblemInstance:
    """
    Q = M M^T / n + mu I, q and the cuts uniform on [-1, 1]; x0 = 0.

    mu > 0 makes g strongly convex (Kelley / FCFW instances).
    """
    if n < 1 or n_cuts < 1:
        raise PreconditionError(f"need n >= 1 and n_cuts >= 1, got n={n}, n_cuts={n_cuts}")
    if mu < 0:
        raise PreconditionError(f"mu must be >= 0, got {mu}")
    rng = rng_for(seed, 0)
    M = rng.uniform(-1.0, 1.0, size=(n, n))
    Q = M @ M.T / n + mu * np.eye(n)
    q = rng.uniform(-1.0, 1.0, size=n)
    V = rng.uniform(-1.0, 1.0, size=(n_cuts, n))
    b = rng.uniform(-1.0, 1.0, size=n_cuts)
    objective = QuadraticObjective(SymMatrix(0.5 * (Q + Q.T)), q)
    return ProblemInstance(
        objective,
        ExplicitLmo(Cut(v, bi) for v, bi in zip(V, b)),
        np.zeros(n),
        metadata={"generator": "random_explicit", "n": n, "n_cuts": n_cuts, "seed": seed, "mu": mu},
    )
