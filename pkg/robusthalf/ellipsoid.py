"""Central-cut ellipsoid method for convex feasibility with a separation oracle.

The ellipsoid is {v : (v - c)^T A^{-1} (v - c) <= 1}. ``Empty`` means no ball of
radius 2^-b * R0 fits in the target set (under the oracle contract), not that the
set is empty in exact arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field

from .config import settings
from .errors import NumericFailureError, ProtocolViolationError
from .perturbations import Hyperplane, Inside, SeparationOracle

logger = structlog.get_logger()

_JITTER = 1e-14


class FeasibilityConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    radius: float = Field(default=1.0, gt=0, description="R0, radius of the starting ball")
    bits: int = Field(default_factory=lambda: settings.PRECISION_BITS, ge=1)
    tol: float = Field(default_factory=lambda: settings.TOLERANCE, gt=0)

    def max_iterations(self, dim: int) -> int:
        return math.ceil(2 * dim * (dim + 1) * self.bits * math.log(2))

    @property
    def min_radius(self) -> float:
        return 2.0 ** -self.bits * self.radius


@dataclass(frozen=True)
class EllipsoidState:
    center: np.ndarray
    shape: np.ndarray

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def log_volume(self) -> float:
        """log det(A); the volume up to the unit-ball constant is sqrt(det A)."""
        sign, logdet = np.linalg.slogdet(self.shape)
        if sign <= 0:
            raise NumericFailureError("ellipsoid shape lost positive definiteness")
        return float(logdet)


@dataclass(frozen=True)
class SolverStats:
    iterations: int
    oracle_calls: int


@dataclass(frozen=True)
class Found:
    point: np.ndarray
    stats: SolverStats


@dataclass(frozen=True)
class Empty:
    reason: str
    stats: SolverStats


FeasibilityResult = Union[Found, Empty]
StepObserver = Callable[[int, EllipsoidState, EllipsoidState], None]


def _query(oracle: SeparationOracle, v: np.ndarray, iteration: int) -> Optional[np.ndarray]:
    """None if the oracle accepts v, else the cut direction."""
    res = oracle(v)
    if isinstance(res, Inside):
        return None
    if not isinstance(res, Hyperplane):
        raise ProtocolViolationError(f"oracle returned {type(res).__name__} at iteration {iteration}")
    return res.w


def central_cut(state: EllipsoidState, g: np.ndarray, iteration: int = 0) -> EllipsoidState:
    """Minimum-volume ellipsoid containing the half {v : <g, v> <= <g, c>}."""
    d = state.dim
    A = state.shape
    Ag = A @ g
    gAg = float(g @ Ag)
    if not math.isfinite(gAg) or gAg <= 0:
        raise NumericFailureError(f"degenerate cut (g^T A g = {gAg})", iteration=iteration)
    b = Ag / math.sqrt(gAg)
    center = state.center - b / (d + 1)
    shape = (d * d / (d * d - 1.0)) * (A - (2.0 / (d + 1)) * np.outer(b, b))
    shape = 0.5 * (shape + shape.T)
    floor = _JITTER * float(np.trace(shape))
    low = float(np.linalg.eigvalsh(shape)[0])
    if low < floor:
        shape = shape + (floor - low) * np.eye(d)
    if not (np.all(np.isfinite(center)) and np.all(np.isfinite(shape))):
        raise NumericFailureError("ellipsoid update produced non-finite values", iteration=iteration)
    return EllipsoidState(center, shape)


def _bisect(oracle: SeparationOracle, cfg: FeasibilityConfig, center: np.ndarray) -> FeasibilityResult:
    lo = float(center[0]) - cfg.radius
    hi = float(center[0]) + cfg.radius
    budget = cfg.max_iterations(1)
    calls = 0
    for it in range(budget):
        mid = np.array([(lo + hi) / 2.0])
        calls += 1
        g = _query(oracle, mid, it)
        if g is None:
            return Found(mid, SolverStats(it + 1, calls))
        if g[0] > 0:
            hi = float(mid[0])
        else:
            lo = float(mid[0])
        if hi - lo < 2.0 * cfg.min_radius:
            return Empty("interval below precision", SolverStats(it + 1, calls))
    return Empty("iteration budget exhausted", SolverStats(budget, calls))


def find_feasible(
    oracle: SeparationOracle,
    cfg: FeasibilityConfig,
    dim: int,
    center: Optional[np.ndarray] = None,
    observer: Optional[StepObserver] = None,
) -> FeasibilityResult:
    """Search B(center, R0) for a point the oracle accepts.

    ``observer`` is called after every update with (iteration, before, after).
    """
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=np.float64).copy()
    if dim == 1:
        return _bisect(oracle, cfg, c)

    state = EllipsoidState(c, cfg.radius**2 * np.eye(dim))
    budget = cfg.max_iterations(dim)
    floor = cfg.min_radius**2
    calls = 0
    for it in range(budget):
        calls += 1
        g = _query(oracle, state.center, it)
        if g is None:
            logger.debug("ellipsoid.found", dim=dim, iterations=it + 1)
            return Found(state.center, SolverStats(it + 1, calls))
        nxt = central_cut(state, g, it)
        if observer is not None:
            observer(it, state, nxt)
        state = nxt
        if np.trace(state.shape) < floor:
            logger.debug("ellipsoid.empty", dim=dim, iterations=it + 1, reason="volume")
            return Empty("ellipsoid below precision", SolverStats(it + 1, calls))
    logger.debug("ellipsoid.empty", dim=dim, iterations=budget, reason="budget")
    return Empty("iteration budget exhausted", SolverStats(budget, calls))
