"""Approximate separation for U(x) built from a robust-loss evaluator alone.

A query z far from U(x) is separated by a halfspace (w, b0) that labels all of U(x)
positive yet puts z on the negative side. Such halfspaces form the convex body

    K = {(w, b0) : <w, z'> + b0 > 0 for all z' in U(x)},

whose membership oracle is one evaluator call. The ellipsoid method searches the
unit ball for a point of (approximately) K with <(w, b0), (z, 1)> <= -gamma/2,
separating K with hyperplanes estimated from membership queries.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
import structlog
from scipy.linalg import null_space

from .certify import Counterexample, certify
from .core import Halfspace, LabeledExample, NormSpec, as_vector, dual_norm
from .ellipsoid import FeasibilityConfig, Found, find_feasible
from .errors import ConfigError, ProtocolViolationError
from .perturbations import INSIDE, Hyperplane, PerturbationSet, SeparationResult

logger = structlog.get_logger()

RobustLossEvaluator = Callable[[np.ndarray, float, np.ndarray, int], int]
MembershipOracle = Callable[[np.ndarray], bool]

# radial boundary searches stop at this fraction of the query scale
_RADIAL_PRECISION = 1e-4

# (0, ..., 0, b0) lies in K for every b0 > 0: the constant classifier labels all of U(x) positive
INTERIOR_OFFSET = 0.5


class CountingEvaluator:
    """Wraps an evaluator and counts its calls."""

    def __init__(self, evaluate: RobustLossEvaluator):
        self._evaluate = evaluate
        self.calls = 0

    def __call__(self, w: np.ndarray, b0: float, x: np.ndarray, y: int) -> int:
        self.calls += 1
        return int(self._evaluate(w, b0, x, y))


def lp_ball_evaluator(gamma: float, spec: NormSpec) -> RobustLossEvaluator:
    """Closed-form robust loss for x + {||delta||_p <= gamma}; w may be zero."""

    def evaluate(w: np.ndarray, b0: float, x: np.ndarray, y: int) -> int:
        worst = y * (float(np.dot(x, w)) + b0) - gamma * dual_norm(w, spec)
        return int(worst <= 0.0)

    return evaluate


def evaluator_from_adversary(adv: PerturbationSet, cfg: FeasibilityConfig | None = None, fast: bool = True) -> RobustLossEvaluator:
    """Robust loss through certification; the constant classifier w = 0 is handled directly."""

    def evaluate(w: np.ndarray, b0: float, x: np.ndarray, y: int) -> int:
        w = np.asarray(w, dtype=np.float64)
        if not np.any(w):
            return int(y * b0 <= 0.0)
        res = certify(adv, Halfspace(w, b0), LabeledExample(x, y), cfg, fast)
        return int(isinstance(res, Counterexample))

    return evaluate


@dataclass(frozen=True)
class NearInside:
    queries: int = 0


@dataclass(frozen=True)
class ApproxHyperplane:
    """<w, z'> <= <w, z> + slack for every z' of the (deflated) body."""

    w: np.ndarray
    slack: float
    queries: int = 0

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64)
        if not np.all(np.isfinite(w)) or not np.any(w):
            raise ProtocolViolationError("approximate separator must be finite and nonzero")
        object.__setattr__(self, "w", w)


ApproxSepResult = Union[NearInside, ApproxHyperplane]


class _Counted:
    def __init__(self, mem: MembershipOracle):
        self.mem = mem
        self.calls = 0

    def __call__(self, v: np.ndarray) -> bool:
        self.calls += 1
        return bool(self.mem(v))


def _radial_boundary(mem: _Counted, origin: np.ndarray, direction: np.ndarray, far: float, precision: float) -> np.ndarray:
    if mem(origin + far * direction):
        raise ProtocolViolationError("membership oracle accepts a point beyond the body's radius bound")
    lo, hi = 0.0, far
    while hi - lo > precision:
        mid = 0.5 * (lo + hi)
        if mem(origin + mid * direction):
            lo = mid
        else:
            hi = mid
    return origin + lo * direction


def mem_to_approx_sep(
    mem: MembershipOracle,
    interior: np.ndarray,
    query: np.ndarray,
    eta: float,
    outer_radius: float,
) -> ApproxSepResult:
    """Approximate separation from membership for a convex body inside B(0, outer_radius).

    Bisects from ``interior`` towards ``query`` to a boundary point within eta/4, then
    fits the supporting hyperplane through n + 1 boundary points found along rays
    aimed at eta/4-offsets of it.
    """
    if eta <= 0:
        raise ConfigError(f"approximation parameter must be positive, got {eta}")
    interior = as_vector(interior, "interior point")
    query = as_vector(query, "query")
    counted = _Counted(mem)
    if not counted(interior):
        raise ProtocolViolationError("membership oracle rejects the interior point")
    if counted(query):
        return NearInside(counted.calls)

    seg = query - interior
    length = float(np.linalg.norm(seg))
    lo, hi = 0.0, 1.0
    while (hi - lo) * length > eta / 4.0:
        mid = 0.5 * (lo + hi)
        if counted(interior + mid * seg):
            lo = mid
        else:
            hi = mid
    boundary = interior + lo * seg
    if float(np.linalg.norm(query - boundary)) <= eta:
        return NearInside(counted.calls)

    n = query.shape[0]
    u = seg / length
    if n == 1:
        return ApproxHyperplane(np.sign(u), eta, counted.calls)

    scale = eta / 4.0
    tangent = null_space(u[None, :])
    extra = -tangent.sum(axis=1)
    targets = [boundary] + [boundary + scale * tangent[:, k] for k in range(n - 1)]
    targets.append(boundary + scale * extra / np.linalg.norm(extra))
    far = 2.0 * outer_radius
    points = []
    for t in targets:
        direction = t - interior
        direction = direction / np.linalg.norm(direction)
        points.append(_radial_boundary(counted, interior, direction, far, scale * _RADIAL_PRECISION))
    points = np.stack(points)
    centroid = points.mean(axis=0)
    normal = np.linalg.svd(points - centroid)[2][-1]
    if normal @ (query - centroid) < 0:
        normal = -normal
    if normal @ (interior - centroid) > 0:
        raise ProtocolViolationError("membership answers are inconsistent with a convex body")
    return ApproxHyperplane(normal, eta, counted.calls)


def approx_sep_from_eval(
    evaluate: RobustLossEvaluator,
    x: np.ndarray,
    z: np.ndarray,
    gamma: float,
    R: float,
    cfg: FeasibilityConfig | None = None,
    refine: int = 0,
) -> ApproxSepResult:
    """gamma-approximate separation oracle for U(x) from a robust-loss evaluator.

    ``R`` bounds U(x) inside B(0, R). ``refine`` extra ellipsoid runs bisect on the
    restriction depth, which steers the separator towards the deepest one.
    """
    x = as_vector(x, "x")
    z = as_vector(z, "z")
    if gamma <= 0 or not math.isfinite(gamma):
        raise ConfigError(f"gamma must be positive, got {gamma}")
    if R <= 0:
        raise ConfigError(f"radius bound must be positive, got {R}")
    d = x.shape[0]
    counting = CountingEvaluator(evaluate)
    interior = np.zeros(d + 1)
    interior[d] = INTERIOR_OFFSET
    if counting(np.zeros(d), INTERIOR_OFFSET, x, 1) != 0:
        raise ProtocolViolationError("evaluator reports a loss for the all-positive constant classifier")

    eta = gamma / (4.0 * (R + 1.0))
    lifted = np.append(z, 1.0)
    cfg = (cfg or FeasibilityConfig()).model_copy(update={"radius": 1.0})

    def mem_k(v: np.ndarray) -> bool:
        return float(v @ v) <= 4.0 and counting(v[:d], float(v[d]), x, 1) == 0

    def restricted(depth: float) -> Callable[[np.ndarray], SeparationResult]:
        def oracle(v: np.ndarray) -> SeparationResult:
            if float(v @ v) > 1.0:
                return Hyperplane(v)
            if float(v @ lifted) > -depth:
                return Hyperplane(lifted)
            res = mem_to_approx_sep(mem_k, interior, v, eta, outer_radius=2.0)
            if isinstance(res, NearInside):
                return INSIDE
            return Hyperplane(res.w)

        return oracle

    result = find_feasible(restricted(gamma / 2.0), cfg, d + 1)
    if not isinstance(result, Found):
        logger.debug("reduce.near_inside", queries=counting.calls)
        return NearInside(counting.calls)

    best = result.point
    lo, hi = gamma / 2.0, float(np.linalg.norm(lifted))
    for _ in range(refine):
        mid = 0.5 * (lo + hi)
        deeper = find_feasible(restricted(mid), cfg, d + 1)
        if isinstance(deeper, Found):
            best, lo = deeper.point, mid
        else:
            hi = mid

    w = best[:d]
    if not np.any(w):
        raise ProtocolViolationError("separator search returned a constant classifier")
    logger.debug("reduce.hyperplane", queries=counting.calls, depth=lo)
    # (w, b0) labels U(x) positive and z negative, so -w points from U(x) towards z
    return ApproxHyperplane(-w, gamma / 2.0, counting.calls)
