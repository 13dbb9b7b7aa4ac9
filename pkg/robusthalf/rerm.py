"""Robust ERM in the realizable setting: ellipsoid search over robust separators.

The outer search runs over w (or (w, b0) with ``bias=True``) in the unit l2 ball and
asks for a margin-tau robust separator: y_i(<w, z> + b0) >= tau for every z in U(x_i).
Each candidate is certified example by example in dataset order; the first
counterexample z_i yields the cut -y_i (z_i, 1).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import structlog

from .certify import Counterexample, certify
from .core import Dataset, Halfspace, LabeledExample, dual_maximizer, dual_norm
from .ellipsoid import FeasibilityConfig, Found, find_feasible
from .errors import CertificationError, ConfigError, InvalidInputError
from .perturbations import INSIDE, AffineImageHull, Hyperplane, NormBallAdversary, PerturbationSet, SeparationResult

logger = structlog.get_logger()

_ZERO_WEIGHT = 1e-12


@dataclass
class RunStats:
    iterations: int = 0
    oracle_calls: int = 0
    cert_calls: int = 0
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "oracle_calls": self.oracle_calls,
            "cert_calls": self.cert_calls,
            "wall_time": self.wall_time,
        }


@dataclass(frozen=True)
class Separator:
    h: Halfspace
    tau: float
    stats: RunStats = field(default_factory=RunStats)


@dataclass(frozen=True)
class Infeasible:
    tau: float
    caveat: str
    stats: RunStats = field(default_factory=RunStats)


RermResult = Union[Separator, Infeasible]


class _NoSeparator(Exception):
    """Some U(x_i) contains a point no halfspace can put on the positive side."""


def default_tau(anchors: np.ndarray, bits: int, bias: bool = False) -> float:
    """2^-b times the largest (lifted) anchor norm."""
    scale = float(np.linalg.norm(anchors, axis=1).max())
    if bias:
        scale = float(np.sqrt(scale**2 + 1.0))
    return 2.0**-bits * scale


def _caveat(tau: float) -> str:
    return (
        f"no robust separator with margin >= {tau:.3g} in the unit ball; "
        f"separators with margin below {10 * tau:.3g} may be missed at this precision"
    )


def rerm(
    S: Dataset,
    adv: PerturbationSet,
    cfg: FeasibilityConfig | None = None,
    tau: float | None = None,
    bias: bool = False,
    fast: bool = True,
) -> RermResult:
    """Find a halfspace with zero empirical robust risk on S, or report Infeasible."""
    if len(S) == 0:
        raise InvalidInputError("cannot run robust ERM on an empty dataset")
    cfg = cfg or FeasibilityConfig()
    anchors = np.stack([adv.anchor(x) for x in S.X])
    d = anchors.shape[1]
    dim = d + 1 if bias else d
    if tau is None:
        tau = default_tau(anchors, cfg.bits, bias)
    if tau < 0:
        raise ConfigError(f"margin tau must be nonnegative, got {tau}")
    outer_cfg = cfg.model_copy(update={"radius": 1.0})
    stats = RunStats()
    started = time.perf_counter()

    def lift(z: np.ndarray) -> np.ndarray:
        return np.append(z, 1.0) if bias else z

    def split(v: np.ndarray) -> tuple[np.ndarray, float]:
        return (v[:-1], float(v[-1])) if bias else (v, 0.0)

    def cut(y: int, z: np.ndarray) -> Hyperplane:
        g = -y * lift(z)
        if not np.any(g):
            raise _NoSeparator()
        return Hyperplane(g)

    def first_violation_lp(w: np.ndarray, b0: float) -> Optional[tuple[int, np.ndarray]]:
        scores = S.y * (S.X @ w + b0) - adv.gamma * dual_norm(w, adv.spec) - tau
        bad = np.flatnonzero(scores <= 0.0)
        if bad.size == 0:
            return None
        i = int(bad[0])
        return i, S.X[i] - S.y[i] * adv.gamma * dual_maximizer(w, adv.spec)

    def first_violation(w: np.ndarray, b0: float) -> Optional[tuple[int, np.ndarray]]:
        for i, ex in enumerate(S):
            stats.cert_calls += 1
            shifted = Halfspace(w, b0 - ex.y * tau)
            res = certify(adv, shifted, ex, cfg, fast)
            if isinstance(res, Counterexample):
                return i, res.z
        return None

    def outer(v: np.ndarray) -> SeparationResult:
        stats.oracle_calls += 1
        if float(v @ v) > 1.0 + cfg.tol:
            return Hyperplane(v)
        w, b0 = split(v)
        if float(np.linalg.norm(w)) <= _ZERO_WEIGHT:
            # zero weights misclassify every anchor
            return cut(int(S.y[0]), anchors[0])
        if fast and isinstance(adv, NormBallAdversary):
            hit = first_violation_lp(w, b0)
        else:
            hit = first_violation(w, b0)
        if hit is None:
            return INSIDE
        i, z = hit
        return cut(int(S.y[i]), z)

    try:
        result = find_feasible(outer, outer_cfg, dim)
    except _NoSeparator:
        result = None
    stats.wall_time = time.perf_counter() - started

    if not isinstance(result, Found):
        if result is not None:
            stats.iterations = result.stats.iterations
        logger.info("rerm.infeasible", m=len(S), dim=dim, tau=tau, **stats.to_dict())
        return Infeasible(tau, _caveat(tau), stats)

    stats.iterations = result.stats.iterations
    w, b0 = split(result.point)
    h = Halfspace(w, b0)
    for i, ex in enumerate(S):
        if isinstance(certify(adv, h, ex, cfg, fast), Counterexample):
            raise CertificationError(f"separator failed re-certification on example {i}")
    logger.info("rerm.separator", m=len(S), dim=dim, tau=tau, **stats.to_dict())
    return Separator(h, tau, stats)


def rerm_feature_mapped(
    S: Dataset,
    adv: AffineImageHull,
    cfg: FeasibilityConfig | None = None,
    tau: float | None = None,
    bias: bool = False,
    fast: bool = True,
) -> RermResult:
    """Robust ERM over halfspaces in the image of a feature map."""
    if not isinstance(adv, AffineImageHull):
        raise ConfigError("feature-mapped robust ERM needs an AffineImageHull adversary")
    return rerm(S, adv, cfg, tau, bias, fast)


def is_robust_separator(h: Halfspace, S: Dataset, adv: PerturbationSet, cfg: FeasibilityConfig | None = None) -> bool:
    return not any(isinstance(certify(adv, h, LabeledExample(x, y), cfg), Counterexample) for x, y in zip(S.X, S.y))
