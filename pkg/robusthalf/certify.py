"""Robust certification: prove h robust on U(x) or exhibit a misclassified z in U(x).

The search runs the ellipsoid method on U(x) intersected with the misclassified
side M(w, y) = {z : y(<w, z> + b0) <= 0}. The ball is centered at the anchor with
radius ``offset_radius``. The ellipsoid only finds misclassified regions with volume,
so an ``Empty`` is confirmed by exact linear minimization over U(x) whenever the
adversary offers it (vertices of hulls, an LP for polytopes, the dual norm for balls).
That catches sets touching the decision boundary on a face, edge or vertex.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional, Union

import numpy as np
import structlog

from .core import Dataset, Halfspace, LabeledExample, NormSpec, check_same_dim, dual_maximizer, norm, resolve_tol
from .ellipsoid import FeasibilityConfig, Found, SolverStats, find_feasible
from .errors import CertificationError
from .perturbations import INSIDE, Hyperplane, Membership, NormBallAdversary, PerturbationSet, SeparationResult

logger = structlog.get_logger()


@dataclass(frozen=True)
class Robust:
    method: str = "ellipsoid"
    stats: Optional[SolverStats] = None

    def to_dict(self) -> dict:
        return {"status": "robust", "method": self.method}


@dataclass(frozen=True)
class Counterexample:
    z: np.ndarray
    method: str = "ellipsoid"
    stats: Optional[SolverStats] = None

    def to_dict(self) -> dict:
        return {"status": "counterexample", "method": self.method, "z": self.z.tolist()}


CertResult = Union[Robust, Counterexample]


def _misclassified(h: Halfspace, y: int, z: np.ndarray) -> bool:
    return y * float(h.score(z)) <= 0.0


def verified_counterexample(
    adv: PerturbationSet,
    h: Halfspace,
    ex: LabeledExample,
    z: np.ndarray,
    method: str,
    stats: Optional[SolverStats] = None,
) -> Counterexample:
    """Build a Counterexample after re-checking membership and the sign."""
    z = np.asarray(z, dtype=np.float64)
    if adv.mem(ex.x, z) is not Membership.INSIDE:
        raise CertificationError(f"{method} counterexample is outside U(x)")
    if not _misclassified(h, ex.y, z):
        raise CertificationError(f"{method} counterexample is classified correctly")
    return Counterexample(z, method, stats)


def cert_fastpath(h: Halfspace, ex: LabeledExample, gamma: float, spec: NormSpec, tol: float | None = None) -> CertResult:
    """Closed-form certificate for U(x) = x + {||delta||_p <= gamma}."""
    check_same_dim(ex.x, h.w, "example and halfspace")
    z = ex.x - ex.y * float(gamma) * dual_maximizer(h.w, spec)
    if not _misclassified(h, ex.y, z):
        return Robust("closed_form")
    if norm(z - ex.x, spec.p) > gamma + resolve_tol(tol):
        raise CertificationError("closed-form minimizer left the perturbation ball")
    return Counterexample(z, "closed_form")


def cert_vertices(adv: PerturbationSet, h: Halfspace, ex: LabeledExample) -> CertResult:
    """Exact certificate when U(x) is the hull of ``adv.extreme_points(x)``."""
    points = adv.extreme_points(ex.x)
    if points is None:
        raise CertificationError(f"{adv.kind} adversary does not list its extreme points")
    check_same_dim(points, h.w, "perturbation set and halfspace")
    scores = ex.y * (points @ h.w + h.b0)
    i = int(np.argmin(scores))
    if scores[i] > 0.0:
        return Robust("vertices")
    return verified_counterexample(adv, h, ex, points[i], "vertices")


def cert_linear(adv: PerturbationSet, h: Halfspace, ex: LabeledExample, method: str = "linear") -> CertResult | None:
    """Exact certificate from the adversary's linear minimizer; None if it has none."""
    z = adv.linear_minimizer(ex.x, ex.y * h.w)
    if z is None:
        return None
    if not _misclassified(h, ex.y, z):
        return Robust(method)
    return verified_counterexample(adv, h, ex, z, method)


def cert(adv: PerturbationSet, h: Halfspace, ex: LabeledExample, cfg: FeasibilityConfig | None = None) -> CertResult:
    anchor = adv.anchor(ex.x)
    check_same_dim(anchor, h.w, "perturbation set and halfspace")
    if _misclassified(h, ex.y, anchor):
        return verified_counterexample(adv, h, ex, anchor, "anchor")

    radius = adv.offset_radius(ex.x)
    if radius is None:
        raise CertificationError(f"{adv.kind} adversary has no radius bound for the search ball")
    cfg = cfg or FeasibilityConfig()
    if radius <= cfg.tol:
        return Robust("anchor")
    search = cfg.model_copy(update={"radius": radius + cfg.tol})

    def composed(z: np.ndarray) -> SeparationResult:
        res = adv.sep(ex.x, z)
        if isinstance(res, Hyperplane):
            return res
        if not _misclassified(h, ex.y, z):
            # every misclassified z' has y<w, z'> <= -y b0 < y<w, z>
            return Hyperplane(ex.y * h.w)
        return INSIDE

    result = find_feasible(composed, search, anchor.shape[0], center=anchor)
    if isinstance(result, Found):
        return verified_counterexample(adv, h, ex, result.point, "ellipsoid", result.stats)
    if adv.extreme_points(ex.x) is not None:
        return cert_vertices(adv, h, ex)
    exact = cert_linear(adv, h, ex)
    if exact is not None:
        return exact
    return Robust("ellipsoid", result.stats)


def certify(
    adv: PerturbationSet,
    h: Halfspace,
    ex: LabeledExample,
    cfg: FeasibilityConfig | None = None,
    fast: bool = True,
) -> CertResult:
    """Certify with the cheapest exact method the adversary supports.

    ``fast=False`` always runs the ellipsoid search.
    """
    if fast:
        if isinstance(adv, NormBallAdversary):
            return cert_fastpath(h, ex, adv.gamma, adv.spec, adv.tol)
        if adv.extreme_points(ex.x) is not None:
            return cert_vertices(adv, h, ex)
        exact = cert_linear(adv, h, ex)
        if exact is not None:
            return exact
    return cert(adv, h, ex, cfg)


def certify_dataset(
    adv: PerturbationSet,
    h: Halfspace,
    S: Dataset,
    cfg: FeasibilityConfig | None = None,
    fast: bool = True,
) -> list[CertResult]:
    results = [certify(adv, h, ex, cfg, fast) for ex in S]
    logger.debug(
        "certify.dataset",
        examples=len(S),
        counterexamples=sum(isinstance(r, Counterexample) for r in results),
    )
    return results


def replay(adv: PerturbationSet, h: Halfspace, ex: LabeledExample, record: dict[str, Any]) -> CertResult:
    """Re-verify a serialized certificate; counterexamples are checked again."""
    if record.get("status") == "robust":
        return Robust(record.get("method", "ellipsoid"))
    return verified_counterexample(adv, h, ex, np.asarray(record["z"]), record.get("method", "ellipsoid"))
