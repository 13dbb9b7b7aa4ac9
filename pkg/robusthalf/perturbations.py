"""Convex adversaries U(x) with exact separation and membership oracles.

Separation contract: ``Hyperplane(w)`` returned for a query z guarantees
<w, z'> <= <w, z> for every z' in U(x). ``Inside`` means z is in U(x) up to the
global tolerance.
"""
from __future__ import annotations

import itertools
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Callable, ClassVar, Union

import numpy as np
import structlog
from scipy.optimize import linprog

from .core import (
    Halfspace,
    LabeledExample,
    NormSpec,
    as_vector,
    check_same_dim,
    dual_maximizer,
    norm,
    norm_subgradient,
    resolve_tol,
)
from .errors import ConfigError, GenerationError, InvalidInputError, NumericFailureError, ProtocolViolationError
from .geometry import nearest_hull_point
from .utils import derive_rng, vector_digest

logger = structlog.get_logger()

# l_inf balls list their 2^d vertices only up to this dimension
_MAX_CUBE_VERTEX_DIM = 12


class Membership(str, Enum):
    INSIDE = "inside"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class Inside:
    pass


INSIDE = Inside()


@dataclass(frozen=True)
class Hyperplane:
    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(w)):
            raise ProtocolViolationError("separating hyperplane has non-finite entries")
        if not np.any(w):
            raise ProtocolViolationError("separating hyperplane is the zero vector")
        object.__setattr__(self, "w", w)


SeparationResult = Union[Inside, Hyperplane]
SeparationOracle = Callable[[np.ndarray], SeparationResult]


# ---------------------------------------------------
# Abstract adversary
# ---------------------------------------------------
class PerturbationSet(ABC):
    """A map x -> U(x) of convex perturbation sets exposed through oracles."""

    kind: ClassVar[str] = "abstract"
    dim: int | None = None
    tol: float | None = None

    def _vectors(self, x: Any, z: Any) -> tuple[np.ndarray, np.ndarray]:
        x = as_vector(x, "x")
        z = as_vector(z, "z")
        if self.dim is not None and x.shape[0] != self.dim:
            raise InvalidInputError(f"{self.kind} adversary expects dimension {self.dim}, got {x.shape[0]}")
        check_same_dim(self.anchor(x), z, "anchor and query")
        return x, z

    @property
    def _tol(self) -> float:
        return resolve_tol(self.tol)

    def anchor(self, x: np.ndarray) -> np.ndarray:
        """The clean point, always a member of U(x)."""
        return as_vector(x, "x")

    @abstractmethod
    def sep(self, x: Any, z: Any) -> SeparationResult: ...

    def mem(self, x: Any, z: Any) -> Membership:
        return Membership.INSIDE if isinstance(self.sep(x, z), Inside) else Membership.OUTSIDE

    def offset_radius(self, x: np.ndarray) -> float | None:
        """R with U(x) inside the l2 ball of radius R around anchor(x), if known."""
        return None

    def radius_bound(self, x: np.ndarray) -> float | None:
        """R with U(x) inside the l2 ball of radius R around the origin, if known."""
        r = self.offset_radius(x)
        if r is None:
            return None
        return r + float(np.linalg.norm(self.anchor(x)))

    def extreme_points(self, x: np.ndarray) -> np.ndarray | None:
        """A finite set whose convex hull is U(x), when one is cheaply available."""
        return None

    def linear_minimizer(self, x: np.ndarray, direction: np.ndarray) -> np.ndarray | None:
        """A point of U(x) minimizing <direction, z>, when one is computable exactly.

        Unlike the ellipsoid search this also reaches sets that touch a hyperplane
        only on a face, edge or vertex.
        """
        points = self.extreme_points(x)
        if points is None:
            return None
        return points[int(np.argmin(points @ as_vector(direction, "direction")))]

    def sample(self, x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError(f"{self.kind} adversary does not support sampling")

    def oracle_for(self, x: Any) -> SeparationOracle:
        x = as_vector(x, "x")
        return lambda z: self.sep(x, z)


def _hull_sep(points: np.ndarray, z: np.ndarray, tol: float) -> SeparationResult:
    nearest = nearest_hull_point(points, z)
    g = z - nearest
    gap = float(np.linalg.norm(g))
    if gap <= tol:
        return INSIDE
    slack = tol * (1.0 + float(np.abs(points).max()) + float(np.abs(z).max())) * gap
    if float((points @ g).max()) > float(g @ z) + slack:
        raise NumericFailureError("hull separation failed its soundness self-check")
    return Hyperplane(g)


def _dirichlet_combinations(points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    weights = rng.dirichlet(np.ones(points.shape[0]), size=n)
    return weights @ points


# ---------------------------------------------------
# Concrete adversaries
# ---------------------------------------------------
@dataclass(frozen=True)
class NormBallAdversary(PerturbationSet):
    """U(x) = x + {delta : ||delta||_p <= gamma}."""

    gamma: float
    spec: NormSpec
    tol: float | None = None
    dim: int | None = None

    kind: ClassVar[str] = "lp_ball"

    def __post_init__(self) -> None:
        gamma = float(self.gamma)
        if not math.isfinite(gamma) or gamma <= 0:
            raise ConfigError(f"ball radius must be positive, got {self.gamma}")
        object.__setattr__(self, "gamma", gamma)
        if not isinstance(self.spec, NormSpec):
            object.__setattr__(self, "spec", NormSpec(self.spec))

    def sep(self, x: Any, z: Any) -> SeparationResult:
        x, z = self._vectors(x, z)
        delta = z - x
        if norm(delta, self.spec.p) <= self.gamma + self._tol:
            return INSIDE
        return Hyperplane(norm_subgradient(delta, self.spec.p))

    def linear_minimizer(self, x: np.ndarray, direction: np.ndarray) -> np.ndarray:
        x = as_vector(x, "x")
        direction = as_vector(direction, "direction")
        check_same_dim(x, direction, "anchor and direction")
        if not np.any(direction):
            return x
        return x - self.gamma * dual_maximizer(direction, self.spec)

    def offset_radius(self, x: np.ndarray) -> float:
        d = np.asarray(x).shape[0]
        p = self.spec.p
        if p <= 2.0:
            return self.gamma
        return self.gamma * d ** (0.5 - 1.0 / p)

    def extreme_points(self, x: np.ndarray) -> np.ndarray | None:
        x = as_vector(x, "x")
        d = x.shape[0]
        if self.spec.p == 1.0:
            eye = np.eye(d) * self.gamma
            return x + np.vstack([eye, -eye])
        if math.isinf(self.spec.p) and d <= _MAX_CUBE_VERTEX_DIM:
            corners = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
            return x + self.gamma * corners
        return None

    def sample(self, x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        from .datagen import sample_lp_ball

        x = as_vector(x, "x")
        return x + self.gamma * sample_lp_ball(rng, n, x.shape[0], self.spec.p)


@dataclass(frozen=True, eq=False)
class PolytopeAdversary(PerturbationSet):
    """U(x) = {z : A(z - x) <= c} with c >= 0, so x is always a member."""

    A: np.ndarray
    c: np.ndarray
    tol: float | None = None

    kind: ClassVar[str] = "polytope"

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        if A.shape[0] != c.shape[0]:
            raise ConfigError(f"polytope has {A.shape[0]} rows but {c.shape[0]} offsets")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(c))):
            raise ConfigError("polytope description has non-finite entries")
        if np.any(c < 0):
            raise ConfigError("polytope offsets must be nonnegative so that x is in U(x)")
        row_norms = np.linalg.norm(A, axis=1)
        if np.any(row_norms == 0):
            raise ConfigError("polytope rows must be nonzero")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "_row_norms", row_norms)

    @property
    def dim(self) -> int:  # type: ignore[override]
        return self.A.shape[1]

    def sep(self, x: Any, z: Any) -> SeparationResult:
        x, z = self._vectors(x, z)
        residual = self.A @ (z - x) - self.c
        if np.all(residual <= self._tol):
            return INSIDE
        j = int(np.argmax(residual / self._row_norms))
        return Hyperplane(self.A[j])

    def linear_minimizer(self, x: np.ndarray, direction: np.ndarray) -> np.ndarray | None:
        """Solve min <direction, delta> s.t. A delta <= c; None when unbounded below."""
        x = as_vector(x, "x")
        direction = as_vector(direction, "direction")
        check_same_dim(x, direction, "anchor and direction")
        res = linprog(direction, A_ub=self.A, b_ub=self.c, bounds=(None, None), method="highs")
        if res.status == 3:
            return None
        if res.status != 0:
            raise NumericFailureError(f"polytope linear minimization failed: {res.message}")
        return x + res.x

    @cached_property
    def offset_box(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Coordinate-wise bounds of {delta : A delta <= c}; None if unbounded."""
        d = self.dim
        lo, hi = np.empty(d), np.empty(d)
        for i in range(d):
            for sign, out in ((1.0, lo), (-1.0, hi)):
                cost = np.zeros(d)
                cost[i] = sign
                res = linprog(cost, A_ub=self.A, b_ub=self.c, bounds=(None, None), method="highs")
                if res.status == 3:
                    return None
                if res.status != 0:
                    raise NumericFailureError(f"polytope bound LP failed: {res.message}")
                out[i] = sign * res.fun
        return lo, hi

    def offset_radius(self, x: np.ndarray) -> float | None:
        box = self.offset_box
        if box is None:
            return None
        lo, hi = box
        return float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))

    def sample(self, x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        box = self.offset_box
        if box is None:
            raise GenerationError("cannot sample an unbounded polytope")
        x = as_vector(x, "x")
        lo, hi = box
        accepted: list[np.ndarray] = []
        drawn = 0
        while sum(len(a) for a in accepted) < n:
            if drawn > 1000 * n:
                raise GenerationError("polytope rejection sampling exhausted its draw budget")
            cand = rng.uniform(lo, hi, size=(max(n, 64), self.dim))
            drawn += cand.shape[0]
            ok = np.all(cand @ self.A.T <= self.c, axis=1)
            accepted.append(cand[ok])
        return x + np.concatenate(accepted)[:n]


@dataclass(frozen=True, eq=False)
class HullAdversary(PerturbationSet):
    """U(x) = conv{x + v_j}; the offsets must include the zero vector."""

    offsets: np.ndarray
    tol: float | None = None

    kind: ClassVar[str] = "hull"

    def __post_init__(self) -> None:
        V = np.atleast_2d(np.asarray(self.offsets, dtype=np.float64))
        if V.shape[0] < 1 or V.shape[1] < 1:
            raise InvalidInputError("hull adversary needs at least one generator")
        if not np.all(np.isfinite(V)):
            raise InvalidInputError("hull offsets have non-finite entries")
        if not np.any(np.linalg.norm(V, axis=1) <= resolve_tol(self.tol)):
            raise InvalidInputError("hull offsets must include the zero offset so that x is in U(x)")
        object.__setattr__(self, "offsets", V)

    @property
    def dim(self) -> int:  # type: ignore[override]
        return self.offsets.shape[1]

    def sep(self, x: Any, z: Any) -> SeparationResult:
        x, z = self._vectors(x, z)
        return _hull_sep(x + self.offsets, z, self._tol)

    def offset_radius(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(self.offsets, axis=1).max())

    def extreme_points(self, x: np.ndarray) -> np.ndarray:
        return as_vector(x, "x") + self.offsets

    def sample(self, x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        return _dirichlet_combinations(self.extreme_points(x), n, rng)


@dataclass(frozen=True, eq=False)
class AffineImageHull(PerturbationSet):
    """Sampled approximation of conv(phi(U(x))) for a base adversary U and feature map phi.

    The hull is spanned by phi(x), phi of the base set's extreme points when it lists
    them, and phi of ``n_samples`` points drawn from U(x) with a seed derived from
    ``seed`` and the bytes of x. Guarantees hold for this sampled hull only.
    """

    base: PerturbationSet
    feature_map: Callable[[np.ndarray], np.ndarray]
    n_samples: int
    seed: int = 0
    tol: float | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    kind: ClassVar[str] = "affine_hull"

    def __post_init__(self) -> None:
        if self.n_samples < 1:
            raise ConfigError("affine image hull needs a positive sample count")

    @property
    def dim(self) -> int | None:  # type: ignore[override]
        return self.base.dim

    def _phi(self, v: np.ndarray) -> np.ndarray:
        return as_vector(self.feature_map(v), "feature map output")

    def image_points(self, x: Any) -> np.ndarray:
        x = as_vector(x, "x")
        key = vector_digest(x)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        rng = derive_rng(self.seed, "affine_hull", key)
        sources = [x[None, :]]
        vertices = self.base.extreme_points(x)
        if vertices is not None:
            sources.append(vertices)
        sources.append(self.base.sample(x, self.n_samples, rng))
        images = np.stack([self._phi(v) for v in np.concatenate(sources)])
        if self.n_samples < images.shape[1] + 1:
            raise ConfigError(
                f"affine image hull needs at least {images.shape[1] + 1} samples, got {self.n_samples}"
            )
        self._cache[key] = images
        return images

    def anchor(self, x: np.ndarray) -> np.ndarray:
        return self._phi(as_vector(x, "x"))

    def sep(self, x: Any, z: Any) -> SeparationResult:
        x, z = self._vectors(x, z)
        return _hull_sep(self.image_points(x), z, self._tol)

    def offset_radius(self, x: np.ndarray) -> float:
        pts = self.image_points(x)
        return float(np.linalg.norm(pts - self.anchor(x), axis=1).max())

    def extreme_points(self, x: np.ndarray) -> np.ndarray:
        return self.image_points(x)

    def sample(self, x: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        return _dirichlet_combinations(self.image_points(x), n, rng)


# ---------------------------------------------------
# Finite (non-convex) adversaries
# ---------------------------------------------------
@dataclass(frozen=True, eq=False)
class FiniteSetAdversary:
    """U(x) = {x + v_j}: a finite, generally non-convex perturbation set."""

    offsets: np.ndarray

    def __post_init__(self) -> None:
        V = np.atleast_2d(np.asarray(self.offsets, dtype=np.float64))
        if V.shape[0] < 1 or V.shape[1] < 1:
            raise InvalidInputError("finite adversary needs at least one offset")
        object.__setattr__(self, "offsets", V)

    def points(self, x: Any) -> np.ndarray:
        return as_vector(x, "x") + self.offsets

    def worst_case_loss(self, h: Halfspace, ex: LabeledExample) -> int:
        scores = ex.y * (self.points(ex.x) @ h.w + h.b0)
        return int(scores.min() <= 0.0)

    def convexify(self) -> HullAdversary:
        return convexify(self.offsets)


def convexify(points: Any) -> HullAdversary:
    """Hull adversary with the same robust separability as a finite offset set."""
    if isinstance(points, FiniteSetAdversary):
        points = points.offsets
    V = np.asarray(points, dtype=np.float64)
    if V.size == 0:
        raise InvalidInputError("cannot convexify an empty generator set")
    return HullAdversary(np.atleast_2d(V))


# ---------------------------------------------------
# Config round trip
# ---------------------------------------------------
def from_config(cfg: Any) -> PerturbationSet:
    from .schemas import HullConfig, LpBallConfig, PolytopeConfig, parse_adversary_config

    if isinstance(cfg, dict):
        cfg = parse_adversary_config(cfg)
    if isinstance(cfg, LpBallConfig):
        return NormBallAdversary(cfg.gamma, NormSpec(cfg.p))
    if isinstance(cfg, PolytopeConfig):
        return PolytopeAdversary(np.array(cfg.A), np.array(cfg.c))
    if isinstance(cfg, HullConfig):
        return HullAdversary(np.array(cfg.offsets))
    raise ConfigError(f"unsupported adversary description: {cfg!r}")


def to_config(adv: PerturbationSet) -> dict:
    from .core import format_p

    if isinstance(adv, NormBallAdversary):
        return {"kind": "lp_ball", "p": format_p(adv.spec.p), "gamma": adv.gamma}
    if isinstance(adv, PolytopeAdversary):
        return {"kind": "polytope", "A": adv.A.tolist(), "c": adv.c.tolist()}
    if isinstance(adv, HullAdversary):
        return {"kind": "hull", "offsets": adv.offsets.tolist()}
    return {"kind": adv.kind}
