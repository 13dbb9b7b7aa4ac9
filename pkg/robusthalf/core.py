"""Vectors, norms, examples, halfspaces, datasets and the closed-form robust losses.

Vectors are plain float64 numpy arrays validated on the way in. The duality exponent
``q`` is always derived from ``p`` and never stored, so ``1/p + 1/q = 1`` cannot drift.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Iterator, Sequence

import numpy as np
import structlog

from .config import settings
from .errors import InvalidHypothesisError, InvalidInputError

if TYPE_CHECKING:
    from .ellipsoid import FeasibilityConfig
    from .perturbations import PerturbationSet
    from .schemas import DatasetMetadata

logger = structlog.get_logger()

_INF_TOKENS = ("inf", "infinity", "+inf", "∞")


def resolve_tol(tol: float | None) -> float:
    return settings.TOLERANCE if tol is None else float(tol)


# ---------------------------------------------------
# Norm exponents
# ---------------------------------------------------
def parse_p(value: Any) -> float:
    """Accept a finite float >= 1 or the token ``inf``."""
    if isinstance(value, str):
        token = value.strip().lower()
        if token in _INF_TOKENS:
            return math.inf
        try:
            value = float(token)
        except ValueError:
            raise InvalidInputError(f"invalid norm exponent: {value!r}") from None
    try:
        p = float(value)
    except (TypeError, ValueError):
        raise InvalidInputError(f"invalid norm exponent: {value!r}") from None
    if math.isnan(p) or p < 1.0:
        raise InvalidInputError(f"norm exponent must lie in [1, inf], got {value!r}")
    return p


def format_p(p: float) -> float | str:
    return "inf" if math.isinf(p) else float(p)


def dual_exponent(p: float) -> float:
    p = parse_p(p)
    if p == 1.0:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


@dataclass(frozen=True)
class NormSpec:
    """Primal exponent ``p`` of the perturbation norm; ``q`` is its dual."""

    p: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", parse_p(self.p))

    @property
    def q(self) -> float:
        return dual_exponent(self.p)

    @classmethod
    def from_dual(cls, q: Any) -> "NormSpec":
        return cls(dual_exponent(parse_p(q)))

    def __str__(self) -> str:
        return f"l{format_p(self.p)}"


# ---------------------------------------------------
# Vectors
# ---------------------------------------------------
def as_vector(v: Any, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise InvalidInputError(f"{name} must be a nonempty 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite coordinates")
    return arr


def check_same_dim(a: np.ndarray, b: np.ndarray, what: str = "vectors") -> None:
    if a.shape[-1] != b.shape[-1]:
        raise InvalidInputError(f"dimension mismatch between {what}: {a.shape[-1]} != {b.shape[-1]}")


def norm(v: Any, p: Any = 2.0) -> float:
    """The l_p norm; scaled by the largest magnitude so fractional p cannot overflow."""
    v = as_vector(v)
    p = parse_p(p)
    a = np.abs(v)
    if math.isinf(p):
        return float(a.max())
    if p == 1.0:
        return float(a.sum())
    if p == 2.0:
        return float(np.sqrt(v @ v))
    m = a.max()
    if m == 0.0:
        return 0.0
    return float(m * np.sum((a / m) ** p) ** (1.0 / p))


def dual_norm(v: Any, spec: NormSpec) -> float:
    return norm(v, spec.q)


def norm_subgradient(v: Any, p: Any) -> np.ndarray:
    """A vector g with ||g||_{p*} <= 1 and <g, v> = ||v||_p (zero for v = 0)."""
    v = as_vector(v)
    p = parse_p(p)
    g = np.zeros_like(v)
    a = np.abs(v)
    m = a.max()
    if m == 0.0:
        return g
    if math.isinf(p):
        i = int(np.argmax(a))
        g[i] = np.sign(v[i])
        return g
    if p == 1.0:
        return np.sign(v)
    s = a / m
    g = np.sign(v) * s ** (p - 1.0)
    return g / np.sum(s ** p) ** ((p - 1.0) / p)


def dual_maximizer(w: Any, spec: NormSpec) -> np.ndarray:
    """argmax of <u, w> over ||u||_p <= 1; the value attained is ||w||_q."""
    return norm_subgradient(w, spec.q)


# ---------------------------------------------------
# Examples, halfspaces, datasets
# ---------------------------------------------------
def _as_label(y: Any) -> int:
    try:
        val = float(y)
    except (TypeError, ValueError):
        raise InvalidInputError(f"label must be -1 or +1, got {y!r}") from None
    if val == 1.0:
        return 1
    if val == -1.0:
        return -1
    raise InvalidInputError(f"label must be -1 or +1, got {y!r}")


@dataclass(frozen=True)
class LabeledExample:
    x: np.ndarray
    y: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", as_vector(self.x, "x"))
        object.__setattr__(self, "y", _as_label(self.y))

    @property
    def dim(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class Halfspace:
    """h(z) = sign(<w, z> + b0); b0 = 0 for homogeneous halfspaces."""

    w: np.ndarray
    b0: float = 0.0

    def __post_init__(self) -> None:
        w = as_vector(self.w, "w")
        if not np.any(w):
            raise InvalidHypothesisError("halfspace weight vector must be nonzero")
        b0 = float(self.b0)
        if not math.isfinite(b0):
            raise InvalidHypothesisError("halfspace bias must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b0", b0)

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    @property
    def homogeneous(self) -> bool:
        return self.b0 == 0.0

    def score(self, z: np.ndarray) -> np.ndarray | float:
        return z @ self.w + self.b0

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(self.score(X)) > 0, 1, -1)

    def negated(self) -> "Halfspace":
        return Halfspace(-self.w, -self.b0)

    def to_dict(self) -> dict:
        return {"w": self.w.tolist(), "bias": self.b0}


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    metadata: "DatasetMetadata | None" = None

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidInputError(f"dataset must be a nonempty m x d array, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("dataset has non-finite features")
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise InvalidInputError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all((y == 1.0) | (y == -1.0)):
            raise InvalidInputError("labels must be -1 or +1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int64))

    @classmethod
    def from_examples(cls, examples: Sequence[LabeledExample], metadata=None) -> "Dataset":
        if not examples:
            raise InvalidInputError("dataset must be nonempty")
        dims = {ex.dim for ex in examples}
        if len(dims) != 1:
            raise InvalidInputError(f"examples have mixed dimensions {sorted(dims)}")
        return cls(np.stack([ex.x for ex in examples]), np.array([ex.y for ex in examples]), metadata)

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, i: int) -> LabeledExample:
        return LabeledExample(self.X[i], int(self.y[i]))

    def __iter__(self) -> Iterator[LabeledExample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx: Any) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.metadata)


# ---------------------------------------------------
# Losses
# ---------------------------------------------------
def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not math.isfinite(gamma) or gamma < 0:
        raise InvalidInputError(f"gamma must be a finite nonnegative number, got {gamma}")
    return gamma


def robust_scores(h: Halfspace, X: np.ndarray, y: np.ndarray, gamma: float, spec: NormSpec) -> np.ndarray:
    """min over the l_p ball of radius gamma of y(<w, x + delta> + b0), row-wise."""
    check_same_dim(X, h.w, "data and halfspace")
    return y * (X @ h.w + h.b0) - gamma * dual_norm(h.w, spec)


def margin_loss(h: Halfspace, ex: LabeledExample, gamma: float, spec: NormSpec) -> int:
    """1 iff the normalized margin y(<w,x> + b0)/||w||_q is at most gamma."""
    gamma = _check_gamma(gamma)
    check_same_dim(ex.x, h.w, "example and halfspace")
    margin = ex.y * float(h.score(ex.x)) / dual_norm(h.w, spec)
    return int(margin <= gamma)


def robust_loss_lp(h: Halfspace, ex: LabeledExample, gamma: float, spec: NormSpec) -> int:
    """Exact robust 0-1 loss against x + {||delta||_p <= gamma}, via the dual norm."""
    gamma = _check_gamma(gamma)
    worst = robust_scores(h, ex.x[None, :], np.array([ex.y]), gamma, spec)[0]
    return int(worst <= 0.0)


def worst_perturbation(h: Halfspace, ex: LabeledExample, gamma: float, spec: NormSpec) -> np.ndarray:
    """The point of the l_p ball around x minimizing y(<w, z> + b0)."""
    gamma = _check_gamma(gamma)
    check_same_dim(ex.x, h.w, "example and halfspace")
    return ex.x - ex.y * gamma * dual_maximizer(h.w, spec)


def margin_error(h: Halfspace, S: Dataset, gamma: float, spec: NormSpec, normalized: bool = True) -> float:
    """Fraction of S with margin at most gamma.

    ``normalized=True`` divides by ||w||_q (the robust-loss form); ``False`` uses the raw
    y(<w, x> + b0), which is the error notion for weights constrained to the unit q-ball.
    """
    gamma = _check_gamma(gamma)
    check_same_dim(S.X, h.w, "data and halfspace")
    margins = S.y * (S.X @ h.w + h.b0)
    if normalized:
        margins = margins / dual_norm(h.w, spec)
    return float(np.mean(margins <= gamma))


def clean_error(h: Halfspace, S: Dataset) -> float:
    check_same_dim(S.X, h.w, "data and halfspace")
    return float(np.mean(S.y * (S.X @ h.w + h.b0) <= 0.0))


def empirical_robust_risk(
    h: Halfspace,
    S: Dataset,
    adversary: "PerturbationSet | tuple[float, NormSpec]",
    cfg: "FeasibilityConfig | None" = None,
) -> float:
    """Mean robust 0-1 loss over S.

    l_p adversaries (given as an adversary object or a ``(gamma, spec)`` pair) use the
    closed form; any other adversary is certified example by example.
    """
    from .perturbations import NormBallAdversary

    if isinstance(adversary, tuple):
        gamma, spec = adversary
        return float(np.mean(robust_scores(h, S.X, S.y, _check_gamma(gamma), spec) <= 0.0))
    if isinstance(adversary, NormBallAdversary):
        return float(np.mean(robust_scores(h, S.X, S.y, adversary.gamma, adversary.spec) <= 0.0))

    from .certify import Counterexample, certify_dataset

    results = certify_dataset(adversary, h, S, cfg)
    return sum(isinstance(r, Counterexample) for r in results) / len(results)
