"""Stochastic mirror descent over the unit l_q ball.

Geometry by q:
  * 1 < q < inf: potential 1/2 ||w||_q^2. Its Bregman projection onto the unit ball
    is exact radial scaling, since the divergence only sees ||w|| along the
    dual-aligned ray.
  * q = 1: entropy on the 2d-simplex lift w = theta[:d] - theta[d:]; the KL
    projection onto the simplex is normalization.
  * q = inf: Euclidean potential with coordinate clipping.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator
from scipy.special import logsumexp

from .core import Halfspace, format_p, norm, parse_p
from .errors import ConfigError, NumericFailureError

logger = structlog.get_logger()

GradientOracle = Callable[[np.ndarray, np.random.Generator], np.ndarray]
ValueOracle = Callable[[np.ndarray], float]


class MirrorDescentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    q: float = Field(description="exponent of the weight ball")
    steps: int = Field(ge=1)
    lipschitz: float = Field(default=1.0, gt=0, description="bound on ||g||_p")
    step_size: Optional[float] = Field(default=None, gt=0)
    potential: Literal["auto", "lq", "entropy", "euclidean"] = "auto"
    averaging: Literal["uniform", "last"] = "uniform"
    seed: int = 0
    batch_size: int = Field(default=1, ge=1)

    @field_validator("q", mode="before")
    @classmethod
    def parse_q(cls, value):
        return parse_p(value)

    @field_serializer("q")
    def dump_q(self, q: float):
        return format_p(q)

    def resolved_potential(self) -> str:
        if self.potential == "auto":
            if self.q == 1.0:
                return "entropy"
            return "euclidean" if math.isinf(self.q) else "lq"
        if self.potential == "entropy" and self.q != 1.0:
            raise ConfigError("the entropy potential needs q = 1")
        if self.potential == "lq" and not (1.0 < self.q < math.inf):
            raise ConfigError("the half-squared l_q potential needs 1 < q < inf")
        return self.potential


# ---------------------------------------------------
# Mirror maps
# ---------------------------------------------------
def _power_map(v: np.ndarray, r: float) -> np.ndarray:
    """Gradient of 1/2 ||v||_r^2: ||v||_r^{2-r} sign(v) |v|^{r-1}."""
    n = norm(v, r)
    if n == 0.0:
        return np.zeros_like(v)
    return np.sign(v) * (np.abs(v) / n) ** (r - 1.0) * n


class MirrorMap(ABC):
    """A potential over the unit ball; ``state`` is the map's own parametrization of w."""

    name: str

    @abstractmethod
    def init_state(self, dim: int) -> np.ndarray: ...

    def weights(self, state: np.ndarray) -> np.ndarray:
        return state

    @abstractmethod
    def mirrormap(self, x: np.ndarray) -> float: ...

    @abstractmethod
    def mirrormapgrad(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def mirrormapgrad_inverse(self, theta: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def projection(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def diameter(self, dim: int) -> float:
        """sup of the potential minus its minimum over the domain."""

    def modulus(self) -> float:
        return 1.0

    def bregman(self, x: np.ndarray, y: np.ndarray) -> float:
        return self.mirrormap(x) - self.mirrormap(y) - float(self.mirrormapgrad(y) @ (x - y))

    def update(self, state: np.ndarray, step: float, grad: np.ndarray) -> np.ndarray:
        dual = self.mirrormapgrad(state) - step * grad
        return self.projection(self.mirrormapgrad_inverse(dual))


class LqMirrorMap(MirrorMap):
    name = "lq"

    def __init__(self, q: float):
        self.q = q
        self.p = q / (q - 1.0)

    def init_state(self, dim: int) -> np.ndarray:
        return np.zeros(dim)

    def mirrormap(self, x: np.ndarray) -> float:
        return 0.5 * norm(x, self.q) ** 2

    def mirrormapgrad(self, x: np.ndarray) -> np.ndarray:
        return _power_map(x, self.q)

    def mirrormapgrad_inverse(self, theta: np.ndarray) -> np.ndarray:
        return _power_map(theta, self.p)

    def projection(self, x: np.ndarray) -> np.ndarray:
        n = norm(x, self.q)
        return x if n <= 1.0 else x / n

    def diameter(self, dim: int) -> float:
        return 0.5

    def modulus(self) -> float:
        return min(self.q - 1.0, 1.0)


class EntropyMirrorMap(MirrorMap):
    """Negative entropy on the 2d-simplex; the state holds log-weights."""

    name = "entropy"

    def init_state(self, dim: int) -> np.ndarray:
        return np.full(2 * dim, -math.log(2 * dim))

    def weights(self, state: np.ndarray) -> np.ndarray:
        theta = np.exp(state)
        d = theta.shape[0] // 2
        return theta[:d] - theta[d:]

    def mirrormap(self, x: np.ndarray) -> float:
        pos = x[x > 0]
        return float(np.sum(pos * np.log(pos)))

    def mirrormapgrad(self, x: np.ndarray) -> np.ndarray:
        return 1.0 + np.log(x)

    def mirrormapgrad_inverse(self, theta: np.ndarray) -> np.ndarray:
        return np.exp(theta - 1.0)

    def projection(self, x: np.ndarray) -> np.ndarray:
        return x / x.sum()

    def bregman(self, x: np.ndarray, y: np.ndarray) -> float:
        pos = x > 0
        return float(np.sum(x[pos] * np.log(x[pos] / y[pos])) - x.sum() + y.sum())

    def diameter(self, dim: int) -> float:
        return math.log(2 * dim)

    def update(self, state: np.ndarray, step: float, grad: np.ndarray) -> np.ndarray:
        logits = state - step * np.concatenate([grad, -grad])
        return logits - logsumexp(logits)


class EuclideanBoxMirrorMap(MirrorMap):
    name = "euclidean"

    def init_state(self, dim: int) -> np.ndarray:
        return np.zeros(dim)

    def mirrormap(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ x)

    def mirrormapgrad(self, x: np.ndarray) -> np.ndarray:
        return x

    def mirrormapgrad_inverse(self, theta: np.ndarray) -> np.ndarray:
        return theta

    def projection(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, -1.0, 1.0)

    def diameter(self, dim: int) -> float:
        return 0.5 * dim


def make_mirror_map(cfg: MirrorDescentConfig) -> MirrorMap:
    kind = cfg.resolved_potential()
    if kind == "entropy":
        return EntropyMirrorMap()
    if kind == "euclidean":
        return EuclideanBoxMirrorMap()
    return LqMirrorMap(cfg.q)


# ---------------------------------------------------
# Optimizer
# ---------------------------------------------------
@dataclass(frozen=True)
class TranscriptEntry:
    step: int
    norm: float
    value: Optional[float] = None


@dataclass(frozen=True)
class TrainedModel:
    w: np.ndarray
    q: float
    steps: int
    step_size: float
    transcript: tuple[TranscriptEntry, ...] = ()

    def halfspace(self) -> Halfspace:
        return Halfspace(self.w)

    def to_dict(self) -> dict:
        return {"w": self.w.tolist(), "bias": 0.0, "q": format_p(self.q)}


def default_step_size(mirror: MirrorMap, dim: int, cfg: MirrorDescentConfig) -> float:
    """sqrt(2 D kappa / T) / L.

    D is ``mirror.diameter``, the range of the potential over the ball, so it is a
    squared length; kappa is the potential's strong-convexity modulus, L the gradient
    bound and T the step count. The averaged iterate is then within
    L sqrt(2 D / (kappa T)) of the optimum in expectation. Written with a radius r
    (D ~ r^2 / 2) the step is r / (L sqrt T) up to the modulus.
    """
    return math.sqrt(2.0 * mirror.diameter(dim) * mirror.modulus() / cfg.steps) / cfg.lipschitz


def smd_minimize(
    grad_oracle: GradientOracle,
    dim: int,
    cfg: MirrorDescentConfig,
    value_oracle: Optional[ValueOracle] = None,
    rng: Optional[np.random.Generator] = None,
) -> TrainedModel:
    """Minimize a convex function over the unit l_q ball from stochastic gradients."""
    from .utils import derive_rng

    mirror = make_mirror_map(cfg)
    rng = rng or derive_rng(cfg.seed, "smd")
    step = cfg.step_size or default_step_size(mirror, dim, cfg)
    every = max(1, cfg.steps // 20)

    state = mirror.init_state(dim)
    w = mirror.weights(state)
    total = np.zeros(dim)
    transcript: list[TranscriptEntry] = []
    for t in range(cfg.steps):
        g = np.asarray(grad_oracle(w, rng), dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NumericFailureError("stochastic gradient is not finite", iteration=t)
        state = mirror.update(state, step, g)
        w = mirror.weights(state)
        total += w
        if (t + 1) % every == 0:
            value = value_oracle(w) if value_oracle is not None else None
            transcript.append(TranscriptEntry(t + 1, norm(w, cfg.q), value))
            logger.debug("smd.progress", step=t + 1, norm=transcript[-1].norm, value=value)

    out = total / cfg.steps if cfg.averaging == "uniform" else w
    if norm(out, cfg.q) > 1.0 + 1e-9:
        raise NumericFailureError("iterate left the unit ball", iteration=cfg.steps)
    return TrainedModel(out, cfg.q, cfg.steps, step, tuple(transcript))
