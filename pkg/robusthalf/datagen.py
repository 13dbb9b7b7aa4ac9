"""Planted gamma-margin halfspace data with optional random classification noise."""
from __future__ import annotations

import math
from typing import List, Optional

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from .core import Dataset, Halfspace, NormSpec, dual_exponent, format_p, norm, parse_p
from .errors import GenerationError
from .schemas import DatasetMetadata
from .utils import derive_rng

logger = structlog.get_logger()

# rejection sampling gives up after this many draws per requested example
_DRAWS_PER_EXAMPLE = 1000


def _generalized_gaussian(rng: np.random.Generator, shape: tuple[int, ...], p: float) -> np.ndarray:
    """Coordinates with density proportional to exp(-|t|^p)."""
    mag = rng.gamma(1.0 / p, 1.0, size=shape) ** (1.0 / p)
    return mag * rng.choice((-1.0, 1.0), size=shape)


def sample_lp_ball(rng: np.random.Generator, n: int, d: int, p: float) -> np.ndarray:
    """n points uniform in the unit l_p ball of R^d."""
    p = parse_p(p)
    if math.isinf(p):
        return rng.uniform(-1.0, 1.0, size=(n, d))
    g = _generalized_gaussian(rng, (n, d), p)
    e = rng.exponential(1.0, size=(n, 1))
    radial = (np.sum(np.abs(g) ** p, axis=1, keepdims=True) + e) ** (1.0 / p)
    return g / radial


def sample_lq_sphere(rng: np.random.Generator, d: int, q: float) -> np.ndarray:
    """A random direction normalized to unit l_q norm."""
    q = parse_p(q)
    g = rng.uniform(-1.0, 1.0, size=d) if math.isinf(q) else _generalized_gaussian(rng, (d,), q)
    while not np.any(g):
        g = rng.standard_normal(d)
    return g / norm(g, q)


class PlantSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    d: int = Field(ge=1)
    m: int = Field(ge=1)
    gamma: float = Field(gt=0, lt=1)
    p: float = 2.0
    eta: float = Field(default=0.0, ge=0, lt=0.5, description="label noise rate, 0 <= eta < 1/2")
    seed: int = 0
    w_star: Optional[List[float]] = None
    bias: float = 0.0
    margin_slack: float = Field(default=0.0, ge=0)

    @field_validator("p", mode="before")
    @classmethod
    def parse_norm(cls, value):
        return parse_p(value)

    @field_serializer("p")
    def dump_p(self, p: float):
        return format_p(p)

    @model_validator(mode="after")
    def check_plant(self):
        if self.w_star is not None:
            if len(self.w_star) != self.d:
                raise ValueError(f"w_star has {len(self.w_star)} coordinates, expected {self.d}")
            if not any(self.w_star):
                raise ValueError("w_star must be nonzero")
        return self

    @property
    def q(self) -> float:
        return dual_exponent(self.p)


def planted_weights(spec: PlantSpec) -> np.ndarray:
    if spec.w_star is not None:
        w = np.asarray(spec.w_star, dtype=np.float64)
        return w / norm(w, spec.q)
    return sample_lq_sphere(derive_rng(spec.seed, "gen", "w_star"), spec.d, spec.q)


def planted_halfspace(meta: DatasetMetadata) -> Halfspace:
    if meta.w_star is None:
        raise GenerationError("dataset metadata carries no planted halfspace")
    return Halfspace(np.asarray(meta.w_star), meta.bias or 0.0)


def generate(spec: PlantSpec) -> Dataset:
    """m points of the unit l_p ball with |<w*, x> + b*| > gamma, labels flipped at rate eta."""
    w_star = planted_weights(spec)
    rng = derive_rng(spec.seed, "gen", "features")
    threshold = spec.gamma + spec.margin_slack
    budget = _DRAWS_PER_EXAMPLE * spec.m

    kept: list[np.ndarray] = []
    have = drawn = 0
    while have < spec.m:
        if drawn >= budget:
            raise GenerationError(
                f"only {have}/{spec.m} points cleared margin {threshold:g} after {drawn} draws; "
                "try a smaller gamma"
            )
        batch = min(max(2 * (spec.m - have), 256), budget - drawn)
        cand = sample_lp_ball(rng, batch, spec.d, spec.p)
        drawn += batch
        ok = np.abs(cand @ w_star + spec.bias) > threshold
        kept.append(cand[ok])
        have += int(ok.sum())
        logger.debug("gen.rejection", drawn=drawn, accepted=have)
    X = np.concatenate(kept)[: spec.m]

    scores = X @ w_star + spec.bias
    if np.abs(scores).min() <= spec.gamma:
        raise GenerationError("margin certificate failed after generation")
    if max(norm(x, spec.p) for x in X) > 1.0 + 1e-12:
        raise GenerationError("norm certificate failed after generation")

    clean = np.where(scores > 0, 1, -1)
    flips = derive_rng(spec.seed, "gen", "noise").random(spec.m) < spec.eta
    y = np.where(flips, -clean, clean)
    logger.info("gen.done", m=spec.m, d=spec.d, draws=drawn, acceptance=round(spec.m / drawn, 4), flipped=int(flips.sum()))

    meta = DatasetMetadata(
        seed=spec.seed, gamma=spec.gamma, eta=spec.eta, p=format_p(spec.p), w_star=w_star.tolist(), bias=spec.bias
    )
    return Dataset(X, y, meta)


def generate_overlap(spec: PlantSpec, radius: float, adversary_p: float | str = "inf") -> Dataset:
    """A planted sample plus one opposite-label point at l_p distance ``radius``.

    Balls of that radius around the two points share their midpoint, so no halfspace
    is robustly correct on both.
    """
    base = generate(spec)
    a_spec = NormSpec(adversary_p)
    sizes = np.array([norm(x, a_spec.p) for x in base.X])
    i = int(np.argmax(sizes))
    x_a = base.X[i]
    x_b = x_a - radius * x_a / sizes[i]
    X = np.vstack([base.X, x_b[None, :]])
    y = np.append(base.y, -base.y[i])
    logger.info("gen.overlap", anchor=i, radius=radius, p=format_p(a_spec.p))
    return Dataset(X, y, base.metadata)
