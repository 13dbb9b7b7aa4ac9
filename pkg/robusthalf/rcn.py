"""Margin-robust halfspace learning under random classification noise.

Two convex surrogates are minimized with stochastic mirror descent over the unit
l_q ball (q dual to the data norm p):

  * the leaky hinge phi(s) = lam (1 - s/gamma) for s > gamma, (1 - lam)(1 - s/gamma)
    otherwise, with lam = (eps gamma / 2 + eta) / (1 + eps gamma);
  * the GLM loss, the integral of u(s) - y over [0, <w, x>] for the clamped affine
    link u and labels in {0, 1}.

A robust error of (margin_fraction * gamma) against any l_p adversary equals the
corresponding margin error of the learned w.
"""
from __future__ import annotations

import math
from typing import Literal, Optional

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from .config import settings
from .core import Dataset, NormSpec, dual_exponent, format_p, norm, parse_p
from .errors import InvalidInputError
from .mirror import MirrorDescentConfig, TrainedModel, smd_minimize
from .utils import derive_rng

logger = structlog.get_logger()

Surrogate = Literal["leaky", "glm", "perceptron"]


class SurrogateSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma: float = Field(gt=0, le=1)
    eta: float = Field(ge=0, lt=0.5)
    epsilon: float = Field(gt=0, lt=1)
    p: float = 2.0
    margin_fraction: float = Field(default=0.5, gt=0, lt=1)

    @field_validator("p", mode="before")
    @classmethod
    def parse_norm(cls, value):
        return parse_p(value)

    @field_serializer("p")
    def dump_p(self, p: float):
        return format_p(p)

    @model_validator(mode="after")
    def check_slope(self):
        if not (self.eta <= self.lam <= 0.5):
            raise ValueError(f"mixing slope {self.lam} outside [eta, 1/2]")
        return self

    @property
    def lam(self) -> float:
        eg = self.epsilon * self.gamma
        return (eg / 2.0 + self.eta) / (1.0 + eg)

    @property
    def eps_prime(self) -> float:
        """Surrogate suboptimality that suffices for the leaky hinge."""
        return self.lam - self.eta

    @property
    def eps_prime_glm(self) -> float:
        return self.epsilon * self.gamma * (1.0 - 2.0 * self.eta) / 16.0

    @property
    def q(self) -> float:
        return dual_exponent(self.p)

    @property
    def norm_spec(self) -> NormSpec:
        return NormSpec(self.p)


# ---------------------------------------------------
# Leaky hinge
# ---------------------------------------------------
def phi(s, spec: SurrogateSpec):
    s = np.asarray(s, dtype=np.float64)
    lam, g = spec.lam, spec.gamma
    out = np.where(s > g, lam * (1.0 - s / g), (1.0 - lam) * (1.0 - s / g))
    return float(out) if out.ndim == 0 else out


def phi_grad(s, spec: SurrogateSpec):
    s = np.asarray(s, dtype=np.float64)
    out = np.where(s > spec.gamma, -spec.lam / spec.gamma, -(1.0 - spec.lam) / spec.gamma)
    return float(out) if out.ndim == 0 else out


def noisy_point_objective(z, spec: SurrogateSpec):
    """E over the noisy label of phi(y <w, x>), with z = h*(x) <w, x>."""
    return spec.eta * phi(-np.asarray(z, dtype=np.float64), spec) + (1.0 - spec.eta) * phi(z, spec)


def decomposed_point_objective(z, spec: SurrogateSpec):
    """The same quantity as a linear part plus corrections on z <= gamma."""
    z = np.asarray(z, dtype=np.float64)
    lam, eta, g = spec.lam, spec.eta, spec.gamma
    t = z / g
    out = (eta - lam) * t + lam + eta - 2.0 * lam * eta
    out = out + np.where((z >= -g) & (z <= g), (1.0 - eta) * (1.0 - 2.0 * lam) * (1.0 - t), 0.0)
    out = out + np.where(z < -g, (1.0 - 2.0 * lam) * (1.0 - 2.0 * eta - t), 0.0)
    return float(out) if out.ndim == 0 else out


def surrogate_lower_bound(spec: SurrogateSpec, half_margin_rate: float) -> float:
    """Lower bound on E[phi] given P[h*(x)<w, x> <= gamma/2]."""
    lam, eta, g = spec.lam, spec.eta, spec.gamma
    return (eta - lam) / g + 0.5 * (1.0 - 2.0 * lam) * (1.0 - eta) * half_margin_rate + lam + eta - 2.0 * lam * eta


def optimum_upper_bound(spec: SurrogateSpec) -> float:
    """Upper bound on E[phi(y <w*, x>)] for a planted gamma-margin halfspace."""
    return 2.0 * spec.eta * (1.0 - spec.lam)


def suboptimality_margin_bound(spec: SurrogateSpec, eps_prime: float) -> float:
    """Noisy gamma/2-margin error of any eps_prime-suboptimal w."""
    lam, eta = spec.lam, spec.eta
    return eta + 2.0 * (eps_prime + (lam - eta) * (1.0 / spec.gamma - 1.0)) / (1.0 - 2.0 * lam)


def glm_margin_bound(spec: SurrogateSpec, excess: float) -> float:
    """Clean gamma/2-margin error implied by an excess GLM loss."""
    return 16.0 * excess / (spec.gamma * (1.0 - 2.0 * spec.eta))


def check_data_norm(S: Dataset, p: float, tol: float | None = None) -> None:
    tol = settings.TOLERANCE if tol is None else tol
    worst = max(norm(x, p) for x in S.X)
    if worst > 1.0 + tol:
        raise InvalidInputError(f"data must lie in the unit l_{format_p(p)} ball, found norm {worst:.6g}")


def surrogate_value(w: np.ndarray, S: Dataset, spec: SurrogateSpec) -> float:
    check_data_norm(S, spec.p)
    return float(np.mean(phi(S.y * (S.X @ w), spec)))


# ---------------------------------------------------
# GLM surrogate
# ---------------------------------------------------
def link_u(s, eta: float, gamma: float):
    s = np.asarray(s, dtype=np.float64)
    out = np.clip((1.0 - 2.0 * eta) / (2.0 * gamma) * s + 0.5, eta, 1.0 - eta)
    return float(out) if out.ndim == 0 else out


def _link_integral(t: np.ndarray, eta: float, gamma: float) -> np.ndarray:
    """U(t), the integral of u over [0, t]."""
    slope = (1.0 - 2.0 * eta) / (2.0 * gamma)

    def middle(v):
        return 0.5 * slope * v * v + 0.5 * v

    return np.where(
        t > gamma,
        middle(gamma) + (1.0 - eta) * (t - gamma),
        np.where(t < -gamma, middle(-gamma) + eta * (t + gamma), middle(t)),
    )


def to_01(y) -> np.ndarray:
    return (np.asarray(y, dtype=np.float64) + 1.0) / 2.0


def glm_loss(w: np.ndarray, x: np.ndarray, y01, eta: float, gamma: float):
    """Loss of one example (1-d x) or per-example losses (2-d x); labels in {0, 1}."""
    t = np.asarray(x @ w, dtype=np.float64)
    out = _link_integral(t, eta, gamma) - np.asarray(y01, dtype=np.float64) * t
    return float(out) if out.ndim == 0 else out


def glm_grad(w: np.ndarray, x: np.ndarray, y01, eta: float, gamma: float) -> np.ndarray:
    """(u(<w, x>) - y) x; averaged over rows for 2-d x."""
    x = np.asarray(x, dtype=np.float64)
    resid = np.asarray(link_u(x @ w, eta, gamma)) - np.asarray(y01, dtype=np.float64)
    if x.ndim == 1:
        return resid * x
    return resid @ x / x.shape[0]


# ---------------------------------------------------
# Training
# ---------------------------------------------------
def sample_budget(spec: SurrogateSpec, dim: int, surrogate: Surrogate = "leaky") -> int:
    """Stochastic gradient count for the target suboptimality, capped by SMD_MAX_STEPS."""
    if surrogate == "glm":
        lip, target = 1.0, spec.eps_prime_glm
    else:
        lip, target = (1.0 - spec.lam) / spec.gamma, spec.eps_prime
    q = spec.q
    if q == 1.0:
        factor = math.log(2 * dim)
    else:
        factor = 1.0 / min(q - 1.0, 1.0) if math.isfinite(q) else float(dim)
    return min(settings.SMD_MAX_STEPS, max(1, math.ceil(lip**2 * factor / target**2)))


def margin_fraction_error(model: TrainedModel, S: Dataset, spec: SurrogateSpec) -> float:
    """Noisy (margin_fraction * gamma)-margin error, unnormalized as in the guarantee."""
    return float(np.mean(S.y * (S.X @ model.w) <= spec.margin_fraction * spec.gamma))


def _config(spec: SurrogateSpec, S: Dataset, cfg: Optional[MirrorDescentConfig], surrogate: Surrogate, lipschitz: float) -> MirrorDescentConfig:
    if cfg is not None:
        return cfg
    return MirrorDescentConfig(q=spec.q, steps=sample_budget(spec, S.dim, surrogate), lipschitz=lipschitz)


def _monitor_subset(S: Dataset, seed: int) -> Dataset:
    if len(S) <= 2000:
        return S
    idx = derive_rng(seed, "smd", "monitor").choice(len(S), size=2000, replace=False)
    return S.subset(np.sort(idx))


def train_leaky(S: Dataset, spec: SurrogateSpec, cfg: Optional[MirrorDescentConfig] = None) -> TrainedModel:
    check_data_norm(S, spec.p)
    cfg = _config(spec, S, cfg, "leaky", (1.0 - spec.lam) / spec.gamma)
    m = len(S)
    monitor = _monitor_subset(S, cfg.seed)

    def grad(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, m, size=cfg.batch_size)
        X, y = S.X[idx], S.y[idx]
        coef = phi_grad(y * (X @ w), spec) * y
        return np.atleast_1d(coef) @ X / cfg.batch_size

    def value(w: np.ndarray) -> float:
        return float(np.mean(phi(monitor.y * (monitor.X @ w), spec)))

    model = smd_minimize(grad, S.dim, cfg, value)
    logger.info("rcn.trained", surrogate="leaky", steps=cfg.steps, lam=spec.lam, eps_prime=spec.eps_prime)
    return model


def train_glm(S: Dataset, spec: SurrogateSpec, cfg: Optional[MirrorDescentConfig] = None) -> TrainedModel:
    check_data_norm(S, spec.p)
    cfg = _config(spec, S, cfg, "glm", 1.0)
    m = len(S)
    y01 = to_01(S.y)
    monitor = _monitor_subset(S, cfg.seed)
    monitor01 = to_01(monitor.y)

    def grad(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, m, size=cfg.batch_size)
        return glm_grad(w, S.X[idx], y01[idx], spec.eta, spec.gamma)

    def value(w: np.ndarray) -> float:
        return float(np.mean(glm_loss(w, monitor.X, monitor01, spec.eta, spec.gamma)))

    model = smd_minimize(grad, S.dim, cfg, value)
    logger.info("rcn.trained", surrogate="glm", steps=cfg.steps, eps_prime=spec.eps_prime_glm)
    return model


def train_perceptron(S: Dataset, spec: SurrogateSpec, epochs: int = 20, seed: int = 0) -> TrainedModel:
    """Margin perceptron baseline: update while y<w, x> < (gamma/2) ||w||_2; returns unit-l2 weights."""
    rng = derive_rng(seed, "perceptron")
    w = np.zeros(S.dim)
    updates = 0
    for _ in range(epochs):
        mistakes = 0
        for i in rng.permutation(len(S)):
            x, y = S.X[i], S.y[i]
            if y * float(x @ w) <= spec.margin_fraction * spec.gamma * float(np.linalg.norm(w)):
                w = w + y * x
                mistakes += 1
        updates += mistakes
        if mistakes == 0:
            break
    n = float(np.linalg.norm(w))
    if n > 0:
        w = w / n
    logger.info("rcn.trained", surrogate="perceptron", updates=updates)
    return TrainedModel(w, 2.0, updates, 1.0)


def train(S: Dataset, spec: SurrogateSpec, surrogate: Surrogate, cfg: Optional[MirrorDescentConfig] = None) -> TrainedModel:
    if surrogate == "leaky":
        return train_leaky(S, spec, cfg)
    if surrogate == "glm":
        return train_glm(S, spec, cfg)
    return train_perceptron(S, spec, seed=cfg.seed if cfg else 0)
