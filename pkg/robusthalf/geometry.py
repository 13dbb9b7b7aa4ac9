"""Nearest points of finitely generated convex hulls (Wolfe's minimum-norm-point method)."""
from __future__ import annotations

import numpy as np
import structlog

logger = structlog.get_logger()

_WEIGHT_EPS = 1e-14


def _affine_minimizer(C: np.ndarray) -> np.ndarray:
    """Weights alpha, sum(alpha) = 1, minimizing ||alpha @ C|| over the affine hull of the rows."""
    k = C.shape[0]
    if k == 1:
        return np.ones(1)
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = C @ C.T
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    alpha = sol[:k]
    return alpha / alpha.sum()


def min_norm_point(P: np.ndarray, max_iter: int | None = None, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Point of conv(rows of P) closest to the origin, with its convex weights.

    Major cycles add the generator minimizing <p, x>; minor cycles walk back towards the
    current corral when the affine minimizer leaves the simplex. ``max_iter`` defaults to
    10*k*d major cycles.
    """
    P = np.asarray(P, dtype=np.float64)
    k, d = P.shape
    if max_iter is None:
        max_iter = max(10 * k * d, 10)

    sq = np.einsum("ij,ij->i", P, P)
    eps = tol * max(float(sq.max()), 1e-300)

    i = int(np.argmin(sq))
    corral = [i]
    lam = np.ones(1)
    x = P[i].copy()

    for _ in range(max_iter):
        dots = P @ x
        j = int(np.argmin(dots))
        if x @ x - dots[j] <= eps or j in corral:
            break
        x_before = x
        corral.append(j)
        lam = np.append(lam, 0.0)

        while True:
            C = P[corral]
            alpha = _affine_minimizer(C)
            if np.all(alpha > _WEIGHT_EPS):
                lam = alpha
                x = alpha @ C
                break
            neg = alpha <= _WEIGHT_EPS
            denom = lam[neg] - alpha[neg]
            ratios = np.where(denom > 0, lam[neg] / np.where(denom > 0, denom, 1.0), 0.0)
            theta = float(np.clip(ratios.min(), 0.0, 1.0))
            lam = theta * alpha + (1.0 - theta) * lam
            keep = lam > _WEIGHT_EPS
            if keep.all():
                drop = np.flatnonzero(neg)[int(np.argmin(lam[neg]))]
                keep[drop] = False
            corral = [c for c, kept in zip(corral, keep) if kept]
            lam = lam[keep]
            lam = lam / lam.sum()
            x = lam @ P[corral]

        # the new generator was rejected outright: no further progress possible
        if j not in corral and np.allclose(x, x_before, rtol=0.0, atol=1e-15):
            break
    else:
        logger.debug("min_norm_point.iteration_cap", k=k, d=d, max_iter=max_iter)

    weights = np.zeros(k)
    weights[corral] = lam
    return x, weights


def nearest_hull_point(points: np.ndarray, z: np.ndarray, max_iter: int | None = None) -> np.ndarray:
    """Point of conv(points) nearest to z."""
    offset, _ = min_norm_point(np.asarray(points, dtype=np.float64) - z, max_iter=max_iter)
    return offset + z
