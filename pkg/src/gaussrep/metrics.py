"""Distances between 2-D Gaussians: Kullback-Leibler, Bhattacharyya, Wasserstein.

Every metric takes ``(gt, pred)`` in that order. Only ``kld`` is asymmetric,
but the convention is kept everywhere so call sites never need to think
about it. Logarithms are natural.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

from .errors import InvalidInputError
from .geometry import Gaussian2


class MetricKind(str, Enum):
    KLD = "kld"
    BD = "bd"
    WD = "wd"


def det2(m: np.ndarray) -> float:
    return float(m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0])


def inv2(m: np.ndarray) -> np.ndarray:
    det = det2(m)
    if not det > 0:
        raise InvalidInputError(f"matrix is not positive definite (det={det})")
    return np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det


def _check_spd(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2):
        raise InvalidInputError(f"expected a 2x2 matrix, got shape {m.shape}")
    if not (m[0, 0] > 0 and m[1, 1] > 0 and det2(m) > 0):
        raise InvalidInputError("matrix is not positive definite")
    return m


def spd_sqrt(m) -> np.ndarray:
    """Principal square root of a 2x2 SPD matrix.

    Uses ``S = (M + sqrt(det M) I) / sqrt(tr M + 2 sqrt(det M))``, which
    follows from Cayley-Hamilton applied to ``S``.
    """
    m = _check_spd(m)
    s = math.sqrt(det2(m))
    t = math.sqrt(m[0, 0] + m[1, 1] + 2.0 * s)
    return (m + s * np.eye(2)) / t


def trace_sqrt_product(a, b) -> float:
    """``tr((A^1/2 B A^1/2)^1/2) = sqrt(tr(AB) + 2 sqrt(det A det B))``."""
    a = _check_spd(a)
    b = _check_spd(b)
    tr_ab = a[0, 0] * b[0, 0] + a[0, 1] * b[1, 0] + a[1, 0] * b[0, 1] + a[1, 1] * b[1, 1]
    return math.sqrt(tr_ab + 2.0 * math.sqrt(det2(a) * det2(b)))


def kld(g: Gaussian2, p: Gaussian2) -> float:
    """KL divergence ``KL(N_g || N_p)``."""
    p_inv = inv2(p.sigma)
    d = p.mu - g.mu
    trace_term = float(np.sum(p_inv * g.sigma.T))
    value = 0.5 * (trace_term + math.log(p.det / g.det) - 2.0 + float(d @ p_inv @ d))
    return max(value, 0.0)


def bd(g: Gaussian2, p: Gaussian2) -> float:
    """Bhattacharyya distance, with the pooled covariance ``(Sigma_g + Sigma_p) / 2``."""
    pooled = 0.5 * (g.sigma + p.sigma)
    d = g.mu - p.mu
    pooled_det = det2(pooled)
    value = 0.125 * float(d @ inv2(pooled) @ d) + 0.5 * math.log(
        pooled_det / math.sqrt(g.det * p.det)
    )
    return max(value, 0.0)


def wd(g: Gaussian2, p: Gaussian2) -> float:
    """Squared 2-Wasserstein distance."""
    d = g.mu - p.mu
    value = (
        float(d @ d)
        + float(np.trace(g.sigma))
        + float(np.trace(p.sigma))
        - 2.0 * trace_sqrt_product(g.sigma, p.sigma)
    )
    return max(value, 0.0)


_METRICS = {MetricKind.KLD: kld, MetricKind.BD: bd, MetricKind.WD: wd}


def distance(metric: MetricKind | str, g: Gaussian2, p: Gaussian2) -> float:
    return _METRICS[MetricKind(metric)](g, p)
