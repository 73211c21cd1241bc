"""Normalized regression losses over Gaussian distances, with point gradients.

The prediction is a point set; its Gaussian comes from the MLE fit, so the
loss is a smooth function of the raw point coordinates. ``loss_grad_points``
differentiates through the normalization, the distance and the fit by hand;
``fd_gradient`` is the central-difference check for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .errors import InvalidInputError
from .geometry import REG_EPS, Gaussian2, Obb, PointSetRep, _fit_arrays, obb_to_gaussian
from .metrics import MetricKind, det2, distance, inv2, trace_sqrt_product


# Below this the distance is rounding noise around the minimum. sqrt(D) makes
# L_KLD a cone there, so its gradient would be an O(1) vector in a random
# direction; zero is a valid subgradient at the tip and is returned instead.
STATIONARY_DISTANCE = 1e-12


class LossKind(str, Enum):
    L_KLD = "lkld"
    L_BD = "lbd"
    L_WD = "lwd"

    @property
    def metric(self) -> MetricKind:
        return _LOSS_METRIC[self]


_LOSS_METRIC = {
    LossKind.L_KLD: MetricKind.KLD,
    LossKind.L_BD: MetricKind.BD,
    LossKind.L_WD: MetricKind.WD,
}


@dataclass(frozen=True)
class LossGradient:
    value: float
    d_points: np.ndarray


def normalize(kind: LossKind | str, dist: float) -> float:
    """Map a raw distance to the bounded loss for ``kind``."""
    kind = LossKind(kind)
    if kind is LossKind.L_KLD:
        return 1.0 - 1.0 / (2.0 + math.sqrt(dist))
    if kind is LossKind.L_BD:
        return 1.0 - 1.0 / (1.0 + dist)
    return 1.0 - 1.0 / (1.0 + math.log1p(dist))


def loss(kind: LossKind | str, g: Gaussian2, p: Gaussian2) -> float:
    """Normalized loss between ground truth ``g`` and prediction ``p``."""
    kind = LossKind(kind)
    return normalize(kind, distance(kind.metric, g, p))


def _dloss_ddist(kind: LossKind, dist: float) -> float:
    if kind is LossKind.L_KLD:
        # Chain through sqrt(D): finite as long as D > 0; the caller handles D == 0.
        u = math.sqrt(dist)
        return 1.0 / ((2.0 + u) ** 2 * 2.0 * u)
    if kind is LossKind.L_BD:
        return 1.0 / (1.0 + dist) ** 2
    lg = math.log1p(dist)
    return 1.0 / ((1.0 + lg) ** 2 * (1.0 + dist))


def _distance_and_grad(metric: MetricKind, g: Gaussian2, mu_p: np.ndarray, sig_p: np.ndarray):
    """Distance plus its gradient w.r.t. the prediction mean and covariance.

    The covariance gradient is the symmetric matrix ``G`` with
    ``dD = tr(G dSigma_p)`` for symmetric perturbations.
    """
    sig_g = np.asarray(g.sigma)
    if metric is MetricKind.KLD:
        p_inv = inv2(sig_p)
        d = mu_p - g.mu
        pd = p_inv @ d
        value = 0.5 * (
            float(np.sum(p_inv * sig_g.T))
            + math.log(det2(sig_p) / det2(sig_g))
            - 2.0
            + float(d @ pd)
        )
        grad_mu = pd
        grad_sig = 0.5 * (p_inv - p_inv @ sig_g @ p_inv - np.outer(pd, pd))
    elif metric is MetricKind.BD:
        pooled = 0.5 * (sig_g + sig_p)
        m_inv = inv2(pooled)
        d = g.mu - mu_p
        md = m_inv @ d
        value = 0.125 * float(d @ md) + 0.5 * math.log(
            det2(pooled) / math.sqrt(det2(sig_g) * det2(sig_p))
        )
        grad_mu = -0.25 * md
        grad_sig = -0.0625 * np.outer(md, md) + 0.25 * m_inv - 0.25 * inv2(sig_p)
    else:
        d = mu_p - g.mu
        root_det = math.sqrt(det2(sig_g) * det2(sig_p))
        t = trace_sqrt_product(sig_g, sig_p)
        value = float(d @ d) + float(np.trace(sig_g) + np.trace(sig_p)) - 2.0 * t
        grad_mu = 2.0 * d
        grad_sig = np.eye(2) - (sig_g + root_det * inv2(sig_p)) / t
    return max(value, 0.0), grad_mu, grad_sig


def loss_grad_points(kind: LossKind | str, gt: Gaussian2, pts: PointSetRep) -> LossGradient:
    """Loss value and its gradient w.r.t. every point coordinate.

    With ``mu = mean(x)`` and ``Sigma = mean((x - mu)(x - mu)^T)`` the chain
    rule gives ``dD/dx_k = dD/dmu / N + 2 G (x_k - mu) / N``; the mean's own
    dependence on ``x_k`` drops out because centered points sum to zero.
    """
    kind = LossKind(kind)
    x = np.asarray(pts.points)
    mu, raw, sigma, eps = _fit_arrays(x)
    dist, grad_mu, grad_sig = _distance_and_grad(kind.metric, gt, mu, sigma)
    value = normalize(kind, dist)
    n = x.shape[0]
    if dist <= STATIONARY_DISTANCE:
        return LossGradient(value, np.zeros_like(x))
    if eps > 0.0 and raw[0, 0] + raw[1, 1] > 1.0:
        # eps = REG_EPS * trace(raw) also moves with the points.
        grad_sig = grad_sig + REG_EPS * np.trace(grad_sig) * np.eye(2)
    grad_dist = grad_mu / n + (2.0 / n) * (x - mu) @ grad_sig
    return LossGradient(value, _dloss_ddist(kind, dist) * grad_dist)


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, step: float) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    base = x.reshape(-1)
    for i in range(base.size):
        hi = base.copy()
        lo = base.copy()
        hi[i] += step
        lo[i] -= step
        flat[i] = (f(hi.reshape(x.shape)) - f(lo.reshape(x.shape))) / (2.0 * step)
    return grad


def default_step(points: np.ndarray) -> float:
    return 1e-5 * max(1.0, float(np.max(np.abs(points))))


def fd_gradient(
    kind: LossKind | str, gt: Gaussian2, pts: PointSetRep, step: float | None = None
) -> LossGradient:
    kind = LossKind(kind)
    x = np.asarray(pts.points, dtype=float)
    if step is None:
        step = default_step(x)
    if not step > 0:
        raise InvalidInputError("finite-difference step must be positive")

    def f(arr):
        mu, _, sigma, _ = _fit_arrays(arr)
        return normalize(kind, _distance_and_grad(kind.metric, gt, mu, sigma)[0])

    return LossGradient(f(x), central_difference(f, x, step))


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.linalg.norm(analytic - numeric) / (np.linalg.norm(numeric) + 1e-12))


def random_config(rng: np.random.Generator, k: int) -> tuple[Gaussian2, PointSetRep]:
    """A gt box Gaussian and a loosely related random point set."""
    cx, cy = rng.uniform(-10.0, 10.0, size=2)
    w, h = rng.uniform(1.0, 8.0, size=2)
    gt = obb_to_gaussian(Obb(float(cx), float(cy), float(w), float(h), float(rng.uniform(-np.pi, np.pi))))
    pts = rng.normal(0.0, 3.0, size=(k, 2)) + rng.uniform(-5.0, 5.0, size=2) + gt.mu
    return gt, PointSetRep(pts)


def gradient_check(
    kind: LossKind | str, trials: int = 100, seed: int = 0, point_counts=(4, 9)
) -> float:
    """Worst relative error of ``loss_grad_points`` against ``fd_gradient``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        for k in point_counts:
            gt, pts = random_config(rng, k)
            analytic = loss_grad_points(kind, gt, pts).d_points
            numeric = fd_gradient(kind, gt, pts).d_points
            worst = max(worst, relative_error(analytic, numeric))
    return worst


@dataclass(frozen=True)
class NormalizationCandidate:
    score_label: str
    loss_label: str
    score_fn: Callable[[float], float]
    loss_fn: Callable[[float], float]
    chosen: bool = False

    @property
    def description(self) -> str:
        return f"S = {self.score_label}; L = {self.loss_label}"


def candidate_normalizations(metric: MetricKind | str) -> list[NormalizationCandidate]:
    """Score/loss normalization pairs tried for each metric; the adopted pair is ``chosen``."""
    metric = MetricKind(metric)
    sqrt = math.sqrt
    if metric is MetricKind.KLD:
        s_main = ("1/(2+D)", lambda d: 1.0 / (2.0 + d))
        l_main = ("1-1/(2+sqrt(D))", lambda d: 1.0 - 1.0 / (2.0 + sqrt(d)))
        rows = [
            (s_main, l_main, True),
            (s_main, ("1-exp(-sqrt(D))", lambda d: 1.0 - math.exp(-sqrt(d))), False),
            (s_main, ("1-exp(-D^2)", lambda d: 1.0 - math.exp(-d * d)), False),
            (("1/(2+sqrt(D))", lambda d: 1.0 / (2.0 + sqrt(d))), l_main, False),
        ]
    elif metric is MetricKind.BD:
        s_main = ("1/(1+D^2)", lambda d: 1.0 / (1.0 + d * d))
        l_main = ("1-1/(1+D)", lambda d: 1.0 - 1.0 / (1.0 + d))
        rows = [
            (s_main, l_main, True),
            (s_main, ("log(1+D)", lambda d: math.log1p(d)), False),
            (s_main, ("5*D", lambda d: 5.0 * d), False),
            (("1/(1+D)", lambda d: 1.0 / (1.0 + d)), l_main, False),
        ]
    else:
        s_main = ("1/(2+D)", lambda d: 1.0 / (2.0 + d))
        l_main = ("1-1/(1+log(1+D))", lambda d: 1.0 - 1.0 / (1.0 + math.log1p(d)))
        rows = [
            (s_main, l_main, True),
            (s_main, ("1-1/(2+sqrt(D))", lambda d: 1.0 - 1.0 / (2.0 + sqrt(d))), False),
            (s_main, ("1-exp(-sqrt(D))", lambda d: 1.0 - math.exp(-sqrt(d))), False),
            (("1/(2+sqrt(D))", lambda d: 1.0 / (2.0 + sqrt(d))), l_main, False),
        ]
    return [
        NormalizationCandidate(s[0], l[0], s[1], l[1], chosen)
        for s, l, chosen in rows
    ]
