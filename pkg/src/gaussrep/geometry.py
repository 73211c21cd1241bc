"""Oriented-object representations and conversions to and from 2-D Gaussians.

Four representations are supported:

* :class:`Obb` -- five-parameter oriented box ``(cx, cy, w, h, theta)``
* :class:`Qbb` -- four corner points, order irrelevant
* :class:`PointSetRep` -- ``K >= 3`` free points
* :class:`Gaussian2` -- mean and covariance, the common currency

Boxes map to Gaussians in closed form (eigenvalues ``w**2/4`` and ``h**2/4``);
point sets map via maximum likelihood (sample mean, population covariance).
A Gaussian decodes back to the canonical box, ``w >= h`` and
``theta in [-pi/2, pi/2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateCovarianceError, InvalidInputError

HALF_PI = 0.5 * math.pi

# Relative eigenvalue floor used when regularizing fitted covariances.
REG_EPS = 1e-7
# Eigenvalue ratio below which a Gaussian decodes as a square with theta = 0.
SQUARE_RATIO_TOL = 1e-9


def _as_points(points, min_count: int) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputError(f"points must have shape (N, 2), got {arr.shape}")
    if arr.shape[0] < min_count:
        raise InvalidInputError(f"need at least {min_count} points, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("points contain non-finite coordinates")
    return arr


@dataclass(frozen=True)
class Obb:
    cx: float
    cy: float
    w: float
    h: float
    theta: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h", "theta"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidInputError(f"Obb.{name} must be finite, got {value!r}")
        if self.w <= 0 or self.h <= 0:
            raise InvalidInputError(f"Obb needs w > 0 and h > 0, got w={self.w}, h={self.h}")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h, self.theta)

    def to_json(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "w": self.w, "h": self.h, "theta": self.theta}

    @classmethod
    def from_json(cls, obj: dict) -> "Obb":
        missing = [k for k in ("cx", "cy", "w", "h", "theta") if k not in obj]
        if missing:
            raise InvalidInputError(f"Obb JSON missing field(s): {', '.join(missing)}")
        return cls(*(_json_float(obj, k) for k in ("cx", "cy", "w", "h", "theta")))


@dataclass(frozen=True, eq=False)
class Qbb:
    """Quadrilateral given by four corners; corner order is never relied upon."""

    corners: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "corners", _as_points(self.corners, 4))
        if self.corners.shape[0] != 4:
            raise InvalidInputError(f"Qbb needs exactly 4 corners, got {self.corners.shape[0]}")
        self.corners.setflags(write=False)

    def __eq__(self, other):
        return isinstance(other, Qbb) and np.array_equal(self.corners, other.corners)

    def to_json(self) -> dict:
        return {"corners": self.corners.tolist()}


@dataclass(frozen=True, eq=False)
class PointSetRep:
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points, 3))
        self.points.setflags(write=False)

    def __len__(self):
        return self.points.shape[0]

    def __eq__(self, other):
        return isinstance(other, PointSetRep) and np.array_equal(self.points, other.points)

    def to_json(self) -> dict:
        return {"points": self.points.tolist()}


@dataclass(frozen=True, eq=False)
class Gaussian2:
    """2-D Gaussian with mean ``mu`` (2,) and symmetric positive-definite ``sigma`` (2, 2)."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=float)
        if mu.shape != (2,) or sigma.shape != (2, 2):
            raise InvalidInputError(
                f"Gaussian2 needs mu of shape (2,) and sigma of shape (2, 2), got {mu.shape}, {sigma.shape}"
            )
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise InvalidInputError("Gaussian2 parameters must be finite")
        if abs(sigma[0, 1] - sigma[1, 0]) > 1e-12 * (1.0 + abs(sigma[0, 1])):
            raise InvalidInputError("sigma is not symmetric")
        a, b, c = sigma[0, 0], sigma[0, 1], sigma[1, 1]
        if not (a > 0 and c > 0 and a * c - b * b > 0):
            raise InvalidInputError("sigma is not positive definite")
        mu.setflags(write=False)
        sigma = sigma.copy()
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def det(self) -> float:
        s = self.sigma
        return float(s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0])

    def __eq__(self, other):
        return (
            isinstance(other, Gaussian2)
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.sigma, other.sigma)
        )

    def allclose(self, other: "Gaussian2", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.mu, other.mu, rtol=0, atol=atol)
            and np.allclose(self.sigma, other.sigma, rtol=0, atol=atol)
        )

    def transformed(self, scale: float = 1.0, angle: float = 0.0, shift=(0.0, 0.0)) -> "Gaussian2":
        """Image of this Gaussian under ``x -> scale * R(angle) x + shift``."""
        rot = rotation(angle)
        mu = scale * rot @ self.mu + np.asarray(shift, dtype=float)
        sigma = scale * scale * rot @ self.sigma @ rot.T
        return Gaussian2(mu, symmetrize(sigma))

    def to_json(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Gaussian2":
        if "mu" not in obj or "sigma" not in obj:
            raise InvalidInputError("Gaussian2 JSON needs 'mu' and 'sigma'")
        try:
            mu = np.asarray(obj["mu"], dtype=float)
            sigma = np.asarray(obj["sigma"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(f"Gaussian2 JSON field is not numeric: {exc}") from None
        return cls(mu, sigma)


def _json_float(obj: dict, key: str) -> float:
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidInputError(f"field '{key}' must be a number, got {value!r}")
    return float(value)


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def fold_angle(theta: float) -> float:
    """Fold an angle into ``[-pi/2, pi/2)`` modulo pi."""
    t = (theta + HALF_PI) % math.pi
    if t >= math.pi:
        t -= math.pi
    return t - HALF_PI


def canonicalize_obb(box: Obb) -> Obb:
    """Long-side form: ``w >= h`` and ``theta in [-pi/2, pi/2)``; same Gaussian."""
    w, h, theta = box.w, box.h, box.theta
    if w < h:
        w, h, theta = h, w, theta + HALF_PI
    return Obb(box.cx, box.cy, w, h, fold_angle(theta))


def obb_to_gaussian(box: Obb) -> Gaussian2:
    lam1 = box.w * box.w / 4.0
    lam2 = box.h * box.h / 4.0
    c, s = math.cos(box.theta), math.sin(box.theta)
    off = (lam1 - lam2) * c * s
    sigma = np.array(
        [
            [lam1 * c * c + lam2 * s * s, off],
            [off, lam1 * s * s + lam2 * c * c],
        ]
    )
    return Gaussian2(np.array([box.cx, box.cy]), sigma)


def sym_eig2(sigma: np.ndarray) -> tuple[float, float, float]:
    """Closed-form eigensystem of a symmetric 2x2 matrix.

    Returns ``(lam_max, lam_min, angle)`` where ``angle`` in ``(-pi/2, pi/2]``
    is the direction of the ``lam_max`` eigenvector.
    """
    a, b, c = float(sigma[0, 0]), float(sigma[0, 1]), float(sigma[1, 1])
    half_diff = 0.5 * (a - c)
    r = math.hypot(half_diff, b)
    mid = 0.5 * (a + c)
    lam_max = mid + r
    det = a * c - b * b
    # det / lam_max avoids cancellation in mid - r for thin ellipses.
    lam_min = det / lam_max if lam_max > 0 else mid - r
    angle = 0.5 * math.atan2(2.0 * b, a - c)
    return lam_max, lam_min, angle


def gaussian_to_obb(g: Gaussian2) -> Obb:
    lam_max, lam_min, angle = sym_eig2(g.sigma)
    if lam_min <= 0:
        raise InvalidInputError("sigma is not positive definite")
    theta = 0.0 if lam_max / lam_min < 1.0 + SQUARE_RATIO_TOL else fold_angle(angle)
    return Obb(
        float(g.mu[0]), float(g.mu[1]), 2.0 * math.sqrt(lam_max), 2.0 * math.sqrt(lam_min), theta
    )


def obb_to_qbb(box: Obb) -> Qbb:
    """Corners counter-clockwise, starting from the image of ``(+w/2, +h/2)``."""
    hw, hh = 0.5 * box.w, 0.5 * box.h
    local = np.array([[hw, hh], [-hw, hh], [-hw, -hh], [hw, -hh]])
    return Qbb(local @ rotation(box.theta).T + np.array([box.cx, box.cy]))


def obb_to_pointset(box: Obb) -> PointSetRep:
    """Nine-point 3x3 lattice whose MLE Gaussian equals ``obb_to_gaussian(box)``.

    Lattice offsets ``{-a, 0, a}`` have variance ``2a**2/3`` per axis, so
    ``a = sqrt(3/2) * w/2`` reproduces eigenvalue ``w**2/4``.
    """
    k = math.sqrt(1.5)
    ax, ay = k * 0.5 * box.w, k * 0.5 * box.h
    local = np.array([(i * ax, j * ay) for j in (-1, 0, 1) for i in (-1, 0, 1)])
    return PointSetRep(local @ rotation(box.theta).T + np.array([box.cx, box.cy]))


def _fit_arrays(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Mean, raw covariance, regularized covariance and the added epsilon.

    Points are summed in lexicographic order so that the result is bit-identical
    under any permutation of the input.
    """
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    ordered = pts[order]
    n = ordered.shape[0]
    mu = ordered.sum(axis=0) / n
    centered = ordered - mu
    if not np.any(centered):
        raise DegenerateCovarianceError("all points coincide; covariance has rank 0")
    raw = symmetrize(centered.T @ centered / n)
    trace = float(raw[0, 0] + raw[1, 1])
    _, lam_min, _ = sym_eig2(raw)
    scale = max(trace, 1.0)
    eps = 0.0
    if lam_min < REG_EPS * scale:
        eps = REG_EPS * scale
    return mu, raw, raw + eps * np.eye(2), eps


def fit_gaussian_mle(pts: PointSetRep | Qbb | Sequence) -> Gaussian2:
    """Sample mean and population (divisor N) covariance of a point set.

    Near-singular covariances get ``eps * I`` added, ``eps = 1e-7 * max(trace, 1)``.
    """
    if isinstance(pts, PointSetRep):
        arr = np.asarray(pts.points)
    elif isinstance(pts, Qbb):
        arr = np.asarray(pts.corners)
    else:
        arr = _as_points(pts, 3)
    mu, _, sigma, _ = _fit_arrays(arr)
    return Gaussian2(mu, sigma)


def apply_offsets(pts: PointSetRep, offsets) -> PointSetRep:
    off = np.asarray(offsets, dtype=float)
    if off.shape != pts.points.shape:
        raise InvalidInputError(
            f"offsets shape {off.shape} does not match point set shape {pts.points.shape}"
        )
    return PointSetRep(pts.points + off)


def gaussian_density(g: Gaussian2, x) -> float:
    d = np.asarray(x, dtype=float) - g.mu
    s = g.sigma
    det = g.det
    inv = np.array([[s[1, 1], -s[0, 1]], [-s[1, 0], s[0, 0]]]) / det
    return float(math.exp(-0.5 * d @ inv @ d) / (2.0 * math.pi * math.sqrt(det)))


# --- rotated IoU ---------------------------------------------------------


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area (positive for counter-clockwise vertex order)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a polygon against a convex CCW polygon."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inputs, output = output, []
        prev = inputs[-1]
        prev_side = side(prev)
        for cur in inputs:
            cur_side = side(cur)
            if cur_side >= 0:
                if prev_side < 0:
                    output.append(_intersect(prev, cur, prev_side, cur_side))
                output.append(cur)
            elif prev_side >= 0:
                output.append(_intersect(prev, cur, prev_side, cur_side))
            prev, prev_side = cur, cur_side
    return np.array(output, dtype=float).reshape(-1, 2)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def rotated_iou(a: Obb, b: Obb) -> float:
    pa = obb_to_qbb(a).corners
    pb = obb_to_qbb(b).corners
    area_a = a.w * a.h
    area_b = b.w * b.h
    inter = polygon_area(clip_convex(pa, pb))
    inter = min(max(inter, 0.0), area_a, area_b)
    union = area_a + area_b - inter
    if union <= 0:
        return 0.0
    return float(min(1.0, inter / union))


def points_in_obb(box: Obb, xy: np.ndarray) -> np.ndarray:
    c, s = math.cos(box.theta), math.sin(box.theta)
    dx = xy[:, 0] - box.cx
    dy = xy[:, 1] - box.cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (np.abs(u) <= 0.5 * box.w) & (np.abs(v) <= 0.5 * box.h)


def mc_iou(a: Obb, b: Obb, samples: int = 1_000_000, seed: int = 0) -> float:
    """Monte-Carlo IoU from uniform samples over the joint bounding rectangle."""
    if samples < 10_000:
        raise InvalidInputError("mc_iou needs at least 1e4 samples")
    corners = np.vstack([obb_to_qbb(a).corners, obb_to_qbb(b).corners])
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    rng = np.random.default_rng(seed)
    xy = lo + (hi - lo) * rng.random((samples, 2))
    in_a = points_in_obb(a, xy)
    in_b = points_in_obb(b, xy)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union
