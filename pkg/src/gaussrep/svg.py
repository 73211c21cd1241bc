"""Plain-text SVG overlays: gt boxes, points, and 2-sigma covariance ellipses."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .geometry import Gaussian2, Obb, obb_to_qbb, sym_eig2


def _fmt(v: float) -> str:
    return f"{v:.4f}".rstrip("0").rstrip(".") or "0"


def ellipse_params(g: Gaussian2, nsigma: float = 2.0) -> tuple[float, float, float, float, float]:
    """``(cx, cy, rx, ry, angle_deg)`` with semi-axes ``nsigma * sqrt(lambda)``."""
    lam_max, lam_min, angle = sym_eig2(g.sigma)
    return (
        float(g.mu[0]),
        float(g.mu[1]),
        nsigma * math.sqrt(lam_max),
        nsigma * math.sqrt(lam_min),
        math.degrees(angle),
    )


class SvgCanvas:
    """Accumulates named layers and renders them into one ``<svg>`` document.

    World coordinates are used directly (y pointing down, as in image space);
    the view box is fitted to everything drawn, plus a margin.
    """

    def __init__(self, margin: float = 0.05):
        self.margin = margin
        self.layers: dict[str, list[str]] = {}
        self._pts: list[np.ndarray] = []

    def _layer(self, name: str) -> list[str]:
        return self.layers.setdefault(name, [])

    def boxes(self, layer: str, boxes: Iterable[Obb], stroke: str = "#1f77b4"):
        out = self._layer(layer)
        for box in boxes:
            corners = obb_to_qbb(box).corners
            self._pts.append(corners)
            pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in corners)
            out.append(f'<polygon points="{pts}" fill="none" stroke="{stroke}" />')

    def points(self, layer: str, pts: Sequence, radius: float = 1.0, fill: str = "#d62728"):
        out = self._layer(layer)
        arr = np.asarray(pts, dtype=float).reshape(-1, 2)
        self._pts.append(arr)
        for x, y in arr:
            out.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="{_fmt(radius)}" fill="{fill}" />')

    def ellipses(self, layer: str, gaussians: Iterable[Gaussian2], stroke: str = "#2ca02c"):
        out = self._layer(layer)
        for g in gaussians:
            cx, cy, rx, ry, deg = ellipse_params(g)
            r = max(rx, ry)
            self._pts.append(np.array([[cx - r, cy - r], [cx + r, cy + r]]))
            out.append(
                f'<ellipse cx="{_fmt(cx)}" cy="{_fmt(cy)}" rx="{_fmt(rx)}" ry="{_fmt(ry)}" '
                f'transform="rotate({_fmt(deg)} {_fmt(cx)} {_fmt(cy)})" fill="none" stroke="{stroke}" />'
            )

    def render(self) -> str:
        if self._pts:
            allpts = np.vstack(self._pts)
            lo, hi = allpts.min(axis=0), allpts.max(axis=0)
        else:
            lo, hi = np.zeros(2), np.ones(2)
        pad = self.margin * max(float(np.max(hi - lo)), 1.0)
        lo, size = lo - pad, (hi - lo) + 2 * pad
        stroke_w = _fmt(0.002 * float(max(size)))
        head = (
            '<svg xmlns="http://www.w3.org/2000/svg" '
            f'viewBox="{_fmt(lo[0])} {_fmt(lo[1])} {_fmt(size[0])} {_fmt(size[1])}">'
        )
        body = []
        for name, items in self.layers.items():
            body.append(f'<g id="{name}" stroke-width="{stroke_w}">')
            body.extend("  " + item for item in items)
            body.append("</g>")
        return "\n".join([head, *body, "</svg>"]) + "\n"
