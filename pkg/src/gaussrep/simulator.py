"""Desk-scale experiments: synthetic scenes, point-set descent, angle sweeps.

Everything here is a pure function of its inputs and a seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .assignment import (
    IOU,
    AssignmentResult,
    assign_atss,
    assign_fixed,
    assign_patss,
    build_iou_matrix,
    build_score_matrix,
)
from .errors import DegenerateCovarianceError, InvalidInputError
from .geometry import (
    HALF_PI,
    Gaussian2,
    Obb,
    PointSetRep,
    canonicalize_obb,
    fit_gaussian_mle,
    gaussian_to_obb,
    obb_to_gaussian,
    obb_to_qbb,
    rotated_iou,
)
from .losses import LossKind, loss, loss_grad_points
from .metrics import MetricKind, distance

# KLD and BD are scale invariant, so their steps are multiplied by the squared
# short side of the gt; WD is not, and its step is absolute.
DEFAULT_STEP_SIZE = {
    LossKind.L_KLD: 0.07,
    LossKind.L_BD: 1.0,
    LossKind.L_WD: 1.0,
}
DEFAULT_STEPS = 1000
# Blow-up limits: raw distance growth relative to the start, and point travel
# from the gt center in units of the gt diagonal.
DIVERGENCE_FACTOR = 1e6
RUNAWAY_DIAGONALS = 1e3
# Raw distance at which descent stops early: already at the optimum.
STOP_DISTANCE = 1e-12


@dataclass(frozen=True)
class SceneConfig:
    num_gts: int = 10
    aspect_range: tuple[float, float] = (1.0, 6.0)
    size_range: tuple[float, float] = (8.0, 24.0)
    extent: float = 256.0
    grid_size: int = 8
    jitter_copies: int = 1
    jitter: float = 0.0
    num_categories: int = 3

    def __post_init__(self):
        if self.num_gts < 1 or self.grid_size < 1 or self.jitter_copies < 0:
            raise InvalidInputError("scene counts must be positive")
        if not self.extent > 0:
            raise InvalidInputError("extent must be positive")
        if self.num_categories < 1:
            raise InvalidInputError("need at least one category")
        lo, hi = self.aspect_range
        if not (1.0 <= lo <= hi <= 20.0):
            raise InvalidInputError(f"aspect range must lie within [1, 20], got {self.aspect_range}")
        lo, hi = self.size_range
        if not (0.0 < lo <= hi):
            raise InvalidInputError(f"invalid size range {self.size_range}")
        if self.jitter < 0:
            raise InvalidInputError("jitter must be non-negative")

    @property
    def num_proposals(self) -> int:
        return self.grid_size * self.grid_size + self.num_gts * self.jitter_copies

    @classmethod
    def from_json(cls, obj: dict) -> "SceneConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise InvalidInputError(f"unknown scene config field(s): {', '.join(sorted(unknown))}")
        kwargs = dict(obj)
        for key in ("aspect_range", "size_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class Proposal:
    gaussian: Gaussian2
    source: str
    ref: int


@dataclass(frozen=True)
class Scene:
    gts: list[tuple[Obb, str]]
    proposals: list[Proposal]
    seed: int
    config: SceneConfig | None = None

    @property
    def gt_gaussians(self) -> list[Gaussian2]:
        return [obb_to_gaussian(b) for b, _ in self.gts]

    @property
    def proposal_gaussians(self) -> list[Gaussian2]:
        return [p.gaussian for p in self.proposals]

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "config": None if self.config is None else asdict(self.config),
            "gts": [{"obb": b.to_json(), "category": c} for b, c in self.gts],
            "proposals": [
                {**p.gaussian.to_json(), "source": p.source, "ref": p.ref} for p in self.proposals
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Scene":
        try:
            gts = [(Obb.from_json(g["obb"]), str(g.get("category", "object"))) for g in obj["gts"]]
            proposals = [
                Proposal(Gaussian2.from_json(p), str(p.get("source", "given")), int(p.get("ref", -1)))
                for p in obj["proposals"]
            ]
        except (KeyError, TypeError) as exc:
            raise InvalidInputError(f"malformed scene JSON: {exc}") from None
        if not gts or not proposals:
            raise InvalidInputError("scene needs at least one gt and one proposal")
        config = obj.get("config")
        return cls(
            gts,
            proposals,
            int(obj.get("seed", 0)),
            SceneConfig.from_json(config) if config else None,
        )


def gen_scene(config: SceneConfig, seed: int) -> Scene:
    rng = np.random.default_rng(seed)
    margin = 0.5 * config.size_range[1] * config.aspect_range[1]
    margin = min(margin, 0.25 * config.extent)
    gts = []
    for k in range(config.num_gts):
        short = rng.uniform(*config.size_range)
        ratio = rng.uniform(*config.aspect_range)
        theta = rng.uniform(-HALF_PI, HALF_PI)
        cx, cy = rng.uniform(margin, config.extent - margin, size=2)
        box = canonicalize_obb(Obb(float(cx), float(cy), short * ratio, short, theta))
        gts.append((box, f"c{k % config.num_categories}"))

    scale = float(np.median([math.sqrt(b.w * b.h) for b, _ in gts]))
    iso = (scale * scale / 4.0) * np.eye(2)
    step = config.extent / config.grid_size
    proposals = []
    for r in range(config.grid_size):
        for c in range(config.grid_size):
            mu = np.array([(c + 0.5) * step, (r + 0.5) * step])
            proposals.append(Proposal(Gaussian2(mu, iso), "grid", r * config.grid_size + c))
    for i, (box, _) in enumerate(gts):
        for _ in range(config.jitter_copies):
            proposals.append(Proposal(obb_to_gaussian(_jitter_box(box, config.jitter, rng)), "jitter", i))
    return Scene(gts, proposals, seed, config)


def _jitter_box(box: Obb, jitter: float, rng: np.random.Generator) -> Obb:
    if jitter == 0.0:
        return box
    dx, dy = rng.normal(0.0, jitter * box.h, size=2)
    sw, sh = np.exp(rng.normal(0.0, jitter, size=2))
    dtheta = rng.normal(0.0, jitter)
    return Obb(box.cx + dx, box.cy + dy, box.w * sw, box.h * sh, box.theta + dtheta)


def aspect_ratio_stats(gts: Sequence[tuple[Obb, str]]) -> dict[str, float]:
    """Per-category mean of long side over short side."""
    if not gts:
        raise InvalidInputError("aspect_ratio_stats needs at least one box")
    groups: dict[str, list[float]] = {}
    for box, cat in gts:
        groups.setdefault(cat, []).append(max(box.w, box.h) / min(box.w, box.h))
    return {cat: math.fsum(v) / len(v) for cat, v in sorted(groups.items())}


# --- point-set optimization ------------------------------------------------


@dataclass(frozen=True)
class TraceStep:
    step: int
    loss: float
    distance: float
    points: np.ndarray


@dataclass
class OptimizationTrace:
    kind: LossKind
    steps: list[TraceStep] = field(default_factory=list)
    final_obb: Obb | None = None
    diverged: bool = False
    message: str = ""

    @property
    def initial_distance(self) -> float:
        return self.steps[0].distance

    @property
    def final_distance(self) -> float:
        return self.steps[-1].distance

    @property
    def final_points(self) -> np.ndarray:
        return self.steps[-1].points

    def converged(self, reduction: float = 0.99, atol: float = 1e-6) -> bool:
        """Raw distance fell by ``reduction`` of its start, or is already ~0."""
        if self.diverged:
            return False
        d0, d1 = self.initial_distance, self.final_distance
        return d1 <= atol or d1 <= (1.0 - reduction) * d0

    def to_csv(self) -> str:
        k = self.steps[0].points.shape[0]
        cols = ["step", "loss", "distance"]
        for i in range(k):
            cols += [f"x{i}", f"y{i}"]
        lines = [",".join(cols)]
        for rec in self.steps:
            vals = [str(rec.step), repr(rec.loss), repr(rec.distance)]
            vals += [repr(float(v)) for v in rec.points.reshape(-1)]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


def step_scale(kind: LossKind, gt: Obb) -> float:
    if LossKind(kind) is LossKind.L_WD:
        return 1.0
    return min(gt.w, gt.h) ** 2


def optimize_pointset(
    gt: Obb,
    init: PointSetRep,
    kind: LossKind | str,
    step_size: float | None = None,
    steps: int = DEFAULT_STEPS,
) -> OptimizationTrace:
    """Plain fixed-step gradient descent on the point coordinates.

    The applied step is ``step_size * step_scale(kind, gt)``. The trace holds ``steps + 1`` records (the
    initial state included). Non-finite values, a degenerate fit, or a
    runaway distance or point stops the run with ``diverged`` set.
    """
    kind = LossKind(kind)
    if steps < 1:
        raise InvalidInputError("steps must be >= 1")
    if step_size is None:
        step_size = DEFAULT_STEP_SIZE[kind]
    if not step_size > 0:
        raise InvalidInputError("step_size must be positive")
    g = obb_to_gaussian(gt)
    lr = step_size * step_scale(kind, gt)
    trace = OptimizationTrace(kind)
    x = np.array(init.points, dtype=float)
    limit = None
    reach_limit = RUNAWAY_DIAGONALS * math.hypot(gt.w, gt.h)
    for t in range(steps + 1):
        try:
            with np.errstate(all="raise"):
                grad = loss_grad_points(kind, g, PointSetRep(x))
                dist = distance(kind.metric, g, fit_gaussian_mle(PointSetRep(x)))
        except (DegenerateCovarianceError, InvalidInputError, FloatingPointError, OverflowError) as exc:
            trace.diverged = True
            trace.message = f"step {t}: {exc}"
            break
        if not (math.isfinite(grad.value) and math.isfinite(dist) and np.all(np.isfinite(grad.d_points))):
            trace.diverged = True
            trace.message = f"step {t}: non-finite loss or gradient"
            break
        if limit is None:
            limit = DIVERGENCE_FACTOR * max(dist, 1.0)
        reach = float(np.max(np.hypot(x[:, 0] - gt.cx, x[:, 1] - gt.cy)))
        if dist > limit or reach > reach_limit:
            trace.steps.append(TraceStep(t, grad.value, dist, x.copy()))
            trace.diverged = True
            trace.message = (
                f"step {t}: runaway (distance {dist:.3g}, farthest point {reach:.3g} from gt center)"
            )
            break
        trace.steps.append(TraceStep(t, grad.value, dist, x.copy()))
        if t == steps or dist <= STOP_DISTANCE:
            break
        x = x - lr * grad.d_points
    if not trace.steps:
        return trace
    try:
        trace.final_obb = gaussian_to_obb(fit_gaussian_mle(PointSetRep(trace.final_points)))
    except (DegenerateCovarianceError, InvalidInputError):
        trace.final_obb = None
    return trace


def translated_corners(gt: Obb, fraction: float, direction: float = 0.0) -> PointSetRep:
    """Corners of ``gt`` shifted by ``fraction * gt.w`` along angle ``direction``."""
    shift = fraction * gt.w * np.array([math.cos(direction), math.sin(direction)])
    return PointSetRep(obb_to_qbb(gt).corners + shift)


# --- boundary sweep -----------------------------------------------------------


def opencv_form(box: Obb) -> tuple[float, float, float, float, float]:
    """Same rectangle with the angle folded into ``[-pi/2, 0)``, swapping w/h on
    every quarter-turn, as the legacy OpenCV rotated-rect convention does."""
    quarter_turns = math.floor(box.theta / HALF_PI) + 1
    theta = box.theta - quarter_turns * HALF_PI
    if theta >= 0.0:
        quarter_turns += 1
        theta -= HALF_PI
    w, h = (box.h, box.w) if quarter_turns % 2 else (box.w, box.h)
    return (box.cx, box.cy, w, h, theta)


def smooth_l1_style(gt, pred) -> float:
    """Sum of absolute normalized parameter deltas on raw 5-tuples."""
    gx, gy, gw, gh, gt_theta = gt
    px, py, pw, ph, pt = pred
    return (
        abs(gx - px) / pw
        + abs(gy - py) / ph
        + abs(math.log(gw / pw))
        + abs(math.log(gh / ph))
        + abs(gt_theta - pt)
    )


@dataclass
class SweepResult:
    thetas: np.ndarray
    loss: np.ndarray
    contrast: np.ndarray

    @staticmethod
    def _jumps(curve):
        return np.abs(np.diff(curve))

    def max_jump(self) -> float:
        return float(self._jumps(self.loss).max())

    def median_delta(self) -> float:
        return float(np.median(self._jumps(self.loss)))

    def jump_ratio(self) -> float:
        return self.max_jump() / max(self.median_delta(), 1e-300)

    def contrast_jump_at(self, theta: float) -> float:
        """Contrast-curve jump across the sample interval containing ``theta``."""
        i = int(np.searchsorted(self.thetas, theta))
        i = min(max(i, 1), len(self.thetas) - 1)
        return float(abs(self.contrast[i] - self.contrast[i - 1]))

    def contrast_median_delta(self) -> float:
        return float(np.median(self._jumps(self.contrast)))

    def to_csv(self) -> str:
        lines = ["theta,loss,contrast"]
        for t, l, c in zip(self.thetas, self.loss, self.contrast):
            lines.append(f"{t!r},{l!r},{c!r}")
        return "\n".join(lines) + "\n"


def default_sweep_prediction(template: Obb) -> PointSetRep:
    """Fixed prediction for sweeps: template corners at an offset pose."""
    pred = Obb(
        template.cx + 0.1 * template.w,
        template.cy - 0.05 * template.h,
        0.9 * template.w,
        1.1 * template.h,
        -HALF_PI + 0.3,
    )
    return PointSetRep(obb_to_qbb(pred).corners)


def boundary_sweep(
    gt_template: Obb,
    kind: LossKind | str,
    theta_grid: int = 6284,
    pred: PointSetRep | None = None,
) -> SweepResult:
    """Loss of a fixed prediction against the template rotated over ``[-pi, pi)``.

    The gt passes through :func:`opencv_form` before either loss sees it.
    The Gaussian pathway is blind to the swap; the parameter-delta contrast
    curve is not.
    """
    kind = LossKind(kind)
    if theta_grid < 100:
        raise InvalidInputError("theta_grid must be >= 100")
    if pred is None:
        pred = default_sweep_prediction(gt_template)
    p = fit_gaussian_mle(pred)
    pred_params = opencv_form(gaussian_to_obb(p))
    thetas = -math.pi + 2.0 * math.pi * np.arange(theta_grid) / theta_grid
    losses = np.empty(theta_grid)
    contrast = np.empty(theta_grid)
    for n, th in enumerate(thetas):
        box = Obb(gt_template.cx, gt_template.cy, gt_template.w, gt_template.h, float(th))
        cx, cy, w, h, t = opencv_form(box)
        losses[n] = loss(kind, obb_to_gaussian(Obb(cx, cy, w, h, t)), p)
        contrast[n] = smooth_l1_style((cx, cy, w, h, t), pred_params)
    return SweepResult(thetas, losses, contrast)


# --- assignment experiments ---------------------------------------------------


@dataclass(frozen=True)
class StrategySpec:
    name: str = "atss"
    pos_thr: float = 0.4
    neg_thr: float = 0.3
    force_match: bool | None = None
    candidates_per_gt: int = 9
    seed: int = 0

    def __post_init__(self):
        if self.name not in ("fixed", "atss", "patss"):
            raise InvalidInputError(f"unknown strategy {self.name!r}")


def assign(scene: Scene, strategy: StrategySpec, metric: MetricKind | str) -> AssignmentResult:
    if metric == IOU:
        scores = build_iou_matrix([b for b, _ in scene.gts], scene.proposal_gaussians)
    else:
        scores = build_score_matrix(metric, scene.gt_gaussians, scene.proposal_gaussians)
    if strategy.name == "fixed":
        force = True if strategy.force_match is None else strategy.force_match
        return assign_fixed(scores, strategy.pos_thr, strategy.neg_thr, force)
    if strategy.name == "atss":
        return assign_atss(scores, strategy.candidates_per_gt)
    return assign_patss(scores, strategy.candidates_per_gt, strategy.seed)


def run_assignment_experiment(
    scene: Scene, strategy: StrategySpec, metric: MetricKind | str
) -> tuple[dict, AssignmentResult]:
    """Assign labels and summarize them.

    Recovery rate is the fraction of jittered gt copies labeled positive for
    their own source gt (``None`` when the scene has no copies).
    """
    start = time.perf_counter()
    result = assign(scene, strategy, metric)
    runtime = time.perf_counter() - start

    labels = result.labels
    pos = labels >= 0
    copies = [(j, p.ref) for j, p in enumerate(scene.proposals) if p.source == "jitter"]
    recovered = sum(1 for j, ref in copies if labels[j] == ref)
    if pos.any():
        matched = result.scores.scores[labels[pos], np.flatnonzero(pos)]
        mean_score = float(np.mean(matched))
    else:
        mean_score = None
    report = {
        "strategy": strategy.name,
        "metric": metric if isinstance(metric, str) and metric == IOU else MetricKind(metric).value,
        "num_gts": len(scene.gts),
        "num_proposals": len(scene.proposals),
        "num_positive": int(pos.sum()),
        "num_negative": int(np.count_nonzero(labels == -1)),
        "num_ignore": int(np.count_nonzero(labels == -2)),
        "positives_per_gt": result.positive_counts.tolist(),
        "mean_positive_score": mean_score,
        "recovery_rate": recovered / len(copies) if copies else None,
        "runtime_s": runtime,
    }
    return report, result
