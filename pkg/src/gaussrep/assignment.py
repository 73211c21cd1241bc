"""Label assignment driven by normalized Gaussian similarity.

Three strategies share one :class:`ScoreMatrix` (ground truths x proposals):

* ``assign_fixed`` -- positive / negative thresholds on the best score
* ``assign_atss`` -- per-gt threshold ``mean + std`` over a top-k candidate pool
* ``assign_patss`` -- per-gt two-component GMM over the same pool, falling
  back to the ATSS cut when the mixture degenerates

Labels are stored as integers: ``>= 0`` is the matched gt index,
``NEGATIVE`` and ``IGNORE`` are sentinels.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import Gaussian2, Obb, gaussian_to_obb, rotated_iou
from .metrics import MetricKind, distance

NEGATIVE = -1
IGNORE = -2

IOU = "iou"

VARIANCE_FLOOR = 1e-8


def normalize_score(metric: MetricKind | str, dist: float) -> float:
    metric = MetricKind(metric)
    if metric is MetricKind.BD:
        return 1.0 / (1.0 + dist * dist)
    return 1.0 / (2.0 + dist)


def score(metric: MetricKind | str, g: Gaussian2, p: Gaussian2) -> float:
    """Similarity in (0, 1]; KLD and WD top out at 0.5, BD at 1."""
    return normalize_score(metric, distance(metric, g, p))


@dataclass(frozen=True)
class ScoreMatrix:
    scores: np.ndarray
    distances: np.ndarray
    metric: MetricKind | str

    @property
    def num_gts(self) -> int:
        return self.scores.shape[0]

    @property
    def num_proposals(self) -> int:
        return self.scores.shape[1]


def build_score_matrix(
    metric: MetricKind | str, gts: Sequence[Gaussian2], proposals: Sequence[Gaussian2]
) -> ScoreMatrix:
    if not gts or not proposals:
        raise InvalidInputError("score matrix needs at least one gt and one proposal")
    metric = MetricKind(metric)
    dist = np.array([[distance(metric, g, p) for p in proposals] for g in gts])
    scores = np.vectorize(lambda d: normalize_score(metric, d), otypes=[float])(dist)
    return ScoreMatrix(scores, dist, metric)


def build_iou_matrix(gts: Sequence[Obb], proposals: Sequence[Gaussian2]) -> ScoreMatrix:
    """IoU baseline: proposals decoded to boxes, compared by rotated IoU."""
    if not gts or not proposals:
        raise InvalidInputError("score matrix needs at least one gt and one proposal")
    boxes = [gaussian_to_obb(p) for p in proposals]
    iou = np.array([[rotated_iou(g, b) for b in boxes] for g in gts])
    return ScoreMatrix(iou, 1.0 - iou, IOU)


@dataclass
class AssignmentResult:
    labels: np.ndarray
    num_gts: int
    scores: ScoreMatrix | None = field(default=None, repr=False)

    @property
    def positive_counts(self) -> np.ndarray:
        pos = self.labels[self.labels >= 0]
        return np.bincount(pos, minlength=self.num_gts)

    def is_positive(self, j: int) -> bool:
        return bool(self.labels[j] >= 0)

    def rows(self) -> list[dict]:
        """One row per proposal; score and raw distance refer to the matched gt,
        or to the best-scoring gt for negatives and ignores."""
        out = []
        for j, label in enumerate(self.labels.tolist()):
            if label >= 0:
                tag, gt = "pos", label
            else:
                tag, gt = ("neg" if label == NEGATIVE else "ignore"), None
            row = {"proposal_id": j, "label": tag, "matched_gt": "" if gt is None else gt}
            if self.scores is not None:
                i = gt if gt is not None else int(np.argmax(self.scores.scores[:, j]))
                row["score"] = float(self.scores.scores[i, j])
                row["raw_distance"] = float(self.scores.distances[i, j])
            else:
                row["score"] = row["raw_distance"] = ""
            out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(
            buf,
            fieldnames=["proposal_id", "label", "matched_gt", "score", "raw_distance"],
            lineterminator="\n",
        )
        writer.writeheader()
        for row in self.rows():
            for key in ("score", "raw_distance"):
                if row[key] != "":
                    row[key] = repr(row[key])
            writer.writerow(row)
        return buf.getvalue()


def _resolve(candidates: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Collapse a boolean (gt, proposal) positive mask into labels.

    A proposal claimed by several gts goes to the highest-scoring one; argmax
    breaks ties toward the lower gt index.
    """
    masked = np.where(candidates, scores, -np.inf)
    best = np.argmax(masked, axis=0)
    return np.where(candidates.any(axis=0), best, NEGATIVE)


def assign_fixed(
    scores: ScoreMatrix, pos_thr: float = 0.4, neg_thr: float = 0.3, force_match: bool = True
) -> AssignmentResult:
    if not 0.0 <= neg_thr <= pos_thr:
        raise InvalidInputError(f"need 0 <= neg_thr <= pos_thr, got {neg_thr}, {pos_thr}")
    s = scores.scores
    best_gt = np.argmax(s, axis=0)
    best = s[best_gt, np.arange(s.shape[1])]
    labels = np.full(s.shape[1], IGNORE, dtype=int)
    labels[best >= pos_thr] = best_gt[best >= pos_thr]
    labels[best < neg_thr] = NEGATIVE
    if force_match:
        # Strongest gts pick first; a gt whose favourite is taken falls back
        # to its best unclaimed proposal so every gt keeps a positive.
        claimed: set[int] = set()
        order = sorted(range(s.shape[0]), key=lambda i: (-float(s[i].max()), i))
        for i in order:
            for j in np.argsort(-s[i], kind="stable"):
                if int(j) not in claimed:
                    claimed.add(int(j))
                    labels[j] = i
                    break
    return AssignmentResult(labels, s.shape[0], scores)


def atss_threshold(values) -> float:
    """Mean plus population standard deviation of ``values``."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise InvalidInputError("atss_threshold needs at least one value")
    if float(v.min()) == float(v.max()):
        return float(v[0])
    mean = float(v.mean())
    return mean + float(np.sqrt(np.mean((v - mean) ** 2)))


def _candidate_pool(row: np.ndarray, k: int) -> np.ndarray:
    k = min(k, row.size)
    return np.argsort(-row, kind="stable")[:k]


def _atss_mask_row(row: np.ndarray, pool: np.ndarray) -> np.ndarray:
    mask = np.zeros(row.size, dtype=bool)
    # mean + std can exceed the pool maximum when most of the pool sits near
    # the top (e.g. [0, 1, 1]); the cap keeps the best candidate selected.
    thr = min(atss_threshold(row[pool]), float(row[pool].max()))
    mask[pool[row[pool] >= thr]] = True
    return mask


def assign_atss(scores: ScoreMatrix, candidates_per_gt: int = 9) -> AssignmentResult:
    if candidates_per_gt < 1:
        raise InvalidInputError("candidates_per_gt must be >= 1")
    s = scores.scores
    mask = np.zeros_like(s, dtype=bool)
    for i in range(s.shape[0]):
        mask[i] = _atss_mask_row(s[i], _candidate_pool(s[i], candidates_per_gt))
    return AssignmentResult(_resolve(mask, s), s.shape[0], scores)


@dataclass(frozen=True)
class GmmParams:
    """Two-component 1-D mixture, components sorted by ascending mean."""

    weights: tuple[float, float]
    means: tuple[float, float]
    variances: tuple[float, float]
    log_likelihoods: tuple[float, ...] = ()
    degenerate: bool = False

    def posterior_high(self, x) -> np.ndarray:
        """Posterior probability of the higher-mean component."""
        logp = _component_logpdf(np.asarray(x, dtype=float), self)
        return np.exp(logp[1] - np.logaddexp(logp[0], logp[1]))


def _component_logpdf(x: np.ndarray, params) -> np.ndarray:
    w = np.asarray(params.weights)[:, None]
    m = np.asarray(params.means)[:, None]
    v = np.asarray(params.variances)[:, None]
    return np.log(w) - 0.5 * np.log(2.0 * math.pi * v) - 0.5 * (x[None, :] - m) ** 2 / v


@dataclass
class _State:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray


def _log_likelihood(x: np.ndarray, st: _State) -> float:
    logp = _component_logpdf(x, st)
    return float(np.sum(np.logaddexp(logp[0], logp[1])))


def gmm_em_1d(
    values, iters: int = 100, tol: float = 1e-9, seed: int = 0
) -> GmmParams:
    """Fit a two-component 1-D Gaussian mixture by expectation-maximization.

    Means start at the 25th and 75th percentiles with equal weights and half
    the sample variance each. ``seed`` only matters when those percentiles
    coincide on non-constant data, in which case the means are split by a
    small random offset.
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    if x.size < 4:
        raise InvalidInputError("gmm_em_1d needs at least 4 values")
    if iters < 1:
        raise InvalidInputError("iters must be >= 1")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("values must be finite")

    lo, hi = np.percentile(x, [25, 75])
    var0 = max(0.5 * float(x.var()), VARIANCE_FLOOR)
    if lo == hi and float(x.min()) != float(x.max()):
        jitter = np.random.default_rng(seed).uniform(0.1, 0.5) * math.sqrt(var0)
        lo, hi = lo - jitter, hi + jitter
    st = _State(np.array([0.5, 0.5]), np.array([lo, hi], dtype=float), np.array([var0, var0]))

    trace = [_log_likelihood(x, st)]
    for _ in range(iters):
        logp = _component_logpdf(x, st)
        resp = np.exp(logp - np.logaddexp(logp[0], logp[1])[None, :])
        nk = resp.sum(axis=1)
        if np.any(nk <= 0):
            break
        st.weights = nk / x.size
        st.means = (resp @ x) / nk
        st.variances = np.maximum(
            np.sum(resp * (x[None, :] - st.means[:, None]) ** 2, axis=1) / nk, VARIANCE_FLOOR
        )
        trace.append(_log_likelihood(x, st))
        if trace[-1] - trace[-2] < tol:
            break

    order = np.argsort(st.means, kind="stable")
    weights = st.weights[order] / st.weights.sum()
    means = st.means[order]
    variances = st.variances[order]
    spread = max(1.0, float(np.abs(means).max()))
    degenerate = bool(abs(means[1] - means[0]) <= 1e-9 * spread or weights.min() < 1e-6)
    return GmmParams(
        (float(weights[0]), float(weights[1])),
        (float(means[0]), float(means[1])),
        (float(variances[0]), float(variances[1])),
        tuple(trace),
        degenerate,
    )


def assign_patss(
    scores: ScoreMatrix, candidates_per_gt: int = 9, seed: int = 0
) -> AssignmentResult:
    """Per gt, keep pool candidates whose posterior under the higher-mean GMM
    component exceeds 0.5; use the ATSS cut when the fit is unusable."""
    if candidates_per_gt < 1:
        raise InvalidInputError("candidates_per_gt must be >= 1")
    s = scores.scores
    mask = np.zeros_like(s, dtype=bool)
    for i in range(s.shape[0]):
        row = s[i]
        pool = _candidate_pool(row, candidates_per_gt)
        pool_scores = row[pool]
        picked = None
        if pool.size >= 4 and float(pool_scores.min()) != float(pool_scores.max()):
            params = gmm_em_1d(pool_scores, seed=seed)
            if not params.degenerate:
                keep = params.posterior_high(pool_scores) > 0.5
                if keep.any():
                    picked = pool[keep]
        if picked is None:
            mask[i] = _atss_mask_row(row, pool)
        else:
            mask[i, picked] = True
    return AssignmentResult(_resolve(mask, s), s.shape[0], scores)
