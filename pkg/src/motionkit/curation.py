"""Clip curation: detection matching, transition splitting and motion outlier filtering.

The detection half works on per-frame bounding boxes supplied by an external
detector/tracker.  The motion half scores per-frame orientation changes and
joint jerk with two isolation forests fitted on corpus-level statistics, then
cuts clips at sudden turns and drops the frames around jitter.

Frame alignment of the per-frame series used below:

* ``orientation_delta_series(m)[j]`` compares frames ``j`` and ``j + 1`` and
  is attributed to frame ``j + 1``;
* ``jerk_series(J, fps)[j]`` is the third difference over frames
  ``j .. j + 3`` and is attributed to frame ``j + 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import geom
from .geom import Skeleton
from .representation import MotionSequence, TooShortError

IOU_THRESHOLD = 0.85
CONFIDENCE_THRESHOLD = 0.85
JUMP_THRESHOLD = 0.5  # fraction of the tracked box diagonal
TREE_COUNT = 100
SUBSAMPLE_SIZE = 256
CURATION_SUBSAMPLE_SIZE = 4096  # frame corpora are large and anomalies rare; see fit_curation_forests
SCORE_THRESHOLD = 0.6
MIN_SPAN = 30
MAX_SPAN = 200
JITTER_MARGIN = 2


class InvalidBoxError(ValueError):
    pass


# --------------------------------------------------------------------------
# boxes


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    confidence: float = 1.0

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max, self.confidence)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidBoxError(f"non-finite box {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidBoxError(f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.x_max - self.x_min, self.y_max - self.y_min)

    @classmethod
    def from_list(cls, v: Sequence[float]) -> "BoundingBox":
        return cls(*[float(x) for x in v])

    def to_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max, self.confidence]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass
class MatchResult:
    box: Optional[BoundingBox]
    reason: Optional[str] = None  # None | "no-candidate" | "low-iou" | "low-confidence"
    iou: float = 0.0

    @property
    def matched(self) -> bool:
        return self.box is not None and self.reason is None


def match_track_frame(
    tracked: BoundingBox,
    candidates: Sequence[BoundingBox],
    iou_threshold: float = IOU_THRESHOLD,
    confidence_threshold: float = CONFIDENCE_THRESHOLD,
) -> MatchResult:
    """Pick the candidate overlapping ``tracked`` with the closest area.

    Candidates need IoU strictly above ``iou_threshold``; the chosen one must
    then have confidence strictly above ``confidence_threshold``.  Ties in
    area deviation go to the smaller candidate.
    """
    if not (0.0 <= iou_threshold <= 1.0 and 0.0 <= confidence_threshold <= 1.0):
        raise ValueError("thresholds must lie in [0, 1]")
    if not candidates:
        return MatchResult(None, "no-candidate")
    overlaps = [(iou(tracked, c), c) for c in candidates]
    eligible = [(o, c) for o, c in overlaps if o > iou_threshold]
    if not eligible:
        return MatchResult(None, "low-iou", max(o for o, _ in overlaps))
    # equal area deviations resolve to the smaller (tighter) box, then list order
    best_iou, best = min(eligible, key=lambda oc: (abs(oc[1].area - tracked.area), oc[1].area))
    if best.confidence > confidence_threshold:
        return MatchResult(best, None, best_iou)
    return MatchResult(best, "low-confidence", best_iou)


@dataclass
class DetectionTrack:
    tracked: list[BoundingBox]
    candidates: list[list[BoundingBox]]

    def __post_init__(self):
        if len(self.tracked) != len(self.candidates):
            raise ValueError(f"track has {len(self.tracked)} boxes but {len(self.candidates)} candidate lists")

    @property
    def num_frames(self) -> int:
        return len(self.tracked)


@dataclass
class ClipSpan:
    start: int
    end: int  # exclusive
    verdict: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span [{self.start}, {self.end})")

    def __len__(self):
        return self.end - self.start

    def to_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "verdict": self.verdict}


def _runs(keep: np.ndarray, cuts: set[int] = frozenset()) -> list[tuple[int, int]]:
    """Maximal runs of True in ``keep``, additionally broken before each cut frame."""
    runs, start = [], None
    for i, k in enumerate(keep):
        if start is not None and (not k or i in cuts):
            runs.append((start, i))
            start = None
        if k and start is None:
            start = i
    if start is not None:
        runs.append((start, len(keep)))
    return runs


def _finalize(runs, min_length: int, max_length: Optional[int]) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Drop runs shorter than ``min_length`` and split long ones into near-equal pieces."""
    kept, dropped = [], []
    for s, e in runs:
        n = e - s
        if n < min_length:
            dropped.append((s, e))
            continue
        pieces = 1 if not max_length else math.ceil(n / max_length)
        bounds = [s + (n * k) // pieces for k in range(pieces + 1)]
        kept.extend(zip(bounds[:-1], bounds[1:]))
    return kept, dropped


def split_on_center_jump(
    boxes: Sequence[BoundingBox],
    jump_threshold: float = JUMP_THRESHOLD,
    relative: bool = True,
    min_length: int = MIN_SPAN,
) -> list[ClipSpan]:
    """Start a new span wherever the box center jumps farther than the threshold.

    With ``relative`` the threshold is a multiple of the previous box's diagonal,
    otherwise it is in pixels.
    """
    if len(boxes) < 1:
        raise TooShortError("need at least one frame")
    cuts = set()
    for i in range(1, len(boxes)):
        (x0, y0), (x1, y1) = boxes[i - 1].center, boxes[i].center
        limit = jump_threshold * boxes[i - 1].diagonal if relative else jump_threshold
        if math.hypot(x1 - x0, y1 - y0) > limit:
            cuts.add(i)
    kept, dropped = _finalize(_runs(np.ones(len(boxes), bool), cuts), min_length, None)
    verdict = {"center_jumps": sorted(cuts), "dropped_short": [list(d) for d in dropped]}
    return [ClipSpan(s, e, verdict) for s, e in kept]


@dataclass
class TrackVerdict:
    spans: list[ClipSpan]
    rejected: dict[str, list[int]]
    center_jumps: list[int]
    dropped_short: list[tuple[int, int]]


def curate_track(
    track: DetectionTrack,
    iou_threshold: float = IOU_THRESHOLD,
    confidence_threshold: float = CONFIDENCE_THRESHOLD,
    jump_threshold: float = JUMP_THRESHOLD,
    relative: bool = True,
    min_length: int = MIN_SPAN,
) -> TrackVerdict:
    """Detection gating followed by transition splitting for one tracked subject."""
    F = track.num_frames
    rejected: dict[str, list[int]] = {"no-candidate": [], "low-iou": [], "low-confidence": []}
    keep = np.zeros(F, bool)
    for i, (t, cands) in enumerate(zip(track.tracked, track.candidates)):
        res = match_track_frame(t, cands, iou_threshold, confidence_threshold)
        if res.matched:
            keep[i] = True
        else:
            rejected[res.reason].append(i)
    cuts = set()
    for i in range(1, F):
        if not (keep[i] and keep[i - 1]):
            continue
        a, b = track.tracked[i - 1], track.tracked[i]
        limit = jump_threshold * a.diagonal if relative else jump_threshold
        if math.dist(a.center, b.center) > limit:
            cuts.add(i)
    kept, dropped = _finalize(_runs(keep, cuts), min_length, None)
    spans = [ClipSpan(s, e, {"stage": "detection"}) for s, e in kept]
    return TrackVerdict(spans, rejected, sorted(cuts), dropped)


# --------------------------------------------------------------------------
# motion metrics


def orientation_delta_series(motion: MotionSequence) -> np.ndarray:
    """Rotation angle between consecutive root orientations, radians."""
    R = motion.root_orientation
    if R.shape[0] < 2:
        raise TooShortError("need at least 2 frames")
    return geom.geodesic_delta(R[:-1], R[1:])


def jerk_series(world_joint_positions: np.ndarray, fps: float) -> np.ndarray:
    """Mean joint jerk magnitude per frame window, in units of position / s^3."""
    J = np.asarray(world_joint_positions, dtype=np.float64)
    if J.ndim == 2:
        J = J[:, None, :]
    if J.shape[0] < 4:
        raise TooShortError("jerk needs at least 4 frames")
    d3 = J[3:] - 3 * J[2:-1] + 3 * J[1:-2] - J[:-3]
    return np.linalg.norm(d3, axis=-1).mean(axis=-1) * fps ** 3


# --------------------------------------------------------------------------
# isolation forest

_EULER = 0.5772156649015329


def average_path_length(n) -> np.ndarray:
    """Expected path length of an unsuccessful BST search among ``n`` points."""
    n = np.asarray(n, dtype=np.float64)
    out = np.zeros_like(n)
    out = np.where(n == 2, 1.0, out)
    big = n > 2
    nb = np.where(big, n, 3.0)
    out = np.where(big, 2.0 * (np.log(nb - 1.0) + _EULER) - 2.0 * (nb - 1.0) / nb, out)
    return out


@dataclass
class IsolationTree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray  # training points that reached each node
    depth: np.ndarray
    lo: np.ndarray  # routed data range on the split feature
    hi: np.ndarray

    def leaf_of(self, X: np.ndarray) -> np.ndarray:
        rows = np.arange(X.shape[0])
        node = np.zeros(X.shape[0], dtype=np.int64)
        for _ in range(self.height):
            f = self.feature[node]
            x = X[rows, np.maximum(f, 0)]
            nxt = np.where(x < self.threshold[node], self.left[node], self.right[node])
            node = np.where(f >= 0, nxt, node)
        return node

    def path_length(self, X: np.ndarray) -> np.ndarray:
        leaf = self.leaf_of(X)
        return self.depth[leaf] + average_path_length(self.size[leaf])

    @property
    def height(self) -> int:
        return int(self.depth.max())


@dataclass
class IsolationForest:
    trees: list[IsolationTree]
    subsample_size: int
    num_features: int
    seed: int
    median: Optional[np.ndarray] = None  # per-feature median of the fitting samples

    @property
    def tree_count(self) -> int:
        return len(self.trees)

    def mean_path_length(self, X) -> np.ndarray:
        X = _as_samples(X)
        return np.mean([t.path_length(X) for t in self.trees], axis=0)

    def score(self, X) -> np.ndarray:
        X = _as_samples(X)
        if X.shape[1] != self.num_features:
            raise ValueError(f"forest fitted on {self.num_features} features, got {X.shape[1]}")
        return 2.0 ** (-self.mean_path_length(X) / average_path_length(self.subsample_size))


def _as_samples(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


def _build_tree(X: np.ndarray, height_limit: int, rng: np.random.Generator) -> IsolationTree:
    """Grow one tree level by level; all nodes of a level are split together."""
    n, f = X.shape
    feature = [-1]
    threshold, lo, hi = [0.0], [0.0], [0.0]
    left, right = [-1], [-1]
    size, depth = [n], [0]
    node_of = np.zeros(n, dtype=np.int64)
    level = np.array([0])
    for d in range(height_limit):
        sizes = np.asarray(size)[level]
        level = level[sizes >= 2]
        if len(level) == 0:
            break
        local = np.full(len(feature), -1, dtype=np.int64)
        local[level] = np.arange(len(level))
        active = local[node_of] >= 0
        rows = local[node_of[active]]
        Xa = X[active]
        mins = np.full((len(level), f), np.inf)
        maxs = np.full((len(level), f), -np.inf)
        np.minimum.at(mins, rows, Xa)
        np.maximum.at(maxs, rows, Xa)
        splittable = maxs > mins
        ok = splittable.any(axis=1)
        # uniform choice among splittable features
        q = np.argmax(rng.random((len(level), f)) * splittable, axis=1)
        a, b = mins[np.arange(len(level)), q], maxs[np.arange(len(level)), q]
        t = rng.uniform(a, b)
        t = np.where(t <= a, np.nextafter(a, b), t)  # keep both children non-empty
        go_left = Xa[np.arange(len(rows)), q[rows]] < t[rows]
        next_level = []
        child_of = np.full((len(level), 2), -1, dtype=np.int64)
        counts_left = np.bincount(rows[go_left], minlength=len(level))
        counts_all = np.bincount(rows, minlength=len(level))
        for i, node in enumerate(level):
            if not ok[i]:
                continue
            feature[node], threshold[node], lo[node], hi[node] = int(q[i]), float(t[i]), float(a[i]), float(b[i])
            for side, cnt in ((0, counts_left[i]), (1, counts_all[i] - counts_left[i])):
                child_of[i, side] = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                lo.append(0.0)
                hi.append(0.0)
                left.append(-1)
                right.append(-1)
                size.append(int(cnt))
                depth.append(d + 1)
                next_level.append(child_of[i, side])
            left[node], right[node] = int(child_of[i, 0]), int(child_of[i, 1])
        moved = ok[rows]
        idx = np.nonzero(active)[0][moved]
        node_of[idx] = np.where(go_left[moved], child_of[rows[moved], 0], child_of[rows[moved], 1])
        level = np.asarray(next_level, dtype=np.int64)
    as_int = lambda v: np.asarray(v, dtype=np.int64)
    return IsolationTree(as_int(feature), np.asarray(threshold), as_int(left), as_int(right),
                         as_int(size), as_int(depth), np.asarray(lo), np.asarray(hi))


def isolation_forest_fit(samples, tree_count: int = TREE_COUNT, subsample_size: int = SUBSAMPLE_SIZE,
                         seed: int = 0) -> IsolationForest:
    X = _as_samples(samples)
    n = X.shape[0]
    if n < 2:
        raise ValueError("isolation forest needs at least 2 samples")
    if subsample_size > n:
        raise ValueError(f"subsample size {subsample_size} exceeds sample count {n}")
    if subsample_size < 2:
        raise ValueError("subsample size must be at least 2")
    if not np.all(np.isfinite(X)):
        raise ValueError("samples must be finite")
    rng = np.random.default_rng(seed)
    limit = math.ceil(math.log2(subsample_size))
    trees = []
    for _ in range(tree_count):
        pick = rng.choice(n, size=subsample_size, replace=False)
        trees.append(_build_tree(X[pick], limit, rng))
    return IsolationForest(trees, subsample_size, X.shape[1], seed, np.median(X, axis=0))


def isolation_forest_score(forest: IsolationForest, sample) -> np.ndarray | float:
    """Anomaly score in (0, 1); higher is more anomalous.  Scalar in, scalar out."""
    arr = np.asarray(sample, dtype=np.float64)
    if arr.ndim == 0 or (arr.ndim == 1 and forest.num_features > 1):
        return float(forest.score(arr.reshape(1, -1))[0])
    return forest.score(arr)


# --------------------------------------------------------------------------
# motion filtering


@dataclass
class CurationForests:
    orientation: IsolationForest
    jerk: IsolationForest


def fit_curation_forests(motions: Sequence[MotionSequence], skeleton: Skeleton,
                         tree_count: int = TREE_COUNT, subsample_size: int = CURATION_SUBSAMPLE_SIZE,
                         seed: int = 0) -> CurationForests:
    """Fit one forest on pooled orientation deltas and one on pooled jerk values.

    The pooled series hold one value per frame, typically tens of thousands
    with anomalies well under 1%.  A 256-point subsample then rarely contains
    an anomaly and the forest ends up ranking the tails of clean motion, so
    the default subsample here is larger (clamped to the data size).
    """
    if not motions:
        raise ValueError("empty corpus")
    dtheta = np.concatenate([orientation_delta_series(m) for m in motions])
    jerk = np.concatenate([jerk_series(m.joint_positions(skeleton), m.fps) for m in motions])
    sub_o = min(subsample_size, len(dtheta))
    sub_j = min(subsample_size, len(jerk))
    return CurationForests(
        isolation_forest_fit(dtheta, tree_count, sub_o, seed),
        isolation_forest_fit(jerk, tree_count, sub_j, seed + 1),
    )


@dataclass
class ClipVerdict:
    num_frames: int
    spans: list[ClipSpan]
    orientation_frames: list[int]
    jitter_frames: list[int]
    rejected_frames: list[int]
    dropped_short: list[tuple[int, int]]

    @property
    def anomalous_frames(self) -> list[int]:
        return sorted(set(self.orientation_frames) | set(self.jitter_frames))

    def to_dict(self) -> dict:
        return {
            "num_frames": self.num_frames,
            "spans": [[s.start, s.end] for s in self.spans],
            "orientation_splits": self.orientation_frames,
            "jitter_frames": self.jitter_frames,
            "rejected_frames": self.rejected_frames,
            "dropped_short": [list(d) for d in self.dropped_short],
        }


def spike_scores(forest: IsolationForest, values: np.ndarray) -> np.ndarray:
    """Forest scores of a 1-D series, zeroed where the value is at or below the fitting median.

    Flips and jitter are spikes: an unusually *small* rotation change or jerk
    (a perfectly smooth clip, say) is rare too, but it is not a defect.
    """
    v = np.asarray(values, dtype=np.float64)
    s = forest.score(v)
    if forest.median is None:
        return s
    return np.where(v > forest.median[0], s, 0.0)


def analyze_clip(
    motion: MotionSequence,
    skeleton: Skeleton,
    forest_orient: IsolationForest,
    forest_jerk: IsolationForest,
    score_threshold: float = SCORE_THRESHOLD,
    min_length: int = MIN_SPAN,
    max_length: Optional[int] = MAX_SPAN,
    jitter_margin: int = JITTER_MARGIN,
) -> ClipVerdict:
    """Score a clip and derive surviving spans plus the reasons behind every cut."""
    if motion.num_frames < 4:
        raise TooShortError("filtering needs at least 4 frames")
    s_orient = spike_scores(forest_orient, orientation_delta_series(motion))
    s_jerk = spike_scores(forest_jerk, jerk_series(motion.joint_positions(skeleton), motion.fps))
    return verdict_from_scores(motion.num_frames, s_orient, s_jerk, score_threshold,
                               min_length, max_length, jitter_margin)


def analyze_corpus(
    motions: Sequence[MotionSequence],
    skeleton: Skeleton,
    forests: CurationForests,
    score_threshold: float = SCORE_THRESHOLD,
    min_length: int = MIN_SPAN,
    max_length: Optional[int] = MAX_SPAN,
    jitter_margin: int = JITTER_MARGIN,
) -> list[ClipVerdict]:
    """:func:`analyze_clip` for many clips, scoring all frames in one batch."""
    if not motions:
        return []
    for m in motions:
        if m.num_frames < 4:
            raise TooShortError("filtering needs at least 4 frames")
    dth = [orientation_delta_series(m) for m in motions]
    jrk = [jerk_series(m.joint_positions(skeleton), m.fps) for m in motions]
    so = np.split(spike_scores(forests.orientation, np.concatenate(dth)), np.cumsum([len(d) for d in dth])[:-1])
    sj = np.split(spike_scores(forests.jerk, np.concatenate(jrk)), np.cumsum([len(j) for j in jrk])[:-1])
    return [verdict_from_scores(m.num_frames, a, b, score_threshold, min_length, max_length, jitter_margin)
            for m, a, b in zip(motions, so, sj)]


def verdict_from_scores(
    num_frames: int,
    orient_scores: np.ndarray,
    jerk_scores: np.ndarray,
    score_threshold: float = SCORE_THRESHOLD,
    min_length: int = MIN_SPAN,
    max_length: Optional[int] = MAX_SPAN,
    jitter_margin: int = JITTER_MARGIN,
) -> ClipVerdict:
    F = num_frames
    orient_frames = [int(j) + 1 for j in np.nonzero(np.asarray(orient_scores) > score_threshold)[0]]
    jitter_frames = [int(j) + 2 for j in np.nonzero(np.asarray(jerk_scores) > score_threshold)[0]]

    keep = np.ones(F, bool)
    for f in jitter_frames:
        keep[max(0, f - jitter_margin): f + jitter_margin + 1] = False
    rejected = [int(i) for i in np.nonzero(~keep)[0]]

    kept, dropped = _finalize(_runs(keep, set(orient_frames)), min_length, max_length)
    verdict = {
        "orientation_splits": orient_frames,
        "jitter_frames": jitter_frames,
        "orientation_filter": "pass" if not orient_frames else "split",
        "jitter_filter": "pass" if not jitter_frames else "rejected",
    }
    spans = [ClipSpan(s, e, verdict) for s, e in kept]
    return ClipVerdict(F, spans, orient_frames, jitter_frames, rejected, dropped)


def filter_clip(
    motion: MotionSequence,
    skeleton: Skeleton,
    forest_orient: IsolationForest,
    forest_jerk: IsolationForest,
    score_threshold: float = SCORE_THRESHOLD,
    min_length: int = MIN_SPAN,
    max_length: Optional[int] = MAX_SPAN,
    jitter_margin: int = JITTER_MARGIN,
) -> list[ClipSpan]:
    return analyze_clip(motion, skeleton, forest_orient, forest_jerk, score_threshold,
                        min_length, max_length, jitter_margin).spans


def combine_spans(
    num_frames: int,
    span_lists: Sequence[Sequence[ClipSpan]],
    cuts: Sequence[int] = (),
    min_length: int = MIN_SPAN,
    max_length: Optional[int] = MAX_SPAN,
) -> tuple[list[ClipSpan], list[tuple[int, int]]]:
    """Frames kept by every span list, split at every span boundary and extra cut.

    Returns the surviving spans (short runs dropped, long ones split) and the
    dropped short runs.
    """
    keep = np.ones(num_frames, bool)
    boundaries = set(int(c) for c in cuts)
    for spans in span_lists:
        mask = np.zeros(num_frames, bool)
        for s in spans:
            mask[s.start:s.end] = True
            boundaries.update((s.start, s.end))
        keep &= mask
    kept, dropped = _finalize(_runs(keep, boundaries), min_length, max_length)
    return [ClipSpan(s, e) for s, e in kept], dropped
