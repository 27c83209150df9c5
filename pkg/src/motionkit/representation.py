"""Pose-feature representation of a motion clip.

Per frame the feature vector is laid out as::

    [ root_vx, root_vz | root_ang_vel (6D) | p (3N) | v (3N) | r (6N) ]

* root velocities: XZ displacement since the previous frame, expressed in the
  previous frame's heading frame (meters per frame);
* root_ang_vel: 6D encoding of the heading delta ``H_i H_{i-1}^T``;
* p: joint positions relative to the root's ground projection, in the
  current heading frame (so ``p[0].y`` is the root height);
* v: joint displacement since the previous frame, in the current heading frame;
* r: 6D rotations; slot 0 holds the root rotation relative to its heading
  frame, slots 1..N-1 the joints' parent-relative rotations.

Frame 0 copies the velocity terms of frame 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import geom
from .geom import Skeleton


class TooShortError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


STD_FLOOR = 1e-4


@dataclass
class MotionSequence:
    fps: float
    translation: np.ndarray  # (F, 3)
    root_orientation: np.ndarray  # (F, 3, 3)
    local_rotations: np.ndarray  # (F, N, 3, 3)
    betas: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64)
        self.root_orientation = np.asarray(self.root_orientation, dtype=np.float64)
        self.local_rotations = np.asarray(self.local_rotations, dtype=np.float64)
        f = self.translation.shape[0]
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if f < 2:
            raise TooShortError("a motion needs at least 2 frames")
        if self.translation.shape != (f, 3) or self.root_orientation.shape != (f, 3, 3):
            raise geom.ShapeError("translation/orientation shapes disagree with frame count")
        if self.local_rotations.ndim != 4 or self.local_rotations.shape[0] != f:
            raise geom.ShapeError(f"local rotations must be (F, N, 3, 3), got {self.local_rotations.shape}")

    @property
    def num_frames(self) -> int:
        return self.translation.shape[0]

    @property
    def num_joints(self) -> int:
        return self.local_rotations.shape[1]

    def validate(self, tol: float = geom.ORTHO_TOL) -> None:
        geom.check_rotation(self.root_orientation, tol)
        geom.check_rotation(self.local_rotations, tol)

    def joint_positions(self, skeleton: Skeleton) -> np.ndarray:
        return geom.forward_kinematics(skeleton, self.translation, self.root_orientation, self.local_rotations)

    def slice(self, start: int, stop: int) -> "MotionSequence":
        return MotionSequence(
            self.fps,
            self.translation[start:stop],
            self.root_orientation[start:stop],
            self.local_rotations[start:stop],
            self.betas,
        )


def feature_width(num_joints: int) -> int:
    return 2 + 6 + 12 * num_joints


def feature_slices(num_joints: int) -> dict[str, slice]:
    n = num_joints
    return {
        "root_vel": slice(0, 2),
        "root_ang": slice(2, 8),
        "pos": slice(8, 8 + 3 * n),
        "vel": slice(8 + 3 * n, 8 + 6 * n),
        "rot": slice(8 + 6 * n, 8 + 12 * n),
    }


def encode_features(motion: MotionSequence, skeleton: Skeleton) -> np.ndarray:
    """Motion clip -> ``(F, 2 + 6 + 12N)`` feature array."""
    F, n = motion.num_frames, skeleton.num_joints
    if F < 2:
        raise TooShortError("need at least 2 frames")
    if motion.num_joints != n:
        raise geom.ShapeError(f"motion has {motion.num_joints} joints, skeleton {n}")

    t = motion.translation
    R = motion.root_orientation
    H = geom.heading_matrix(R)
    Ht = np.swapaxes(H, -1, -2)
    J = motion.joint_positions(skeleton)

    out = np.empty((F, feature_width(n)))
    sl = feature_slices(n)

    dt = np.zeros_like(t)
    dt[1:] = t[1:] - t[:-1]
    local_dt = np.einsum("fij,fj->fi", Ht[:-1], dt[1:])
    root_vel = np.zeros((F, 2))
    root_vel[1:] = local_dt[:, [0, 2]]

    dH = np.broadcast_to(np.eye(3), (F, 3, 3)).copy()
    dH[1:] = H[1:] @ Ht[:-1]

    ground = t.copy()
    ground[:, 1] = 0.0
    p = np.einsum("fij,fkj->fki", Ht, J - ground[:, None, :])

    dJ = np.zeros_like(J)
    dJ[1:] = J[1:] - J[:-1]
    v = np.einsum("fij,fkj->fki", Ht, dJ)

    rots = motion.local_rotations.copy()
    rots[:, 0] = Ht @ R @ motion.local_rotations[:, 0]

    out[:, sl["root_vel"]] = root_vel
    out[:, sl["root_ang"]] = geom.rot6d_encode(dH)
    out[:, sl["pos"]] = p.reshape(F, -1)
    out[:, sl["vel"]] = v.reshape(F, -1)
    out[:, sl["rot"]] = geom.rot6d_encode(rots).reshape(F, -1)

    vel_terms = np.r_[0:8, sl["vel"]]
    out[0, vel_terms] = out[1, vel_terms]
    return out


def decode_features(
    features: np.ndarray,
    skeleton: Skeleton,
    initial_translation: Sequence[float] = (0.0, 0.0, 0.0),
    initial_heading: Optional[np.ndarray] = None,
    fps: float = 30.0,
) -> MotionSequence:
    """Integrate a feature array back into a :class:`MotionSequence`.

    Root height is read from ``p[0].y``; only the XZ part of
    ``initial_translation`` is used.  The root joint's own local rotation is
    folded into the root orientation (returned as identity).
    """
    features = np.asarray(features, dtype=np.float64)
    n = skeleton.num_joints
    if features.ndim != 2 or features.shape[0] < 1:
        raise EmptyInputError("need a non-empty (F, D) feature array")
    if features.shape[1] != feature_width(n):
        raise geom.ShapeError(f"feature width {features.shape[1]} != {feature_width(n)} for {n} joints")
    F = features.shape[0]
    sl = feature_slices(n)

    try:
        dH = geom.rot6d_decode(features[:, sl["root_ang"]])
    except geom.Degenerate6DError:
        bad = _first_degenerate(features[:, sl["root_ang"]].reshape(F, 1, 6))
        raise geom.Degenerate6DError(f"degenerate root angular velocity at frame {bad[0]}") from None
    rot6 = features[:, sl["rot"]].reshape(F, n, 6)
    try:
        rots = geom.rot6d_decode(rot6)
    except geom.Degenerate6DError:
        f, j = _first_degenerate(rot6)
        raise geom.Degenerate6DError(f"degenerate 6D rotation at frame {f}, joint {j}") from None

    H0 = np.eye(3) if initial_heading is None else geom.heading_matrix(initial_heading)
    H = np.empty((F, 3, 3))
    H[0] = H0
    t = np.empty((F, 3))
    t[0] = np.asarray(initial_translation, dtype=np.float64)
    root_vel = features[:, sl["root_vel"]]
    for i in range(1, F):
        H[i] = dH[i] @ H[i - 1]
        step = H[i - 1] @ np.array([root_vel[i, 0], 0.0, root_vel[i, 1]])
        t[i] = t[i - 1] + step
    t[:, 1] = features[:, sl["pos"]][:, 1]

    root_orientation = H @ rots[:, 0]
    local = rots.copy()
    local[:, 0] = np.eye(3)
    return MotionSequence(fps, t, root_orientation, local)


def _first_degenerate(r6: np.ndarray, eps: float = 1e-8) -> tuple[int, int]:
    a, b = r6[..., :3], r6[..., 3:]
    na = np.linalg.norm(a, axis=-1)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    bad = (na < eps) | (cross < eps * np.maximum(na, eps)) | ~np.isfinite(r6).all(-1)
    idx = np.argwhere(bad)
    return tuple(int(i) for i in idx[0]) if len(idx) else (-1, -1)


def resample_fps(motion: MotionSequence, target_fps: float) -> MotionSequence:
    """Resample to ``target_fps``: linear translation, slerped rotations.

    Output frame ``k`` sits at time ``k / target_fps``; frames are emitted up
    to the source clip's last timestamp.
    """
    if target_fps <= 0 or motion.fps <= 0:
        raise ValueError("fps must be positive")
    F = motion.num_frames
    if target_fps == motion.fps:
        return MotionSequence(
            motion.fps, motion.translation.copy(), motion.root_orientation.copy(),
            motion.local_rotations.copy(), motion.betas,
        )
    duration = (F - 1) / motion.fps
    n_out = int(np.floor(duration * target_fps + 1e-9)) + 1
    if n_out < 2:
        raise TooShortError(f"resampling to {target_fps} fps leaves {n_out} frame(s)")

    src = np.arange(n_out) * (motion.fps / target_fps)
    lo = np.minimum(np.floor(src + 1e-9).astype(int), F - 1)
    hi = np.minimum(lo + 1, F - 1)
    w = np.clip(src - lo, 0.0, 1.0)

    trans = (1.0 - w)[:, None] * motion.translation[lo] + w[:, None] * motion.translation[hi]
    root = geom.slerp_matrices(motion.root_orientation[lo], motion.root_orientation[hi], w)
    local = geom.slerp_matrices(
        motion.local_rotations[lo], motion.local_rotations[hi], w[:, None]
    )
    return MotionSequence(target_fps, trans, root, local, motion.betas)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.shape[0]:
            raise geom.ShapeError(f"feature width {x.shape[-1]} != stats width {self.mean.shape[0]}")
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.shape[0]:
            raise geom.ShapeError(f"feature width {x.shape[-1]} != stats width {self.mean.shape[0]}")
        return x * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def fit_norm_stats(corpus, floor: float = STD_FLOOR) -> NormStats:
    """Per-dimension mean/std over every frame of every clip in ``corpus``.

    ``corpus`` is a 2-D array of vectors or a sequence of ``(F, D)`` arrays.
    """
    if isinstance(corpus, np.ndarray) and corpus.ndim == 2:
        rows = corpus
    else:
        clips = [np.asarray(c, dtype=np.float64) for c in corpus]
        clips = [c for c in clips if c.size]
        if not clips:
            raise EmptyInputError("cannot fit normalization statistics on an empty corpus")
        rows = np.concatenate([c.reshape(-1, c.shape[-1]) for c in clips], axis=0)
    if rows.shape[0] == 0:
        raise EmptyInputError("cannot fit normalization statistics on an empty corpus")
    rows = np.asarray(rows, dtype=np.float64)
    mean = rows.mean(axis=0)
    std = np.sqrt(((rows - mean) ** 2).mean(axis=0))
    return NormStats(mean, np.maximum(std, floor))
