"""Synthetic motion fixtures with known structure.

Used by the tests, the demos and the CLI's fixture generator.  Everything is
driven by an explicit ``numpy.random.Generator`` so fixtures are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom
from .curation import BoundingBox, DetectionTrack
from .geom import Skeleton
from .representation import MotionSequence


def _smooth_signal(rng: np.random.Generator, t: np.ndarray, amplitude: float, freqs=(0.2, 1.5),
                   terms: int = 3, shape=()) -> np.ndarray:
    out = np.zeros(t.shape + shape)
    for _ in range(terms):
        f = rng.uniform(*freqs, size=shape)
        ph = rng.uniform(0, 2 * np.pi, size=shape)
        a = rng.uniform(0.3, 1.0, size=shape) * amplitude / terms
        out += a * np.sin(2 * np.pi * f * t.reshape(t.shape + (1,) * len(shape)) + ph)
    return out


def random_motion(rng: np.random.Generator, frames: int = 120, skeleton: Skeleton | None = None,
                  fps: float = 30.0, speed: float = 1.0, turn_rate: float = 0.6,
                  tilt: float = 0.08, joint_amplitude: float = 0.35,
                  estimator_noise: float = 0.0) -> MotionSequence:
    """A smooth, plausible-looking clip: walking root, gentle turns, swinging joints.

    ``estimator_noise`` (radians) adds the small frame-independent error a
    video-based pose estimator leaves on every rotation; translations get
    a tenth of it in meters.
    """
    skeleton = skeleton or Skeleton.default()
    n = skeleton.num_joints
    t = np.arange(frames) / fps

    yaw = rng.uniform(-np.pi, np.pi) + np.cumsum(_smooth_signal(rng, t, turn_rate)) / fps
    pitch = _smooth_signal(rng, t, tilt)
    roll = _smooth_signal(rng, t, tilt)
    R = geom.rot_y(yaw) @ geom.axis_angle_to_matrix(np.array([1.0, 0, 0]), pitch) \
        @ geom.axis_angle_to_matrix(np.array([0, 0, 1.0]), roll)

    fwd_speed = speed * (1.0 + 0.3 * _smooth_signal(rng, t, 1.0)) / fps
    step = np.stack([np.sin(yaw) * fwd_speed, np.zeros(frames), np.cos(yaw) * fwd_speed], axis=1)
    trans = np.cumsum(step, axis=0)
    trans[:, 0] += rng.uniform(-2, 2)
    trans[:, 2] += rng.uniform(-2, 2)
    trans[:, 1] = 0.92 + 0.03 * _smooth_signal(rng, t, 1.0, freqs=(1.0, 2.0))

    rotvec = _smooth_signal(rng, t, joint_amplitude, freqs=(0.3, 2.0), shape=(n, 3))
    local = geom.rotvec_to_matrix(rotvec)
    local[:, 0] = np.eye(3)
    if estimator_noise > 0:
        R = R @ geom.rotvec_to_matrix(rng.normal(0.0, estimator_noise, size=(frames, 3)))
        local = local @ geom.rotvec_to_matrix(rng.normal(0.0, estimator_noise, size=(frames, n, 3)))
        local[:, 0] = np.eye(3)
        trans = trans + rng.normal(0.0, 0.1 * estimator_noise, size=trans.shape)
    return MotionSequence(fps, trans, R, local)


def sinusoid_motion(frames: int, skeleton: Skeleton, fps: float = 30.0, freq: float = 1.0,
                    amplitude: float = 0.4, phase: float = 0.0, speed: float = 1.0) -> MotionSequence:
    """Deterministic periodic clip: straight walk along +Z with sinusoidal joint swings."""
    n = skeleton.num_joints
    t = np.arange(frames) / fps
    trans = np.zeros((frames, 3))
    trans[:, 2] = speed * t
    trans[:, 1] = 0.92 + 0.02 * np.sin(4 * np.pi * freq * t + phase)
    j = np.arange(n)
    angle = amplitude * np.sin(2 * np.pi * freq * t[:, None] + phase + 0.7 * j[None, :])
    axes = np.stack([np.ones(n), 0.3 * np.cos(j), 0.3 * np.sin(j)], axis=1)
    local = geom.axis_angle_to_matrix(np.broadcast_to(axes, (frames, n, 3)), angle)
    local[:, 0] = np.eye(3)
    R = np.broadcast_to(np.eye(3), (frames, 3, 3)).copy()
    return MotionSequence(fps, trans, R, local)


def add_jitter(motion: MotionSequence, rng: np.random.Generator, sigma: float,
               start: int = 0, stop: int | None = None) -> MotionSequence:
    """Perturb joint rotations (radians) and root translation (meters) on ``[start, stop)``."""
    stop = motion.num_frames if stop is None else stop
    local = motion.local_rotations.copy()
    trans = motion.translation.copy()
    k = stop - start
    n = motion.num_joints
    noise = geom.rotvec_to_matrix(rng.normal(0.0, sigma, size=(k, n, 3)))
    noise[:, 0] = np.eye(3)
    local[start:stop] = local[start:stop] @ noise
    trans[start:stop] += rng.normal(0.0, sigma * 0.3, size=(k, 3))
    return MotionSequence(motion.fps, trans, motion.root_orientation.copy(), local, motion.betas)


def plant_flip(motion: MotionSequence, frame: int, angle: float = np.pi) -> MotionSequence:
    """Turn the body about the vertical axis by ``angle`` from ``frame`` onwards."""
    R = motion.root_orientation.copy()
    R[frame:] = geom.rot_y(angle) @ R[frame:]
    return MotionSequence(motion.fps, motion.translation.copy(), R, motion.local_rotations.copy(), motion.betas)


@dataclass
class PlantedClip:
    motion: MotionSequence
    flip_frames: list[int] = field(default_factory=list)
    burst_frames: list[int] = field(default_factory=list)

    @property
    def anomaly_frames(self) -> list[int]:
        return sorted(set(self.flip_frames) | set(self.burst_frames))


def curation_corpus(rng: np.random.Generator, clips: int = 200, skeleton: Skeleton | None = None,
                    frames=(150, 200), flip_prob: float = 0.3, burst_prob: float = 0.3,
                    burst_len=(4, 10), burst_sigma: float = 0.25, outlier_sigma: float = 1.5,
                    estimator_noise: float = 0.01) -> tuple[list[PlantedClip], int]:
    """Clean clips with planted orientation flips and jitter bursts.

    Returns the clips and the index of the clip holding the single extreme
    jitter burst (the corpus-level global outlier).
    """
    skeleton = skeleton or Skeleton.default()
    out = []
    for _ in range(clips):
        F = int(rng.integers(frames[0], frames[1] + 1))
        m = random_motion(rng, F, skeleton, estimator_noise=estimator_noise)
        flips, bursts = [], []
        if rng.random() < flip_prob:
            k = int(rng.integers(40, F - 40))
            m = plant_flip(m, k)
            flips.append(k)
        if rng.random() < burst_prob:
            b = int(rng.integers(burst_len[0], burst_len[1] + 1))
            lo = 10
            k = int(rng.integers(lo, F - b - 10))
            if flips and abs(k - flips[0]) < 20:
                k = (flips[0] + 25) if flips[0] + 25 + b < F - 5 else max(lo, flips[0] - 25 - b)
            m = add_jitter(m, rng, burst_sigma, k, k + b)
            bursts.extend(range(k, k + b))
        out.append(PlantedClip(m, flips, bursts))
    g = int(rng.integers(clips))
    clip = out[g]
    F = clip.motion.num_frames
    k = F // 2 + 5 if not clip.flip_frames or abs(F // 2 - clip.flip_frames[0]) > 20 else 15
    m = add_jitter(clip.motion, rng, outlier_sigma, k, k + 3)
    out[g] = PlantedClip(m, clip.flip_frames, sorted(set(clip.burst_frames) | set(range(k, k + 3))))
    return out, g


def detection_track(rng: np.random.Generator, frames: int, jump_at: list[int] = (), occluded: list[int] = (),
                    width: float = 80.0, height: float = 200.0) -> DetectionTrack:
    """Tracked boxes drifting slowly, with matching detector candidates.

    ``jump_at`` frames teleport the subject; ``occluded`` frames get a
    low-confidence detection only.
    """
    x, y = rng.uniform(200, 400), rng.uniform(100, 200)
    tracked, cands = [], []
    jump_at, occluded = set(jump_at), set(occluded)
    for i in range(frames):
        if i in jump_at:
            x += 4 * width
        x += rng.normal(0, 0.5)
        y += rng.normal(0, 0.5)
        box = BoundingBox(x, y, x + width, y + height, 1.0)
        tracked.append(box)
        conf = 0.5 if i in occluded else float(rng.uniform(0.9, 0.99))
        det = BoundingBox(x + 1.0, y + 1.0, x + width + 1.0, y + height, conf)
        distractor = BoundingBox(x + 300, y, x + 300 + width, y + height, 0.95)
        cands.append([distractor, det])
    return DetectionTrack(tracked, cands)
