"""Rotation representations, conversions and forward kinematics.

All functions accept either a single rotation (shape ``(3, 3)``) or a stack of
them (shape ``(..., 3, 3)``) and broadcast over the leading axes.  The world is
Y-up throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-6


class InvalidRotationError(ValueError):
    pass


class Degenerate6DError(ValueError):
    pass


class ShapeError(ValueError):
    pass


def check_rotation(R: np.ndarray, tol: float = ORTHO_TOL) -> None:
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise ShapeError(f"expected (..., 3, 3) rotation, got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise InvalidRotationError("rotation contains non-finite entries")
    err = np.abs(R @ np.swapaxes(R, -1, -2) - np.eye(3)).max(initial=0.0)
    if err > tol:
        raise InvalidRotationError(f"matrix not orthonormal (max |R R^T - I| = {err:.3g})")
    det = np.linalg.det(R)
    if np.abs(det - 1.0).max(initial=0.0) > tol:
        raise InvalidRotationError("matrix has determinant != +1")


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    K = np.zeros(v.shape[:-1] + (3, 3))
    K[..., 0, 1] = -v[..., 2]
    K[..., 0, 2] = v[..., 1]
    K[..., 1, 0] = v[..., 2]
    K[..., 1, 2] = -v[..., 0]
    K[..., 2, 0] = -v[..., 1]
    K[..., 2, 1] = v[..., 0]
    return K


def axis_angle_to_matrix(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    """Rodrigues formula. ``axis`` need not be normalized unless angle != 0."""
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    norm = np.linalg.norm(axis, axis=-1, keepdims=True)
    axis = axis / np.where(norm > 0, norm, 1.0)
    K = skew(axis)
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def rotvec_to_matrix(rotvec: np.ndarray) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=np.float64)
    return axis_angle_to_matrix(rotvec, np.linalg.norm(rotvec, axis=-1))


def matrix_to_axis_angle(R: np.ndarray, validate: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Convert rotation matrices to ``(axis, angle)``.

    The angle lies in ``[0, pi]``.  It is the clamped arccos of
    ``(trace - 1) / 2``, evaluated through ``atan2`` of the sine and cosine
    parts so that it stays accurate near 0 and pi.  For angle 0 the axis is
    fixed to ``(1, 0, 0)``.
    """
    R = np.asarray(R, dtype=np.float64)
    if validate:
        check_rotation(R)
    cos = np.clip((np.trace(R, axis1=-2, axis2=-1) - 1.0) / 2.0, -1.0, 1.0)
    w = 0.5 * np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )
    sin = np.linalg.norm(w, axis=-1)
    angle = np.arctan2(sin, cos)

    axis = np.zeros(R.shape[:-2] + (3,))
    axis[..., 0] = 1.0

    small = sin > 1e-12
    use_skew = small & (cos >= 0.0)
    axis = np.where(use_skew[..., None], w / np.where(small, sin, 1.0)[..., None], axis)

    # near pi the skew part vanishes: read the axis off the symmetric part,
    # S = cos I + (1 - cos) a a^T
    near_pi = (cos < 0.0)
    if np.any(near_pi):
        S = 0.5 * (R + np.swapaxes(R, -1, -2))
        aa = (S - cos[..., None, None] * np.eye(3)) / np.where(near_pi, 1.0 - cos, 1.0)[..., None, None]
        diag = np.diagonal(aa, axis1=-2, axis2=-1)
        k = np.argmax(diag, axis=-1)
        col = np.take_along_axis(aa, k[..., None, None].repeat(3, axis=-1), axis=-2)[..., 0, :]
        col = col / np.sqrt(np.maximum(np.take_along_axis(diag, k[..., None], axis=-1), 1e-300))
        col = col / np.maximum(np.linalg.norm(col, axis=-1, keepdims=True), 1e-300)
        sign = np.where(np.sum(col * w, axis=-1) < 0.0, -1.0, 1.0)
        axis = np.where(near_pi[..., None], col * sign[..., None], axis)
    return axis, angle


def matrix_to_rotvec(R: np.ndarray, validate: bool = True) -> np.ndarray:
    axis, angle = matrix_to_axis_angle(R, validate=validate)
    return axis * angle[..., None]


def geodesic_delta(R_prev: np.ndarray, R_curr: np.ndarray, validate: bool = True) -> np.ndarray:
    """Angle of ``R_curr @ inv(R_prev)`` in radians, within ``[0, pi]``."""
    R_prev = np.asarray(R_prev, dtype=np.float64)
    R_curr = np.asarray(R_curr, dtype=np.float64)
    if validate:
        check_rotation(R_prev)
        check_rotation(R_curr)
    _, angle = matrix_to_axis_angle(R_curr @ np.swapaxes(R_prev, -1, -2), validate=False)
    return angle


def rot6d_encode(R: np.ndarray) -> np.ndarray:
    """First two columns of ``R``, concatenated column-major: ``(c0, c1)``."""
    R = np.asarray(R, dtype=np.float64)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rot6d_decode(r: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Gram-Schmidt the two stored columns back into a rotation matrix."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != 6:
        raise ShapeError(f"expected (..., 6), got {r.shape}")
    a, b = r[..., :3], r[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < eps) or not np.all(np.isfinite(r)):
        raise Degenerate6DError("first 6D column has (near) zero norm")
    c0 = a / na
    b = b - np.sum(c0 * b, axis=-1, keepdims=True) * c0
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    if np.any(nb < eps):
        raise Degenerate6DError("6D columns are (near) parallel")
    c1 = b / nb
    c2 = np.cross(c0, c1)
    return np.stack([c0, c1, c2], axis=-1)


def rot_y(angle: np.ndarray) -> np.ndarray:
    angle = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    R = np.zeros(angle.shape + (3, 3))
    R[..., 0, 0] = c
    R[..., 0, 2] = s
    R[..., 1, 1] = 1.0
    R[..., 2, 0] = -s
    R[..., 2, 2] = c
    return R


def heading_angle(R: np.ndarray) -> np.ndarray:
    """Yaw of the body's forward (+Z) axis projected on the XZ plane."""
    R = np.asarray(R, dtype=np.float64)
    fwd = R[..., :, 2]
    side = R[..., :, 0]
    yaw_f = np.arctan2(fwd[..., 0], fwd[..., 2])
    # forward almost vertical: fall back to the side axis, which is yaw + pi/2
    yaw_s = np.arctan2(-side[..., 2], side[..., 0])
    flat = np.hypot(fwd[..., 0], fwd[..., 2]) > 1e-6
    return np.where(flat, yaw_f, yaw_s)


def heading_matrix(R: np.ndarray) -> np.ndarray:
    return rot_y(heading_angle(R))


def random_rotations(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotations via normalized Gaussian quaternions."""
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return quat_to_matrix(q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Scalar-first unit quaternion ``(w, x, y, z)`` to rotation matrix."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def slerp_matrices(Ra: np.ndarray, Rb: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Shortest-arc interpolation ``Ra -> Rb`` at fraction ``t`` (broadcast)."""
    rel = np.swapaxes(Ra, -1, -2) @ Rb
    axis, angle = matrix_to_axis_angle(rel, validate=False)
    t = np.asarray(t, dtype=np.float64)
    return Ra @ axis_angle_to_matrix(axis, angle * t)


def project_to_rotation(M: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix (Frobenius) via SVD."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    d = np.sign(np.linalg.det(U @ Vt))
    U = U.copy()
    U[..., :, 2] *= d[..., None]
    return U @ Vt


# --------------------------------------------------------------------------
# skeleton + forward kinematics

# 22-joint body without hands: pelvis-rooted tree, offsets in meters.
_DEFAULT_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)
_DEFAULT_OFFSETS = (
    (0.0, 0.0, 0.0),
    (0.06, -0.09, 0.0),
    (-0.06, -0.09, 0.0),
    (0.0, 0.11, -0.02),
    (0.04, -0.38, 0.0),
    (-0.04, -0.38, 0.0),
    (0.0, 0.13, 0.0),
    (0.0, -0.40, -0.04),
    (0.0, -0.40, -0.04),
    (0.0, 0.05, 0.02),
    (0.02, -0.06, 0.12),
    (-0.02, -0.06, 0.12),
    (0.0, 0.21, -0.03),
    (0.08, 0.12, -0.01),
    (-0.08, 0.12, -0.01),
    (0.0, 0.09, 0.05),
    (0.12, 0.04, -0.02),
    (-0.12, 0.04, -0.02),
    (0.26, 0.0, -0.01),
    (-0.26, 0.0, -0.01),
    (0.25, 0.01, 0.0),
    (-0.25, 0.01, 0.0),
)


@dataclass(frozen=True)
class Skeleton:
    """Kinematic tree.  ``parents[0]`` is -1; every other parent index is
    smaller than the joint's own index so a single forward pass suffices."""

    parents: tuple[int, ...]
    offsets: np.ndarray = field(repr=False)

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        n = len(self.parents)
        if n < 1 or self.parents[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        for j, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < j:
                raise ValueError(f"joint {j} has invalid parent {p}")
        if offsets.shape != (n, 3) or not np.all(np.isfinite(offsets)):
            raise ValueError(f"offsets must be finite with shape ({n}, 3)")

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    @classmethod
    def default(cls) -> "Skeleton":
        return cls(_DEFAULT_PARENTS, np.array(_DEFAULT_OFFSETS))

    @classmethod
    def chain(cls, n: int, bone: float = 1.0) -> "Skeleton":
        """Straight chain along +X, handy for hand-checkable tests."""
        offsets = np.zeros((n, 3))
        offsets[1:, 0] = bone
        return cls(tuple(range(-1, n - 1)), offsets)

    def to_dict(self) -> dict:
        return {"parents": list(self.parents), "offsets": self.offsets.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        return cls(tuple(d["parents"]), np.array(d["offsets"], dtype=np.float64))


def forward_kinematics(
    skeleton: Skeleton,
    root_translation: np.ndarray,
    root_orientation: np.ndarray,
    local_rotations: np.ndarray,
) -> np.ndarray:
    """World joint positions, shape ``(..., N, 3)``.

    ``local_rotations`` has shape ``(..., N, 3, 3)``; entry 0 is applied after
    the root orientation.  Leading axes (e.g. frames) broadcast.
    """
    local_rotations = np.asarray(local_rotations, dtype=np.float64)
    n = skeleton.num_joints
    if local_rotations.shape[-3:] != (n, 3, 3):
        raise ShapeError(f"expected local rotations (..., {n}, 3, 3), got {local_rotations.shape}")
    root_translation = np.asarray(root_translation, dtype=np.float64)
    root_orientation = np.asarray(root_orientation, dtype=np.float64)

    lead = local_rotations.shape[:-3]
    world_rot = np.empty(lead + (n, 3, 3))
    pos = np.empty(lead + (n, 3))
    world_rot[..., 0, :, :] = root_orientation @ local_rotations[..., 0, :, :]
    pos[..., 0, :] = root_translation
    for j in range(1, n):
        p = skeleton.parents[j]
        pos[..., j, :] = pos[..., p, :] + world_rot[..., p, :, :] @ skeleton.offsets[j]
        world_rot[..., j, :, :] = world_rot[..., p, :, :] @ local_rotations[..., j, :, :]
    return pos
