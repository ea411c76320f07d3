"""Rotation and rigid-transform math.

Scalar API (``Rotation``, ``Pose`` and the distance functions) is validated
and meant for callers; the ``*_batch`` helpers work on raw ``(..., 3, 3)`` /
``(..., 3)`` arrays and are what the vectorized environment uses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-9
RENORM_TOL = 1e-6
UNIT_AXIS_TOL = 1e-9


def _nearest_rotation(m: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(m)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


class Rotation:
    """A 3x3 rotation matrix with orthonormality enforced at construction.

    Matrices that drift from orthonormality by at most ``RENORM_TOL`` are
    projected back onto SO(3); anything worse raises ``ValueError``.
    """

    __slots__ = ("m",)

    def __init__(self, m):
        m = np.array(m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("rotation has non-finite entries")
        err = np.max(np.abs(m.T @ m - np.eye(3)))
        if err > RENORM_TOL:
            raise ValueError(f"matrix is not orthonormal (error {err:.3e})")
        if np.linalg.det(m) < 0:
            raise ValueError("matrix is a reflection (det < 0)")
        if err > ORTHO_TOL:
            m = _nearest_rotation(m)
        m.setflags(write=False)
        self.m = m

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return Rotation(self.m @ other.m)

    def inverse(self) -> "Rotation":
        return Rotation(self.m.T)

    def __eq__(self, other):
        return isinstance(other, Rotation) and np.array_equal(self.m, other.m)

    def __repr__(self):
        return f"Rotation({self.m.tolist()!r})"


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation plus position in meters."""

    rot: Rotation
    pos: np.ndarray

    def __post_init__(self):
        pos = np.array(self.pos, dtype=float).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("pose position must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "pos", pos)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Rotation.identity(), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """Return ``self * other`` (apply ``other`` first, then ``self``)."""
        return Pose(Rotation(self.rot.m @ other.rot.m), self.rot.m @ other.pos + self.pos)

    def inverse(self) -> "Pose":
        rt = self.rot.m.T
        return Pose(Rotation(rt), -rt @ self.pos)

    def __eq__(self, other):
        return (
            isinstance(other, Pose)
            and self.rot == other.rot
            and np.array_equal(self.pos, other.pos)
        )


@dataclass(frozen=True)
class Se3Weights:
    """Weights of the rotation (1/rad) and position (1/m) error terms."""

    a1: float = 0.5
    a2: float = 1.0

    def __post_init__(self):
        if self.a1 < 0 or self.a2 < 0:
            raise ValueError("SE(3) weights must be nonnegative")
        if self.a1 + self.a2 <= 0:
            raise ValueError("at least one SE(3) weight must be positive")


def relative_angle_batch(r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    """Angle in [0, pi] of ``r1 @ r2.T`` for stacked rotation matrices.

    Uses ``atan2(|vee(R - R^T)| / 2, (tr R - 1) / 2)`` which stays accurate
    at both ends of the range. Swapping the arguments transposes the
    relative rotation exactly, so the result is bitwise symmetric.
    """
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    rel = np.einsum("...ik,...jk->...ij", r1, r2)
    cos_t = 0.5 * (rel[..., 0, 0] + rel[..., 1, 1] + rel[..., 2, 2] - 1.0)
    sx = rel[..., 2, 1] - rel[..., 1, 2]
    sy = rel[..., 0, 2] - rel[..., 2, 0]
    sz = rel[..., 1, 0] - rel[..., 0, 1]
    sin_t = 0.5 * np.sqrt(sx * sx + sy * sy + sz * sz)
    return np.arctan2(sin_t, np.clip(cos_t, -1.0, 1.0))


def rotation_angle_distance_batch(r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    return np.sqrt(2.0) * relative_angle_batch(r1, r2)


def position_distance_batch(p1: np.ndarray, p2: np.ndarray) -> np.ndarray:
    d = np.asarray(p1, dtype=float) - np.asarray(p2, dtype=float)
    return np.sqrt(np.sum(d * d, axis=-1))


def rotation_angle_distance(r1: Rotation, r2: Rotation) -> float:
    """Frobenius norm of ``log(r1 r2^T)``, i.e. ``sqrt(2) * theta``."""
    return float(rotation_angle_distance_batch(r1.m, r2.m))


def position_distance(p1, p2) -> float:
    return float(position_distance_batch(p1, p2))


def se3_error(target: Pose, current: Pose, w: Se3Weights) -> float:
    """Weighted pose error ``a1 * d_theta + a2 * d_p``."""
    return w.a1 * rotation_angle_distance(target.rot, current.rot) + w.a2 * position_distance(
        target.pos, current.pos
    )


def express_in_body_batch(
    target_rot: np.ndarray, target_pos: np.ndarray, base_rot: np.ndarray, base_pos: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """``base^-1 * target`` on stacked arrays; returns (rotation, position)."""
    rot = np.einsum("...ki,...kj->...ij", base_rot, target_rot)
    pos = np.einsum("...ki,...k->...i", base_rot, target_pos - base_pos)
    return rot, pos


def express_in_body(world_target: Pose, base: Pose) -> Pose:
    """Re-express a world-frame pose in the frame of ``base``."""
    rot, pos = express_in_body_batch(world_target.rot.m, world_target.pos, base.rot.m, base.pos)
    return Pose(Rotation(rot), pos)


def vectorize_pose(p: Pose) -> np.ndarray:
    """Row-major rotation entries followed by the position: shape (12,)."""
    return np.concatenate([p.rot.m.reshape(9), p.pos])


def devectorize_pose(v) -> Pose:
    v = np.asarray(v, dtype=float)
    if v.shape != (12,):
        raise ValueError(f"expected a 12-vector, got shape {v.shape}")
    return Pose(Rotation(v[:9].reshape(3, 3)), v[9:])


def rodrigues_batch(axis: np.ndarray, angle) -> np.ndarray:
    """Rotation matrices about unit ``axis`` (..., 3) by ``angle`` (...)."""
    axis = np.asarray(axis, dtype=float)
    angle = np.asarray(angle, dtype=float)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    c = np.cos(angle)
    s = np.sin(angle)
    C = 1.0 - c
    rows = [
        [x * x * C + c, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, y * y * C + c, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, z * z * C + c],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def rotation_about_axis(axis, angle: float) -> Rotation:
    axis = np.asarray(axis, dtype=float).reshape(3)
    if abs(np.linalg.norm(axis) - 1.0) > UNIT_AXIS_TOL:
        raise ValueError("rotation axis must be a unit vector")
    return Rotation(rodrigues_batch(axis, angle))


def rot_x(angle) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    o, z = np.ones_like(c), np.zeros_like(c)
    return np.stack(
        [np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2
    )


def rot_y(angle) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    o, z = np.ones_like(c), np.zeros_like(c)
    return np.stack(
        [np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2
    )


def rot_z(angle) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    o, z = np.ones_like(c), np.zeros_like(c)
    return np.stack(
        [np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2
    )
