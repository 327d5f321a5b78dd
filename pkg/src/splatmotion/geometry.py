"""Rotation helpers, rigid transforms and the pinhole camera.

Quaternions are stored scalar-first, ``(w, x, y, z)``.  All helpers accept
arbitrary leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

_SMALL_ANGLE = 1e-6


def skew(v: ArrayLike) -> NDArray[np.float64]:
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def quat_normalize(q: ArrayLike) -> NDArray[np.float64]:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_multiply(a: ArrayLike, b: ArrayLike) -> NDArray[np.float64]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: ArrayLike) -> NDArray[np.float64]:
    q = np.array(q, dtype=np.float64)
    q[..., 1:] *= -1.0
    return q


def quat_left_matrix(q: ArrayLike) -> NDArray[np.float64]:
    """Matrix ``L(q)`` with ``q * p == L(q) @ p``."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    return np.stack(
        [
            np.stack([w, -x, -y, -z], -1),
            np.stack([x, w, -z, y], -1),
            np.stack([y, z, w, -x], -1),
            np.stack([z, -y, x, w], -1),
        ],
        axis=-2,
    )


def quat_right_matrix(q: ArrayLike) -> NDArray[np.float64]:
    """Matrix ``R(q)`` with ``p * q == R(q) @ p``."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    return np.stack(
        [
            np.stack([w, -x, -y, -z], -1),
            np.stack([x, w, z, -y], -1),
            np.stack([y, -z, w, x], -1),
            np.stack([z, y, -x, w], -1),
        ],
        axis=-2,
    )


def quat_to_matrix(q: ArrayLike) -> NDArray[np.float64]:
    """Rotation matrix of a unit quaternion (no normalization)."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def quat_to_matrix_backward(q: ArrayLike, grad_r: ArrayLike) -> NDArray[np.float64]:
    """Pull ``dL/dR`` back onto the four quaternion components."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    g = np.asarray(grad_r, dtype=np.float64)
    g00, g01, g02 = g[..., 0, 0], g[..., 0, 1], g[..., 0, 2]
    g10, g11, g12 = g[..., 1, 0], g[..., 1, 1], g[..., 1, 2]
    g20, g21, g22 = g[..., 2, 0], g[..., 2, 1], g[..., 2, 2]
    dw = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
    dx = 2 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12 + z * g20 + w * g21 - 2 * x * g22)
    dy = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21 - 2 * y * g22)
    dz = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11 + y * g12 + x * g20 + y * g21)
    return np.stack([dw, dx, dy, dz], axis=-1)


def normalize_backward(q: ArrayLike, grad_unit: ArrayLike) -> NDArray[np.float64]:
    """Gradient through ``q / |q|``."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    u = q / n
    g = np.asarray(grad_unit, dtype=np.float64)
    return (g - u * np.sum(u * g, axis=-1, keepdims=True)) / n


def matrix_to_quat(m: ArrayLike) -> NDArray[np.float64]:
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    out = np.empty((m.shape[0], 4))
    for k, r in enumerate(m):
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            out[k] = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            out[k] = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif r[1, 1] > r[2, 2]:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            out[k] = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            out[k] = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    out = quat_normalize(out)
    out[out[:, 0] < 0] *= -1.0
    return out.reshape(batch + (4,))


def axis_angle_to_quat(v: ArrayLike) -> NDArray[np.float64]:
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    # sin(t/2)/t -> 1/2 - t^2/48
    k = np.where(small, 0.5 - theta * theta / 48.0, np.sin(half) / safe)
    return np.concatenate([np.cos(half), v * k], axis=-1)


def quat_to_axis_angle(q: ArrayLike) -> NDArray[np.float64]:
    """Axis-angle with angle in ``[0, pi]``."""
    q = quat_normalize(q)
    q = np.where(q[..., :1] < 0, -q, q)
    vec = q[..., 1:]
    s = np.linalg.norm(vec, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q[..., :1])
    small = s < 1e-12
    k = np.where(small, 2.0, angle / np.where(small, 1.0, s))
    return vec * k


def so3_exp(v: ArrayLike) -> NDArray[np.float64]:
    """Rodrigues' formula for axis-angle vectors."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1)[..., None, None]
    k = skew(v)
    k2 = k @ k
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    return np.eye(3) + a * k + b * k2


def so3_left_jacobian(v: ArrayLike) -> NDArray[np.float64]:
    """``J`` with ``exp(v + e) ~= exp(J e) exp(v)`` for small ``e``."""
    v = np.asarray(v, dtype=np.float64)
    theta = np.linalg.norm(v, axis=-1)[..., None, None]
    k = skew(v)
    k2 = k @ k
    small = theta < 1e-4
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    b = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (safe - np.sin(safe)) / (safe**3))
    return np.eye(3) + a * k + b * k2


def canonical_axis_angle(v: ArrayLike) -> NDArray[np.float64]:
    """Re-express axis-angle vectors with magnitude in ``[0, pi]``."""
    return quat_to_axis_angle(axis_angle_to_quat(v))


@dataclass(frozen=True)
class RigidTransform:
    """Rotation (unit quaternion) followed by translation: ``x -> R x + t``."""

    rotation: NDArray[np.float64] = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("rigid transform has non-finite fields")
        n = np.linalg.norm(q)
        if n == 0:
            raise ValueError("zero quaternion")
        q = q / n
        q.flags.writeable = False
        t = t.copy()
        t.flags.writeable = False
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, m: ArrayLike) -> RigidTransform:
        m = np.asarray(m, dtype=np.float64)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_axis_angle(cls, rotvec: ArrayLike, translation: ArrayLike = (0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(axis_angle_to_quat(rotvec), translation)

    @property
    def rotation_matrix(self) -> NDArray[np.float64]:
        return quat_to_matrix(self.rotation)

    @property
    def matrix(self) -> NDArray[np.float64]:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def apply(self, points: ArrayLike) -> NDArray[np.float64]:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation_matrix.T + self.translation

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self ∘ other``: apply ``other`` first."""
        q = quat_multiply(self.rotation, other.rotation)
        return RigidTransform(q, self.rotation_matrix @ other.translation + self.translation)

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return self.compose(other)

    def inverse(self) -> RigidTransform:
        qi = quat_conjugate(self.rotation)
        return RigidTransform(qi, -(quat_to_matrix(qi) @ self.translation))

    def axis_angle(self) -> NDArray[np.float64]:
        return quat_to_axis_angle(self.rotation)

    def as_6d(self) -> NDArray[np.float64]:
        """``(rx, ry, rz, tx, ty, tz)`` with the rotation as axis-angle."""
        return np.concatenate([self.axis_angle(), self.translation])

    @classmethod
    def from_6d(cls, v: ArrayLike) -> RigidTransform:
        v = np.asarray(v, dtype=np.float64)
        return cls.from_axis_angle(v[:3], v[3:])

    def retract(self, xi: ArrayLike, pivot: ArrayLike | None = None) -> RigidTransform:
        """Left-compose a tangent increment ``xi = (v, w)``.

        The increment rotates by ``exp(w)`` about ``pivot`` (origin by default)
        and then translates by ``v``.
        """
        return increment(xi, pivot).compose(self)

    def angle_to(self, other: RigidTransform) -> float:
        """Rotation angle (radians) of ``self^-1 ∘ other``."""
        d = quat_multiply(quat_conjugate(self.rotation), other.rotation)
        return float(2.0 * np.arctan2(np.linalg.norm(d[1:]), abs(d[0])))

    def is_close(self, other: RigidTransform, atol: float = 1e-6) -> bool:
        return (
            self.angle_to(other) <= atol
            and bool(np.all(np.abs(self.translation - other.translation) <= atol))
        )

    def to_dict(self) -> dict:
        return {"quat": self.rotation.tolist(), "trans": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> RigidTransform:
        return cls(d["quat"], d["trans"])


def increment(xi: ArrayLike, pivot: ArrayLike | None = None) -> RigidTransform:
    """Rigid transform ``x -> exp(w)(x - c) + c + v`` for ``xi = (v, w)``."""
    xi = np.asarray(xi, dtype=np.float64)
    c = np.zeros(3) if pivot is None else np.asarray(pivot, dtype=np.float64)
    r = so3_exp(xi[3:])
    return RigidTransform(axis_angle_to_quat(xi[3:]), c - r @ c + xi[:3])


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; ``pose`` maps world to camera (x right, y down, z forward).

    Pixel ``(row i, col j)`` has its center at image coordinates ``(u=j, v=i)``.
    """

    pose: RigidTransform
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 16 or self.height < 16:
            raise ValueError("image must be at least 16x16")
        if self.near <= 0:
            raise ValueError("near plane must be positive")

    @classmethod
    def from_fov(
        cls, pose: RigidTransform, width: int, height: int, fov_deg: float = 60.0, near: float = 0.01
    ) -> Camera:
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
        return cls(pose, f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height, near)

    @classmethod
    def look_at(
        cls,
        eye: ArrayLike,
        target: ArrayLike,
        width: int,
        height: int,
        fov_deg: float = 60.0,
        up: ArrayLike = (0.0, 0.0, 1.0),
        near: float = 0.01,
    ) -> Camera:
        return cls.from_fov(look_at_pose(eye, target, up), width, height, fov_deg, near)

    @property
    def center(self) -> NDArray[np.float64]:
        """Camera position in world coordinates."""
        return self.pose.inverse().translation

    @property
    def intrinsics(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height, "near": self.near,
        }

    def with_pose(self, pose: RigidTransform) -> Camera:
        return Camera(pose, self.fx, self.fy, self.cx, self.cy, self.width, self.height, self.near)

    def project(self, points: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Image coordinates ``(N, 2)`` and camera depths ``(N,)`` of world points."""
        pc = self.pose.apply(points)
        z = pc[..., 2]
        u = self.fx * pc[..., 0] / z + self.cx
        v = self.fy * pc[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), z

    def to_dict(self) -> dict:
        return {**self.pose.to_dict(), "intrinsics": self.intrinsics}

    @classmethod
    def from_dict(cls, d: dict) -> Camera:
        k = d["intrinsics"]
        return cls(
            RigidTransform.from_dict(d), k["fx"], k["fy"], k["cx"], k["cy"],
            int(k["width"]), int(k["height"]), k.get("near", 0.01),
        )


def look_at_pose(eye: ArrayLike, target: ArrayLike, up: ArrayLike = (0.0, 0.0, 1.0)) -> RigidTransform:
    """World-to-camera pose of a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    r = np.stack([right, down, forward])
    return RigidTransform(matrix_to_quat(r), -r @ eye)
