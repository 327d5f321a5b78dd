"""Articulated Gaussian avatar: skeleton, forward kinematics, skinning and a linear pose prior.

Joint ``j`` has world rotation ``W_j`` and position ``p_j``.  The root sits at
``r + offset_0`` with ``W_0 = exp(phi)``; every other joint follows
``p_j = p_parent + W_parent offset_j`` and ``W_j = W_parent exp(theta_j)``.
Skinned particle centers are ``sum_k w_k (W_k (mu - rest_k) + p_k)``.

Backward passes work with left-tangent gradients on joint rotations: for a
loss ``L`` the vector ``g`` with ``dL = g . d`` under ``W -> exp(d) W``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .geometry import (
    axis_angle_to_quat,
    canonical_axis_angle,
    matrix_to_quat,
    normalize_backward,
    quat_multiply,
    quat_right_matrix,
    so3_exp,
    so3_left_jacobian,
)
from .splats import SplatCloud

AVATAR_SCHEMA_VERSION = 1
MAX_INFLUENCES = 4

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar",
    "right_collar", "head", "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
)
DEFAULT_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)
# rest T-pose, facing +y with +x to the avatar's right
DEFAULT_OFFSETS = (
    (0.0, 0.0, 0.0),
    (-0.09, 0.0, -0.08), (0.09, 0.0, -0.08), (0.0, 0.0, 0.11),
    (0.0, 0.0, -0.40), (0.0, 0.0, -0.40), (0.0, 0.0, 0.13),
    (0.0, -0.02, -0.40), (0.0, -0.02, -0.40), (0.0, 0.0, 0.06),
    (0.0, 0.12, -0.06), (0.0, 0.12, -0.06), (0.0, 0.0, 0.21),
    (-0.07, 0.0, 0.15), (0.07, 0.0, 0.15), (0.0, 0.02, 0.09),
    (-0.11, 0.0, 0.03), (0.11, 0.0, 0.03), (-0.26, 0.0, 0.0),
    (0.26, 0.0, 0.0), (-0.25, 0.0, 0.0), (0.25, 0.0, 0.0),
)
WRISTS = (20, 21)
FEET = (10, 11)
# pelvis height that leaves the lowest default-avatar particle 1.5 cm above z = 0
STANDING_HEIGHT = 0.99


@dataclass(frozen=True)
class Skeleton:
    parents: tuple[int, ...]
    offsets: NDArray[np.float64]
    names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        parents = tuple(int(p) for p in self.parents)
        off = np.array(self.offsets, dtype=np.float64).reshape(len(parents), 3)
        if not parents or parents[0] != -1:
            raise ValueError("joint 0 must be the root")
        if any(p == -1 for p in parents[1:]):
            raise ValueError("skeleton must have exactly one root")
        # parents precede children, which also rules out cycles
        if any(not 0 <= p < j for j, p in enumerate(parents) if j > 0):
            raise ValueError("every parent index must precede its child")
        if not np.all(np.isfinite(off)):
            raise ValueError("rest offsets must be finite")
        off.flags.writeable = False
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", off)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"joint{j}" for j in range(len(parents))))

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @cached_property
    def rest_positions(self) -> NDArray[np.float64]:
        pos = np.zeros((self.n_joints, 3))
        for j, p in enumerate(self.parents):
            pos[j] = self.offsets[j] + (pos[p] if p >= 0 else 0.0)
        return pos

    @classmethod
    def default(cls) -> Skeleton:
        return cls(DEFAULT_PARENTS, np.array(DEFAULT_OFFSETS), JOINT_NAMES)

    def to_dict(self) -> dict:
        return {"parents": list(self.parents), "offsets": self.offsets.tolist(), "names": list(self.names)}

    @classmethod
    def from_dict(cls, d: dict) -> Skeleton:
        return cls(tuple(d["parents"]), np.array(d["offsets"]), tuple(d.get("names", ())))


def _canonical(v: NDArray[np.float64]) -> NDArray[np.float64]:
    # leave in-range rotations bit-identical
    big = np.linalg.norm(v, axis=-1) > np.pi
    if np.any(big):
        v = v.copy()
        v[big] = canonical_axis_angle(v[big])
    return v


@dataclass(frozen=True)
class HumanPose:
    root: NDArray[np.float64]
    orient: NDArray[np.float64]
    body: NDArray[np.float64]  # (J - 1, 3) axis-angle per non-root joint

    def __post_init__(self) -> None:
        r = np.array(self.root, dtype=np.float64).reshape(3)
        phi = np.array(self.orient, dtype=np.float64).reshape(3)
        theta = np.array(self.body, dtype=np.float64).reshape(-1, 3)
        for arr in (r, phi, theta):
            if not np.all(np.isfinite(arr)):
                raise ValueError("human pose has non-finite values")
        phi = _canonical(phi)
        theta = _canonical(theta)
        for arr in (r, phi, theta):
            arr.flags.writeable = False
        object.__setattr__(self, "root", r)
        object.__setattr__(self, "orient", phi)
        object.__setattr__(self, "body", theta)

    @classmethod
    def rest(cls, n_joints: int = len(DEFAULT_PARENTS), root: ArrayLike = (0.0, 0.0, 0.0)) -> HumanPose:
        return cls(np.asarray(root, dtype=np.float64), np.zeros(3), np.zeros((n_joints - 1, 3)))

    @property
    def size(self) -> int:
        return 6 + self.body.size

    def to_vector(self) -> NDArray[np.float64]:
        return np.concatenate([self.root, self.orient, self.body.ravel()])

    @classmethod
    def from_vector(cls, v: ArrayLike) -> HumanPose:
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:3], v[3:6], v[6:].reshape(-1, 3))

    def replace(self, **changes) -> HumanPose:
        d = {"root": self.root, "orient": self.orient, "body": self.body}
        d.update(changes)
        return HumanPose(**d)

    def to_dict(self) -> dict:
        return {"r": self.root.tolist(), "phi": self.orient.tolist(), "theta": self.body.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> HumanPose:
        return cls(np.array(d["r"]), np.array(d["phi"]), np.array(d["theta"]))


@dataclass
class Kinematics:
    """Forward-kinematics result for one pose."""

    positions: NDArray[np.float64]  # (J, 3)
    rotations: NDArray[np.float64]  # (J, 3, 3) world rotations
    quats: NDArray[np.float64]  # (J, 4) world rotations as quaternions
    local: NDArray[np.float64]  # (J, 3) local axis-angle, root orientation first


def forward_kinematics(skeleton: Skeleton, pose: HumanPose) -> Kinematics:
    n = skeleton.n_joints
    if pose.body.shape != (n - 1, 3):
        raise ValueError(f"pose has {len(pose.body) + 1} joints, skeleton has {n}")
    local = np.vstack([pose.orient[None], pose.body])
    local_r = so3_exp(local)
    local_q = axis_angle_to_quat(local)
    pos = np.zeros((n, 3))
    rot = np.zeros((n, 3, 3))
    quat = np.zeros((n, 4))
    for j, p in enumerate(skeleton.parents):
        if p < 0:
            pos[j] = pose.root + skeleton.offsets[j]
            rot[j] = local_r[j]
            quat[j] = local_q[j]
        else:
            pos[j] = pos[p] + rot[p] @ skeleton.offsets[j]
            rot[j] = rot[p] @ local_r[j]
            quat[j] = quat_multiply(quat[p], local_q[j])
    return Kinematics(pos, rot, quat, local)


def forward_kinematics_backward(
    skeleton: Skeleton,
    kin: Kinematics,
    d_positions: ArrayLike,
    d_rot_tangent: ArrayLike | None = None,
) -> NDArray[np.float64]:
    """Pose-vector gradient ``(r, phi, theta...)`` from joint-space gradients.

    ``d_rot_tangent`` holds left-tangent gradients on the world rotations.
    """
    n = skeleton.n_joints
    gp = np.array(d_positions, dtype=np.float64).reshape(n, 3)
    gd = np.zeros((n, 3)) if d_rot_tangent is None else np.array(d_rot_tangent, dtype=np.float64).reshape(n, 3)
    g_local = np.zeros((n, 3))
    for j in range(n - 1, 0, -1):
        p = skeleton.parents[j]
        # theta_j perturbs W_j by W_p J_l(theta_j) d theta
        g_local[j] = so3_left_jacobian(kin.local[j]).T @ (kin.rotations[p].T @ gd[j])
        gp[p] += gp[j]
        gd[p] += gd[j] + np.cross(kin.positions[j] - kin.positions[p], gp[j])
    g_local[0] = so3_left_jacobian(kin.local[0]).T @ gd[0]
    return np.concatenate([gp[0], g_local.ravel()])


def batch_forward_kinematics(
    skeleton: Skeleton, root: ArrayLike, local: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Joint positions ``(T, J, 3)`` and world rotations ``(T, J, 3, 3)`` for ``T`` poses.

    ``local`` is ``(T, J, 3)`` axis-angle with the root orientation first.
    """
    root = np.asarray(root, dtype=np.float64)
    local = np.asarray(local, dtype=np.float64)
    t, n = local.shape[:2]
    if n != skeleton.n_joints:
        raise ValueError(f"poses have {n} joints, skeleton has {skeleton.n_joints}")
    local_r = so3_exp(local)
    pos = np.zeros((t, n, 3))
    rot = np.zeros((t, n, 3, 3))
    for j, p in enumerate(skeleton.parents):
        if p < 0:
            pos[:, j] = root + skeleton.offsets[j]
            rot[:, j] = local_r[:, j]
        else:
            pos[:, j] = pos[:, p] + rot[:, p] @ skeleton.offsets[j]
            rot[:, j] = rot[:, p] @ local_r[:, j]
    return pos, rot


def batch_forward_kinematics_backward(
    skeleton: Skeleton,
    local: ArrayLike,
    positions: NDArray[np.float64],
    rotations: NDArray[np.float64],
    d_positions: ArrayLike,
    d_rot_tangent: ArrayLike | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Gradients on ``root`` ``(T, 3)`` and ``local`` ``(T, J, 3)``; batched form of the single-pose backward."""
    local = np.asarray(local, dtype=np.float64)
    gp = np.array(d_positions, dtype=np.float64)
    gd = np.zeros_like(gp) if d_rot_tangent is None else np.array(d_rot_tangent, dtype=np.float64)
    g_local = np.zeros_like(gp)
    jac = so3_left_jacobian(local)
    for j in range(skeleton.n_joints - 1, 0, -1):
        p = skeleton.parents[j]
        g_local[:, j] = np.einsum("tba,tb->ta", jac[:, j], np.einsum("tba,tb->ta", rotations[:, p], gd[:, j]))
        gp[:, p] += gp[:, j]
        gd[:, p] += gd[:, j] + np.cross(positions[:, j] - positions[:, p], gp[:, j])
    g_local[:, 0] = np.einsum("tba,tb->ta", jac[:, 0], gd[:, 0])
    return gp[:, 0], g_local


@dataclass(frozen=True, eq=False)
class AvatarTemplate:
    skeleton: Skeleton
    particles: SplatCloud  # rest pose
    weight_joints: NDArray[np.int64]  # (N, 4) joint indices
    weight_values: NDArray[np.float64]  # (N, 4), rows sum to 1
    color_residuals: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        n = len(self.particles)
        wj = np.array(self.weight_joints, dtype=np.int64).reshape(n, -1)
        wv = np.array(self.weight_values, dtype=np.float64).reshape(n, -1)
        if wj.shape != wv.shape or wj.shape[1] > MAX_INFLUENCES:
            raise ValueError(f"skin weights must be (N, <= {MAX_INFLUENCES}) index/value pairs")
        if np.any(wv < 0) or not np.allclose(wv.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("skin weights must be non-negative and sum to 1")
        if np.any((wj < 0) | (wj >= self.skeleton.n_joints)):
            raise ValueError("skin weight refers to a missing joint")
        res = np.zeros((n, 3)) if self.color_residuals is None else np.array(self.color_residuals, dtype=np.float64)
        if res.shape != (n, 3) or not np.all(np.isfinite(res)):
            raise ValueError("color residuals must be finite (N, 3)")
        for arr in (wj, wv, res):
            arr.flags.writeable = False
        object.__setattr__(self, "weight_joints", wj)
        object.__setattr__(self, "weight_values", wv)
        object.__setattr__(self, "color_residuals", res)

    def __len__(self) -> int:
        return len(self.particles)

    def with_residuals(self, residuals: ArrayLike) -> AvatarTemplate:
        return AvatarTemplate(self.skeleton, self.particles, self.weight_joints, self.weight_values, residuals)

    def dense_weights(self) -> NDArray[np.float64]:
        w = np.zeros((len(self), self.skeleton.n_joints))
        np.add.at(w, (np.arange(len(self))[:, None], self.weight_joints), self.weight_values)
        return w

    def hand_particles(self, min_weight: float = 0.5) -> NDArray[np.int64]:
        """Indices of particles skinned at least ``min_weight`` to a wrist."""
        w = self.dense_weights()
        hands = [j for j in WRISTS if j < self.skeleton.n_joints]
        return np.flatnonzero(np.any(w[:, hands] >= min_weight, axis=1))

    def colors(self) -> NDArray[np.float64]:
        return np.clip(self.particles.colors + self.color_residuals, 0.0, 1.0)

    def pose(self, pose: HumanPose) -> PosedAvatar:
        return PosedAvatar(self, pose)

    # -- asset file --------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "version": AVATAR_SCHEMA_VERSION,
            "skeleton": self.skeleton.to_dict(),
            "particles": self.particles.to_json_dict(),
            "skin": {"joints": self.weight_joints.tolist(), "weights": self.weight_values.tolist()},
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> AvatarTemplate:
        if data.get("version") != AVATAR_SCHEMA_VERSION:
            raise ValueError(f"unsupported avatar schema version {data.get('version')!r}")
        return cls(
            Skeleton.from_dict(data["skeleton"]),
            SplatCloud.from_json_dict(data["particles"]),
            np.array(data["skin"]["joints"]),
            np.array(data["skin"]["weights"]),
        )

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def load_json(cls, path: str | Path) -> AvatarTemplate:
        return cls.from_json_dict(json.loads(Path(path).read_text()))


class PosedAvatar:
    """Skinned particle cloud for one pose, with the pieces needed for gradients."""

    def __init__(self, template: AvatarTemplate, pose: HumanPose) -> None:
        self.template = template
        self.pose = pose
        self.kin = forward_kinematics(template.skeleton, pose)
        skel = template.skeleton
        wj, wv = template.weight_joints, template.weight_values
        rest = template.particles.positions
        # W_k (mu - rest_k)
        self._arm = np.einsum("nkab,nkb->nka", self.kin.rotations[wj], rest[:, None, :] - skel.rest_positions[wj])
        positions = np.einsum("nk,nka->na", wv, self._arm + self.kin.positions[wj])
        # chordal quaternion blend, sign-aligned to the heaviest joint
        jq = self.kin.quats[wj]
        ref = jq[np.arange(len(wj)), np.argmax(wv, axis=1)]
        self._signs = np.where(np.einsum("nka,na->nk", jq, ref) < 0, -1.0, 1.0)
        self._blend_raw = np.einsum("nk,nka->na", wv * self._signs, jq)
        blend = self._blend_raw / np.linalg.norm(self._blend_raw, axis=1, keepdims=True)
        self._blend = blend
        quats = quat_multiply(blend, template.particles.quats)
        self.cloud = template.particles.replace(positions=positions, quats=quats, colors=template.colors())

    @property
    def joints(self) -> NDArray[np.float64]:
        return self.kin.positions

    def backward(
        self,
        d_positions: ArrayLike | None = None,
        d_quats: ArrayLike | None = None,
        d_joints: ArrayLike | None = None,
    ) -> NDArray[np.float64]:
        """Pose-vector gradient from particle and joint-position gradients."""
        t = self.template
        n_j = t.skeleton.n_joints
        wj, wv = t.weight_joints, t.weight_values
        gp = np.zeros((n_j, 3)) if d_joints is None else np.array(d_joints, dtype=np.float64).reshape(n_j, 3)
        gd = np.zeros((n_j, 3))
        if d_positions is not None:
            dp = np.asarray(d_positions, dtype=np.float64)
            contrib = wv[..., None] * dp[:, None, :]
            np.add.at(gp, wj, contrib)
            np.add.at(gd, wj, np.cross(self._arm, contrib))
        if d_quats is not None:
            dq = np.asarray(d_quats, dtype=np.float64)
            # q' = blend * q_rest = R(q_rest) blend
            g_blend = np.einsum("nba,nb->na", quat_right_matrix(t.particles.quats), dq)
            g_raw = normalize_backward(self._blend_raw, g_blend)
            g_jq = (wv * self._signs)[..., None] * g_raw[:, None, :]
            # d q_j / d w_k = 0.5 (0, e_k) * q_j = 0.5 R(q_j)[:, 1 + k]
            jac = 0.5 * quat_right_matrix(self.kin.quats[wj])[..., 1:]
            np.add.at(gd, wj, np.einsum("nkab,nka->nkb", jac, g_jq))
        return forward_kinematics_backward(t.skeleton, self.kin, gp, gd)


def pose_to_gaussians(template: AvatarTemplate, pose: HumanPose) -> SplatCloud:
    return PosedAvatar(template, pose).cloud


# -- pose prior -------------------------------------------------------------


@dataclass(frozen=True)
class PosePrior:
    mean: NDArray[np.float64]  # ((J - 1) * 3,)
    basis: NDArray[np.float64]  # ((J - 1) * 3, latent_dim), orthonormal columns

    def __post_init__(self) -> None:
        m = np.array(self.mean, dtype=np.float64).ravel()
        b = np.array(self.basis, dtype=np.float64).reshape(len(m), -1)
        if not np.allclose(b.T @ b, np.eye(b.shape[1]), atol=1e-6):
            raise ValueError("prior basis columns must be orthonormal")
        m.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "basis", b)

    @property
    def latent_dim(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def build(
        cls, n_joints: int = len(DEFAULT_PARENTS), latent_dim: int = 32, n_samples: int = 10_000,
        sigma: float = 0.3, seed: int = 0,
    ) -> PosePrior:
        """Principal directions of seeded Gaussian joint-angle samples."""
        rng = np.random.default_rng(seed)
        samples = rng.normal(0.0, sigma, (n_samples, (n_joints - 1) * 3))
        mean = samples.mean(axis=0)
        _, _, vt = np.linalg.svd(samples - mean, full_matrices=False)
        return cls(mean, vt[:latent_dim].T)

    def decode(self, z: ArrayLike) -> NDArray[np.float64]:
        z = np.asarray(z, dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise ValueError("latent code has non-finite values")
        return (self.mean + self.basis @ z).reshape(-1, 3)

    def encode(self, body: ArrayLike) -> NDArray[np.float64]:
        return self.basis.T @ (np.asarray(body, dtype=np.float64).ravel() - self.mean)

    def project(self, body: ArrayLike) -> NDArray[np.float64]:
        return self.decode(self.encode(body))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "basis": self.basis.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> PosePrior:
        return cls(np.array(d["mean"]), np.array(d["basis"]))


def decode_pose(prior: PosePrior, z: ArrayLike) -> NDArray[np.float64]:
    return prior.decode(z)


# -- default avatar ---------------------------------------------------------

_PART_COLORS = {
    "torso": (0.20, 0.45, 0.75),
    "leg": (0.25, 0.25, 0.35),
    "foot": (0.15, 0.12, 0.10),
    "arm": (0.85, 0.65, 0.50),
    "hand": (0.90, 0.70, 0.55),
    "head": (0.85, 0.68, 0.52),
    "hair": (0.20, 0.12, 0.05),
}


def _bone_frame(axis: NDArray[np.float64]) -> NDArray[np.float64]:
    a = axis / np.linalg.norm(axis)
    helper = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    b = np.cross(a, helper)
    b /= np.linalg.norm(b)
    return np.stack([a, b, np.cross(a, b)], axis=1)  # columns: along, across, across


def _ring_particles(start, end, radius, n_rings, n_around, part):
    """Particles on the surface of a cylinder from ``start`` to ``end`` with striped color."""
    axis = end - start
    length = np.linalg.norm(axis)
    frame = _bone_frame(axis)
    quat = matrix_to_quat(frame)
    pos, scale, col, t_out = [], [], [], []
    base = np.array(_PART_COLORS[part])
    for i in range(n_rings):
        t = (i + 0.5) / n_rings
        stripe = 0.75 + 0.25 * np.cos(2.0 * np.pi * 3.0 * t)
        for k in range(n_around):
            ang = 2.0 * np.pi * (k + 0.5 * (i % 2)) / n_around
            radial = frame[:, 1] * np.cos(ang) + frame[:, 2] * np.sin(ang)
            pos.append(start + t * axis + radius * radial)
            scale.append([0.6 * length / n_rings, 0.6 * np.pi * radius / n_around, 0.6 * np.pi * radius / n_around])
            shade = 0.85 + 0.15 * np.cos(ang)
            col.append(np.clip(base * stripe * shade, 0.0, 1.0))
            t_out.append(t)
    n = len(pos)
    return np.array(pos), np.tile(quat, (n, 1)), np.array(scale), np.array(col), np.array(t_out)


def _blob_particles(center, radius, n, part):
    """Particles on a sphere (Fibonacci lattice)."""
    k = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * k / n)
    azim = np.pi * (1.0 + 5.0**0.5) * k
    d = np.stack([np.cos(azim) * np.sin(polar), np.sin(azim) * np.sin(polar), np.cos(polar)], axis=1)
    pos = center + radius * d
    s = np.full((n, 3), 1.2 * radius * np.sqrt(np.pi / n))
    s[:, 2] *= 0.5
    base = np.array(_PART_COLORS[part])
    hair = np.array(_PART_COLORS["hair"])
    col = np.where((d[:, 2] > 0.45)[:, None] | ((d[:, 1] < -0.3) & (d[:, 2] > 0.0))[:, None], hair, base)
    col = np.clip(col * (0.85 + 0.15 * d[:, :1]), 0.0, 1.0)
    # orient the thin axis along the normal
    quats = matrix_to_quat(np.array([_bone_frame(v)[:, [1, 2, 0]] for v in d]))
    return pos, quats, s, col


# (parent joint, child joint or None, radius, rings, around, part); None = extend beyond a leaf
_BONES = (
    (0, 3, 0.11, 3, 10, "torso"), (3, 6, 0.12, 3, 10, "torso"), (6, 9, 0.12, 2, 10, "torso"),
    (9, 12, 0.12, 4, 10, "torso"), (12, 15, 0.045, 2, 6, "head"),
    (0, 1, 0.09, 2, 8, "leg"), (0, 2, 0.09, 2, 8, "leg"),
    (1, 4, 0.07, 7, 8, "leg"), (2, 5, 0.07, 7, 8, "leg"),
    (4, 7, 0.05, 7, 7, "leg"), (5, 8, 0.05, 7, 7, "leg"),
    (7, 10, 0.04, 3, 6, "foot"), (8, 11, 0.04, 3, 6, "foot"),
    (9, 13, 0.05, 2, 6, "torso"), (9, 14, 0.05, 2, 6, "torso"),
    (13, 16, 0.05, 2, 6, "torso"), (14, 17, 0.05, 2, 6, "torso"),
    (16, 18, 0.045, 5, 6, "arm"), (17, 19, 0.045, 5, 6, "arm"),
    (18, 20, 0.038, 5, 6, "arm"), (19, 21, 0.038, 5, 6, "arm"),
)
_LEAF_EXTENSIONS = (
    (20, (-0.09, 0.0, 0.0), 0.03, 3, 6, "hand"),
    (21, (0.09, 0.0, 0.0), 0.03, 3, 6, "hand"),
    (10, (0.0, 0.06, 0.0), 0.035, 2, 6, "foot"),
    (11, (0.0, 0.06, 0.0), 0.035, 2, 6, "foot"),
)
_BLEND_START = 0.75


def default_avatar(opacity: float = 0.95) -> AvatarTemplate:
    """Capsule avatar on the default 22-joint skeleton (about 600 particles)."""
    skel = Skeleton.default()
    rest = skel.rest_positions
    pos, quat, scale, col, wj, wv = [], [], [], [], [], []

    def add(p, q, s, c, joints, weights):
        pos.append(p)
        quat.append(q)
        scale.append(s)
        col.append(c)
        wj.append(joints)
        wv.append(weights)

    for parent, child, radius, rings, around, part in _BONES:
        p, q, s, c, t = _ring_particles(rest[parent], rest[child], radius, rings, around, part)
        # bones are driven by the parent joint and blend toward the child near its end
        blend = 0.5 * np.clip((t - _BLEND_START) / (1.0 - _BLEND_START), 0.0, 1.0)
        joints = np.tile([parent, child, 0, 0], (len(t), 1))
        weights = np.stack([1.0 - blend, blend, np.zeros_like(t), np.zeros_like(t)], axis=1)
        add(p, q, s, c, joints, weights)
    for leaf, ext, radius, rings, around, part in _LEAF_EXTENSIONS:
        start = rest[leaf]
        p, q, s, c, t = _ring_particles(start, start + np.array(ext), radius, rings, around, part)
        n = len(t)
        add(p, q, s, c, np.tile([leaf, 0, 0, 0], (n, 1)), np.tile([1.0, 0, 0, 0], (n, 1)))
    head_center = rest[15] + np.array([0.0, 0.01, 0.08])
    p, q, s, c = _blob_particles(head_center, 0.10, 60, "head")
    n = len(p)
    add(p, q, s, c, np.tile([15, 0, 0, 0], (n, 1)), np.tile([1.0, 0, 0, 0], (n, 1)))

    positions = np.concatenate(pos)
    n = len(positions)
    cloud = SplatCloud(
        positions, np.concatenate(quat), np.concatenate(scale), np.full(n, opacity), np.concatenate(col), "human"
    )
    return AvatarTemplate(skel, cloud, np.concatenate(wj), np.concatenate(wv))


DEFAULT_ASSET = Path(__file__).parent / "assets" / "avatar_default.json"


def load_default_avatar() -> AvatarTemplate:
    """The shipped avatar asset (regenerate with :func:`default_avatar`)."""
    return AvatarTemplate.load_json(DEFAULT_ASSET)
