"""Sequence-level refinement in pose-prior latent space with contact and smoothness terms.

All frames' root translation, root orientation and latent body code are
optimized jointly with Adam against the raw per-frame joints.  The physics
term pulls hand points onto nearby object particles and penalizes pose
changes between adjacent frames.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from .avatar import (
    AvatarTemplate,
    HumanPose,
    PosePrior,
    batch_forward_kinematics,
    batch_forward_kinematics_backward,
)
from .motion import MotionSequence
from .optim import AdamState, adam_step
from .splats import SplatCloud

log = logging.getLogger(__name__)

SMOOTH_WEIGHTS = {"static": 0.3, "dynamic": 0.1}
CONTACT_MODES = ("printed", "mean")
LOSS_FIELDS = ("fit", "contact", "smooth", "total")


class RefineDivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class RefineConfig:
    iters: int = 1000
    lr: float = 0.05
    lambda_physics: float = 1e-3
    lambda_contact: float = 1.0
    lambda_smooth: float | None = None  # None: chosen by scenario
    contact_eps: float = 0.02
    scenario: str = "static"
    contact_mode: str = "printed"  # "mean": average pair distance instead of min / count

    def __post_init__(self) -> None:
        if self.scenario not in SMOOTH_WEIGHTS:
            raise ValueError(f"scenario must be one of {sorted(SMOOTH_WEIGHTS)}")
        if self.contact_mode not in CONTACT_MODES:
            raise ValueError(f"contact_mode must be one of {CONTACT_MODES}")
        if self.iters < 0 or self.lr <= 0 or self.contact_eps <= 0:
            raise ValueError("iters must be >= 0; lr and contact_eps must be positive")
        if min(self.lambda_physics, self.lambda_contact, self.smooth_weight) < 0:
            raise ValueError("loss weights must be non-negative")

    @property
    def smooth_weight(self) -> float:
        return SMOOTH_WEIGHTS[self.scenario] if self.lambda_smooth is None else self.lambda_smooth


# ---------------------------------------------------------------- loss terms


def loss_fit(reference: ArrayLike, joints: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Mean squared joint distance per frame and its gradient on ``joints``.

    Both arrays are ``(..., J, 3)``; the value has the leading shape.
    """
    diff = np.asarray(joints, dtype=np.float64) - np.asarray(reference, dtype=np.float64)
    n = diff.shape[-2]
    return np.sum(diff * diff, axis=(-1, -2)) / n, 2.0 * diff / n


def contact_set(hand_points: ArrayLike, object_points: ArrayLike, eps: float, tree: cKDTree | None = None) -> NDArray[np.int64]:
    """All ``(hand, particle)`` index pairs closer than ``eps``, sorted."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    h = np.asarray(hand_points, dtype=np.float64).reshape(-1, 3)
    o = np.asarray(object_points, dtype=np.float64).reshape(-1, 3)
    if len(h) == 0 or len(o) == 0:
        return np.zeros((0, 2), np.int64)
    tree = cKDTree(o) if tree is None else tree
    pairs = [(i, j) for i, near in enumerate(tree.query_ball_point(h, eps)) for j in near]
    if not pairs:
        return np.zeros((0, 2), np.int64)
    p = np.array(pairs, dtype=np.int64)
    d = np.linalg.norm(h[p[:, 0]] - o[p[:, 1]], axis=1)
    p = p[d < eps]  # the tree query is inclusive
    return p[np.lexsort((p[:, 1], p[:, 0]))]


def loss_contact(distances: ArrayLike, mode: str = "printed") -> float:
    """Contact loss of one frame from its contact-pair distances; 0 for an empty set.

    ``printed``: minimum distance divided by the number of pairs.
    ``mean``: mean pair distance.
    """
    d = np.asarray(distances, dtype=np.float64).ravel()
    if d.size == 0:
        return 0.0
    if mode == "printed":
        return float(d.min() / d.size)
    if mode == "mean":
        return float(d.mean())
    raise ValueError(f"contact mode must be one of {CONTACT_MODES}")


def _contact_grad(h: NDArray, o: NDArray, pairs: NDArray, mode: str) -> tuple[float, NDArray]:
    """Contact loss of one frame and its gradient on the hand points."""
    g = np.zeros_like(h)
    if len(pairs) == 0:
        return 0.0, g
    diff = h[pairs[:, 0]] - o[pairs[:, 1]]
    d = np.linalg.norm(diff, axis=1)
    value = loss_contact(d, mode)
    safe = np.where(d > 0, d, 1.0)[:, None]
    unit = np.where(d[:, None] > 0, diff / safe, 0.0)
    if mode == "printed":
        k = int(np.argmin(d))
        g[pairs[k, 0]] += unit[k] / len(d)
    else:
        np.add.at(g, pairs[:, 0], unit / len(d))
    return value, g


def loss_smooth(bodies: ArrayLike) -> tuple[float, NDArray[np.float64]]:
    """Mean Euclidean norm of adjacent-frame body-pose differences and its gradient.

    ``bodies`` is ``(T, ...)``; at a zero difference the subgradient 0 is used.
    """
    b = np.asarray(bodies, dtype=np.float64)
    t = len(b)
    if t < 2:
        raise ValueError("smoothness needs at least two frames")
    flat = b.reshape(t, -1)
    diff = flat[:-1] - flat[1:]
    norm = np.linalg.norm(diff, axis=1)
    unit = np.where(norm[:, None] > 0, diff / np.where(norm > 0, norm, 1.0)[:, None], 0.0) / (t - 1)
    g = np.zeros_like(flat)
    g[:-1] += unit
    g[1:] -= unit
    return float(norm.mean()), g.reshape(b.shape)


# ---------------------------------------------------------------- hand points


class HandPoints:
    """Hand particles of an avatar, skinned for a batch of poses."""

    def __init__(self, template: AvatarTemplate, min_weight: float = 0.5) -> None:
        self.index = template.hand_particles(min_weight)
        self.rest = template.particles.positions[self.index]
        self.weights = template.dense_weights()[self.index]  # (H, J)
        self.rest_joints = template.skeleton.rest_positions

    def __len__(self) -> int:
        return len(self.index)

    def forward(self, positions: NDArray, rotations: NDArray) -> tuple[NDArray, NDArray]:
        """Hand points ``(T, H, 3)`` and the joint-relative arms needed for gradients."""
        arm = np.einsum("tjab,hjb->thja", rotations, self.rest[:, None, :] - self.rest_joints[None])
        pts = np.einsum("hj,thja->tha", self.weights, arm + positions[:, None])
        return pts, arm

    def backward(self, arm: NDArray, d_points: NDArray) -> tuple[NDArray, NDArray]:
        """Joint position and rotation-tangent gradients from hand-point gradients."""
        contrib = self.weights[None, :, :, None] * d_points[:, :, None, :]  # (T, H, J, 3)
        return contrib.sum(axis=1), np.cross(arm, contrib).sum(axis=1)


# ---------------------------------------------------------------- sequence refinement


@dataclass
class RefineResult:
    motion: MotionSequence
    initial: dict[str, float]
    final: dict[str, float]
    history: list[tuple[int, float, float, float, float]] = field(default_factory=list)


class _Objective:
    def __init__(self, motion: MotionSequence, prior: PosePrior, template: AvatarTemplate,
                 obj: SplatCloud | None, config: RefineConfig) -> None:
        self.skeleton = template.skeleton
        self.prior = prior
        self.config = config
        self.t = len(motion)
        self.n_j = self.skeleton.n_joints
        self.k = prior.latent_dim
        self.reference = motion.joints(self.skeleton)
        self.hands = HandPoints(template)
        self.objects: list[tuple[NDArray, cKDTree] | None] = []
        use_contact = obj is not None and motion.has_object and config.lambda_contact > 0 and config.lambda_physics > 0
        for pose in motion.objects:
            if use_contact and len(self.hands):
                pts = pose.apply(obj.positions)
                self.objects.append((pts, cKDTree(pts)))
            else:
                self.objects.append(None)

    def split(self, x: NDArray) -> tuple[NDArray, NDArray, NDArray]:
        t, k = self.t, self.k
        return x[: 3 * t].reshape(t, 3), x[3 * t: 6 * t].reshape(t, 3), x[6 * t:].reshape(t, k)

    def bodies(self, z: NDArray) -> NDArray:
        return self.prior.mean + z @ self.prior.basis.T  # (T, 3 (J - 1))

    def __call__(self, x: NDArray) -> tuple[tuple[float, float, float, float], NDArray, NDArray]:
        cfg = self.config
        t = self.t
        root, orient, z = self.split(x)
        body = self.bodies(z)
        local = np.concatenate([orient[:, None], body.reshape(t, -1, 3)], axis=1)
        pos, rot = batch_forward_kinematics(self.skeleton, root, local)

        per_frame, d_pos = loss_fit(self.reference, pos)
        fit = per_frame.mean()
        d_pos = d_pos / t
        d_rot = np.zeros_like(d_pos)

        contact = 0.0
        w_contact = cfg.lambda_physics * cfg.lambda_contact
        if any(o is not None for o in self.objects):
            hand, arm = self.hands.forward(pos, rot)
            d_hand = np.zeros_like(hand)
            for f, entry in enumerate(self.objects):
                if entry is None:
                    continue
                pts, tree = entry
                pairs = contact_set(hand[f], pts, cfg.contact_eps, tree)
                v, g = _contact_grad(hand[f], pts, pairs, cfg.contact_mode)
                contact += v / t
                d_hand[f] = w_contact * g / t
            gp, gd = self.hands.backward(arm, d_hand)
            d_pos = d_pos + gp
            d_rot = d_rot + gd

        w_smooth = cfg.lambda_physics * cfg.smooth_weight
        smooth, g_body = loss_smooth(body) if t > 1 else (0.0, np.zeros_like(body))
        total = fit + w_contact * contact + w_smooth * smooth

        g_root, g_local = batch_forward_kinematics_backward(self.skeleton, local, pos, rot, d_pos, d_rot)
        g_body_total = g_local[:, 1:].reshape(t, -1) + w_smooth * g_body
        grad = np.concatenate([g_root.ravel(), g_local[:, 0].ravel(), (g_body_total @ self.prior.basis).ravel()])
        return (fit, contact, smooth, total), grad, per_frame


def refine_sequence(
    motion: MotionSequence,
    prior: PosePrior,
    template: AvatarTemplate,
    obj: SplatCloud | None = None,
    config: RefineConfig = RefineConfig(),
    fixed_frames: Sequence[int] = (),
) -> RefineResult:
    """Refit every frame's ``(r, phi, z)`` jointly; object poses and cameras pass through.

    Latent codes start at the encoding of the raw body poses.  The
    lowest-loss iterate is returned.  Frames in ``fixed_frames`` keep their
    parameters and are returned unchanged.
    """
    objective = _Objective(motion, prior, template, obj, config)
    x = np.concatenate([
        np.stack([p.root for p in motion.poses]).ravel(),
        np.stack([p.orient for p in motion.poses]).ravel(),
        np.stack([prior.encode(p.body) for p in motion.poses]).ravel(),
    ])
    frozen = np.zeros((3, len(motion), 1), bool)
    frozen[:, list(fixed_frames)] = True
    free = ~np.concatenate([np.broadcast_to(frozen[0], (len(motion), 3)).ravel(),
                            np.broadcast_to(frozen[1], (len(motion), 3)).ravel(),
                            np.broadcast_to(frozen[2], (len(motion), prior.latent_dim)).ravel()])
    state = AdamState(x.size, lr=config.lr)
    history: list[tuple[int, float, float, float, float]] = []
    best = None
    for it in range(config.iters + 1):
        losses, grad, per_frame = objective(x)
        if not np.isfinite(losses[3]):
            bad = np.flatnonzero(~np.isfinite(per_frame))
            where = f"frame {int(bad[0])}" if len(bad) else "physics term"
            raise RefineDivergenceError(f"refinement loss is not finite at iteration {it} ({where})")
        history.append((it, *losses))
        if best is None or losses[3] < best[0][3]:
            best = (losses, x.copy())
        if it == config.iters:
            break
        x = adam_step(state, x, grad * free, stage="refinement")

    losses, x = best
    root, orient, z = objective.split(x)
    body = objective.bodies(z).reshape(len(motion), -1, 3)
    poses = [HumanPose(root[f], orient[f], body[f]) for f in range(len(motion))]
    for f in fixed_frames:
        poses[f] = motion.poses[f]
    refined = motion.with_poses(poses, stage="refined")
    return RefineResult(refined, dict(zip(LOSS_FIELDS, history[0][1:])), dict(zip(LOSS_FIELDS, losses)), history)


def write_refine_csv(path: str | Path, result: RefineResult) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iter", *LOSS_FIELDS])
        for row in result.history:
            w.writerow([row[0], *(f"{v:.10e}" for v in row[1:])])
