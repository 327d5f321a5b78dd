"""Per-frame optimization of human pose and object pose against reference frames.

Each frame starts from the previous frame's state.  The human pose vector
``[r, phi, theta]`` and a world-frame object increment are fitted with Adam
to a photometric loss plus an object-centroid term and an object-depth
anchor.  Per-particle avatar color residuals are nudged on a slower schedule
to absorb appearance drift.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .avatar import AvatarTemplate, HumanPose
from .camera_track import FrameObservation
from .geometry import Camera, RigidTransform, increment
from .losses import PhotometricLoss, loss_center, loss_depth, object_depth
from .optim import AdamState, adam_step
from .raster import MID_GRAY, Rasterization
from .splats import LABEL_CODES, SplatCloud, concat, rigid_tangent_grad, transform_cloud

log = logging.getLogger(__name__)

RigidPose = RigidTransform
N_ROOT = 6  # r and phi lead the pose vector
_OBJ = LABEL_CODES["object"]
LOSS_FIELDS = ("rgb", "center", "depth", "total")


class HsiDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class HsiConfig:
    lam: float = 0.1
    lambda_center: float = 1e-3
    lambda_depth: float = 1e-3
    iters_per_frame: int = 300
    warmup_root_only: int = 30
    lr: float = 0.01
    color_ft_every: int = 5
    color_ft_lr: float = 1e-5
    divergence_factor: float = 10.0
    divergence_floor: float = 1e-3  # a near-zero start loss would make any step look divergent

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.iters_per_frame < self.warmup_root_only or self.warmup_root_only < 0:
            raise ValueError("need 0 <= warmup_root_only <= iters_per_frame")
        if min(self.lr, self.color_ft_lr) <= 0 or self.color_ft_every < 1:
            raise ValueError("learning rates and the color schedule must be positive")
        if min(self.lambda_center, self.lambda_depth) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class HsiFrameState:
    human: HumanPose
    object: RigidPose | None
    camera: Camera
    residuals: NDArray[np.float64] | None = None
    losses: dict[str, float] = field(default_factory=dict)
    history: list[tuple[int, float, float, float, float]] = field(default_factory=list)


@dataclass(frozen=True)
class HsiAssets:
    """Clouds shared by every frame: static scene, object in its own frame, avatar."""

    scene: SplatCloud
    template: AvatarTemplate
    obj: SplatCloud | None = None
    background: tuple[float, float, float] = MID_GRAY

    def compose(
        self, human: HumanPose, obj_pose: RigidPose | None, residuals: ArrayLike | None = None
    ) -> tuple[SplatCloud, object, SplatCloud | None]:
        """Full cloud ``[scene, object, human]``, the posed avatar and the placed object."""
        t = self.template if residuals is None else self.template.with_residuals(residuals)
        posed = t.pose(human)
        placed = None
        parts = [self.scene]
        if self.obj is not None and obj_pose is not None:
            placed = transform_cloud(self.obj, obj_pose)
            parts.append(placed)
        parts.append(posed.cloud)
        return concat(parts), posed, placed

    def render(self, state: HsiFrameState, camera: Camera | None = None) -> Rasterization:
        cloud, _, _ = self.compose(state.human, state.object, state.residuals)
        return Rasterization(cloud, camera or state.camera, self.background)


def depth_anchor(assets: HsiAssets, state: HsiFrameState, object_mask: ArrayLike) -> float | None:
    """Object depth at the first frame, or ``None`` when no object is observed.

    Uses the same alpha-weighted estimator as the per-frame depth term, so a
    motionless object contributes no depth loss.
    """
    if assets.obj is None or state.object is None or not np.asarray(object_mask).any():
        return None
    ras = assets.render(state)
    try:
        d, _, _ = object_depth(ras.depth, ras.layers[..., _OBJ])
    except ValueError:
        return None
    return d


class _FrameProblem:
    """Loss and gradients for one frame as a function of the free parameters."""

    def __init__(self, assets: HsiAssets, prev: HsiFrameState, obs: FrameObservation, config: HsiConfig, anchor):
        self.assets = assets
        self.camera = prev.camera
        self.obs = obs
        self.config = config
        self.anchor = anchor
        self.prev_object = prev.object
        self.pivot = None if prev.object is None else prev.object.translation
        self.has_object = assets.obj is not None and prev.object is not None
        n_scene = len(assets.scene)
        n_obj = len(assets.obj) if self.has_object else 0
        self.obj_slice = slice(n_scene, n_scene + n_obj)
        self.human_slice = slice(n_scene + n_obj, n_scene + n_obj + len(assets.template))
        self.dynamic = np.zeros(n_scene + n_obj + len(assets.template), bool)
        self.dynamic[n_scene:] = True
        static = Rasterization(assets.scene, self.camera, assets.background)
        self.photometric = PhotometricLoss(static.color, obs.image, config.lam)
        self.use_center = self.has_object and config.lambda_center > 0 and obs.object_mask.any()
        self.use_depth = self.has_object and config.lambda_depth > 0 and anchor is not None

    def object_pose(self, xi: NDArray) -> RigidPose | None:
        if not self.has_object:
            return None
        return increment(xi, self.pivot).compose(self.prev_object)

    def evaluate(self, human_vec: NDArray, obj_xi: NDArray, residuals: NDArray):
        cfg = self.config
        pose = HumanPose.from_vector(human_vec)
        cloud, posed, placed = self.assets.compose(pose, self.object_pose(obj_xi), residuals)
        ras = Rasterization(cloud, self.camera, self.assets.background, roi=self.dynamic)
        r0, r1, c0, c1 = ras.window
        l_rgb, g_win = self.photometric(ras.window, ras.color)

        d_layers = np.zeros(ras.layers.shape)
        d_depth = None
        l_center = l_depth = 0.0
        if self.use_center:
            a_obj = np.zeros(self.obs.shape)
            a_obj[r0:r1, c0:c1] = ras.layers[..., _OBJ]
            l_center, g_a = loss_center(a_obj, self.obs.object_mask)
            d_layers[..., _OBJ] += cfg.lambda_center * g_a[r0:r1, c0:c1]
        if self.use_depth:
            a_win = ras.layers[..., _OBJ]
            if a_win.sum() > 1e-12:
                d_hat, g_dmap, g_w = object_depth(ras.depth, a_win)
                l_depth, g_l = loss_depth(d_hat, self.anchor)
                d_depth = cfg.lambda_depth * g_l * g_dmap
                d_layers[..., _OBJ] += cfg.lambda_depth * g_l * g_w
        total = l_rgb + cfg.lambda_center * l_center + cfg.lambda_depth * l_depth
        losses = (l_rgb, l_center, l_depth, total)

        g = ras.backward(d_color=g_win, d_layers=d_layers, d_depth=d_depth, wrt=self.dynamic)
        hs = self.human_slice
        g_human = posed.backward(d_positions=g.d_position[hs], d_quats=g.d_rotation[hs])
        g_obj = np.zeros(6)
        if self.has_object:
            os_ = self.obj_slice
            g_obj = rigid_tangent_grad(placed.positions, placed.quats, g.d_position[os_], g.d_rotation[os_], self.pivot)
        raw = self.assets.template.particles.colors + residuals
        g_res = np.where((raw > 0.0) & (raw < 1.0), g.d_color[hs], 0.0)
        return losses, g_human, g_obj, g_res, posed


def optimize_frame(
    assets: HsiAssets,
    prev: HsiFrameState,
    obs: FrameObservation,
    config: HsiConfig = HsiConfig(),
    anchor: float | None = None,
    camera: Camera | None = None,
    init_body: ArrayLike | None = None,
    frame_index: int = 0,
) -> HsiFrameState:
    """Fit frame ``obs`` starting from ``prev``.

    Root translation and orientation start from ``prev``; the body pose starts
    from ``init_body`` when given, else from ``prev``.  The first
    ``warmup_root_only`` iterations leave the body pose frozen (its gradient is
    masked, Adam state is shared).  The lowest-loss iterate is returned.
    """
    cam = camera or prev.camera
    start = prev.human if init_body is None else prev.human.replace(body=np.asarray(init_body, dtype=np.float64))
    base = HsiFrameState(start, prev.object, cam, prev.residuals)
    problem = _FrameProblem(assets, base, obs, config, anchor)

    human = start.to_vector()
    obj_xi = np.zeros(6)
    residuals = np.zeros((len(assets.template), 3)) if prev.residuals is None else prev.residuals.copy()
    adam_h = AdamState(human.size, lr=config.lr)
    adam_o = AdamState(6, lr=config.lr)
    adam_c = AdamState(residuals.size, lr=config.color_ft_lr)

    history: list[tuple[int, float, float, float, float]] = []
    best = None
    initial = None
    for it in range(config.iters_per_frame + 1):
        losses, g_h, g_o, g_c, _ = problem.evaluate(human, obj_xi, residuals)
        total = losses[3]
        if not np.isfinite(total):
            raise HsiDivergenceError(f"frame {frame_index}: loss is not finite at iteration {it}")
        if initial is None:
            initial = total
        elif total > config.divergence_factor * max(initial, config.divergence_floor):
            raise HsiDivergenceError(
                f"frame {frame_index}: loss {total:.3e} exceeds {config.divergence_factor:g}x "
                f"the initial {initial:.3e} at iteration {it}"
            )
        history.append((it, *losses))
        if best is None or total < best[0]:
            best = (total, human.copy(), obj_xi.copy(), residuals.copy(), losses)
        if it == config.iters_per_frame:
            break
        if it < config.warmup_root_only:
            g_h = g_h.copy()
            g_h[N_ROOT:] = 0.0
        human = adam_step(adam_h, human, g_h, stage=f"human pose (frame {frame_index})")
        if problem.has_object:
            obj_xi = adam_step(adam_o, obj_xi, g_o, stage=f"object pose (frame {frame_index})")
        if (it + 1) % config.color_ft_every == 0:
            residuals = adam_step(adam_c, residuals.ravel(), g_c.ravel(), stage=f"color residuals (frame {frame_index})")
            residuals = residuals.reshape(-1, 3)

    _, human, obj_xi, residuals, losses = best
    return HsiFrameState(
        HumanPose.from_vector(human),
        problem.object_pose(obj_xi),
        cam,
        residuals,
        dict(zip(LOSS_FIELDS, losses)),
        history,
    )


def optimize_sequence(
    assets: HsiAssets,
    initial: HsiFrameState,
    observations: Sequence[FrameObservation],
    cameras: Sequence[Camera],
    config: HsiConfig = HsiConfig(),
    init_bodies: Sequence[ArrayLike | None] | None = None,
    anchor: float | None | str = "auto",
) -> list[HsiFrameState]:
    """Frame 0 is ``initial``; frames 1.. are fitted sequentially.

    The depth anchor is measured at frame 0 unless given; an empty object mask
    at frame 0 disables the depth term for the whole clip.
    """
    if anchor == "auto":
        anchor = depth_anchor(assets, initial, observations[0].object_mask)
    states = [initial]
    for t in range(1, len(observations)):
        body = None if init_bodies is None else init_bodies[t]
        states.append(optimize_frame(assets, states[-1], observations[t], config, anchor, cameras[t], body, t))
    return states


def write_loss_csv(path: str | Path, states: Sequence[HsiFrameState], first_frame: int = 0) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "iter", *LOSS_FIELDS])
        for t, s in enumerate(states, start=first_frame):
            for row in s.history:
                w.writerow([t, row[0], *(f"{v:.10e}" for v in row[1:])])
