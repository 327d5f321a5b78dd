"""Initial view selection over a camera array and sequential camera tracking.

Tracking aligns a render of the static scene to each reference frame while
ignoring every pixel that was ever covered by the human or the object.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .geometry import Camera, RigidTransform, increment
from .imageio import load_mask, load_png, save_mask, save_png
from .optim import AdamState, adam_step
from .raster import MID_GRAY, Rasterization
from .splats import SplatCloud, concat

log = logging.getLogger(__name__)

MIN_BACKGROUND_FRACTION = 0.05
CAMERA_ITERS = 30
CAMERA_LR = 1e-3
VISIBILITY_EPS = 0.05
HUMAN_ALPHA_MIN = 1e-3
CENTER_LIFT = 0.1

FRAME_PATTERN = "frame_{:04d}.png"
HUMAN_MASK_PATTERN = "mask_human_{:04d}.png"
OBJECT_MASK_PATTERN = "mask_object_{:04d}.png"


class InsufficientBackgroundError(ValueError):
    pass


class NoVisibleJointsError(RuntimeError):
    pass


@dataclass(frozen=True)
class FrameObservation:
    image: NDArray[np.float64]
    human_mask: NDArray[np.bool_]
    object_mask: NDArray[np.bool_] | None = None

    def __post_init__(self) -> None:
        img = np.asarray(self.image, dtype=np.float64)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got {img.shape}")
        h, w = img.shape[:2]
        hm = np.asarray(self.human_mask)
        om = np.zeros((h, w), bool) if self.object_mask is None else np.asarray(self.object_mask)
        for name, m in (("human", hm), ("object", om)):
            if m.shape != (h, w):
                raise ValueError(f"{name} mask has shape {m.shape}, image is {(h, w)}")
            if m.dtype != bool and not np.isin(m, (0, 1)).all():
                raise ValueError(f"{name} mask is not binary")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "human_mask", hm.astype(bool))
        object.__setattr__(self, "object_mask", om.astype(bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape[:2]


def aggregate_background_mask(observations: Sequence[FrameObservation]) -> NDArray[np.bool_]:
    """Pixels never covered by a human or object mask in any given frame."""
    if not observations:
        raise ValueError("need at least one observation")
    union = np.zeros(observations[0].shape, bool)
    for obs in observations:
        union |= obs.human_mask | obs.object_mask
    return ~union


# ---------------------------------------------------------------- view selection


def sphere_center(pelvis: ArrayLike, facing: ArrayLike, object_positions: ArrayLike | None = None) -> NDArray[np.float64]:
    """Look-at center for the camera array.

    The height sits 0.1 m above the pelvis.  With an object, the horizontal
    position is the midpoint between the pelvis and the farthest object
    particle projected onto the horizontal facing ray; an object that lies
    entirely behind the pelvis falls back to the pelvis itself.
    """
    pelvis = np.asarray(pelvis, dtype=np.float64)
    center = pelvis.copy()
    center[2] = pelvis[2] + CENTER_LIFT
    if object_positions is None:
        return center
    d = np.asarray(facing, dtype=np.float64).copy()
    d[2] = 0.0
    norm = np.linalg.norm(d)
    if norm == 0:
        raise ValueError("facing direction must have a horizontal component")
    d /= norm
    pts = np.asarray(object_positions, dtype=np.float64).reshape(-1, 3)
    s = (pts[:, :2] - pelvis[:2]) @ d[:2]
    far = s.max() if len(s) else 0.0
    if far <= 0:
        return center
    center[:2] = pelvis[:2] + 0.5 * far * d[:2]
    return center


@dataclass(frozen=True)
class ArrayCamera:
    camera: Camera
    radius: float
    azimuth_deg: float
    elevation_deg: float


@dataclass(frozen=True)
class CameraArray:
    center: NDArray[np.float64]
    members: tuple[ArrayCamera, ...]

    def __len__(self) -> int:
        return len(self.members)

    @property
    def cameras(self) -> list[Camera]:
        return [m.camera for m in self.members]

    @classmethod
    def build(
        cls,
        center: ArrayLike,
        facing: ArrayLike,
        width: int,
        height: int,
        radii: Sequence[float] = (2.0, 3.0),
        azimuths_deg: Sequence[float] = (-90.0, -60.0, -30.0, 30.0, 60.0, 90.0),
        elevations_deg: Sequence[float] = (0.0, 15.0, 30.0),
        fov_deg: float = 60.0,
    ) -> CameraArray:
        """Cameras on spherical shells around ``center`` over the facing hemisphere.

        Azimuths are measured from the facing direction; elevations are
        restricted to the upper hemisphere.
        """
        center = np.asarray(center, dtype=np.float64)
        d = np.asarray(facing, dtype=np.float64).copy()
        d[2] = 0.0
        d /= np.linalg.norm(d)
        side = np.array([-d[1], d[0], 0.0])
        up = np.array([0.0, 0.0, 1.0])
        members = []
        for r in radii:
            for el in elevations_deg:
                if not 0.0 <= el < 90.0:
                    raise ValueError("elevations must lie in [0, 90) degrees")
                for az in azimuths_deg:
                    a, e = np.radians(az), np.radians(el)
                    eye = center + r * (np.cos(e) * (np.cos(a) * d + np.sin(a) * side) + np.sin(e) * up)
                    cam = Camera.look_at(eye, center, width, height, fov_deg)
                    members.append(ArrayCamera(cam, float(r), float(az), float(el)))
        return cls(center, tuple(members))


def visible_joints(
    camera: Camera,
    scene: SplatCloud,
    human: SplatCloud,
    joints: ArrayLike,
    eps: float = VISIBILITY_EPS,
) -> NDArray[np.bool_]:
    """Joints that land in frame on pixels where the full scene depth matches the human depth."""
    full = Rasterization(concat([scene, human]), camera)
    alone = Rasterization(human, camera)
    omega = (np.abs(full.depth - alone.depth) < eps) & (alone.alpha > HUMAN_ALPHA_MIN)
    uv, z = camera.project(np.asarray(joints, dtype=np.float64))
    col = np.floor(uv[:, 0] + 0.5).astype(int)
    row = np.floor(uv[:, 1] + 0.5).astype(int)
    inside = (z > camera.near) & (col >= 0) & (col < camera.width) & (row >= 0) & (row < camera.height)
    vis = np.zeros(len(z), bool)
    vis[inside] = omega[row[inside], col[inside]]
    return vis


def select_initial_view(
    array: CameraArray,
    scene: SplatCloud,
    human: SplatCloud,
    joints: ArrayLike,
    eps: float = VISIBILITY_EPS,
) -> tuple[ArrayCamera, NDArray[np.int64]]:
    """Array member seeing the most joints; ties go to the smallest ``|elevation|``.

    ``scene`` should already contain any object particles.  Returns the
    winner and the visible-joint count of every member.
    """
    if len(array) == 0:
        raise ValueError("camera array is empty")
    counts = np.array([visible_joints(m.camera, scene, human, joints, eps).sum() for m in array.members])
    if counts.max() == 0:
        raise NoVisibleJointsError(
            "no array camera sees any joint; move the array center or add radii/elevations"
        )
    best = max(range(len(array)), key=lambda k: (counts[k], -abs(array.members[k].elevation_deg), -k))
    return array.members[best], counts


# ---------------------------------------------------------------- tracking


@dataclass
class CameraEstimate:
    camera: Camera
    relative: RigidTransform  # camera-frame motion from the previous pose
    initial_loss: float
    final_loss: float
    losses: list[float] = field(default_factory=list)


def _masked_mse(color: NDArray, reference: NDArray, mask: NDArray, count: float) -> tuple[float, NDArray]:
    diff = (color - reference) * mask[..., None]
    return float(np.sum(diff * diff) / count), 2.0 * diff / count


def pivot_depth(depth: NDArray, valid: NDArray) -> float:
    """Depth that balances rotation against translation for the visible background.

    This is the least-squares point along the optical axis for inverse
    depths, ``sum(1/D) / sum(1/D^2)``.
    """
    d = depth[valid & (depth > 0)]
    if d.size == 0:
        return 1.0
    inv = 1.0 / d
    return float(inv.sum() / (inv * inv).sum())


def estimate_camera(
    scene: SplatCloud,
    prev_camera: Camera,
    reference: ArrayLike,
    mask: ArrayLike,
    iters: int = CAMERA_ITERS,
    lr: float = CAMERA_LR,
    background: ArrayLike = MID_GRAY,
) -> CameraEstimate:
    """Photometric alignment of ``scene`` to ``reference`` starting at ``prev_camera``.

    The unknown is a camera-frame increment that rotates about a pivot on the
    optical axis and then translates.  Placing the pivot at the
    inverse-depth balanced depth makes rotation and translation produce
    nearly orthogonal image motion, which suits Adam's per-coordinate steps.  The masked mean squared color error is
    minimized with Adam and the best iterate is returned.
    """
    reference = np.asarray(reference, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    h, w = prev_camera.height, prev_camera.width
    if reference.shape != (h, w, 3) or mask.shape != (h, w):
        raise ValueError("reference and mask must match the camera resolution")
    n_mask = int(mask.sum())
    if n_mask <= MIN_BACKGROUND_FRACTION * h * w:
        raise InsufficientBackgroundError(
            f"only {n_mask} of {h * w} pixels are static background (need > {MIN_BACKGROUND_FRACTION:.0%})"
        )
    count = 3.0 * n_mask
    maskf = mask.astype(np.float64)

    xi = np.zeros(6)
    state = AdamState(6, lr=lr)
    pivot = None
    losses: list[float] = []
    best_loss, best_xi = np.inf, xi
    for it in range(iters + 1):
        cam = prev_camera.with_pose(increment(xi, pivot).compose(prev_camera.pose))
        ras = Rasterization(scene, cam, background)
        loss, d_color = _masked_mse(ras.color, reference, maskf, count)
        if not np.isfinite(loss):
            raise FloatingPointError(f"camera tracking loss is not finite at iteration {it}")
        if pivot is None:
            pivot = np.array([0.0, 0.0, pivot_depth(ras.depth, mask & (ras.alpha > 0.5))])
        losses.append(loss)
        if loss < best_loss:
            best_loss, best_xi = loss, xi.copy()
        if it == iters:
            break
        g = ras.backward(d_color=d_color).d_camera
        # gradient of a rotation about the pivot rather than the camera center
        g = np.concatenate([g[:3], g[3:] - np.cross(pivot, g[:3])])
        # translation is stepped in units of the pivot depth
        unit = max(pivot[2], 1e-3)
        p = np.concatenate([xi[:3] / unit, xi[3:]])
        p = adam_step(state, p, np.concatenate([g[:3] * unit, g[3:]]), stage="camera")
        xi = np.concatenate([p[:3] * unit, p[3:]])
    rel = increment(best_xi, pivot)
    return CameraEstimate(prev_camera.with_pose(rel.compose(prev_camera.pose)), rel, losses[0], best_loss, losses)


def track_cameras(
    scene: SplatCloud,
    initial: Camera,
    observations: Sequence[FrameObservation],
    iters: int = CAMERA_ITERS,
    lr: float = CAMERA_LR,
    background: ArrayLike = MID_GRAY,
) -> list[CameraEstimate]:
    """Frame-ordered tracking; frame 0 keeps ``initial``."""
    out = [CameraEstimate(initial, RigidTransform.identity(), 0.0, 0.0)]
    for t in range(1, len(observations)):
        mask = aggregate_background_mask(observations[: t + 1])
        try:
            est = estimate_camera(scene, out[-1].camera, observations[t].image, mask, iters, lr, background)
        except (InsufficientBackgroundError, FloatingPointError) as exc:
            raise type(exc)(f"frame {t}: {exc}") from exc
        log.debug("frame %d camera loss %.3e -> %.3e", t, est.initial_loss, est.final_loss)
        out.append(est)
    return out


# ---------------------------------------------------------------- files


def save_observations(directory: str | Path, observations: Sequence[FrameObservation], object_masks: bool = True) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for t, obs in enumerate(observations):
        save_png(d / FRAME_PATTERN.format(t), obs.image)
        save_mask(d / HUMAN_MASK_PATTERN.format(t), obs.human_mask)
        if object_masks:
            save_mask(d / OBJECT_MASK_PATTERN.format(t), obs.object_mask)


def load_observations(directory: str | Path) -> list[FrameObservation]:
    """Read consecutive frames from 0; a missing object mask means no object."""
    d = Path(directory)
    out = []
    t = 0
    while (d / FRAME_PATTERN.format(t)).exists():
        hm_path = d / HUMAN_MASK_PATTERN.format(t)
        if not hm_path.exists():
            raise FileNotFoundError(f"missing human mask {hm_path}")
        om_path = d / OBJECT_MASK_PATTERN.format(t)
        om = load_mask(om_path) if om_path.exists() else None
        out.append(FrameObservation(load_png(d / FRAME_PATTERN.format(t)), load_mask(hm_path), om))
        t += 1
    if not out:
        raise FileNotFoundError(f"no frames matching {FRAME_PATTERN} in {d}")
    return out


def save_trajectory(path: str | Path, cameras: Sequence[Camera]) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in cameras], indent=1))


def load_trajectory(path: str | Path) -> list[Camera]:
    return [Camera.from_dict(d) for d in json.loads(Path(path).read_text())]
