"""Synthetic scenes, objects and motion scripts used as round-trip oracles."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import least_squares

from .avatar import JOINT_NAMES, STANDING_HEIGHT, AvatarTemplate, HumanPose, PosePrior, Skeleton, forward_kinematics
from .camera_track import FrameObservation, save_observations
from .geometry import Camera, RigidTransform, increment, matrix_to_quat
from .imageio import to_uint8
from .motion import MotionFrame, MotionSequence
from .raster import MID_GRAY, Rasterization
from .splats import LABEL_CODES, SplatCloud, concat, transform_cloud


def _surface_frame(u_axis: NDArray[np.float64], v_axis: NDArray[np.float64]) -> NDArray[np.float64]:
    n = np.cross(u_axis, v_axis)
    return np.stack([u_axis, v_axis, n / np.linalg.norm(n)], axis=1)


def textured_patch(
    origin: ArrayLike,
    u_axis: ArrayLike,
    v_axis: ArrayLike,
    size_u: float,
    size_v: float,
    spacing: float,
    palette: ArrayLike,
    rng: np.random.Generator,
    cell: float = 0.4,
    opacity: float = 0.95,
) -> tuple[NDArray, ...]:
    """Flat grid of disc-like particles with a checker-and-noise texture."""
    origin = np.asarray(origin, dtype=np.float64)
    u_axis = np.asarray(u_axis, dtype=np.float64)
    v_axis = np.asarray(v_axis, dtype=np.float64)
    palette = np.asarray(palette, dtype=np.float64)
    nu = max(1, int(round(size_u / spacing)))
    nv = max(1, int(round(size_v / spacing)))
    su = (np.arange(nu) + 0.5) * size_u / nu
    sv = (np.arange(nv) + 0.5) * size_v / nv
    gu, gv = np.meshgrid(su, sv, indexing="ij")
    gu, gv = gu.ravel(), gv.ravel()
    pos = origin + gu[:, None] * u_axis + gv[:, None] * v_axis
    checker = (np.floor(gu / cell) + np.floor(gv / cell)).astype(int) % len(palette)
    colors = palette[checker] + rng.uniform(-0.12, 0.12, (len(gu), 3))
    # a few large soft blotches so that no two cells look the same
    for _ in range(3):
        cu, cv = rng.uniform(0, size_u), rng.uniform(0, size_v)
        r = rng.uniform(0.2, 0.5)
        weight = np.exp(-((gu - cu) ** 2 + (gv - cv) ** 2) / (2 * r * r))[:, None]
        colors = colors * (1 - 0.6 * weight) + 0.6 * weight * rng.uniform(0, 1, 3)
    colors = np.clip(colors, 0.02, 0.98)
    n = len(pos)
    quat = matrix_to_quat(_surface_frame(u_axis, v_axis))
    step_u, step_v = size_u / nu, size_v / nv
    scales = np.tile([0.6 * step_u, 0.6 * step_v, 0.1 * min(step_u, step_v)], (n, 1))
    return pos, np.tile(quat, (n, 1)), scales, np.full(n, opacity), colors


def _cloud(parts: list[tuple[NDArray, ...]], label: str) -> SplatCloud:
    return SplatCloud(*(np.concatenate(field) for field in zip(*parts)), label=label)


def room_scene(seed: int = 0, half_size: float = 3.5, height: float = 2.5, spacing: float = 0.1) -> SplatCloud:
    """Textured floor (z = 0) with back (+y) and side walls; the -y side is open."""
    rng = np.random.default_rng(seed)
    s = 2 * half_size
    floor = [[0.55, 0.45, 0.35], [0.35, 0.28, 0.22], [0.62, 0.55, 0.45]]
    walls = [[0.80, 0.78, 0.70], [0.55, 0.65, 0.70], [0.70, 0.60, 0.55]]
    x, y, z = np.eye(3)
    ws = spacing * 1.4
    parts = [
        textured_patch([-half_size, -half_size, 0], x, y, s, s, spacing, floor, rng),
        textured_patch([-half_size, half_size, 0], x, z, s, height, ws, walls, rng),
        textured_patch([-half_size, -half_size, 0], y, z, s, height, ws, walls, rng),
        textured_patch([half_size, half_size, 0], -y, z, s, height, ws, walls, rng),
    ]
    return _cloud(parts, "scene")


def box_object(size: ArrayLike = (0.3, 0.3, 0.3), spacing: float = 0.04, seed: int = 1) -> SplatCloud:
    """Closed textured box centred on the origin of its own frame."""
    rng = np.random.default_rng(seed)
    sx, sy, sz = np.asarray(size, dtype=np.float64)
    palette = [[0.85, 0.25, 0.15], [0.95, 0.80, 0.20], [0.20, 0.55, 0.30]]
    x, y, z = np.eye(3)
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    faces = [
        ([-hx, -hy, hz], x, y, sx, sy),
        ([-hx, hy, -hz], x, -y, sx, sy),
        ([-hx, -hy, -hz], x, z, sx, sz),
        ([hx, hy, -hz], -x, z, sx, sz),
        ([hx, -hy, -hz], y, z, sy, sz),
        ([-hx, hy, -hz], -y, z, sy, sz),
    ]
    parts = [textured_patch(o, u, v, a, b, spacing, palette, rng, cell=0.1, opacity=0.98) for o, u, v, a, b in faces]
    return _cloud(parts, "object")


# ---------------------------------------------------------------- interaction states

OBJECT_HOME = (0.45, -0.35, 0.15)  # box resting on the floor in front of the avatar's left hand


def oracle_camera(width: int = 128, height: int = 128) -> Camera:
    return Camera.look_at([0.8, -2.6, 1.3], [0.0, 0.0, 0.9], width, height, 60.0)


def observe(ras: Rasterization) -> FrameObservation:
    """Reference frame and label-map masks from a render."""
    return FrameObservation(ras.color.copy(), ras.label == LABEL_CODES["human"], ras.label == LABEL_CODES["object"])


def _unit(rng: np.random.Generator) -> NDArray[np.float64]:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def random_pose(rng: np.random.Generator, n_joints: int = 22, body_sigma: float = 0.2) -> HumanPose:
    """Standing pose with random body angles, a small root offset and mostly yaw orientation."""
    root = np.array([0.0, 0.0, STANDING_HEIGHT]) + rng.normal(0.0, 0.05, 3)
    orient = rng.normal(0.0, 0.2, 3) * [0.2, 0.2, 1.0]
    return HumanPose(root, orient, rng.normal(0.0, body_sigma, (n_joints - 1, 3)))


def random_object_pose(rng: np.random.Generator, home: ArrayLike = OBJECT_HOME) -> RigidTransform:
    return RigidTransform.from_axis_angle(rng.normal(0.0, 0.3, 3), home)


def perturb_pose(rng: np.random.Generator, pose: HumanPose, root: float = 0.03, joints: float = 0.05) -> HumanPose:
    """Root moved ``root`` metres in a random direction; each body angle moved by +-``joints`` rad."""
    return pose.replace(root=pose.root + root * _unit(rng), body=pose.body + joints * rng.choice([-1.0, 1.0], pose.body.shape))


def perturb_object(rng: np.random.Generator, pose: RigidTransform, trans: float = 0.02, deg: float = 3.0) -> RigidTransform:
    """Object moved ``trans`` metres and turned ``deg`` degrees about its own center."""
    xi = np.concatenate([trans * _unit(rng), np.radians(deg) * _unit(rng)])
    return increment(xi, pose.translation).compose(pose)


# ---------------------------------------------------------------- motion scripts


def smooth_prior_motion(
    prior: PosePrior, n_frames: int, rng: np.random.Generator, amplitude: float = 0.3, walk: float = 0.3
) -> list[HumanPose]:
    """Slow motion whose body poses lie exactly in the prior's span.

    Latent codes, root position and heading follow low-frequency sinusoids.
    """
    t = np.linspace(0.0, 1.0, n_frames)[:, None]
    k = prior.latent_dim
    phase = rng.uniform(0, 2 * np.pi, k)
    freq = rng.uniform(0.3, 1.0, k)
    z = amplitude * rng.normal(0, 1, k) / np.sqrt(k) * np.sin(2 * np.pi * freq * t + phase)
    heading = rng.uniform(-np.pi, np.pi)
    direction = np.array([np.cos(heading), np.sin(heading), 0.0])
    root = np.array([0.0, 0.0, STANDING_HEIGHT]) + walk * t * direction + [0, 0, 0.02] * np.sin(4 * np.pi * t)
    yaw = heading + 0.2 * np.sin(2 * np.pi * t[:, 0])
    return [HumanPose(root[f], [0.0, 0.0, yaw[f]], prior.decode(z[f])) for f in range(n_frames)]


def jitter_poses(skeleton: Skeleton, poses: list[HumanPose], sigma: float, rng: np.random.Generator) -> list[HumanPose]:
    """Body-angle noise scaled per frame so joint coordinates move by ``sigma`` RMS.

    Root translation and orientation are left untouched.
    """
    out = []
    for p in poses:
        base = forward_kinematics(skeleton, p).positions
        direction = rng.normal(size=p.body.shape)

        def rms(s: float) -> float:
            q = p.replace(body=p.body + s * direction)
            return float(np.sqrt(np.mean((forward_kinematics(skeleton, q).positions - base) ** 2)))

        lo, hi = 0.0, 0.01
        while rms(hi) < sigma:
            hi *= 2.0
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if rms(mid) < sigma else (lo, mid)
        out.append(p.replace(body=p.body + 0.5 * (lo + hi) * direction))
    return out


# ---------------------------------------------------------------- scripted interaction clips

SCRIPT_FRAMES = 51
REACH_FRAME = 25
_RIGHT_WRIST = JOINT_NAMES.index("right_wrist")
_FEET = (JOINT_NAMES.index("left_foot"), JOINT_NAMES.index("right_foot"))


def _reach_keyframe(skeleton: Skeleton, prior: PosePrior, root_xy: NDArray, feet: NDArray, target: NDArray, z0: NDArray):
    """Root height and latent code placing the right wrist at ``target`` with feet planted."""

    def residual(x: NDArray) -> NDArray:
        pose = HumanPose([root_xy[0], root_xy[1], x[0]], [0.0, 0.0, 0.0], prior.decode(x[1:]))
        j = forward_kinematics(skeleton, pose).positions
        return np.concatenate([10.0 * (j[_RIGHT_WRIST] - target), 10.0 * (j[list(_FEET)] - feet).ravel(), 0.1 * x[1:]])

    x = least_squares(residual, np.concatenate([[STANDING_HEIGHT], z0]), method="lm", xtol=1e-12, ftol=1e-12).x
    return x[0], x[1:]


def _smoothstep(s: NDArray) -> NDArray:
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def reach_and_lift(
    skeleton: Skeleton,
    prior: PosePrior,
    start: int = 0,
    n_frames: int = SCRIPT_FRAMES,
    camera: Camera | None = None,
    object_home: ArrayLike = OBJECT_HOME,
    object_size: float = 0.3,
) -> MotionSequence:
    """Ground-truth clip at 10 fps: crouch and reach the box top, then lift it.

    The script spans ``SCRIPT_FRAMES`` frames; ``start`` and ``n_frames``
    select a window of it (frames past the end hold the final state).  Body
    poses lie in the prior's span.  The camera is static.
    """
    if n_frames < 1 or start < 0:
        raise ValueError("need n_frames >= 1 and start >= 0")
    camera = camera or oracle_camera()
    home = np.asarray(object_home, dtype=np.float64)
    root_xy = np.zeros(2)
    z_rest = np.zeros(prior.latent_dim)
    rest = forward_kinematics(skeleton, HumanPose([0, 0, STANDING_HEIGHT], [0, 0, 0], prior.decode(z_rest)))
    feet = rest.positions[list(_FEET)]
    grip = home + [0.0, 0.0, object_size / 2 + 0.04]
    h1, z1 = _reach_keyframe(skeleton, prior, root_xy, feet, grip, z_rest)
    h2, z2 = _reach_keyframe(skeleton, prior, root_xy, feet, grip + [0.0, 0.0, 0.45], z1)
    keys = [(0, STANDING_HEIGHT, z_rest), (REACH_FRAME, h1, z1), (SCRIPT_FRAMES - 1, h2, z2)]

    def pose_at(f: int) -> HumanPose:
        f = min(f, SCRIPT_FRAMES - 1)
        (f0, ha, za), (f1, hb, zb) = (keys[0], keys[1]) if f <= REACH_FRAME else (keys[1], keys[2])
        w = float(_smoothstep(np.array((f - f0) / (f1 - f0))))
        return HumanPose([root_xy[0], root_xy[1], ha + w * (hb - ha)], [0.0, 0.0, 0.0], prior.decode(za + w * (zb - za)))

    offset = home - grip
    frames = []
    for f in range(start, start + n_frames):
        pose = pose_at(f)
        if f <= REACH_FRAME:
            obj = RigidTransform.from_axis_angle([0.0, 0.0, 0.0], home)
        else:
            wrist = forward_kinematics(skeleton, pose).positions[_RIGHT_WRIST]
            obj = RigidTransform.from_axis_angle([0.0, 0.0, 0.0], wrist + offset)
        frames.append(MotionFrame(camera, pose, obj))
    return MotionSequence(tuple(frames), {"stage": "truth", "fps": 10, "script": "reach_and_lift", "start": start})


def render_truth(
    scene: SplatCloud, template: AvatarTemplate, obj: SplatCloud | None, truth: MotionSequence, background=MID_GRAY
) -> list[Rasterization]:
    if truth.frames[0].human.body.shape[0] + 1 != template.skeleton.n_joints:
        raise ValueError("motion script and avatar disagree on the joint count")
    if truth.has_object and obj is None:
        raise ValueError("motion script moves an object but no object asset was given")
    out = []
    for fr in truth.frames:
        parts = [scene]
        if truth.has_object:
            parts.append(transform_cloud(obj, fr.object))
        parts.append(template.pose(fr.human).cloud)
        out.append(Rasterization(concat(parts), fr.camera, background))
    return out


def synth_oracle(
    out_dir: str | Path,
    scene: SplatCloud,
    template: AvatarTemplate,
    obj: SplatCloud | None,
    truth: MotionSequence,
    background=MID_GRAY,
) -> list[FrameObservation]:
    """Render a scripted clip to frames and label-map masks and write the ground truth.

    Writes ``frames/`` (images and masks), ``truth.json`` and ``init.json``
    (frame-0 human, object and camera).
    """
    out = Path(out_dir)
    obs = [observe(r) for r in render_truth(scene, template, obj, truth, background)]
    save_observations(out / "frames", obs, object_masks=obj is not None)
    truth.save_json(out / "truth.json")
    write_initial_state(out / "init.json", truth.frames[0])
    return obs


def write_initial_state(path: str | Path, frame: MotionFrame) -> None:
    Path(path).write_text(json.dumps(frame.to_dict(), indent=1, sort_keys=True))


def read_initial_state(path: str | Path) -> MotionFrame:
    return MotionFrame.from_dict(json.loads(Path(path).read_text()))


def quantized(ras: Rasterization) -> NDArray[np.uint8]:
    """The 8-bit image a render is stored as."""
    return to_uint8(ras.color)
