"""End-to-end reconstruction: view selection, camera tracking, per-frame fitting, refinement, metrics.

Every stage writes its artifact into the output directory, so a run can be
inspected or resumed stage by stage.  A manifest records the config hash,
input hashes and stage timings.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .avatar import AvatarTemplate, PosePrior, load_default_avatar
from .camera_track import (
    CAMERA_ITERS,
    CAMERA_LR,
    FRAME_PATTERN,
    OBJECT_MASK_PATTERN,
    CameraArray,
    FrameObservation,
    load_observations,
    load_trajectory,
    save_trajectory,
    select_initial_view,
    sphere_center,
    track_cameras,
)
from .geometry import Camera
from .hsi import HsiAssets, HsiConfig, HsiFrameState, optimize_sequence, write_loss_csv
from .imageio import save_png
from .metrics import (
    CONTACT_THRESHOLD,
    FS_HEIGHT,
    MetricsReport,
    Plane,
    SignedDistance,
    evaluate_motion,
    load_signed_distance,
)
from .motion import MotionFrame, MotionSequence
from .refine import RefineConfig, refine_sequence, write_refine_csv
from .splats import SplatCloud, concat, load_ply

log = logging.getLogger(__name__)

TARGET_FPS = 10.0
MANIFEST_VERSION = 1
STAGE_NAMES = ("select-view", "track-camera", "reconstruct", "refine", "evaluate")
OUTPUTS = {
    "select-view": "view.json",
    "track-camera": "cameras.json",
    "reconstruct": "raw_motion.json",
    "refine": "refined_motion.json",
    "evaluate": "metrics.json",
}


class PipelineError(RuntimeError):
    """A stage failure, tagged with the stage, the frame (when known) and the last good checkpoint."""

    def __init__(self, stage: str, message: str, frame: int | None = None, checkpoint: Path | None = None) -> None:
        self.stage = stage
        self.frame = frame
        self.checkpoint = checkpoint
        where = "" if frame is None else f" frame {frame}:"
        last = "none" if checkpoint is None else str(checkpoint)
        super().__init__(f"[{stage}]{where} {message} (last good checkpoint: {last})")


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class CameraConfig:
    iters: int = CAMERA_ITERS
    lr: float = CAMERA_LR
    radii: tuple[float, ...] = (2.0, 3.0)
    azimuths_deg: tuple[float, ...] = (-90.0, -60.0, -30.0, 30.0, 60.0, 90.0)
    elevations_deg: tuple[float, ...] = (0.0, 15.0, 30.0)
    fov_deg: float = 60.0


@dataclass(frozen=True)
class MetricsConfig:
    scene_sdf: str | None = None
    object_sdf: str | None = None
    ground: float = 0.0
    fs_height: float = FS_HEIGHT
    contact_threshold: float = CONTACT_THRESHOLD


_SECTIONS = {"camera": CameraConfig, "hsi": HsiConfig, "refine": RefineConfig, "metrics": MetricsConfig}
_PATH_KEYS = ("scene", "frames", "output", "init", "object", "avatar", "prior")


@dataclass(frozen=True)
class PipelineConfig:
    """Run settings.  Relative paths resolve against the config file's directory."""

    scene: str
    frames: str
    output: str
    init: str
    object: str | None = None
    avatar: str | None = None
    prior: str | None = None
    scenario: str = "static"
    seed: int = 0
    n_frames: int | None = None
    input_fps: float = TARGET_FPS
    select_view: bool = False
    debug_renders: bool = False
    resume: bool = False
    camera: CameraConfig = field(default_factory=CameraConfig)
    hsi: HsiConfig = field(default_factory=HsiConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def __post_init__(self) -> None:
        if self.scenario not in ("static", "dynamic"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.n_frames is not None and self.n_frames < 2:
            raise ValueError("a clip needs at least 2 frames")
        if self.input_fps <= 0:
            raise ValueError("input_fps must be positive")
        if self.refine.scenario != self.scenario:
            object.__setattr__(self, "refine", dataclasses.replace(self.refine, scenario=self.scenario))

    def check_files(self) -> None:
        for key in ("scene", "init", "object", "avatar", "prior"):
            p = getattr(self, key)
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(f"config {key}: no such file {p}")
        if not Path(self.frames).is_dir():
            raise FileNotFoundError(f"config frames: no such directory {self.frames}")
        for key in ("scene_sdf", "object_sdf"):
            p = getattr(self.metrics, key)
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(f"config metrics.{key}: no such file {p}")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def replace(self, **changes) -> PipelineConfig:
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict, base: str | Path | None = None) -> PipelineConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw: dict[str, Any] = dict(d)
        for name, section in _SECTIONS.items():
            if name in kw:
                sub = kw[name]
                fields = {f.name for f in dataclasses.fields(section)}
                bad = set(sub) - fields
                if bad:
                    raise ValueError(f"unknown {name} keys: {sorted(bad)}")
                sub = {k: tuple(v) if isinstance(v, list) else v for k, v in sub.items()}
                kw[name] = section(**sub)
        if base is not None:
            base = Path(base)
            for key in _PATH_KEYS:
                if kw.get(key) is not None:
                    kw[key] = str(base / kw[key])
            if "metrics" in kw:
                m = kw["metrics"]
                kw["metrics"] = dataclasses.replace(
                    m, **{k: str(base / getattr(m, k)) for k in ("scene_sdf", "object_sdf") if getattr(m, k) is not None}
                )
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> PipelineConfig:
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base=path.parent)

    def hash(self) -> str:
        """SHA-256 of the numeric settings; paths and run flags are excluded (the manifest hashes file contents)."""
        d = self.to_dict()
        for key in (*_PATH_KEYS, "debug_renders", "resume"):
            d.pop(key)
        for key in ("scene_sdf", "object_sdf"):
            d["metrics"].pop(key)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def directory_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    for p in sorted(Path(path).iterdir()):
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


# ---------------------------------------------------------------- inputs


def load_cloud(path: str | Path, label: str) -> SplatCloud:
    path = Path(path)
    cloud = load_ply(path, label) if path.suffix == ".ply" else SplatCloud.load_json(path)
    if cloud.label != label:
        cloud = cloud.replace(label=label)
    return cloud


def downsample_indices(n: int, input_fps: float, target_fps: float = TARGET_FPS) -> list[int]:
    """Uniform frame subsampling to ``target_fps``; slower inputs are kept whole."""
    if input_fps <= target_fps:
        return list(range(n))
    step = input_fps / target_fps
    count = int(np.floor((n - 1) / step + 1e-9)) + 1
    return [int(round(k * step)) for k in range(count)]


@dataclass
class RunContext:
    config: PipelineConfig
    out: Path
    scene: SplatCloud
    obj: SplatCloud | None
    template: AvatarTemplate
    prior: PosePrior
    observations: list[FrameObservation]
    initial: MotionFrame
    timings: dict[str, float] = field(default_factory=dict)
    last_checkpoint: Path | None = None

    @property
    def assets(self) -> HsiAssets:
        return HsiAssets(self.scene, self.template, self.obj)

    def path(self, stage: str) -> Path:
        return self.out / OUTPUTS[stage]


def prepare(config: PipelineConfig, initial: MotionFrame | None = None) -> RunContext:
    """Load assets and frames.  ``initial`` overrides the config's initial-state file."""
    try:
        config.check_files()
        scene = load_cloud(config.scene, "scene")
        template = AvatarTemplate.load_json(config.avatar) if config.avatar else load_default_avatar()
        prior = PosePrior.from_dict(json.loads(Path(config.prior).read_text())) if config.prior else PosePrior.build()
        observations = load_observations(config.frames)
        idx = downsample_indices(len(observations), config.input_fps)
        observations = [observations[i] for i in idx]
        if config.n_frames is not None:
            observations = observations[: config.n_frames]
        if len(observations) < 2:
            raise ValueError("need at least 2 frames after downsampling")
        if initial is None:
            initial = MotionFrame.from_dict(json.loads(Path(config.init).read_text()))
        has_masks = (Path(config.frames) / OBJECT_MASK_PATTERN.format(idx[0])).exists()
        obj = None
        if config.object is not None and has_masks and initial.object is not None:
            obj = load_cloud(config.object, "object")
        else:
            if config.scenario == "dynamic":
                raise ValueError("the dynamic scenario needs an object asset, object masks and an initial object pose")
            initial = MotionFrame(initial.camera, initial.human, None)
            observations = [FrameObservation(o.image, o.human_mask, None) for o in observations]
            log.info("object stage disabled: no object asset, masks or initial pose")
        if initial.human.body.shape[0] + 1 != template.skeleton.n_joints:
            raise ValueError("initial pose and avatar disagree on the joint count")
        h, w = observations[0].shape
        if (initial.camera.height, initial.camera.width) != (h, w):
            raise ValueError(f"initial camera is {initial.camera.width}x{initial.camera.height}, frames are {w}x{h}")
    except (OSError, ValueError) as exc:
        raise PipelineError("load", str(exc)) from exc
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    return RunContext(config, out, scene, obj, template, prior, observations, initial)


# ---------------------------------------------------------------- stages


def _frame_of(exc: BaseException) -> int | None:
    m = re.search(r"frame (\d+)", str(exc))
    return int(m.group(1)) if m else None


def _stage(ctx: RunContext, name: str, fn: Callable[[], Any]) -> Any:
    t0 = time.perf_counter()
    try:
        result = fn()
    except PipelineError:
        raise
    except (ArithmeticError, ValueError, RuntimeError, OSError) as exc:
        raise PipelineError(name, str(exc), _frame_of(exc), ctx.last_checkpoint) from exc
    ctx.timings[name] = time.perf_counter() - t0
    ctx.last_checkpoint = ctx.path(name)
    return result


def _resumable(ctx: RunContext, name: str) -> bool:
    if not (ctx.config.resume and ctx.path(name).exists()):
        return False
    manifest = ctx.out / "manifest.json"
    if not manifest.exists():
        return False
    return json.loads(manifest.read_text()).get("config_hash") == ctx.config.hash()


def stage_select_view(ctx: RunContext) -> Camera:
    def run() -> Camera:
        cfg = ctx.config.camera
        init = ctx.initial
        posed = ctx.template.pose(init.human)
        facing = posed.kin.rotations[0] @ np.array([0.0, 1.0, 0.0])
        statics = [ctx.scene]
        obj_pts = None
        if ctx.obj is not None:
            placed = init.object.apply(ctx.obj.positions)
            obj_pts = placed
            statics.append(ctx.obj.replace(positions=placed))
        center = sphere_center(posed.joints[0], facing, obj_pts)
        h, w = ctx.observations[0].shape
        array = CameraArray.build(center, facing, w, h, cfg.radii, cfg.azimuths_deg, cfg.elevations_deg, cfg.fov_deg)
        best, counts = select_initial_view(array, concat(statics), posed.cloud, posed.joints)
        ctx.path("select-view").write_text(json.dumps({
            "camera": best.camera.to_dict(), "radius": best.radius, "azimuth_deg": best.azimuth_deg,
            "elevation_deg": best.elevation_deg, "visible_counts": counts.tolist(),
        }, indent=1, sort_keys=True))
        return best.camera

    return _stage(ctx, "select-view", run)


def stage_track_camera(ctx: RunContext, initial: Camera) -> list[Camera]:
    if _resumable(ctx, "track-camera"):
        ctx.last_checkpoint = ctx.path("track-camera")
        return load_trajectory(ctx.path("track-camera"))

    def run() -> list[Camera]:
        cfg = ctx.config.camera
        est = track_cameras(ctx.scene, initial, ctx.observations, cfg.iters, cfg.lr)
        cams = [e.camera for e in est]
        save_trajectory(ctx.path("track-camera"), cams)
        return cams

    return _stage(ctx, "track-camera", run)


def stage_reconstruct(ctx: RunContext, cameras: list[Camera]) -> MotionSequence:
    if _resumable(ctx, "reconstruct"):
        ctx.last_checkpoint = ctx.path("reconstruct")
        return MotionSequence.load_json(ctx.path("reconstruct"))

    def run() -> MotionSequence:
        init = ctx.initial
        start = HsiFrameState(init.human, init.object, cameras[0])
        states = optimize_sequence(ctx.assets, start, ctx.observations, cameras, ctx.config.hsi)
        write_loss_csv(ctx.out / "hsi_losses.csv", states[1:], first_frame=1)
        frames = tuple(MotionFrame(c, s.human, s.object) for c, s in zip(cameras, states))
        motion = MotionSequence(frames, _metadata(ctx, "raw"))
        motion.save_json(ctx.path("reconstruct"))
        return motion

    return _stage(ctx, "reconstruct", run)


def stage_refine(ctx: RunContext, raw: MotionSequence, fixed_frames: tuple[int, ...] = ()) -> MotionSequence:
    if _resumable(ctx, "refine"):
        ctx.last_checkpoint = ctx.path("refine")
        return MotionSequence.load_json(ctx.path("refine"))

    def run() -> MotionSequence:
        result = refine_sequence(raw, ctx.prior, ctx.template, ctx.obj, ctx.config.refine, fixed_frames)
        write_refine_csv(ctx.out / "refine_losses.csv", result)
        motion = MotionSequence(result.motion.frames, {**raw.metadata, **_metadata(ctx, "refined")})
        motion.save_json(ctx.path("refine"))
        return motion

    return _stage(ctx, "refine", run)


def _signed_distance(path: str | None, spacing: float) -> SignedDistance | None:
    return None if path is None else load_signed_distance(path, spacing)


def stage_evaluate(ctx: RunContext, motion: MotionSequence) -> MetricsReport:
    def run() -> MetricsReport:
        cfg = ctx.config.metrics
        scene_sdf = _signed_distance(cfg.scene_sdf, 0.02)
        if scene_sdf is None:
            log.info("no scene SDF configured; using the ground plane z = %g", cfg.ground)
            scene_sdf = Plane((0.0, 0.0, cfg.ground))
        obj_sdf = _signed_distance(cfg.object_sdf, 0.01) if ctx.obj is not None else None
        obj_pts = ctx.obj.positions if ctx.obj is not None and ctx.config.scenario == "dynamic" else None
        report = evaluate_motion(motion, ctx.template, scene_sdf, obj_sdf, obj_pts, cfg.ground, cfg.fs_height,
                                 cfg.contact_threshold)
        report.save_json(ctx.path("evaluate"))
        (ctx.out / "metrics.txt").write_text(report.table() + "\n")
        return report

    return _stage(ctx, "evaluate", run)


def _metadata(ctx: RunContext, stage: str) -> dict:
    return {"stage": stage, "seed": ctx.config.seed, "config_hash": ctx.config.hash(), "fps": TARGET_FPS}


def write_debug_renders(ctx: RunContext, motion: MotionSequence) -> None:
    d = ctx.out / "renders"
    d.mkdir(exist_ok=True)
    for t, fr in enumerate(motion.frames):
        ras = ctx.assets.render(HsiFrameState(fr.human, fr.object, fr.camera))
        save_png(d / FRAME_PATTERN.format(t), ras.color)


def write_manifest(ctx: RunContext) -> None:
    cfg = ctx.config
    assets = {k: file_hash(getattr(cfg, k)) for k in ("scene", "init", "object", "avatar", "prior") if getattr(cfg, k)}
    assets["frames"] = directory_hash(cfg.frames)
    outputs = {name: file_hash(ctx.path(s)) for s, name in OUTPUTS.items() if ctx.path(s).exists()}
    manifest = {
        "version": MANIFEST_VERSION,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "assets": assets,
        "outputs": outputs,
        "timings_s": ctx.timings,
        "n_frames": len(ctx.observations),
    }
    (ctx.out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    (ctx.out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True))


# ---------------------------------------------------------------- drivers


@dataclass
class PipelineResult:
    motion: MotionSequence
    raw: MotionSequence
    report: MetricsReport
    cameras: list[Camera]
    out: Path


def run_pipeline(config: PipelineConfig, initial: MotionFrame | None = None, fixed_frames: tuple[int, ...] = ()) -> PipelineResult:
    """Select view (optional), track the camera, fit every frame, refine, evaluate."""
    ctx = prepare(config, initial)
    camera = ctx.initial.camera
    if config.select_view:
        camera = stage_select_view(ctx)
        ctx.initial = MotionFrame(camera, ctx.initial.human, ctx.initial.object)
    cameras = stage_track_camera(ctx, camera)
    raw = stage_reconstruct(ctx, cameras)
    refined = stage_refine(ctx, raw, fixed_frames)
    report = stage_evaluate(ctx, refined)
    if config.debug_renders:
        write_debug_renders(ctx, refined)
    write_manifest(ctx)
    return PipelineResult(refined, raw, report, cameras, ctx.out)


def chain_sequences(previous: MotionSequence, config: PipelineConfig) -> MotionSequence:
    """Continue ``previous`` with the clip in ``config.frames``.

    The next clip starts from the previous last frame, which is held fixed
    during refinement, and its depth anchor is measured afresh at its first
    frame.  The result is the concatenation with a boundary marker at the
    first frame of the new clip.
    """
    if len(previous) == 0:
        raise PipelineError("chain", "previous sequence is empty")
    last = previous.frames[-1]
    if previous.has_object and config.object is None:
        raise PipelineError("chain", "previous clip has an object but the next clip's config has no object asset")
    clip = run_pipeline(config, initial=last, fixed_frames=(0,)).motion
    if clip.frames[0].human.body.shape != last.human.body.shape or clip.has_object != previous.has_object:
        raise PipelineError("chain", "clips disagree on the avatar or on the presence of an object")
    boundaries = [*previous.metadata.get("boundaries", []), len(previous)]
    meta = {**clip.metadata, "boundaries": boundaries, "stage": "refined"}
    return MotionSequence(previous.frames + clip.frames, meta)
