"""Per-frame motion records: camera, human pose and object pose."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .avatar import HumanPose, Skeleton, batch_forward_kinematics
from .geometry import Camera, RigidTransform

MOTION_SCHEMA_VERSION = 1
STAGES = ("truth", "raw", "refined")


@dataclass(frozen=True)
class MotionFrame:
    camera: Camera
    human: HumanPose
    object: RigidTransform | None = None

    def to_dict(self) -> dict:
        return {
            "camera": self.camera.to_dict(),
            "human": self.human.to_dict(),
            "object": None if self.object is None else self.object.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> MotionFrame:
        obj = d.get("object")
        return cls(Camera.from_dict(d["camera"]), HumanPose.from_dict(d["human"]), None if obj is None else RigidTransform.from_dict(obj))


@dataclass(frozen=True)
class MotionSequence:
    """Frames plus metadata: ``seed``, ``config_hash``, ``stage``, ``fps`` and clip ``boundaries``.

    ``boundaries`` lists the frame indices where a chained clip starts.
    """

    frames: tuple[MotionFrame, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("motion sequence has no frames")
        n_body = {f.human.body.shape for f in frames}
        if len(n_body) != 1:
            raise ValueError("frames disagree on the number of joints")
        if len({f.object is None for f in frames}) != 1:
            raise ValueError("object pose must be present in every frame or in none")
        stage = self.metadata.get("stage", "raw")
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "metadata", {"stage": stage, "boundaries": [], **self.metadata})

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def stage(self) -> str:
        return self.metadata["stage"]

    @property
    def has_object(self) -> bool:
        return self.frames[0].object is not None

    @property
    def poses(self) -> list[HumanPose]:
        return [f.human for f in self.frames]

    @property
    def objects(self) -> list[RigidTransform | None]:
        return [f.object for f in self.frames]

    @property
    def cameras(self) -> list[Camera]:
        return [f.camera for f in self.frames]

    def timestamps(self) -> NDArray[np.float64]:
        return np.arange(len(self)) / float(self.metadata.get("fps", 10))

    def joints(self, skeleton: Skeleton) -> NDArray[np.float64]:
        """Joint positions ``(T, J, 3)``."""
        root = np.stack([p.root for p in self.poses])
        local = np.stack([np.vstack([p.orient[None], p.body]) for p in self.poses])
        return batch_forward_kinematics(skeleton, root, local)[0]

    def with_poses(self, poses: Sequence[HumanPose], **metadata) -> MotionSequence:
        """Same cameras and objects with new human poses."""
        if len(poses) != len(self):
            raise ValueError("pose count does not match the sequence")
        frames = tuple(replace(f, human=p) for f, p in zip(self.frames, poses))
        return MotionSequence(frames, {**self.metadata, **metadata})

    def to_json_dict(self) -> dict:
        return {"version": MOTION_SCHEMA_VERSION, "metadata": self.metadata, "frames": [f.to_dict() for f in self.frames]}

    @classmethod
    def from_json_dict(cls, d: dict) -> MotionSequence:
        if d.get("version") != MOTION_SCHEMA_VERSION:
            raise ValueError(f"unsupported motion schema version {d.get('version')}")
        return cls(tuple(MotionFrame.from_dict(f) for f in d["frames"]), d.get("metadata", {}))

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1, sort_keys=True))

    @classmethod
    def load_json(cls, path: str | Path) -> MotionSequence:
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def joint_rmse(a: NDArray[np.float64], b: NDArray[np.float64]) -> float:
    """Root mean squared joint distance between two ``(..., J, 3)`` arrays."""
    return float(np.sqrt(np.mean(np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=-1))))
