"""Gaussian particles and labelled particle clouds.

A :class:`SplatCloud` keeps its particles as parallel arrays.  Clouds are
immutable: every operation returns a new cloud.  Concatenation records, for
each particle, the label and index it had in its source cloud so that label
maps and per-source gradients can be recovered after rendering.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .geometry import (
    RigidTransform,
    quat_multiply,
    quat_normalize,
    quat_right_matrix,
    quat_to_matrix,
    skew,
)

LABELS = ("scene", "object", "human")
COMPOSITE = "composite"
LABEL_CODES = {name: code for code, name in enumerate(LABELS)}
BACKGROUND = -1

CLOUD_SCHEMA_VERSION = 1
SH_C0 = 0.28209479177387814


class InvalidParticleError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianParticle:
    mu: NDArray[np.float64]
    quat: NDArray[np.float64]
    scale: NDArray[np.float64]
    alpha: float
    rgb: NDArray[np.float64]

    def __post_init__(self) -> None:
        for name in ("mu", "quat", "scale", "rgb"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        fields = np.concatenate([self.mu, self.quat, self.scale, [self.alpha], self.rgb])
        if not np.all(np.isfinite(fields)):
            raise InvalidParticleError("particle has non-finite fields")


def covariance(particle: GaussianParticle) -> NDArray[np.float64]:
    """World-space covariance ``R S S^T R^T`` of one particle."""
    if not (
        np.all(np.isfinite(particle.mu))
        and np.all(np.isfinite(particle.quat))
        and np.all(np.isfinite(particle.scale))
    ):
        raise InvalidParticleError("particle has non-finite fields")
    return covariances(particle.quat[None], particle.scale[None])[0]


def covariances(quats: ArrayLike, scales: ArrayLike) -> NDArray[np.float64]:
    r = quat_to_matrix(quat_normalize(quats))
    m = r * np.asarray(scales, dtype=np.float64)[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def _frozen(a: ArrayLike, shape_tail: tuple[int, ...], dtype=np.float64) -> NDArray:
    arr = np.array(a, dtype=dtype, copy=True)
    if shape_tail:
        arr = arr.reshape((-1,) + shape_tail)
    else:
        arr = arr.reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class SplatCloud:
    positions: NDArray[np.float64]
    quats: NDArray[np.float64]
    scales: NDArray[np.float64]
    opacities: NDArray[np.float64]
    colors: NDArray[np.float64]
    label: str = "scene"
    source_labels: NDArray[np.int64] | None = None
    source_index: NDArray[np.int64] | None = None

    def __post_init__(self) -> None:
        if self.label not in LABELS and self.label != COMPOSITE:
            raise ValueError(f"unknown cloud label {self.label!r}")
        pos = _frozen(self.positions, (3,))
        n = len(pos)
        q = _frozen(self.quats, (4,))
        s = _frozen(self.scales, (3,))
        o = _frozen(self.opacities, ())
        c = _frozen(self.colors, (3,))
        if not (len(q) == len(s) == len(o) == len(c) == n):
            raise ValueError("particle field arrays disagree in length")
        for arr in (pos, q, s, o, c):
            if not np.all(np.isfinite(arr)):
                raise InvalidParticleError("cloud has non-finite particle fields")
        qn = np.linalg.norm(q, axis=1, keepdims=True)
        if np.any(qn == 0):
            raise InvalidParticleError("zero quaternion")
        q = _frozen(q / qn, (4,))
        if np.any(s <= 0):
            raise InvalidParticleError("particle scales must be positive")
        if np.any((o < 0) | (o > 1)):
            raise InvalidParticleError("opacities must lie in [0, 1]")
        if np.any((c < 0) | (c > 1)):
            raise InvalidParticleError("colors must lie in [0, 1]")
        if self.source_labels is None:
            if self.label == COMPOSITE:
                raise ValueError("composite clouds need per-particle source labels")
            src_l = np.full(n, LABEL_CODES[self.label], dtype=np.int64)
            src_i = np.arange(n, dtype=np.int64)
        else:
            src_l = np.asarray(self.source_labels, dtype=np.int64)
            src_i = np.asarray(self.source_index, dtype=np.int64)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "quats", q)
        object.__setattr__(self, "scales", s)
        object.__setattr__(self, "opacities", o)
        object.__setattr__(self, "colors", c)
        object.__setattr__(self, "source_labels", _frozen(src_l, (), np.int64))
        object.__setattr__(self, "source_index", _frozen(src_i, (), np.int64))

    def __len__(self) -> int:
        return len(self.positions)

    def __iter__(self) -> Iterator[GaussianParticle]:
        for k in range(len(self)):
            yield self.particle(k)

    def particle(self, k: int) -> GaussianParticle:
        return GaussianParticle(
            self.positions[k], self.quats[k], self.scales[k], float(self.opacities[k]), self.colors[k]
        )

    @classmethod
    def from_particles(cls, particles: Sequence[GaussianParticle], label: str) -> SplatCloud:
        return cls(
            np.array([p.mu for p in particles]).reshape(-1, 3),
            np.array([p.quat for p in particles]).reshape(-1, 4),
            np.array([p.scale for p in particles]).reshape(-1, 3),
            np.array([p.alpha for p in particles]),
            np.array([p.rgb for p in particles]).reshape(-1, 3),
            label,
        )

    def replace(self, **changes) -> SplatCloud:
        fields = {
            "positions": self.positions,
            "quats": self.quats,
            "scales": self.scales,
            "opacities": self.opacities,
            "colors": self.colors,
            "label": self.label,
            "source_labels": self.source_labels,
            "source_index": self.source_index,
        }
        fields.update(changes)
        return SplatCloud(**fields)

    def subset(self, index: ArrayLike) -> SplatCloud:
        idx = np.asarray(index)
        return self.replace(
            positions=self.positions[idx],
            quats=self.quats[idx],
            scales=self.scales[idx],
            opacities=self.opacities[idx],
            colors=self.colors[idx],
            source_labels=self.source_labels[idx],
            source_index=self.source_index[idx],
        )

    def allclose(self, other: SplatCloud, atol: float = 1e-6) -> bool:
        if len(self) != len(other):
            return False
        # q and -q are the same rotation
        dots = np.abs(np.sum(quat_normalize(self.quats) * quat_normalize(other.quats), axis=1))
        return (
            np.allclose(self.positions, other.positions, atol=atol)
            and np.allclose(dots, 1.0, atol=atol)
            and np.allclose(self.scales, other.scales, atol=atol)
            and np.allclose(self.opacities, other.opacities, atol=atol)
            and np.allclose(self.colors, other.colors, atol=atol)
        )

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "version": CLOUD_SCHEMA_VERSION,
            "label": self.label,
            "particles": [
                {
                    "mu": self.positions[k].tolist(),
                    "quat": self.quats[k].tolist(),
                    "scale": self.scales[k].tolist(),
                    "alpha": float(self.opacities[k]),
                    "rgb": self.colors[k].tolist(),
                }
                for k in range(len(self))
            ],
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> SplatCloud:
        if data.get("version") != CLOUD_SCHEMA_VERSION:
            raise ValueError(f"unsupported cloud schema version {data.get('version')!r}")
        parts = data["particles"]
        return cls(
            np.array([p["mu"] for p in parts], dtype=np.float64).reshape(-1, 3),
            np.array([p["quat"] for p in parts], dtype=np.float64).reshape(-1, 4),
            np.array([p["scale"] for p in parts], dtype=np.float64).reshape(-1, 3),
            np.array([p["alpha"] for p in parts], dtype=np.float64),
            np.array([p["rgb"] for p in parts], dtype=np.float64).reshape(-1, 3),
            data["label"],
        )

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def load_json(cls, path: str | Path) -> SplatCloud:
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def transform_cloud(cloud: SplatCloud, pose: RigidTransform) -> SplatCloud:
    """Move every particle rigidly; rotations are left-composed with the pose."""
    if len(cloud) == 0:
        raise ValueError("cannot transform an empty cloud")
    q = quat_multiply(pose.rotation[None], cloud.quats)
    return cloud.replace(positions=pose.apply(cloud.positions), quats=q)


def concat(clouds: Sequence[SplatCloud]) -> SplatCloud:
    """Concatenate clouds, keeping per-particle provenance."""
    if not clouds:
        raise ValueError("concat needs at least one cloud")
    if len(clouds) == 1:
        return clouds[0]
    labels = {c.label for c in clouds}
    label = labels.pop() if len(labels) == 1 else COMPOSITE
    return SplatCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.quats for c in clouds]),
        np.concatenate([c.scales for c in clouds]),
        np.concatenate([c.opacities for c in clouds]),
        np.concatenate([c.colors for c in clouds]),
        label,
        np.concatenate([c.source_labels for c in clouds]),
        np.concatenate([c.source_index for c in clouds]),
    )


def filter_label(cloud: SplatCloud, label: str) -> SplatCloud:
    """Particles that came from a source cloud with ``label``, in source order."""
    code = LABEL_CODES[label]
    idx = np.flatnonzero(cloud.source_labels == code)
    idx = idx[np.argsort(cloud.source_index[idx], kind="stable")]
    sub = cloud.subset(idx)
    return sub.replace(label=label, source_labels=None, source_index=None)


def rigid_tangent_grad(
    positions: ArrayLike,
    quats: ArrayLike,
    d_positions: ArrayLike,
    d_quats: ArrayLike,
    pivot: ArrayLike | None = None,
) -> NDArray[np.float64]:
    """Gradient w.r.t. a left-composed rigid increment ``(v, w)`` of a cloud.

    The increment maps ``mu -> exp(w)(mu - c) + c + v`` and ``q -> exp(w) q``;
    ``positions``/``quats`` are the already-transformed particle fields.
    """
    p = np.asarray(positions, dtype=np.float64)
    dp = np.asarray(d_positions, dtype=np.float64)
    c = np.zeros(3) if pivot is None else np.asarray(pivot, dtype=np.float64)
    g_v = dp.sum(axis=0)
    g_w = np.cross(p - c, dp).sum(axis=0)
    # dq/dw_k = 0.5 * (0, e_k) * q
    dq = np.asarray(d_quats, dtype=np.float64)
    right = quat_right_matrix(np.asarray(quats, dtype=np.float64))
    basis = np.zeros((3, 4))
    basis[:, 1:] = 0.5 * np.eye(3)
    # (0, e_k) * q = R(q) (0, e_k)
    jac = np.einsum("nab,kb->nka", right, basis)
    g_w += np.einsum("nka,na->k", jac, dq)
    return np.concatenate([g_v, g_w])


def rotation_tangent_grad(rotation: ArrayLike, d_rotation: ArrayLike) -> NDArray[np.float64]:
    """Left-tangent gradient of a rotation matrix: ``dL/dw`` for ``R -> exp(w) R``."""
    m = np.asarray(d_rotation) @ np.swapaxes(np.asarray(rotation), -1, -2)
    return np.stack([m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]], -1)


# -- PLY import (public 3DGS layout) ---------------------------------------

_PLY_TYPES = {
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "short": "<i2", "ushort": "<u2", "int": "<i4", "uint": "<u4",
}


def load_ply(path: str | Path, label: str = "scene") -> SplatCloud:
    """Read a binary little-endian 3DGS PLY.

    Conversions: ``alpha = sigmoid(opacity)``, ``scale = exp(scale_k)``,
    quaternion ``(rot_0..rot_3)`` normalized (scalar first), and
    ``rgb = clip(0.5 + SH_C0 * f_dc_k, 0, 1)``.  Higher SH bands are ignored.
    """
    raw = Path(path).read_bytes()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    if header[0] != "ply" or "format binary_little_endian 1.0" not in header:
        raise ValueError("expected a binary little-endian PLY file")
    count = 0
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            count = int(parts[2])
            in_vertex = True
        elif parts and parts[0] == "element":
            in_vertex = False
        elif parts and parts[0] == "property" and in_vertex:
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    data = np.frombuffer(raw, dtype=np.dtype(props), count=count, offset=end)

    def col(*names: str) -> NDArray[np.float64]:
        return np.stack([data[n].astype(np.float64) for n in names], axis=1)

    opacity = 1.0 / (1.0 + np.exp(-data["opacity"].astype(np.float64)))
    rgb = np.clip(0.5 + SH_C0 * col("f_dc_0", "f_dc_1", "f_dc_2"), 0.0, 1.0)
    return SplatCloud(
        col("x", "y", "z"),
        quat_normalize(col("rot_0", "rot_1", "rot_2", "rot_3")),
        np.exp(col("scale_0", "scale_1", "scale_2")),
        opacity,
        rgb,
        label,
    )


def save_ply(cloud: SplatCloud, path: str | Path) -> None:
    """Write the inverse of :func:`load_ply` (degree-0 SH only)."""
    names = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
             "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    o = np.clip(cloud.opacities, 1e-7, 1 - 1e-7)
    cols = np.concatenate(
        [
            cloud.positions,
            (cloud.colors - 0.5) / SH_C0,
            np.log(o / (1 - o))[:, None],
            np.log(cloud.scales),
            cloud.quats,
        ],
        axis=1,
    ).astype("<f4")
    head = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
    head += [f"property float {n}" for n in names] + ["end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        fh.write(cols.tobytes())


__all__ = [
    "BACKGROUND",
    "COMPOSITE",
    "GaussianParticle",
    "InvalidParticleError",
    "LABELS",
    "LABEL_CODES",
    "SplatCloud",
    "concat",
    "covariance",
    "covariances",
    "filter_label",
    "load_ply",
    "rigid_tangent_grad",
    "rotation_tangent_grad",
    "save_ply",
    "skew",
    "transform_cloud",
]
