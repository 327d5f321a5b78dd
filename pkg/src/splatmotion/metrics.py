"""Physical-plausibility metrics: penetration, foot sliding, contact and diversity.

Signed distances are negative inside.  Analytic primitives evaluate their
closed-form distance directly; meshes are baked to an :class:`SdfGrid` and
queried by trilinear interpolation.  Lengths go in as meters and depths come
out in centimeters.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from .avatar import JOINT_NAMES, AvatarTemplate
from .geometry import RigidTransform
from .motion import MotionSequence

log = logging.getLogger(__name__)

CM = 100.0
FOOT_JOINTS = (JOINT_NAMES.index("left_foot"), JOINT_NAMES.index("right_foot"))
FS_HEIGHT = 0.025
CONTACT_THRESHOLD = 0.05
SCENE_SPACING = 0.02
OBJECT_SPACING = 0.01
OUT_OF_SCOPE = ("clip_score", "clip_consistency")


class NotWatertightError(ValueError):
    def __init__(self, open_edges: list[tuple[int, int]]) -> None:
        self.open_edges = open_edges
        shown = ", ".join(f"{a}-{b}" for a, b in open_edges[:20])
        more = "" if len(open_edges) <= 20 else f" (+{len(open_edges) - 20} more)"
        super().__init__(f"mesh is not watertight; open or non-manifold edges: {shown}{more}")


class SignedDistance(Protocol):
    def query(self, points: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
        """Signed distances and a per-point in-bounds mask."""


# ---------------------------------------------------------------- analytic primitives


def _pts(points: ArrayLike) -> NDArray[np.float64]:
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


@dataclass(frozen=True)
class Primitive:
    def sdf(self, points: ArrayLike) -> NDArray[np.float64]:
        raise NotImplementedError

    def bounds(self) -> tuple[NDArray[np.float64], NDArray[np.float64]] | None:
        return None

    def query(self, points: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
        d = self.sdf(points)
        return d, np.ones(len(d), bool)


@dataclass(frozen=True)
class Sphere(Primitive):
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def sdf(self, points):
        return np.linalg.norm(_pts(points) - np.asarray(self.center), axis=1) - self.radius

    def bounds(self):
        c = np.asarray(self.center, dtype=np.float64)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class Box(Primitive):
    """Box with half extents ``half``, posed by ``pose`` (box frame to world)."""

    half: tuple[float, float, float]
    pose: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self) -> None:
        if min(self.half) <= 0:
            raise ValueError("box half extents must be positive")

    def sdf(self, points):
        local = self.pose.inverse().apply(_pts(points))
        q = np.abs(local) - np.asarray(self.half)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def bounds(self):
        h = np.asarray(self.half)
        corners = np.array(list(itertools.product(*[(-a, a) for a in h])))
        w = self.pose.apply(corners)
        return w.min(axis=0), w.max(axis=0)


@dataclass(frozen=True)
class Plane(Primitive):
    """Half-space below the plane through ``point`` with unit ``normal`` pointing outside."""

    point: tuple[float, float, float] = (0.0, 0.0, 0.0)
    normal: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self) -> None:
        n = np.asarray(self.normal, dtype=np.float64)
        if np.linalg.norm(n) == 0:
            raise ValueError("plane normal must be non-zero")
        object.__setattr__(self, "normal", tuple(n / np.linalg.norm(n)))

    def sdf(self, points):
        return (_pts(points) - np.asarray(self.point)) @ np.asarray(self.normal)


@dataclass(frozen=True)
class Capsule(Primitive):
    a: tuple[float, float, float]
    b: tuple[float, float, float]
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("capsule radius must be positive")

    def sdf(self, points):
        p = _pts(points)
        a, b = np.asarray(self.a, dtype=np.float64), np.asarray(self.b, dtype=np.float64)
        ab = b - a
        denom = ab @ ab
        t = np.zeros(len(p)) if denom == 0 else np.clip((p - a) @ ab / denom, 0.0, 1.0)
        return np.linalg.norm(p - (a + t[:, None] * ab), axis=1) - self.radius

    def bounds(self):
        lo = np.minimum(self.a, self.b) - self.radius
        hi = np.maximum(self.a, self.b) + self.radius
        return lo, hi


@dataclass(frozen=True)
class Union(Primitive):
    parts: tuple[Primitive, ...]

    def __post_init__(self) -> None:
        if not self.parts:
            raise ValueError("union needs at least one primitive")
        object.__setattr__(self, "parts", tuple(self.parts))

    def sdf(self, points):
        return np.min([p.sdf(points) for p in self.parts], axis=0)

    def bounds(self):
        bs = [p.bounds() for p in self.parts]
        if any(b is None for b in bs):
            return None
        return np.min([b[0] for b in bs], axis=0), np.max([b[1] for b in bs], axis=0)


# ---------------------------------------------------------------- triangle meshes


@dataclass(frozen=True)
class TriangleMesh:
    vertices: NDArray[np.float64]
    faces: NDArray[np.int64]

    def __post_init__(self) -> None:
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def open_edges(self) -> list[tuple[int, int]]:
        """Edges not shared by exactly one pair of oppositely oriented faces."""
        directed: dict[tuple[int, int], int] = {}
        for tri in self.faces:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                directed[(int(a), int(b))] = directed.get((int(a), int(b)), 0) + 1
        bad = set()
        for (a, b), n in directed.items():
            if n != 1 or directed.get((b, a), 0) != 1:
                bad.add((min(a, b), max(a, b)))
        return sorted(bad)

    def bounds(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @classmethod
    def box(cls, half: ArrayLike, pose: RigidTransform | None = None) -> TriangleMesh:
        h = np.asarray(half, dtype=np.float64)
        v = np.array(list(itertools.product((-1, 1), repeat=3)), dtype=np.float64) * h
        # outward-facing quads split into triangles; vertex index = 4x + 2y + z bits
        quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
        faces = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
        if pose is not None:
            v = pose.apply(v)
        return cls(v, np.array(faces))


def point_triangle_distance(points: ArrayLike, tri: ArrayLike) -> NDArray[np.float64]:
    """Unsigned distance from each point to each triangle, ``(N, F)``.

    Closest point by Voronoi-region classification over the triangle's
    vertices, edges and face.
    """
    p = _pts(points)[:, None, :]
    t = np.asarray(tri, dtype=np.float64)
    a, b, c = t[None, :, 0], t[None, :, 1], t[None, :, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = np.sum(ab * ap, -1), np.sum(ac * ap, -1)
    bp = p - b
    d3, d4 = np.sum(ab * bp, -1), np.sum(ac * bp, -1)
    cp = p - c
    d5, d6 = np.sum(ab * cp, -1), np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_face = vb / denom
        w_face = vc / denom
        closest = a + v_face[..., None] * ab + w_face[..., None] * ac
        # edge regions
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
    shape = closest.shape
    a_full, b_full, c_full = (np.broadcast_to(x, shape) for x in (a, b, c))
    regions = [
        ((d4 - d3 >= 0) & (d5 - d6 >= 0) & (va <= 0), b_full + t_bc[..., None] * (c_full - b_full)),
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0), a_full + t_ac[..., None] * (c_full - a_full)),
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0), a_full + t_ab[..., None] * (b_full - a_full)),
        ((d6 >= 0) & (d5 <= d6), c_full),
        ((d3 >= 0) & (d4 <= d3), b_full),
        ((d1 <= 0) & (d2 <= 0), a_full),
    ]
    # later entries take priority: vertices, then edges, then the face
    for mask, value in regions:
        closest = np.where(mask[..., None], value, closest)
    return np.linalg.norm(p - closest, axis=-1)


def winding_number(points: ArrayLike, mesh: TriangleMesh) -> NDArray[np.float64]:
    """Generalized winding number from summed signed solid angles."""
    p = _pts(points)
    t = mesh.vertices[mesh.faces]
    a = t[None, :, 0] - p[:, None]
    b = t[None, :, 1] - p[:, None]
    c = t[None, :, 2] - p[:, None]
    la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
    det = np.sum(a * np.cross(b, c), axis=-1)
    den = la * lb * lc + np.sum(a * b, -1) * lc + np.sum(a * c, -1) * lb + np.sum(b * c, -1) * la
    return np.sum(2.0 * np.arctan2(det, den), axis=1) / (4.0 * np.pi)


def mesh_sdf(points: ArrayLike, mesh: TriangleMesh, chunk: int = 4096) -> NDArray[np.float64]:
    """Exact signed distance to a closed mesh (sign from the winding number)."""
    p = _pts(points)
    tris = mesh.vertices[mesh.faces]
    out = np.empty(len(p))
    for s in range(0, len(p), chunk):
        q = p[s: s + chunk]
        d = point_triangle_distance(q, tris).min(axis=1)
        inside = winding_number(q, mesh) > 0.5
        out[s: s + chunk] = np.where(inside, -d, d)
    return out


# ---------------------------------------------------------------- grids


SDF_MAGIC = b"SMSDF\0\0\0"
SDF_VERSION = 1
_HEADER = struct.Struct("<8sI3dd3I")


@dataclass(frozen=True, eq=False)
class SdfGrid:
    """Signed distances sampled at ``origin + spacing * (i, j, k)``."""

    origin: NDArray[np.float64]
    spacing: float
    values: NDArray[np.float64]  # (nx, ny, nz)

    def __post_init__(self) -> None:
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        values = np.asarray(self.values, dtype=np.float64)
        if self.spacing <= 0:
            raise ValueError("grid spacing must be positive")
        if values.ndim != 3 or min(values.shape) < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "values", values)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)

    def nodes(self) -> NDArray[np.float64]:
        axes = [self.origin[a] + self.spacing * np.arange(n) for a, n in enumerate(self.dims)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def query(self, points: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
        """Trilinear values; points outside the grid get ``nan`` and ``False``."""
        p = _pts(points)
        u = (p - self.origin) / self.spacing
        hi = np.asarray(self.dims) - 1
        inside = np.all((u >= 0) & (u <= hi), axis=1)
        out = np.full(len(p), np.nan)
        ui = u[inside]
        i0 = np.minimum(np.floor(ui).astype(np.int64), hi - 1)
        f = ui - i0
        v = self.values
        acc = np.zeros(len(ui))
        for corner in itertools.product((0, 1), repeat=3):
            w = np.prod([f[:, a] if c else 1.0 - f[:, a] for a, c in enumerate(corner)], axis=0)
            acc += w * v[i0[:, 0] + corner[0], i0[:, 1] + corner[1], i0[:, 2] + corner[2]]
        out[inside] = acc
        return out, inside

    def save(self, path: str | Path) -> None:
        """Binary cache: little-endian header then float64 values in C order.

        Header: 8-byte magic, uint32 version, 3 float64 origin, float64
        spacing, 3 uint32 dims.
        """
        header = _HEADER.pack(SDF_MAGIC, SDF_VERSION, *self.origin, self.spacing, *self.dims)
        Path(path).write_bytes(header + self.values.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path: str | Path) -> SdfGrid:
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise ValueError("SDF cache is truncated")
        magic, version, ox, oy, oz, spacing, nx, ny, nz = _HEADER.unpack_from(raw)
        if magic != SDF_MAGIC:
            raise ValueError("not an SDF cache file")
        if version != SDF_VERSION:
            raise ValueError(f"unsupported SDF cache version {version}")
        n = nx * ny * nz
        if len(raw) != _HEADER.size + 8 * n:
            raise ValueError("SDF cache size does not match its header")
        values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(nx, ny, nz).astype(np.float64)
        return cls(np.array([ox, oy, oz]), spacing, values)


def bake_sdf(
    geometry: Primitive | TriangleMesh,
    spacing: float,
    bounds: tuple[ArrayLike, ArrayLike] | None = None,
    padding: float | None = None,
) -> SdfGrid:
    """Sample a primitive set or a closed mesh on a regular grid.

    ``bounds`` defaults to the geometry's bounding box grown by ``padding``
    (default two grid spacings).  Unbounded primitives such as planes need
    explicit bounds.
    """
    if spacing <= 0:
        raise ValueError("grid spacing must be positive")
    if isinstance(geometry, TriangleMesh):
        open_edges = geometry.open_edges()
        if open_edges or len(geometry.faces) == 0:
            raise NotWatertightError(open_edges)
    if bounds is None:
        b = geometry.bounds()
        if b is None:
            raise ValueError("unbounded geometry needs explicit bounds")
        pad = 2.0 * spacing if padding is None else padding
        bounds = (np.asarray(b[0]) - pad, np.asarray(b[1]) + pad)
    lo = np.asarray(bounds[0], dtype=np.float64)
    hi = np.asarray(bounds[1], dtype=np.float64)
    if np.any(hi <= lo):
        raise ValueError("empty bounds")
    dims = np.maximum(np.ceil((hi - lo) / spacing - 1e-9).astype(np.int64) + 1, 2)
    grid = SdfGrid(lo, spacing, np.zeros(tuple(dims)))
    nodes = grid.nodes().reshape(-1, 3)
    if isinstance(geometry, TriangleMesh):
        values = mesh_sdf(nodes, geometry)
    else:
        values = geometry.sdf(nodes)
    return SdfGrid(lo, spacing, values.reshape(tuple(dims)))


# ---------------------------------------------------------------- metrics


def penetration_metrics(points_per_frame: Sequence[ArrayLike], sdf: SignedDistance) -> tuple[float, float, float]:
    """``(fraction, mean depth cm, max depth cm)`` of body points with negative distance.

    Out-of-bounds points count as non-penetrating.
    """
    if len(points_per_frame) == 0:
        raise ValueError("no frames")
    fractions, depths = [], []
    for f, pts in enumerate(points_per_frame):
        d, inside = sdf.query(pts)
        if not inside.all():
            log.info("frame %d: %d points outside the SDF grid ignored", f, int((~inside).sum()))
        pen = inside & (np.nan_to_num(d, nan=0.0) < 0)
        fractions.append(pen.sum() / len(d) if len(d) else 0.0)
        depths.append(-d[pen])
    allp = np.concatenate(depths)
    if len(allp) == 0:
        return 0.0, 0.0, 0.0
    return float(np.mean(fractions)), float(allp.mean() * CM), float(allp.max() * CM)


def foot_sliding(feet: ArrayLike, ground: float = 0.0, height: float = FS_HEIGHT) -> float:
    """Height-weighted horizontal foot displacement in cm per frame.

    ``feet`` is ``(T, F, 3)``.  The step from frame t-1 to t counts with
    weight ``2 - 2 ** (h / height)`` when the foot height ``h`` at frame t is
    below ``height``; heights below the ground are clamped to zero.
    """
    p = np.asarray(feet, dtype=np.float64)
    if p.ndim != 3 or p.shape[0] < 2:
        raise ValueError("need (T >= 2, F, 3) foot trajectories")
    disp = np.linalg.norm(p[1:, :, :2] - p[:-1, :, :2], axis=-1)
    h = np.maximum(p[1:, :, 2] - ground, 0.0)
    w = np.where(h < height, 2.0 - np.power(2.0, h / height), 0.0)
    return float(np.mean(disp * w) * CM)


def contact_ratio(hand_points: Sequence[ArrayLike], object_points: Sequence[ArrayLike], threshold: float = CONTACT_THRESHOLD) -> float:
    """Fraction of frames whose closest hand-object pair is nearer than ``threshold``."""
    if len(hand_points) != len(object_points) or len(hand_points) == 0:
        raise ValueError("need matching, non-empty hand and object frame lists")
    hits = 0
    for h, o in zip(hand_points, object_points):
        h, o = _pts(h), _pts(o)
        if len(h) and len(o) and cKDTree(o).query(h, k=1)[0].min() < threshold:
            hits += 1
    return hits / len(hand_points)


def object_penetration(points_per_frame: Sequence[ArrayLike], sdf: SignedDistance, poses: Sequence[RigidTransform]) -> float:
    """Mean depth in cm of body points inside the object; the SDF lives in the object frame."""
    if len(points_per_frame) != len(poses):
        raise ValueError("frame and pose counts differ")
    depths = []
    for pts, pose in zip(points_per_frame, poses):
        d, inside = sdf.query(pose.inverse().apply(_pts(pts)))
        pen = inside & (np.nan_to_num(d, nan=0.0) < 0)
        depths.append(-d[pen])
    allp = np.concatenate(depths) if depths else np.zeros(0)
    return float(allp.mean() * CM) if len(allp) else 0.0


def diversity(sequences: Sequence[ArrayLike]) -> float:
    """Mean joint distance between corresponding frames over all unordered pairs of sequences."""
    seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
    if len(seqs) < 2:
        raise ValueError("diversity needs at least two sequences")
    if len({s.shape for s in seqs}) != 1:
        raise ValueError("sequences differ in frame or joint count")
    stack = np.stack(seqs)
    i, j = np.triu_indices(len(seqs), k=1)
    d = stack[i] - stack[j]
    # elementwise norm and a correctly rounded sum make the result independent of evaluation order
    dist = np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])
    return math.fsum(dist.ravel().tolist()) / dist.size


# ---------------------------------------------------------------- report


@dataclass
class MetricsReport:
    pene_pct: float | None = None
    pene_mean: float | None = None
    pene_max: float | None = None
    fs: float | None = None
    contact_ratio: float | None = None
    pene_obj: float | None = None
    diversity: float | None = None

    def __post_init__(self) -> None:
        if self.pene_pct is not None and not 0.0 <= self.pene_pct <= 1.0:
            raise ValueError("pene_pct must lie in [0, 1]")
        if self.contact_ratio is not None and not 0.0 <= self.contact_ratio <= 1.0:
            raise ValueError("contact_ratio must lie in [0, 1]")
        for name in ("pene_mean", "pene_max", "pene_obj", "fs", "diversity"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be non-negative")

    def to_json_dict(self) -> dict:
        return {
            "metrics": {k: v for k, v in asdict(self).items() if v is not None},
            "units": {"pene_pct": "fraction", "pene_mean": "cm", "pene_max": "cm", "fs": "cm/frame",
                      "contact_ratio": "fraction", "pene_obj": "cm", "diversity": "m"},
            "out_of_scope": {k: "requires a pretrained vision-language model" for k in OUT_OF_SCOPE},
        }

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1, sort_keys=True))

    def table(self) -> str:
        units = self.to_json_dict()["units"]
        rows = [(k, f"{v:.4f}", units[k]) for k, v in asdict(self).items() if v is not None]
        rows += [(k, "n/a", "out of scope") for k in OUT_OF_SCOPE]
        w = max(len(r[0]) for r in rows)
        return "\n".join(f"{k:<{w}}  {v:>10}  {u}" for k, v, u in rows)


def body_points(motion: MotionSequence, template: AvatarTemplate) -> list[NDArray[np.float64]]:
    """Posed avatar particle centers per frame (stand-ins for body vertices)."""
    return [template.pose(p).cloud.positions for p in motion.poses]


def evaluate_motion(
    motion: MotionSequence,
    template: AvatarTemplate,
    scene_sdf: SignedDistance | None = None,
    object_sdf: SignedDistance | None = None,
    object_points: ArrayLike | None = None,
    ground: float = 0.0,
    fs_height: float = FS_HEIGHT,
    contact_threshold: float = CONTACT_THRESHOLD,
) -> MetricsReport:
    """Metrics for one motion.  Object terms need an object trajectory in ``motion``."""
    pts = body_points(motion, template)
    report = MetricsReport()
    if scene_sdf is not None:
        report.pene_pct, report.pene_mean, report.pene_max = penetration_metrics(pts, scene_sdf)
    if len(motion) >= 2:
        report.fs = foot_sliding(motion.joints(template.skeleton)[:, FOOT_JOINTS], ground, fs_height)
    if motion.has_object:
        poses = motion.objects
        if object_sdf is not None:
            report.pene_obj = object_penetration(pts, object_sdf, poses)
        if object_points is not None:
            hands = template.hand_particles()
            report.contact_ratio = contact_ratio([p[hands] for p in pts], [o.apply(_pts(object_points)) for o in poses], contact_threshold)
    return report


# ---------------------------------------------------------------- geometry files


def geometry_from_dict(d: dict) -> Primitive | TriangleMesh:
    """Primitive or mesh from a JSON description (``type`` plus shape fields)."""
    kind = d.get("type")
    if kind == "sphere":
        return Sphere(tuple(d["center"]), float(d["radius"]))
    if kind == "box":
        pose = RigidTransform.from_dict(d["pose"]) if "pose" in d else RigidTransform.identity()
        return Box(tuple(d["half"]), pose)
    if kind == "plane":
        return Plane(tuple(d.get("point", (0.0, 0.0, 0.0))), tuple(d.get("normal", (0.0, 0.0, 1.0))))
    if kind == "capsule":
        return Capsule(tuple(d["a"]), tuple(d["b"]), float(d["radius"]))
    if kind == "union":
        return Union(tuple(geometry_from_dict(p) for p in d["parts"]))
    if kind == "mesh":
        return TriangleMesh(np.array(d["vertices"]), np.array(d["faces"]))
    raise ValueError(f"unknown geometry type {kind!r}")


def load_signed_distance(path: str | Path, spacing: float = SCENE_SPACING) -> SignedDistance:
    """An SDF cache (``.sdf``) or a JSON geometry description; meshes are baked at ``spacing``."""
    path = Path(path)
    if path.suffix == ".sdf":
        return SdfGrid.load(path)
    geom = geometry_from_dict(json.loads(path.read_text()))
    if isinstance(geom, TriangleMesh):
        return bake_sdf(geom, spacing)
    return geom
