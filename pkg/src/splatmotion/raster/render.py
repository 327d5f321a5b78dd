"""Differentiable splatting: color, depth, alpha and label maps plus gradients.

Every particle carries a feature vector ``[r, g, b, z, 1, scene, object,
human]`` that is alpha-blended front to back; the color image, the
alpha-weighted depth sum, the accumulated alpha and the per-source alpha
layers are all slices of the same accumulation.  The backward pass therefore
accepts an upstream gradient for any of these maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..geometry import Camera
from ..splats import BACKGROUND, LABELS, SplatCloud
from . import kernels
from .project import Projection, project, project_backward

N_FEATURES = 8
_RGB = slice(0, 3)
_Z = 3
_ONE = 4
_LAYERS = slice(5, 8)

DEPTH_EPS = 1e-6
DEFAULT_LABEL_THRESHOLD = 0.5
MID_GRAY = (0.5, 0.5, 0.5)


@dataclass
class RenderOutput:
    color: NDArray[np.float64]
    depth: NDArray[np.float64]
    alpha: NDArray[np.float64]
    label: NDArray[np.int64]
    layers: NDArray[np.float64]  # accumulated alpha per source label (H, W, 3)

    def mask(self, label: str) -> NDArray[np.bool_]:
        return self.label == LABELS.index(label)


@dataclass
class RenderGradients:
    d_color: NDArray[np.float64]
    d_position: NDArray[np.float64]
    d_rotation: NDArray[np.float64]
    d_scale: NDArray[np.float64]
    d_opacity: NDArray[np.float64]
    d_camera: NDArray[np.float64] = field(default_factory=lambda: np.zeros(6))


def _features(cloud: SplatCloud, z: NDArray[np.float64]) -> NDArray[np.float64]:
    f = np.zeros((len(cloud), N_FEATURES))
    f[:, _RGB] = cloud.colors
    f[:, _Z] = z
    f[:, _ONE] = 1.0
    f[np.arange(len(cloud)), 5 + cloud.source_labels] = 1.0
    return f


class Rasterization:
    """Forward state of one render; call :meth:`backward` for gradients."""

    def __init__(
        self,
        cloud: SplatCloud,
        camera: Camera,
        background: ArrayLike = MID_GRAY,
        *,
        label_threshold: float = DEFAULT_LABEL_THRESHOLD,
        backend: str | None = None,
        roi: ArrayLike | None = None,
    ) -> None:
        """``roi`` (boolean per particle) restricts rendering to the pixel window
        covered by those particles' footprints; every map then has the window's
        shape and :attr:`window` gives its ``(row0, row1, col0, col1)`` bounds."""
        self.cloud = cloud
        self.camera = camera
        self.background = np.zeros(N_FEATURES)
        self.background[_RGB] = np.asarray(background, dtype=np.float64)
        self.label_threshold = label_threshold
        self._kernels = kernels.get(backend)
        self.proj: Projection = project(
            cloud.positions, cloud.quats, cloud.scales, cloud.opacities, camera
        )
        self.features = _features(cloud, self.proj.xc[:, 2])
        self.window = self._window(roi)
        r0, r1, c0, c1 = self.window
        full = self.window == (0, camera.height, 0, camera.width)
        if full:
            self._mean2d, self._bbox, self._order = self.proj.mean2d, self.proj.bbox, self.proj.order
        else:
            # shift into window coordinates; only particles overlapping it matter
            b = self.proj.bbox
            o = self.proj.order
            hit = (b[o, 1] >= c0) & (b[o, 0] < c1) & (b[o, 3] >= r0) & (b[o, 2] < r1)
            self._order = o[hit]
            self._mean2d = self.proj.mean2d - np.array([c0, r0], dtype=np.float64)
            self._bbox = np.empty_like(b)
            self._bbox[:, 0:2] = np.clip(b[:, 0:2] - c0, 0, max(c1 - c0 - 1, 0))
            self._bbox[:, 2:4] = np.clip(b[:, 2:4] - r0, 0, max(r1 - r0 - 1, 0))
        if r1 == r0 or c1 == c0:
            self.acc = np.zeros((r1 - r0, c1 - c0, N_FEATURES))
            self.T = np.ones((r1 - r0, c1 - c0))
            self.end_rank = np.zeros((r1 - r0, c1 - c0), dtype=np.int64)
            self.top = np.full((r1 - r0, c1 - c0), -1, dtype=np.int64)
            return
        self.acc, self.T, self.end_rank, self.top = self._kernels.forward(
            np.ascontiguousarray(self._mean2d),
            np.ascontiguousarray(self.proj.conic),
            np.ascontiguousarray(cloud.opacities),
            self.features,
            self._order,
            self._bbox,
            self.background,
            r1 - r0,
            c1 - c0,
        )

    def _window(self, roi: ArrayLike | None) -> tuple[int, int, int, int]:
        h, w = self.camera.height, self.camera.width
        if roi is None:
            return (0, h, 0, w)
        sel = np.asarray(roi, dtype=bool) & self.proj.visible
        if not sel.any():
            return (0, 0, 0, 0)
        b = self.proj.bbox[sel]
        return (int(b[:, 2].min()), int(b[:, 3].max()) + 1, int(b[:, 0].min()), int(b[:, 1].max()) + 1)

    @property
    def color(self) -> NDArray[np.float64]:
        return self.acc[..., _RGB]

    @property
    def alpha(self) -> NDArray[np.float64]:
        return self.acc[..., _ONE]

    @property
    def depth_sum(self) -> NDArray[np.float64]:
        return self.acc[..., _Z]

    @property
    def layers(self) -> NDArray[np.float64]:
        return self.acc[..., _LAYERS]

    @property
    def depth(self) -> NDArray[np.float64]:
        a = self.alpha
        return np.where(a > DEPTH_EPS, self.depth_sum / np.maximum(a, DEPTH_EPS), 0.0)

    def depth_backward(self, d_depth: NDArray[np.float64]) -> tuple[NDArray, NDArray]:
        """Map a depth-map gradient to ``(d_depth_sum, d_alpha)``."""
        a = self.alpha
        ok = a > DEPTH_EPS
        inv = np.where(ok, 1.0 / np.maximum(a, DEPTH_EPS), 0.0)
        return d_depth * inv, -d_depth * self.depth_sum * inv * inv

    @property
    def label(self) -> NDArray[np.int64]:
        lab = np.where(self.top >= 0, self.cloud.source_labels[np.maximum(self.top, 0)], BACKGROUND)
        return np.where(self.alpha < self.label_threshold, BACKGROUND, lab)

    def output(self) -> RenderOutput:
        return RenderOutput(self.color.copy(), self.depth, self.alpha.copy(), self.label, self.layers.copy())

    def backward(
        self,
        d_color: ArrayLike | None = None,
        d_alpha: ArrayLike | None = None,
        d_depth_sum: ArrayLike | None = None,
        d_layers: ArrayLike | None = None,
        d_depth: ArrayLike | None = None,
        wrt: ArrayLike | None = None,
    ) -> RenderGradients:
        """Gradients of the summed upstream products.

        ``wrt`` (boolean per particle) limits the geometric pull-back to those
        particles; the others, and their share of ``d_camera``, are left zero.
        """
        r0, r1, c0, c1 = self.window
        h, w = r1 - r0, c1 - c0
        grad = np.zeros((h, w, N_FEATURES))
        for arr, sl, shape in (
            (d_color, _RGB, (h, w, 3)),
            (d_layers, _LAYERS, (h, w, 3)),
        ):
            if arr is not None:
                arr = np.asarray(arr, dtype=np.float64)
                if arr.shape != shape:
                    raise ValueError(f"upstream gradient has shape {arr.shape}, expected {shape}")
                grad[..., sl] += arr
        for arr, k in ((d_alpha, _ONE), (d_depth_sum, _Z)):
            if arr is not None:
                arr = np.asarray(arr, dtype=np.float64)
                if arr.shape != (h, w):
                    raise ValueError(f"upstream gradient has shape {arr.shape}, expected {(h, w)}")
                grad[..., k] += arr
        if d_depth is not None:
            d_depth = np.asarray(d_depth, dtype=np.float64)
            if d_depth.shape != (h, w):
                raise ValueError(f"upstream gradient has shape {d_depth.shape}, expected {(h, w)}")
            g_sum, g_alpha = self.depth_backward(d_depth)
            grad[..., _Z] += g_sum
            grad[..., _ONE] += g_alpha

        n = len(self.cloud)
        if not grad.any() or len(self._order) == 0:
            z3 = np.zeros((n, 3))
            return RenderGradients(z3, z3.copy(), np.zeros((n, 4)), z3.copy(), np.zeros(n), np.zeros(6))
        d_mean, d_conic, d_opac, d_feat = self._kernels.backward(
            np.ascontiguousarray(self._mean2d),
            np.ascontiguousarray(self.proj.conic),
            np.ascontiguousarray(self.cloud.opacities),
            self.features,
            self._order,
            self._bbox,
            self.background,
            self.T,
            self.end_rank,
            np.ascontiguousarray(grad),
        )
        proj = self.proj
        if wrt is not None:
            proj = replace(proj, visible=proj.visible & np.asarray(wrt, dtype=bool))
        d_pos, d_quat, d_scale, d_cam = project_backward(
            proj, self.cloud.scales, self.cloud.quats, self.camera, d_mean, d_conic, d_feat[:, _Z]
        )
        return RenderGradients(d_feat[:, _RGB].copy(), d_pos, d_quat, d_scale, d_opac, d_cam)


def render(
    cloud: SplatCloud,
    camera: Camera,
    background: ArrayLike = MID_GRAY,
    *,
    label_threshold: float = DEFAULT_LABEL_THRESHOLD,
    backend: str | None = None,
) -> RenderOutput:
    """Alpha-composite ``cloud`` as seen from ``camera`` over a constant background."""
    return Rasterization(cloud, camera, background, label_threshold=label_threshold, backend=backend).output()


def render_backward(
    cloud: SplatCloud,
    camera: Camera,
    background: ArrayLike,
    upstream: ArrayLike,
    *,
    backend: str | None = None,
) -> RenderGradients:
    """Gradients of ``sum(upstream * color)`` w.r.t. every particle field and the camera."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (camera.height, camera.width, 3):
        raise ValueError(
            f"upstream gradient has shape {upstream.shape}, expected {(camera.height, camera.width, 3)}"
        )
    return Rasterization(cloud, camera, background, backend=backend).backward(d_color=upstream)


def render_depth_mean(output: RenderOutput, mask: ArrayLike) -> float:
    """Mean of the depth map under a binary mask (meters)."""
    m = np.asarray(mask, dtype=np.float64)
    total = m.sum()
    if total <= 0:
        raise ValueError("depth mean over an empty mask")
    return float((output.depth * m).sum() / total)
