"""Perspective EWA projection of 3D Gaussians and its analytic backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ..geometry import Camera, normalize_backward, quat_normalize, quat_to_matrix, quat_to_matrix_backward, skew

# Added to the projected covariance diagonal (px^2).
LOW_PASS = 0.3
MIN_ALPHA = 1.0 / 255.0
# centers projecting further than this fraction of the image outside it are
# culled; the linearized projection is meaningless there
GUARD_BAND = 0.3

_GENERATORS = skew(np.eye(3))


@dataclass
class Projection:
    xc: NDArray[np.float64]  # camera-space centers (N, 3)
    mean2d: NDArray[np.float64]
    conic: NDArray[np.float64]  # (A, B, C) of the inverse 2D covariance
    cov2d: NDArray[np.float64]
    cov_cam: NDArray[np.float64]
    jac: NDArray[np.float64]
    rot: NDArray[np.float64]  # particle rotation matrices
    quats_unit: NDArray[np.float64]
    bbox: NDArray[np.int32]
    order: NDArray[np.int64]  # visible particle indices, front to back
    visible: NDArray[np.bool_]


def project(
    positions: NDArray[np.float64],
    quats: NDArray[np.float64],
    scales: NDArray[np.float64],
    opacities: NDArray[np.float64],
    camera: Camera,
) -> Projection:
    n = len(positions)
    rc = camera.pose.rotation_matrix
    xc = positions @ rc.T + camera.pose.translation
    z = xc[:, 2]
    front = z > camera.near
    zs = np.where(front, z, 1.0)
    qu = quat_normalize(quats) if n else np.zeros((0, 4))
    rot = quat_to_matrix(qu) if n else np.zeros((0, 3, 3))
    m = rot * scales[:, None, :]
    sigma = m @ np.swapaxes(m, 1, 2)
    cov_cam = rc @ sigma @ rc.T
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = camera.fx / zs
    jac[:, 0, 2] = -camera.fx * xc[:, 0] / zs**2
    jac[:, 1, 1] = camera.fy / zs
    jac[:, 1, 2] = -camera.fy * xc[:, 1] / zs**2
    cov2d = jac @ cov_cam @ np.swapaxes(jac, 1, 2)
    cov2d[:, 0, 0] += LOW_PASS
    cov2d[:, 1, 1] += LOW_PASS
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    mean2d = np.stack([camera.fx * xc[:, 0] / zs + camera.cx, camera.fy * xc[:, 1] / zs + camera.cy], axis=1)

    # footprint box: alpha >= 1/255 only inside the ellipse q <= 2 ln(255 o)
    strong = opacities * 255.0 >= 1.0
    k2 = 2.0 * np.log(np.maximum(opacities * 255.0, 1.0))
    ext_x = np.sqrt(k2 * a)
    ext_y = np.sqrt(k2 * c)
    with np.errstate(invalid="ignore"):
        x0 = np.floor(mean2d[:, 0] - ext_x) - 1
        x1 = np.ceil(mean2d[:, 0] + ext_x) + 1
        y0 = np.floor(mean2d[:, 1] - ext_y) - 1
        y1 = np.ceil(mean2d[:, 1] + ext_y) + 1
    finite = np.isfinite(x0) & np.isfinite(x1) & np.isfinite(y0) & np.isfinite(y1)
    on_screen = finite & (x1 >= 0) & (x0 <= camera.width - 1) & (y1 >= 0) & (y0 <= camera.height - 1)
    gx, gy = GUARD_BAND * camera.width, GUARD_BAND * camera.height
    with np.errstate(invalid="ignore"):
        on_screen &= (mean2d[:, 0] >= -gx) & (mean2d[:, 0] <= camera.width - 1 + gx)
        on_screen &= (mean2d[:, 1] >= -gy) & (mean2d[:, 1] <= camera.height - 1 + gy)
    visible = front & strong & on_screen & (det > 0)
    bbox = np.zeros((n, 4), dtype=np.int32)
    if visible.any():
        bbox[visible, 0] = np.clip(x0[visible], 0, camera.width - 1)
        bbox[visible, 1] = np.clip(x1[visible], 0, camera.width - 1)
        bbox[visible, 2] = np.clip(y0[visible], 0, camera.height - 1)
        bbox[visible, 3] = np.clip(y1[visible], 0, camera.height - 1)
    idx = np.flatnonzero(visible)
    # depth ties (common for grid-sampled planes) are broken by particle content, not index
    keys = (*qu[idx].T[::-1], *scales[idx].T[::-1], opacities[idx], xc[idx, 1], xc[idx, 0], z[idx])
    order = idx[np.lexsort(keys)].astype(np.int64) if len(idx) else idx.astype(np.int64)
    return Projection(xc, mean2d, conic, cov2d, cov_cam, jac, rot, qu, bbox, order, visible)


def project_backward(
    proj: Projection,
    scales: NDArray[np.float64],
    quats: NDArray[np.float64],
    camera: Camera,
    d_mean2d: NDArray[np.float64],
    d_conic: NDArray[np.float64],
    d_depth: NDArray[np.float64],
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Pull screen-space gradients back to positions, quaternions, scales and camera.

    ``d_depth`` is the gradient w.r.t. each particle's camera-space ``z``.
    Returns ``(d_positions, d_quats, d_scales, d_camera)`` with ``d_camera``
    ordered ``(v, w)`` for the left increment ``x_c -> exp(w) x_c + v``.
    """
    n = len(proj.xc)
    vis = proj.visible
    d_pos = np.zeros((n, 3))
    d_quat = np.zeros((n, 4))
    d_scale = np.zeros((n, 3))
    if not vis.any():
        return d_pos, d_quat, d_scale, np.zeros(6)
    xc = proj.xc[vis]
    x, y, z = xc[:, 0], xc[:, 1], xc[:, 2]
    fx, fy = camera.fx, camera.fy
    gu, gv = d_mean2d[vis, 0], d_mean2d[vis, 1]

    g_xc = np.zeros_like(xc)
    g_xc[:, 0] = gu * fx / z
    g_xc[:, 1] = gv * fy / z
    g_xc[:, 2] = -(gu * fx * x + gv * fy * y) / z**2 + d_depth[vis]

    # conic -> 2D covariance
    A, B, C = proj.conic[vis].T
    inv = np.stack([np.stack([A, B], -1), np.stack([B, C], -1)], -2)
    gA, gB, gC = d_conic[vis].T
    g_inv = np.stack([np.stack([gA, 0.5 * gB], -1), np.stack([0.5 * gB, gC], -1)], -2)
    g_cov2d = -inv @ g_inv @ inv

    jac = proj.jac[vis]
    cov_cam = proj.cov_cam[vis]
    g_cov_cam = np.swapaxes(jac, 1, 2) @ g_cov2d @ jac
    g_jac = 2.0 * g_cov2d @ jac @ cov_cam

    g_xc[:, 0] += g_jac[:, 0, 2] * (-fx / z**2)
    g_xc[:, 1] += g_jac[:, 1, 2] * (-fy / z**2)
    g_xc[:, 2] += (
        g_jac[:, 0, 0] * (-fx / z**2)
        + g_jac[:, 0, 2] * (2.0 * fx * x / z**3)
        + g_jac[:, 1, 1] * (-fy / z**2)
        + g_jac[:, 1, 2] * (2.0 * fy * y / z**3)
    )

    rc = camera.pose.rotation_matrix
    g_sigma = rc.T @ g_cov_cam @ rc
    rot = proj.rot[vis]
    s = scales[vis]
    m = rot * s[:, None, :]
    g_m = (g_sigma + np.swapaxes(g_sigma, 1, 2)) @ m
    g_rot = g_m * s[:, None, :]
    d_scale[vis] = np.einsum("nak,nak->nk", rot, g_m)
    g_qu = quat_to_matrix_backward(proj.quats_unit[vis], g_rot)
    d_quat[vis] = normalize_backward(quats[vis], g_qu)
    d_pos[vis] = g_xc @ rc

    g_v = g_xc.sum(axis=0)
    g_w = np.cross(xc, g_xc).sum(axis=0)
    # cov_cam -> exp(w) cov_cam exp(w)^T
    comm = np.einsum("kab,nbc->nkac", _GENERATORS, cov_cam) - np.einsum("nab,kbc->nkac", cov_cam, _GENERATORS)
    g_w += np.einsum("nac,nkac->k", g_cov_cam, comm)
    return d_pos, d_quat, d_scale, np.concatenate([g_v, g_w])
