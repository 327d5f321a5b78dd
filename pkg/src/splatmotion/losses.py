"""Per-frame losses with gradients: photometric (L1 + D-SSIM), object center and object depth."""

from __future__ import annotations

import logging

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.ndimage import correlate1d

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> NDArray[np.float64]:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> NDArray[np.float64]:
    g = gaussian_kernel(size, sigma)
    return np.outer(g, g)


_KERNEL = gaussian_kernel()


def _blur(img: NDArray[np.float64]) -> NDArray[np.float64]:
    """Separable Gaussian blur over the first two axes with zero padding.

    The window is symmetric, so this is also its own adjoint.
    """
    out = correlate1d(img, _KERNEL, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _KERNEL, axis=1, mode="constant", cval=0.0)


def ssim(x: ArrayLike, y: ArrayLike, with_grad: bool = False):
    """Mean SSIM over pixels and channels; optionally ``d ssim / d x``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    a = x.reshape(x.shape[0], x.shape[1], -1)
    b = y.reshape(a.shape)
    count = a.size
    s, (mx, my, n1, n2, d1, d2) = _ssim_terms(a, b)
    total = s.sum()
    grad = None
    if with_grad:
        g_mx = s * (2 * my / n1 - 2 * my / n2 - 2 * mx / d1 + 2 * mx / d2) / count
        g_exx = -s / d2 / count
        g_exy = 2 * s / n2 / count
        b_mx, b_exx, b_exy = np.split(_blur(np.concatenate([g_mx, g_exx, g_exy], axis=2)), 3, axis=2)
        grad = b_mx + 2 * a * b_exx + b * b_exy
    value = total / count
    if with_grad:
        return value, grad.reshape(x.shape)
    return value


def loss_rgb(rendered: ArrayLike, reference: ArrayLike, lam: float = 0.1) -> tuple[float, NDArray[np.float64]]:
    """``(1 - lam) * L1 + lam * (1 - SSIM) / 2`` and its gradient w.r.t. ``rendered``."""
    r = np.asarray(rendered, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if r.shape != ref.shape:
        raise ValueError(f"image shapes differ: {r.shape} vs {ref.shape}")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")
    diff = r - ref
    l1 = np.abs(diff).mean()
    grad = (1.0 - lam) * np.sign(diff) / diff.size
    value = (1.0 - lam) * l1
    if lam > 0:
        s, g_s = ssim(r, ref, with_grad=True)
        value += lam * (1.0 - s) / 2.0
        grad -= lam * g_s / 2.0
    return float(value), grad


def _ssim_terms(a: NDArray[np.float64], b: NDArray[np.float64]):
    mx, my, exx, eyy, exy = np.split(_blur(np.concatenate([a, b, a * a, b * b, a * b], axis=2)), 5, axis=2)
    sxx, syy, sxy = exx - mx * mx, eyy - my * my, exy - mx * my
    n1, n2 = 2 * mx * my + SSIM_C1, 2 * sxy + SSIM_C2
    d1, d2 = mx * mx + my * my + SSIM_C1, sxx + syy + SSIM_C2
    return n1 * n2 / (d1 * d2), (mx, my, n1, n2, d1, d2)


class PhotometricLoss:
    """``loss_rgb`` of an image that differs from a fixed base only inside a window.

    The base image's per-pixel L1 and SSIM terms are cached, and each call
    recomputes SSIM only on the band of pixels whose window reaches the
    changed region.  Values and gradients agree with :func:`loss_rgb` on the
    pasted full image up to float rounding.
    """

    def __init__(self, base: ArrayLike, reference: ArrayLike, lam: float = 0.1) -> None:
        self.base = np.asarray(base, dtype=np.float64)
        self.ref = np.asarray(reference, dtype=np.float64)
        if self.base.shape != self.ref.shape or self.base.ndim != 3:
            raise ValueError("base and reference must be matching HxWxC images")
        if not 0.0 <= lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        self.lam = lam
        self.abs_base = np.abs(self.base - self.ref)
        self.ssim_base, _ = _ssim_terms(self.base, self.ref)
        self.size = self.base.size

    def __call__(self, window: tuple[int, int, int, int], patch: ArrayLike) -> tuple[float, NDArray[np.float64]]:
        r0, r1, c0, c1 = window
        patch = np.asarray(patch, dtype=np.float64)
        h, w = self.base.shape[:2]
        lam, n = self.lam, self.size
        diff = patch - self.ref[r0:r1, c0:c1]
        l1_sum = self.abs_base.sum() - self.abs_base[r0:r1, c0:c1].sum() + np.abs(diff).sum()
        value = (1.0 - lam) * l1_sum / n
        grad = (1.0 - lam) * np.sign(diff) / n
        if lam == 0 or r1 == r0 or c1 == c0:
            ssim_mean = self.ssim_base.sum() / n
            return float(value + lam * (1.0 - ssim_mean) / 2.0), grad
        k = SSIM_WINDOW // 2
        # band: pixels whose SSIM depends on the window; crop: inputs they read
        b0, b1, e0, e1 = max(r0 - k, 0), min(r1 + k, h), max(c0 - k, 0), min(c1 + k, w)
        q0, q1, f0, f1 = max(r0 - 2 * k, 0), min(r1 + 2 * k, h), max(c0 - 2 * k, 0), min(c1 + 2 * k, w)
        a = self.base[q0:q1, f0:f1].copy()
        a[r0 - q0:r1 - q0, c0 - f0:c1 - f0] = patch
        b = self.ref[q0:q1, f0:f1]
        s, (mx, my, n1, n2, d1, d2) = _ssim_terms(a, b)
        band = (slice(b0 - q0, b1 - q0), slice(e0 - f0, e1 - f0))
        ssim_sum = self.ssim_base.sum() - self.ssim_base[b0:b1, e0:e1].sum() + s[band].sum()
        value += lam * (1.0 - ssim_sum / n) / 2.0
        keep = np.zeros(s.shape[:2], bool)
        keep[band] = True
        sk = np.where(keep[..., None], s, 0.0)
        g_mx = sk * (2 * my / n1 - 2 * my / n2 - 2 * mx / d1 + 2 * mx / d2) / n
        g_exx = -sk / d2 / n
        g_exy = 2 * sk / n2 / n
        b_mx, b_exx, b_exy = np.split(_blur(np.concatenate([g_mx, g_exx, g_exy], axis=2)), 3, axis=2)
        g_s = b_mx + 2 * a * b_exx + b * b_exy
        grad -= lam * g_s[r0 - q0:r1 - q0, c0 - f0:c1 - f0] / 2.0
        return float(value), grad


def _pixel_coords(h: int, w: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    # pixel centers normalized to (0, 1)
    u = (np.arange(w) + 0.5) / w
    v = (np.arange(h) + 0.5) / h
    return np.broadcast_to(u[None, :], (h, w)), np.broadcast_to(v[:, None], (h, w))


def mask_centroid(mask: ArrayLike) -> NDArray[np.float64] | None:
    """Normalized ``(u, v)`` centroid of a binary mask, ``None`` if empty."""
    m = np.asarray(mask, dtype=np.float64)
    total = m.sum()
    if total <= 0:
        return None
    u, v = _pixel_coords(*m.shape)
    return np.array([(m * u).sum() / total, (m * v).sum() / total])


def loss_center(weights: ArrayLike, reference_mask: ArrayLike) -> tuple[float, NDArray[np.float64]]:
    """Squared distance between the soft centroid of ``weights`` and the mask centroid.

    ``weights`` is the rendered object alpha layer.  Returns ``(0, 0)`` and
    logs a notice when either side is empty.
    """
    a = np.asarray(weights, dtype=np.float64)
    target = mask_centroid(reference_mask)
    total = a.sum()
    if target is None or total <= 1e-12:
        log.info("center loss skipped: empty %s", "reference mask" if target is None else "rendered object")
        return 0.0, np.zeros_like(a)
    u, v = _pixel_coords(*a.shape)
    c = np.array([(a * u).sum() / total, (a * v).sum() / total])
    d = c - target
    grad = 2.0 * (d[0] * (u - c[0]) + d[1] * (v - c[1])) / total
    return float(d @ d), grad


def object_depth(depth: ArrayLike, weights: ArrayLike) -> tuple[float, NDArray[np.float64], NDArray[np.float64]]:
    """Object-alpha-weighted mean depth and its gradients w.r.t. depth map and weights."""
    dmap = np.asarray(depth, dtype=np.float64)
    a = np.asarray(weights, dtype=np.float64)
    total = a.sum()
    if total <= 1e-12:
        raise ValueError("object is not visible")
    mean = float((dmap * a).sum() / total)
    return mean, a / total, (dmap - mean) / total


def loss_depth(estimate: float, anchor: float) -> tuple[float, float]:
    d = float(estimate) - float(anchor)
    return d * d, 2.0 * d
