"""Pure NumPy compositing kernels (used when the compiled core is missing).

Particles are visited one at a time in depth order and each one updates the
pixels inside its footprint box with vectorized array operations.  Visiting
particles front to back is equivalent to the per-pixel loop of the compiled
kernels because every pixel still sees its contributors in the same order.

Shared contract (both backends):

``forward(means2d, conics, opacities, features, order, bbox, background, H, W)``
    returns ``(acc, T, end_rank, top)``: accumulated features including the
    background term ``(H, W, C)``, residual transmittance ``(H, W)``, the
    depth rank at which each pixel stopped (``len(order)`` when it never
    saturated) and the particle with the largest blending weight (``-1``).

``backward(..., T_final, end_rank, grad)``
    returns gradients of ``sum(grad * acc)`` w.r.t. 2D means, conics
    ``(A, B, C)`` of ``A dx^2 + 2 B dx dy + C dy^2``, opacities and features.
"""

from __future__ import annotations

import numpy as np

MIN_ALPHA = 1.0 / 255.0
MAX_ALPHA = 0.99
T_EPS = 1e-4


def _patch(i, means2d, conics, opacities, bbox):
    x0, x1, y0, y1 = bbox[i]
    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    ys = np.arange(y0, y1 + 1, dtype=np.float64)
    dx = xs[None, :] - means2d[i, 0]
    dy = ys[:, None] - means2d[i, 1]
    A, B, C = conics[i]
    power = -0.5 * (A * dx * dx + C * dy * dy) - B * dx * dy
    raw = opacities[i] * np.exp(power)
    a = np.minimum(raw, MAX_ALPHA)
    return (slice(y0, y1 + 1), slice(x0, x1 + 1)), dx, dy, power, raw, a


def forward(means2d, conics, opacities, features, order, bbox, background, H, W):
    C = features.shape[1]
    M = len(order)
    acc = np.zeros((H, W, C))
    T = np.ones((H, W))
    end_rank = np.full((H, W), M, dtype=np.int64)
    top = np.full((H, W), -1, dtype=np.int64)
    topw = np.zeros((H, W))
    alive = np.ones((H, W), dtype=bool)
    for r, i in enumerate(order):
        sl, _, _, _, _, a = _patch(i, means2d, conics, opacities, bbox)
        Tp = T[sl]
        active = (a >= MIN_ALPHA) & alive[sl]
        if not active.any():
            continue
        test_T = Tp * (1.0 - a)
        stop = active & (test_T < T_EPS)
        if stop.any():
            end_rank[sl][stop] = r
            alive[sl][stop] = False
        contrib = active & ~stop
        w = np.where(contrib, a * Tp, 0.0)
        acc[sl] += w[..., None] * features[i]
        better = w > topw[sl]
        topw[sl][better] = w[better]
        top[sl][better] = i
        T[sl] = np.where(contrib, test_T, Tp)
    acc += T[..., None] * np.asarray(background)
    return acc, T, end_rank, top


def backward(means2d, conics, opacities, features, order, bbox, background, T_final, end_rank, grad):
    N, C = features.shape
    d_means = np.zeros((N, 2))
    d_conics = np.zeros((N, 3))
    d_opac = np.zeros(N)
    d_feat = np.zeros((N, C))
    T = T_final.copy()
    S = T[..., None] * np.asarray(background)
    for r in range(len(order) - 1, -1, -1):
        i = order[r]
        sl, dx, dy, power, raw, a = _patch(i, means2d, conics, opacities, bbox)
        contrib = (a >= MIN_ALPHA) & (r < end_rank[sl])
        if not contrib.any():
            continue
        a = np.where(contrib, a, 0.0)
        one_minus = 1.0 - a
        Ti = T[sl] / one_minus
        w = a * Ti
        g = grad[sl]
        f = features[i]
        d_feat[i] = np.einsum("yx,yxc->c", w, g)
        da = np.einsum("yxc,yxc->yx", g, Ti[..., None] * f - S[sl] / one_minus[..., None])
        da = np.where(contrib, da, 0.0)
        S[sl] += w[..., None] * f
        T[sl] = Ti
        free = contrib & (raw <= MAX_ALPHA)
        da = np.where(free, da, 0.0)
        A, B, Cc = conics[i]
        d_opac[i] = np.sum(da * np.exp(power))
        da_a = da * a
        d_means[i, 0] = np.sum(da_a * (A * dx + B * dy))
        d_means[i, 1] = np.sum(da_a * (B * dx + Cc * dy))
        d_conics[i, 0] = -0.5 * np.sum(da_a * dx * dx)
        d_conics[i, 1] = -np.sum(da_a * dx * dy)
        d_conics[i, 2] = -0.5 * np.sum(da_a * dy * dy)
    return d_means, d_conics, d_opac, d_feat
