# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled compositing kernels.

Same contract as :mod:`splatmotion.raster._fallback`; particles are binned
into 16x16 tiles so each pixel only visits particles whose footprint box
covers its tile.  Tile lists keep the global depth order.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

cdef enum:
    TILE = 8
cdef double MIN_ALPHA = 1.0 / 255.0
cdef double MAX_ALPHA = 0.99
cdef double T_EPS = 1e-4
# exponents below log(MIN_ALPHA / opacity) - margin cannot pass the alpha test
cdef double SKIP_MARGIN = 1e-6


cdef _skip_thresholds(const double[:] opacities):
    cdef Py_ssize_t n = opacities.shape[0], i
    out_np = np.full(n, np.inf, dtype=np.float64)
    cdef double[:] out = out_np
    for i in range(n):
        if opacities[i] > 0:
            out[i] = log(MIN_ALPHA / opacities[i]) - SKIP_MARGIN
    return out_np


cdef inline long _first_at_or_after(const long[:] ranks, long lo, long hi, long stop) nogil:
    # tile lists are rank-ascending: first entry with rank >= stop
    cdef long mid
    while lo < hi:
        mid = (lo + hi) // 2
        if ranks[mid] < stop:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef _bin_tiles(const long[:] order, const int[:, :] bbox, int H, int W):
    cdef int ntx = (W + TILE - 1) // TILE
    cdef int nty = (H + TILE - 1) // TILE
    cdef Py_ssize_t M = order.shape[0]
    cdef Py_ssize_t r
    cdef long i
    cdef int tx, ty, tx0, tx1, ty0, ty1
    counts_np = np.zeros(ntx * nty + 1, dtype=np.int64)
    cdef long[:] counts = counts_np
    for r in range(M):
        i = order[r]
        tx0 = bbox[i, 0] // TILE
        tx1 = bbox[i, 1] // TILE
        ty0 = bbox[i, 2] // TILE
        ty1 = bbox[i, 3] // TILE
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                counts[ty * ntx + tx + 1] += 1
    offsets_np = np.cumsum(counts_np)
    cdef long[:] offsets = offsets_np
    fill_np = offsets_np[:-1].copy()
    cdef long[:] fill = fill_np
    ranks_np = np.empty(offsets_np[-1], dtype=np.int64)
    cdef long[:] ranks = ranks_np
    for r in range(M):
        i = order[r]
        tx0 = bbox[i, 0] // TILE
        tx1 = bbox[i, 1] // TILE
        ty0 = bbox[i, 2] // TILE
        ty1 = bbox[i, 3] // TILE
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                ranks[fill[ty * ntx + tx]] = r
                fill[ty * ntx + tx] += 1
    return offsets_np, ranks_np, ntx, nty


def forward(
    const double[:, :] means2d,
    const double[:, :] conics,
    const double[:] opacities,
    const double[:, :] features,
    const long[:] order,
    const int[:, :] bbox,
    const double[:] background,
    int H,
    int W,
):
    cdef Py_ssize_t C = features.shape[1]
    cdef long M = order.shape[0]
    acc_np = np.zeros((H, W, C), dtype=np.float64)
    T_np = np.ones((H, W), dtype=np.float64)
    end_np = np.full((H, W), M, dtype=np.int64)
    top_np = np.full((H, W), -1, dtype=np.int64)
    cdef double[:, :, :] acc = acc_np
    cdef double[:, :] Tout = T_np
    cdef long[:, :] end_rank = end_np
    cdef long[:, :] top = top_np
    offsets_np, ranks_np, ntx, nty = _bin_tiles(order, bbox, H, W)
    cdef long[:] offsets = offsets_np
    cdef long[:] ranks = ranks_np
    cdef int n_tx = ntx
    cdef int n_ty = nty
    cdef double[:] skip = _skip_thresholds(opacities)
    cdef int tx, ty, px, py, k
    cdef long e, e0, e1, r, i
    cdef double T, dx, dy, power, a, test_T, w, topw
    with nogil:
        for ty in range(n_ty):
            for tx in range(n_tx):
                e0 = offsets[ty * n_tx + tx]
                e1 = offsets[ty * n_tx + tx + 1]
                for py in range(ty * TILE, min((ty + 1) * TILE, H)):
                    for px in range(tx * TILE, min((tx + 1) * TILE, W)):
                        T = 1.0
                        topw = 0.0
                        for e in range(e0, e1):
                            r = ranks[e]
                            i = order[r]
                            dx = px - means2d[i, 0]
                            dy = py - means2d[i, 1]
                            power = -0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy) - conics[i, 1] * dx * dy
                            if power < skip[i]:
                                continue
                            a = opacities[i] * exp(power)
                            if a > MAX_ALPHA:
                                a = MAX_ALPHA
                            if a < MIN_ALPHA:
                                continue
                            test_T = T * (1.0 - a)
                            if test_T < T_EPS:
                                end_rank[py, px] = r
                                break
                            w = a * T
                            for k in range(C):
                                acc[py, px, k] += w * features[i, k]
                            if w > topw:
                                topw = w
                                top[py, px] = i
                            T = test_T
                        for k in range(C):
                            acc[py, px, k] += T * background[k]
                        Tout[py, px] = T
    return acc_np, T_np, end_np, top_np


def backward(
    const double[:, :] means2d,
    const double[:, :] conics,
    const double[:] opacities,
    const double[:, :] features,
    const long[:] order,
    const int[:, :] bbox,
    const double[:] background,
    const double[:, :] T_final,
    const long[:, :] end_rank,
    const double[:, :, :] grad,
):
    cdef Py_ssize_t N = means2d.shape[0]
    cdef Py_ssize_t C = features.shape[1]
    cdef int H = grad.shape[0]
    cdef int W = grad.shape[1]
    d_means_np = np.zeros((N, 2), dtype=np.float64)
    d_conics_np = np.zeros((N, 3), dtype=np.float64)
    d_opac_np = np.zeros(N, dtype=np.float64)
    d_feat_np = np.zeros((N, C), dtype=np.float64)
    cdef double[:, :] d_means = d_means_np
    cdef double[:, :] d_conics = d_conics_np
    cdef double[:] d_opac = d_opac_np
    cdef double[:, :] d_feat = d_feat_np
    offsets_np, ranks_np, ntx, nty = _bin_tiles(order, bbox, H, W)
    cdef long[:] offsets = offsets_np
    cdef long[:] ranks = ranks_np
    cdef int n_tx = ntx
    cdef int n_ty = nty
    S_np = np.zeros(C, dtype=np.float64)
    cdef double[:] S = S_np
    cdef double[:] skip = _skip_thresholds(opacities)
    cdef int tx, ty, px, py, k
    cdef long e, e0, e1, r, i, stop
    cdef double T, Ti, dx, dy, power, g, a, raw, w, da, one_minus, any_grad
    with nogil:
        for ty in range(n_ty):
            for tx in range(n_tx):
                e0 = offsets[ty * n_tx + tx]
                e1 = offsets[ty * n_tx + tx + 1]
                for py in range(ty * TILE, min((ty + 1) * TILE, H)):
                    for px in range(tx * TILE, min((tx + 1) * TILE, W)):
                        any_grad = 0.0
                        for k in range(C):
                            if grad[py, px, k] != 0.0:
                                any_grad = 1.0
                        if any_grad == 0.0:
                            continue
                        T = T_final[py, px]
                        stop = end_rank[py, px]
                        for k in range(C):
                            S[k] = T * background[k]
                        e = _first_at_or_after(ranks, e0, e1, stop) - 1
                        while e >= e0:
                            r = ranks[e]
                            e -= 1
                            i = order[r]
                            dx = px - means2d[i, 0]
                            dy = py - means2d[i, 1]
                            power = -0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy) - conics[i, 1] * dx * dy
                            if power < skip[i]:
                                continue
                            raw = opacities[i] * exp(power)
                            a = raw
                            if a > MAX_ALPHA:
                                a = MAX_ALPHA
                            if a < MIN_ALPHA:
                                continue
                            one_minus = 1.0 - a
                            Ti = T / one_minus
                            w = a * Ti
                            da = 0.0
                            for k in range(C):
                                g = grad[py, px, k]
                                d_feat[i, k] += g * w
                                da += g * (Ti * features[i, k] - S[k] / one_minus)
                                S[k] += w * features[i, k]
                            T = Ti
                            if raw <= MAX_ALPHA:
                                d_opac[i] += da * exp(power)
                                d_means[i, 0] += da * a * (conics[i, 0] * dx + conics[i, 1] * dy)
                                d_means[i, 1] += da * a * (conics[i, 1] * dx + conics[i, 2] * dy)
                                d_conics[i, 0] += -0.5 * da * a * dx * dx
                                d_conics[i, 1] += -da * a * dx * dy
                                d_conics[i, 2] += -0.5 * da * a * dy * dy
    return d_means_np, d_conics_np, d_opac_np, d_feat_np
