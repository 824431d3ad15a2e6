"""Numba-jitted blending kernels (default backend).

Tile-binned front-to-back blending. Parallel loops are pure maps — every
output element is written by exactly one iteration, and per-element
arithmetic runs in a fixed order — so results are bit-identical for any
worker thread count. No fastmath anywhere, for the same reason.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange


@njit(cache=True)
def _tile_bins(bboxes, width, height, tile):
    m = bboxes.shape[0]
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    n_tiles = tiles_x * tiles_y
    offsets = np.zeros(n_tiles + 1, np.int64)
    for s in range(m):
        tx0 = bboxes[s, 0] // tile
        ty0 = bboxes[s, 1] // tile
        tx1 = (bboxes[s, 2] - 1) // tile
        ty1 = (bboxes[s, 3] - 1) // tile
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                offsets[ty * tiles_x + tx + 1] += 1
    for t in range(n_tiles):
        offsets[t + 1] += offsets[t]
    items = np.empty(offsets[n_tiles], np.int64)
    cursor = offsets[:n_tiles].copy()
    for s in range(m):  # splats arrive depth-sorted; bins stay depth-sorted
        tx0 = bboxes[s, 0] // tile
        ty0 = bboxes[s, 1] // tile
        tx1 = (bboxes[s, 2] - 1) // tile
        ty1 = (bboxes[s, 3] - 1) // tile
        for ty in range(ty0, ty1 + 1):
            for tx in range(tx0, tx1 + 1):
                t = ty * tiles_x + tx
                items[cursor[t]] = s
                cursor[t] += 1
    return offsets, items, tiles_x, tiles_y


@njit(cache=True, parallel=True)
def _forward(
    tile_offsets,
    tile_items,
    tiles_x,
    tiles_y,
    tile,
    width,
    height,
    centers,
    conics,
    opacities,
    bboxes,
    values,
    bg,
    alpha_max,
    eps_t,
    q_max,
):
    c_dim = values.shape[1]
    out = np.zeros((height, width, c_dim))
    trans = np.ones((height, width))
    counts = np.zeros((height, width), np.int64)
    trunc = np.zeros((height, width), np.uint8)
    for tidx in prange(tiles_x * tiles_y):
        ty = tidx // tiles_x
        tx = tidx - ty * tiles_x
        y_lo = ty * tile
        y_hi = min(y_lo + tile, height)
        x_lo = tx * tile
        x_hi = min(x_lo + tile, width)
        s0 = tile_offsets[tidx]
        s1 = tile_offsets[tidx + 1]
        for py in range(y_lo, y_hi):
            for px in range(x_lo, x_hi):
                t_run = 1.0
                n_hit = 0
                for ii in range(s0, s1):
                    s = tile_items[ii]
                    if (
                        px < bboxes[s, 0]
                        or px >= bboxes[s, 2]
                        or py < bboxes[s, 1]
                        or py >= bboxes[s, 3]
                    ):
                        continue
                    if t_run < eps_t:
                        trunc[py, px] = 1
                        break
                    dx = px - centers[s, 0]
                    dy = py - centers[s, 1]
                    q = (
                        conics[s, 0] * dx * dx
                        + (2.0 * conics[s, 1]) * dx * dy
                        + conics[s, 2] * dy * dy
                    )
                    if q > q_max:
                        continue
                    a = opacities[s] * np.exp(-0.5 * q)
                    if a > alpha_max:
                        a = alpha_max
                    if a <= 0.0:
                        continue
                    w = a * t_run
                    for c in range(c_dim):
                        out[py, px, c] += w * values[s, c]
                    n_hit += 1
                    t_run *= 1.0 - a
                trans[py, px] = t_run
                counts[py, px] = n_hit
                for c in range(c_dim):
                    out[py, px, c] += t_run * bg[c]
    return out, trans, counts, trunc


@njit(cache=True, parallel=True)
def _collect(
    tile_offsets,
    tile_items,
    tiles_x,
    tiles_y,
    tile,
    width,
    height,
    centers,
    conics,
    opacities,
    bboxes,
    alpha_max,
    eps_t,
    q_max,
    pix_offsets,
    entry_splat,
    entry_weight,
):
    # replays _forward's per-pixel arithmetic to fill the entry arrays
    for tidx in prange(tiles_x * tiles_y):
        ty = tidx // tiles_x
        tx = tidx - ty * tiles_x
        y_lo = ty * tile
        y_hi = min(y_lo + tile, height)
        x_lo = tx * tile
        x_hi = min(x_lo + tile, width)
        s0 = tile_offsets[tidx]
        s1 = tile_offsets[tidx + 1]
        for py in range(y_lo, y_hi):
            for px in range(x_lo, x_hi):
                t_run = 1.0
                pos = pix_offsets[py * width + px]
                for ii in range(s0, s1):
                    s = tile_items[ii]
                    if (
                        px < bboxes[s, 0]
                        or px >= bboxes[s, 2]
                        or py < bboxes[s, 1]
                        or py >= bboxes[s, 3]
                    ):
                        continue
                    if t_run < eps_t:
                        break
                    dx = px - centers[s, 0]
                    dy = py - centers[s, 1]
                    q = (
                        conics[s, 0] * dx * dx
                        + (2.0 * conics[s, 1]) * dx * dy
                        + conics[s, 2] * dy * dy
                    )
                    if q > q_max:
                        continue
                    a = opacities[s] * np.exp(-0.5 * q)
                    if a > alpha_max:
                        a = alpha_max
                    if a <= 0.0:
                        continue
                    entry_splat[pos] = s
                    entry_weight[pos] = a * t_run
                    pos += 1
                    t_run *= 1.0 - a


@njit(cache=True, parallel=True)
def _replay(pix_offsets, entry_gaussian, entry_weight, trans_flat, values, bg, n_pixels):
    c_dim = values.shape[1]
    out = np.zeros((n_pixels, c_dim))
    for p in prange(n_pixels):
        for e in range(pix_offsets[p], pix_offsets[p + 1]):
            g = entry_gaussian[e]
            w = entry_weight[e]
            for c in range(c_dim):
                out[p, c] += w * values[g, c]
        for c in range(c_dim):
            out[p, c] += trans_flat[p] * bg[c]
    return out


@njit(cache=True, parallel=True)
def _backward(g_offsets, g_pixels, g_weights, grad_flat, n_gaussians):
    c_dim = grad_flat.shape[1]
    grads = np.zeros((n_gaussians, c_dim))
    for g in prange(n_gaussians):
        for e in range(g_offsets[g], g_offsets[g + 1]):
            p = g_pixels[e]
            w = g_weights[e]
            for c in range(c_dim):
                grads[g, c] += w * grad_flat[p, c]
    return grads


def blend_forward(
    width: int,
    height: int,
    centers: np.ndarray,
    conics: np.ndarray,
    opacities: np.ndarray,
    bboxes: np.ndarray,
    values: np.ndarray,
    bg: np.ndarray,
    alpha_max: float,
    eps_t: float,
    q_max: float,
    tile_size: int,
    want_entries: bool,
):
    tile_offsets, tile_items, tiles_x, tiles_y = _tile_bins(bboxes, width, height, tile_size)
    out, trans, counts, trunc = _forward(
        tile_offsets, tile_items, tiles_x, tiles_y, tile_size, width, height,
        centers, conics, opacities, bboxes, values, bg, alpha_max, eps_t, q_max,
    )
    if want_entries:
        pix_offsets = np.zeros(width * height + 1, dtype=np.int64)
        np.cumsum(counts.ravel(), out=pix_offsets[1:])
        entry_splat = np.empty(pix_offsets[-1], dtype=np.int64)
        entry_weight = np.empty(pix_offsets[-1])
        _collect(
            tile_offsets, tile_items, tiles_x, tiles_y, tile_size, width, height,
            centers, conics, opacities, bboxes, alpha_max, eps_t, q_max,
            pix_offsets, entry_splat, entry_weight,
        )
    else:
        entry_splat = np.zeros(0, dtype=np.int64)
        entry_weight = np.zeros(0)
    return out, trans, counts, trunc.astype(bool), entry_splat, entry_weight


def blend_replay(
    pix_offsets: np.ndarray,
    entry_gaussian: np.ndarray,
    entry_weight: np.ndarray,
    transmittance: np.ndarray,
    values: np.ndarray,
    bg: np.ndarray,
) -> np.ndarray:
    height, width = transmittance.shape
    out = _replay(
        pix_offsets, entry_gaussian, entry_weight,
        np.ascontiguousarray(transmittance.ravel()), values, bg, height * width,
    )
    return out.reshape(height, width, values.shape[1])


def accumulate_code_grads(
    g_offsets: np.ndarray,
    g_pixels: np.ndarray,
    g_weights: np.ndarray,
    grad_flat: np.ndarray,
) -> np.ndarray:
    return _backward(g_offsets, g_pixels, g_weights, grad_flat, g_offsets.shape[0] - 1)
