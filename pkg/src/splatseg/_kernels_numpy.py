"""Pure-numpy blending kernels (fallback backend).

Same contracts as :mod:`splatseg._kernels_numba`: front-to-back alpha
blending over depth-sorted splats with per-pixel early termination, plus
replay / gradient accumulation over a recorded blend. The sweep here is
splat-major (vectorized over each splat's bounding box) but every pixel
still sees its splats in depth order, so per-pixel arithmetic matches the
jitted pixel-major loops operation for operation.
"""

from __future__ import annotations

import numpy as np


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
    """Blend per-splat value vectors into an image.

    Returns ``(out, transmittance, counts, truncated, entry_splat,
    entry_weight)`` with entries in pixel-major order (within a pixel:
    depth order). ``tile_size`` is accepted for signature parity and
    ignored; this path has no tiling.
    """
    m = centers.shape[0]
    c_dim = values.shape[1]
    hw = height * width

    out = np.zeros((hw, c_dim))
    trans = np.ones(hw)
    counts = np.zeros(hw, dtype=np.int64)
    trunc = np.zeros(hw, dtype=bool)
    chunk_pix: list[np.ndarray] = []
    chunk_splat: list[np.ndarray] = []
    chunk_w: list[np.ndarray] = []

    for s in range(m):
        x0, y0, x1, y1 = bboxes[s]
        dx = np.arange(x0, x1, dtype=np.float64) - centers[s, 0]
        dy = np.arange(y0, y1, dtype=np.float64) - centers[s, 1]
        # association mirrors the scalar kernel: ((2b)*dx)*dy
        q = (
            (conics[s, 0] * dx * dx)[None, :]
            + ((2.0 * conics[s, 1]) * dx)[None, :] * dy[:, None]
            + (conics[s, 2] * dy * dy)[:, None]
        ).ravel()
        pid = (
            np.arange(y0, y1, dtype=np.int64)[:, None] * width
            + np.arange(x0, x1, dtype=np.int64)[None, :]
        ).ravel()

        t_here = trans[pid]
        dead = t_here < eps_t
        if dead.any():
            trunc[pid[dead]] = True

        a = opacities[s] * np.exp(-0.5 * q)
        np.minimum(a, alpha_max, out=a)
        active = ~dead & (q <= q_max) & (a > 0.0)
        if not active.any():
            continue

        pid_a = pid[active]
        w = a[active] * t_here[active]
        out[pid_a] += w[:, None] * values[s]
        trans[pid_a] *= 1.0 - a[active]
        counts[pid_a] += 1
        if want_entries:
            chunk_pix.append(pid_a)
            chunk_splat.append(np.full(pid_a.size, s, dtype=np.int64))
            chunk_w.append(w)

    out += trans[:, None] * bg[None, :]

    if want_entries and chunk_pix:
        pix = np.concatenate(chunk_pix)
        order = np.argsort(pix, kind="stable")  # keeps depth order within a pixel
        entry_splat = np.concatenate(chunk_splat)[order]
        entry_weight = np.concatenate(chunk_w)[order]
    else:
        entry_splat = np.zeros(0, dtype=np.int64)
        entry_weight = np.zeros(0)

    return (
        out.reshape(height, width, c_dim),
        trans.reshape(height, width),
        counts.reshape(height, width),
        trunc.reshape(height, width),
        entry_splat,
        entry_weight,
    )


def blend_replay(
    pix_offsets: np.ndarray,
    entry_gaussian: np.ndarray,
    entry_weight: np.ndarray,
    transmittance: np.ndarray,
    values: np.ndarray,
    bg: np.ndarray,
) -> np.ndarray:
    """Re-blend recorded weights against a fresh value table."""
    height, width = transmittance.shape
    hw = height * width
    c_dim = values.shape[1]
    pix = np.repeat(np.arange(hw, dtype=np.int64), np.diff(pix_offsets))
    contrib = entry_weight[:, None] * values[entry_gaussian]
    out = np.empty((hw, c_dim))
    for c in range(c_dim):
        out[:, c] = np.bincount(pix, weights=contrib[:, c], minlength=hw)
    out += transmittance.reshape(hw, 1) * bg[None, :]
    return out.reshape(height, width, c_dim)


def accumulate_code_grads(
    g_offsets: np.ndarray,
    g_pixels: np.ndarray,
    g_weights: np.ndarray,
    grad_flat: np.ndarray,
) -> np.ndarray:
    """Per-Gaussian sum of weight * pixel-gradient over recorded entries."""
    n = g_offsets.shape[0] - 1
    c_dim = grad_flat.shape[1]
    gids = np.repeat(np.arange(n, dtype=np.int64), np.diff(g_offsets))
    contrib = g_weights[:, None] * grad_flat[g_pixels]
    grads = np.empty((n, c_dim))
    for c in range(c_dim):
        grads[:, c] = np.bincount(gids, weights=contrib[:, c], minlength=n)
    return grads
