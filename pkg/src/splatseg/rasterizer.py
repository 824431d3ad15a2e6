"""Front-to-back alpha blending of per-Gaussian value vectors.

Two forward products share one machinery: color images (value = DC color)
and semantic images (value = the Gaussian's class-score vector, optionally
softmax-normalized per Gaussian). The forward pass records, per pixel, the
ordered blend weights ``w_i = alpha_i * prod_{j<i}(1 - alpha_j)`` and the
residual transmittance ``T``; the backward pass replays that record, which
makes the gradient with respect to every Gaussian's code vector exact for
the truncated sum that was actually rendered.

Conventions baked in here and shared with the brute-force reference
renderer in :mod:`splatseg.synthetic`:

* a pixel ``(x, y)`` is sampled at exactly those integer coordinates;
* a splat's support is the 3-sigma ellipse of its (regularized) footprint —
  outside it alpha is exactly zero, which is what makes tiled and untiled
  evaluation agree to rounding error;
* alpha is clamped to ``ALPHA_MAX`` so transmittance stays positive;
* blending stops once transmittance falls below ``EPS_TRANSMITTANCE``;
* residual transmittance is routed to the background channel (class 0) in
  semantic mode, so uncovered pixels resolve to background.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from splatseg import backend
from splatseg.numerics import softmax
from splatseg.projection import Splat2D, SplatList
from splatseg.scene_io import LabelMap, Scene

ALPHA_MAX = 0.99
EPS_TRANSMITTANCE = 1e-4
SUPPORT_Q_MAX = 9.0  # squared Mahalanobis radius of the footprint support
TILE_SIZE = 16
SH_C0 = 0.28209479177387814


@dataclass
class SemanticImage:
    """H x W x K per-pixel class scores.

    ``normalized`` records whether the blended per-Gaussian vectors were
    softmax distributions (values then stay in [0, 1]) or raw logits.
    """

    width: int
    height: int
    channels: int
    data: np.ndarray
    normalized: bool


@dataclass
class BlendRecord:
    """Per-pixel blend weights captured during a forward pass.

    Entries are stored flat in pixel-major order; ``offsets`` is the CSR
    index (length H*W + 1). Within one pixel, entries appear front to back,
    each weight in (0, 1], truncated where the running transmittance fell
    below ``EPS_TRANSMITTANCE``.
    """

    width: int
    height: int
    n_classes: int
    n_gaussians: int
    normalized: bool
    offsets: np.ndarray         # (H*W + 1,) int64
    entry_gaussian: np.ndarray  # (E,) int64, global Gaussian index
    entry_weight: np.ndarray    # (E,) float64
    transmittance: np.ndarray   # (H, W)
    truncated: np.ndarray       # (H, W) bool
    _gauss_csr: tuple | None = field(default=None, repr=False)

    def pixel_entries(self, x: int, y: int) -> tuple[np.ndarray, np.ndarray]:
        """Front-to-back (gaussian_index, weight) lists for one pixel."""
        p = y * self.width + x
        lo, hi = self.offsets[p], self.offsets[p + 1]
        return self.entry_gaussian[lo:hi], self.entry_weight[lo:hi]

    def entry_pixels(self) -> np.ndarray:
        """Flat pixel id of every entry (row-major)."""
        return np.repeat(
            np.arange(self.width * self.height, dtype=np.int64), np.diff(self.offsets)
        )

    def weight_totals(self) -> np.ndarray:
        """Total blended weight each Gaussian received, over all pixels."""
        return np.bincount(
            self.entry_gaussian, weights=self.entry_weight, minlength=self.n_gaussians
        )

    def gauss_csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Entries regrouped per Gaussian (pixel order preserved)."""
        if self._gauss_csr is None:
            order = np.argsort(self.entry_gaussian, kind="stable")
            g_pixels = self.entry_pixels()[order]
            g_weights = self.entry_weight[order]
            counts = np.bincount(self.entry_gaussian, minlength=self.n_gaussians)
            g_offsets = np.zeros(self.n_gaussians + 1, dtype=np.int64)
            np.cumsum(counts, out=g_offsets[1:])
            self._gauss_csr = (g_offsets, g_pixels, g_weights)
        return self._gauss_csr


def _conics(splats: SplatList) -> np.ndarray:
    xx = splats.cov2d[:, 0]
    xy = splats.cov2d[:, 1]
    yy = splats.cov2d[:, 2]
    det = xx * yy - xy * xy
    conic = np.empty_like(splats.cov2d)
    with np.errstate(divide="ignore", invalid="ignore"):
        conic[:, 0] = yy / det
        conic[:, 1] = -xy / det
        conic[:, 2] = xx / det
    # degenerate footprints never contribute
    conic[det <= 0] = np.inf
    return np.ascontiguousarray(conic)


def alpha_at(splat: Splat2D, pixel) -> float:
    """Opacity-scaled Gaussian falloff of one splat at one pixel.

    Zero outside the 3-sigma support ellipse, clamped to ``ALPHA_MAX`` at
    the top; strictly decreasing with center distance inside the support.
    """
    d = np.asarray(pixel, dtype=np.float64) - splat.center_px
    cov = splat.cov2d
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if det <= 0:
        return 0.0
    q = (cov[1, 1] * d[0] * d[0] - 2.0 * cov[0, 1] * d[0] * d[1] + cov[0, 0] * d[1] * d[1]) / det
    if q > SUPPORT_Q_MAX:
        return 0.0
    return float(min(splat.opacity * np.exp(-0.5 * q), ALPHA_MAX))


def _forward(splats: SplatList, values: np.ndarray, bg: np.ndarray, want_record: bool):
    cam = splats.camera
    w, h = cam.width, cam.height
    kern = backend.kernels()
    out, trans, counts, trunc, entry_splat, entry_weight = kern.blend_forward(
        w,
        h,
        splats.centers,
        _conics(splats),
        splats.opacities,
        splats.bboxes,
        np.ascontiguousarray(values, dtype=np.float64),
        np.ascontiguousarray(bg, dtype=np.float64),
        ALPHA_MAX,
        EPS_TRANSMITTANCE,
        SUPPORT_Q_MAX,
        TILE_SIZE,
        want_record,
    )
    record = None
    if want_record:
        offsets = np.zeros(w * h + 1, dtype=np.int64)
        np.cumsum(counts.ravel(), out=offsets[1:])
        record = BlendRecord(
            width=w,
            height=h,
            n_classes=values.shape[1],
            n_gaussians=0,  # filled by caller
            normalized=False,
            offsets=offsets,
            entry_gaussian=splats.gaussian_index[entry_splat],
            entry_weight=entry_weight,
            transmittance=trans,
            truncated=trunc,
        )
    return out, trans, record


def render_semantic(
    scene: Scene, splats: SplatList, normalize_codes: bool = True
) -> tuple[SemanticImage, BlendRecord]:
    """Blend class-score vectors along every pixel's splat stack.

    With ``normalize_codes`` each Gaussian contributes its softmax class
    distribution (the default: the cross-entropy loss needs probabilities);
    otherwise raw logits are blended. Residual transmittance lands on
    channel 0, so an uncovered pixel is pure background.
    """
    k = scene.K
    codes = scene.class_probabilities() if normalize_codes else scene.object_codes
    values = codes[splats.gaussian_index]
    bg = np.zeros(k)
    bg[0] = 1.0
    out, _, record = _forward(splats, values.reshape(-1, k), bg, want_record=True)
    record.n_gaussians = scene.n_gaussians
    record.normalized = normalize_codes
    cam = splats.camera
    image = SemanticImage(
        width=cam.width, height=cam.height, channels=k, data=out, normalized=normalize_codes
    )
    return image, record


def replay_semantic(scene: Scene, record: BlendRecord, normalize_codes: bool = True) -> SemanticImage:
    """Re-blend a recorded pass against the scene's current codes.

    Weights depend only on geometry and opacity, never on codes, so this is
    exactly ``render_semantic`` at a fraction of the cost; the trainer leans
    on it.
    """
    if record.normalized != normalize_codes:
        raise ValueError("record was built with a different normalize_codes setting")
    if record.n_gaussians != scene.n_gaussians:
        raise ValueError("record does not belong to this scene")
    k = scene.K
    codes = scene.class_probabilities() if normalize_codes else scene.object_codes
    bg = np.zeros(k)
    bg[0] = 1.0
    out = backend.kernels().blend_replay(
        record.offsets,
        record.entry_gaussian,
        record.entry_weight,
        record.transmittance,
        np.ascontiguousarray(codes),
        bg,
    )
    return SemanticImage(
        width=record.width, height=record.height, channels=k, data=out, normalized=normalize_codes
    )


def render_color(scene: Scene, splats: SplatList) -> np.ndarray:
    """Sanity-path RGB render (DC color only) over a black background."""
    values = dc_to_rgb(scene.colors_dc[splats.gaussian_index])
    out, _, _ = _forward(splats, values, np.zeros(3), want_record=False)
    return out


def dc_to_rgb(dc: np.ndarray) -> np.ndarray:
    """Degree-0 spherical-harmonics coefficient to view-independent RGB."""
    return np.maximum(SH_C0 * dc + 0.5, 0.0)


def rgb_to_dc(rgb: np.ndarray) -> np.ndarray:
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def backward_codes(
    record: BlendRecord,
    grad_pixels: np.ndarray,
    scene: Scene,
    normalize_codes: bool = True,
) -> np.ndarray:
    """Gradient of a per-pixel loss with respect to every Gaussian's codes.

    ``grad_pixels`` holds dLoss/dPixelValue, shape (H, W, K). For raw codes
    the blend is linear so dLoss/dCode_i = sum over pixels of w_i * grad;
    for normalized codes the per-Gaussian softmax Jacobian is chained on.
    Gaussians that contributed to no pixel get an exactly zero gradient.
    """
    if record.normalized != normalize_codes:
        raise ValueError("record was built with a different normalize_codes setting")
    if grad_pixels.shape != (record.height, record.width, record.n_classes):
        raise ValueError(
            f"grad_pixels shape {grad_pixels.shape} does not match record "
            f"({record.height}, {record.width}, {record.n_classes})"
        )
    if record.n_gaussians != scene.n_gaussians:
        raise ValueError("record does not belong to this scene")

    g_offsets, g_pixels, g_weights = record.gauss_csr()
    grad_flat = np.ascontiguousarray(
        grad_pixels.reshape(-1, record.n_classes), dtype=np.float64
    )
    grads = backend.kernels().accumulate_code_grads(g_offsets, g_pixels, g_weights, grad_flat)
    if normalize_codes:
        s = scene.class_probabilities()
        grads = s * (grads - np.sum(grads * s, axis=1, keepdims=True))
    return grads


# ---------------------------------------------------------------------------
# Exports


def semantic_argmax(image: SemanticImage) -> LabelMap:
    """Collapse per-pixel class scores to a class-ID map (ties -> lowest id)."""
    labels = np.argmax(image.data, axis=2).astype(np.int32)
    return LabelMap(width=image.width, height=image.height, labels=labels)


def save_probability_pgm(image: SemanticImage, class_id: int, path) -> None:
    """Debug dump of one class channel as an 8-bit binary PGM."""
    if not 0 <= class_id < image.channels:
        raise ValueError(f"class_id {class_id} out of range for {image.channels} channels")
    chan = np.clip(image.data[:, :, class_id], 0.0, 1.0)
    gray = np.round(chan * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.width} {image.height}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())
