"""Post-training refinement of the learned class codes.

Two stages, both operating on Gaussian centers:

* nearest-neighbor code averaging — Gaussians whose maximum class
  probability falls below a confidence threshold get their code replaced by
  the mean code of their k nearest neighbors (snapshot semantics: all
  queries read pre-refinement codes, updates land atomically, so the result
  is order-independent and a second pass on a confident scene is a no-op);
* statistical outlier filtering — within one class, members whose mean
  distance D to their k nearest same-class neighbors exceeds mean(D) +
  mult * std(D) are dropped from the segmentation view (reassigned to
  background; the scene's codes are untouched). Population standard
  deviation, as in the usual point-cloud outlier-removal filters.

Nearest-neighbor queries run on a scipy kd-tree; the exhaustive search in
:mod:`splatseg.synthetic` is the test oracle. Distance ties are broken by
ascending Gaussian index, falling back to exhaustive search for the rare
query where the tie straddles the k-th place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from splatseg.numerics import softmax
from splatseg.scene_io import Scene


@dataclass
class RefineConfig:
    beta: float = 0.65           # confidence threshold on max softmax
    k: int = 50                  # neighbors averaged in code refinement
    filter_k: int = 50           # neighbors behind the mean-distance statistic
    filter_std_mult: float = 1.0

    def validate(self, n_gaussians: int | None = None) -> None:
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        if self.k < 1 or self.filter_k < 1:
            raise ValueError("neighbor counts must be positive")
        if n_gaussians is not None and self.k >= n_gaussians:
            raise ValueError(f"k={self.k} must be smaller than the Gaussian count {n_gaussians}")


@dataclass
class Segmentation:
    """Per-Gaussian class decision with its softmax confidence."""

    class_of: np.ndarray    # (n,) int64 in [0, K)
    confidence: np.ndarray  # (n,) max softmax probability

    def copy(self) -> "Segmentation":
        return Segmentation(self.class_of.copy(), self.confidence.copy())


@dataclass
class FilterOutcome:
    kept: np.ndarray     # ascending global indices
    removed: np.ndarray  # ascending global indices
    too_small: bool      # class had fewer than filter_k + 1 members
    d_mean: np.ndarray | None = None  # per-member mean neighbor distance
    mu: float = float("nan")
    sigma: float = float("nan")


def select_ambiguous(scene: Scene, beta: float) -> np.ndarray:
    """Indices (ascending) whose max class probability is below ``beta``."""
    return np.flatnonzero(scene.class_probabilities().max(axis=1) < beta)


def segment(scene: Scene) -> Segmentation:
    """Argmax classification; ties resolve to the lowest class index."""
    probs = scene.class_probabilities()
    return Segmentation(
        class_of=np.argmax(probs, axis=1).astype(np.int64),
        confidence=probs.max(axis=1),
    )


def _knn_others(points: np.ndarray, tree: cKDTree, query: int, k: int) -> np.ndarray:
    """k nearest points excluding the query itself, ties by ascending index."""
    n = points.shape[0]
    m = min(n, k + 2)
    dist, idx = tree.query(points[query], k=m)
    dist, idx = np.atleast_1d(dist), np.atleast_1d(idx)
    keep = idx != query
    dist, idx = dist[keep], idx[keep]
    order = np.lexsort((idx, dist))
    dist, idx = dist[order], idx[order]
    boundary_tie = idx.size > k and dist[k - 1] == dist[k]
    if idx.size < k or boundary_tie:
        # ties may extend past what the tree returned; resolve exhaustively
        d = np.linalg.norm(points - points[query], axis=1)
        d[query] = np.inf
        return np.lexsort((np.arange(n), d))[:k]
    return idx[:k]


def knn_refine(scene: Scene, cfg: RefineConfig) -> Scene:
    """Average low-confidence codes over their spatial neighborhood.

    Every ambiguous Gaussian (selected against pre-refinement codes) gets
    the arithmetic mean of its k nearest neighbors' pre-refinement codes;
    all other codes are untouched. Returns an updated copy.
    """
    cfg.validate(scene.n_gaussians)
    refined = scene.copy()
    ambiguous = select_ambiguous(scene, cfg.beta)
    if ambiguous.size == 0:
        return refined
    tree = cKDTree(scene.means)
    snapshot = scene.object_codes
    for qi in ambiguous:
        neighbors = np.sort(_knn_others(scene.means, tree, int(qi), cfg.k))
        refined.object_codes[qi] = snapshot[neighbors].mean(axis=0)
    return refined


def statistical_filter(
    scene: Scene, seg: Segmentation, class_id: int, cfg: RefineConfig
) -> FilterOutcome:
    """Outlier rejection for one class by the mean-neighbor-distance rule."""
    cfg.validate()
    members = np.flatnonzero(seg.class_of == class_id)
    if members.size < cfg.filter_k + 1:
        return FilterOutcome(kept=members, removed=np.zeros(0, dtype=np.int64), too_small=True)
    points = scene.means[members]
    tree = cKDTree(points)
    dist, _ = tree.query(points, k=cfg.filter_k + 1)
    # column 0 is the zero self-distance (any coincident twin ties at 0.0,
    # which leaves the distance multiset, hence D, unchanged)
    d_mean = dist[:, 1:].mean(axis=1)
    mu = d_mean.mean()
    sigma = d_mean.std()
    out = d_mean > mu + cfg.filter_std_mult * sigma
    return FilterOutcome(
        kept=members[~out], removed=members[out], too_small=False,
        d_mean=d_mean, mu=float(mu), sigma=float(sigma),
    )


def apply_statistical_filter(
    scene: Scene,
    seg: Segmentation,
    cfg: RefineConfig,
    class_ids=None,
) -> tuple[Segmentation, dict[int, FilterOutcome]]:
    """Run the filter per class and reassign removed members to background."""
    k = scene.K
    if class_ids is None:
        class_ids = range(1, k)
    filtered = seg.copy()
    outcomes: dict[int, FilterOutcome] = {}
    for cid in class_ids:
        if not 0 <= cid < k:
            raise ValueError(f"class id {cid} out of range for K={k}")
        outcome = statistical_filter(scene, seg, cid, cfg)
        outcomes[cid] = outcome
        filtered.class_of[outcome.removed] = 0
    return filtered, outcomes


def extract_objects(scene: Scene, seg: Segmentation, class_ids) -> Scene:
    """Sub-scene of every Gaussian whose class is in ``class_ids`` (one pass)."""
    class_ids = list(class_ids)
    for cid in class_ids:
        if not 0 <= cid < scene.K:
            raise ValueError(f"class id {cid} out of range for K={scene.K}")
    mask = np.isin(seg.class_of, class_ids)
    return Scene(
        means=scene.means[mask],
        scales=scene.scales[mask],
        rotations=scene.rotations[mask],
        opacities=scene.opacities[mask],
        colors_dc=scene.colors_dc[mask],
        object_codes=scene.object_codes[mask],
        class_names=list(scene.class_names),
    )


# ---------------------------------------------------------------------------
# Exports


def save_segmentation_json(seg: Segmentation, path, class_names=None) -> None:
    payload = {
        "class_of": [int(c) for c in seg.class_of],
        "confidence": [float(c) for c in seg.confidence],
    }
    if class_names is not None:
        payload["class_names"] = list(class_names)
    with open(path, "w") as fh:
        json.dump(payload, fh)


def class_palette(k: int) -> np.ndarray:
    """Deterministic RGB palette; background is dark gray."""
    palette = np.zeros((k, 3), dtype=np.uint8)
    palette[0] = (60, 60, 60)
    golden = 0.61803398875
    for i in range(1, k):
        hue = (i * golden) % 1.0
        palette[i] = _hsv_to_rgb(hue, 0.75, 0.95)
    return palette


def _hsv_to_rgb(h: float, s: float, v: float) -> tuple[int, int, int]:
    i = int(h * 6.0) % 6
    f = h * 6.0 - int(h * 6.0)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    r, g, b = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return int(r * 255), int(g * 255), int(b * 255)


def save_colorized_ply(scene: Scene, seg: Segmentation, path) -> None:
    """Class-colored point cloud of the Gaussian centers, for inspection."""
    palette = class_palette(scene.K)
    colors = palette[seg.class_of]
    n = scene.n_gaussians
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    row = np.dtype([("xyz", "<f4", (3,)), ("rgb", "u1", (3,))])
    table = np.empty(n, dtype=row)
    table["xyz"] = scene.means.astype(np.float32)
    table["rgb"] = colors
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(table.tobytes())
