"""Synthetic labeled scenes and brute-force reference implementations.

The generator plants blob-shaped point clusters with known class labels and
renders their ground-truth masks with the production renderer driven by
exact one-hot codes — so the supervision is always realizable by the model
class, and accuracy bounds in tests are meaningful. Counter-based random
generation (Philox) keyed by the spec seed keeps fixtures bit-reproducible
across platforms.

Also here: the untiled per-pixel reference renderer and the exhaustive
O(n^2) nearest-neighbor search that the fast paths are tested against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatseg.projection import DEFAULT_COV_REG, DEFAULT_NEAR, project
from splatseg.rasterizer import (
    ALPHA_MAX,
    SUPPORT_Q_MAX,
    SemanticImage,
    render_semantic,
    rgb_to_dc,
    semantic_argmax,
)
from splatseg.scene_io import Camera, LabelMap, Scene, default_class_names

BLOB_OPACITY = 0.9
# Fraction of the nominal radius/count^(1/3) spacing used as the isotropic
# splat scale. Tighter footprints let supervision reach blob interiors
# before transmittance runs out.
DEFAULT_SCALE_FACTOR = 0.7


@dataclass
class BlobSpec:
    center: tuple[float, float, float]
    radius: float
    count: int
    class_id: int
    color: tuple[float, float, float] = (0.8, 0.8, 0.8)


@dataclass
class CameraRingSpec:
    count: int
    radius: float
    height: float
    look_at: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass
class SynthSpec:
    blobs: list[BlobSpec]
    camera_ring: CameraRingSpec
    image_size: tuple[int, int] = (128, 128)
    seed: int = 0
    fov_deg: float = 50.0
    eval_count: int = 1          # extra held-out cameras between ring stops
    scale_factor: float = DEFAULT_SCALE_FACTOR

    @property
    def K(self) -> int:
        return max(blob.class_id for blob in self.blobs) + 1

    def validate(self) -> None:
        if not self.blobs:
            raise ValueError("spec needs at least one blob")
        if self.camera_ring.count < 1:
            raise ValueError("spec needs at least one camera")
        for blob in self.blobs:
            if blob.count <= 0 or blob.radius <= 0:
                raise ValueError("blob count and radius must be positive")
            if blob.class_id < 1:
                raise ValueError("blob class ids start at 1 (0 is background)")


@dataclass
class SynthResult:
    scene: Scene                              # codes initialized uniform
    views: list[tuple[Camera, LabelMap]]      # train views then eval views
    planted: np.ndarray                       # (n,) true class per Gaussian
    n_train: int

    @property
    def train_views(self) -> list[tuple[Camera, LabelMap]]:
        return self.views[: self.n_train]

    @property
    def eval_views(self) -> list[tuple[Camera, LabelMap]]:
        return self.views[self.n_train :]


def look_at_camera(
    eye,
    target,
    width: int,
    height: int,
    fov_deg: float = 50.0,
    up=(0.0, 1.0, 0.0),
) -> Camera:
    """Pinhole camera at ``eye`` looking at ``target`` (+z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    norm = np.linalg.norm(fwd)
    if norm == 0:
        raise ValueError("eye and target coincide")
    fwd = fwd / norm
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(fwd, up)) > 0.999 * np.linalg.norm(up):
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(up, fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd])
    w2c = np.eye(4)
    w2c[:3, :3] = r
    w2c[:3, 3] = -r @ eye
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
    cam = Camera(
        fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
        width=width, height=height, world_to_camera=w2c,
    )
    cam.validate()
    return cam


def ring_cameras(spec: SynthSpec) -> tuple[list[Camera], list[Camera]]:
    """Training cameras on the ring plus held-out ones at midpoint angles."""
    ring = spec.camera_ring
    w, h = spec.image_size
    look = np.asarray(ring.look_at, dtype=np.float64)

    def cam_at(angle: float, height_scale: float) -> Camera:
        eye = look + np.array(
            [ring.radius * np.cos(angle), ring.height * height_scale, ring.radius * np.sin(angle)]
        )
        return look_at_camera(eye, look, w, h, spec.fov_deg)

    step = 2.0 * np.pi / ring.count
    train = [cam_at(i * step, 1.0) for i in range(ring.count)]
    evals = [cam_at((i + 0.5) * step, 1.25) for i in range(spec.eval_count)]
    return train, evals


def generate(spec: SynthSpec) -> SynthResult:
    """Build a labeled blob scene and render its ground-truth masks."""
    spec.validate()
    rng = np.random.Generator(np.random.Philox(spec.seed))

    means, scales, planted, colors = [], [], [], []
    for blob in spec.blobs:
        dirs = rng.normal(size=(blob.count, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = blob.radius * rng.uniform(size=(blob.count, 1)) ** (1.0 / 3.0)
        means.append(np.asarray(blob.center) + dirs * radii)
        sigma = spec.scale_factor * blob.radius / blob.count ** (1.0 / 3.0)
        scales.append(np.full((blob.count, 3), sigma))
        planted.append(np.full(blob.count, blob.class_id, dtype=np.int64))
        colors.append(np.tile(rgb_to_dc(np.asarray(blob.color)), (blob.count, 1)))

    n = sum(blob.count for blob in spec.blobs)
    k = spec.K
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    scene = Scene(
        means=np.concatenate(means),
        scales=np.concatenate(scales),
        rotations=rot,
        opacities=np.full(n, BLOB_OPACITY),
        colors_dc=np.concatenate(colors),
        object_codes=np.zeros((n, k)),
        class_names=default_class_names(k),
    )
    scene.validate()
    planted_all = np.concatenate(planted)

    # Ground truth comes from rendering the planted labels themselves.
    gt_scene = scene.copy()
    gt_scene.object_codes = np.eye(k)[planted_all]
    train_cams, eval_cams = ring_cameras(spec)
    views = []
    for cam in train_cams + eval_cams:
        image, _ = render_semantic(gt_scene, project(gt_scene, cam), normalize_codes=False)
        views.append((cam, semantic_argmax(image)))

    return SynthResult(scene=scene, views=views, planted=planted_all, n_train=len(train_cams))


# ---------------------------------------------------------------------------
# Reference implementations


def oracle_render(
    scene: Scene,
    camera: Camera,
    normalize_codes: bool = True,
    near: float = DEFAULT_NEAR,
    cov_reg: float = DEFAULT_COV_REG,
) -> SemanticImage:
    """Untiled per-pixel blend over the full depth-sorted splat list.

    No tiling, no bounding-box skipping, no early termination — only the
    alpha semantics (support ellipse, clamp) are shared with the fast path.
    """
    splats = project(scene, camera, near=near, cov_reg=cov_reg)
    k = scene.K
    codes = scene.class_probabilities() if normalize_codes else scene.object_codes
    w, h = camera.width, camera.height
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    out = np.zeros((h, w, k))
    trans = np.ones((h, w))
    for i in range(len(splats)):
        xx, xy, yy = splats.cov2d[i]
        det = xx * yy - xy * xy
        if det <= 0:
            continue
        dx = xs - splats.centers[i, 0]
        dy = ys - splats.centers[i, 1]
        q = (
            (yy / det * dx * dx)[None, :]
            - (2.0 * xy / det) * np.outer(dy, dx)
            + (xx / det * dy * dy)[:, None]
        )
        alpha = np.minimum(splats.opacities[i] * np.exp(-0.5 * q), ALPHA_MAX)
        alpha[q > SUPPORT_Q_MAX] = 0.0
        weight = alpha * trans
        out += weight[:, :, None] * codes[splats.gaussian_index[i]]
        trans = trans * (1.0 - alpha)
    out[:, :, 0] += trans
    return SemanticImage(width=w, height=h, channels=k, data=out, normalized=normalize_codes)


def oracle_knn(points: np.ndarray, query: int, k: int) -> np.ndarray:
    """Exhaustive k-nearest-others search, ties broken by ascending index."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if k >= pts.shape[0]:
        raise ValueError(f"k={k} must be smaller than the point count {pts.shape[0]}")
    d = np.linalg.norm(pts - pts[query], axis=1)
    d[query] = np.inf
    order = np.lexsort((np.arange(pts.shape[0]), d))
    return order[:k]


# ---------------------------------------------------------------------------
# Spec (de)serialization for fixture files


def spec_from_dict(d: dict) -> SynthSpec:
    try:
        blobs = [
            BlobSpec(
                center=tuple(b["center"]),
                radius=float(b["radius"]),
                count=int(b["count"]),
                class_id=int(b["class_id"]),
                color=tuple(b.get("color", (0.8, 0.8, 0.8))),
            )
            for b in d["blobs"]
        ]
        ring = d["camera_ring"]
        spec = SynthSpec(
            blobs=blobs,
            camera_ring=CameraRingSpec(
                count=int(ring["count"]),
                radius=float(ring["radius"]),
                height=float(ring["height"]),
                look_at=tuple(ring.get("look_at", (0.0, 0.0, 0.0))),
            ),
            image_size=tuple(d.get("image_size", (128, 128))),
            seed=int(d.get("seed", 0)),
            fov_deg=float(d.get("fov_deg", 50.0)),
            eval_count=int(d.get("eval_count", 1)),
            scale_factor=float(d.get("scale_factor", DEFAULT_SCALE_FACTOR)),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"bad fixture spec: {exc}") from exc
    spec.validate()
    return spec


def spec_to_dict(spec: SynthSpec) -> dict:
    return {
        "blobs": [
            {
                "center": list(b.center),
                "radius": b.radius,
                "count": b.count,
                "class_id": b.class_id,
                "color": list(b.color),
            }
            for b in spec.blobs
        ],
        "camera_ring": {
            "count": spec.camera_ring.count,
            "radius": spec.camera_ring.radius,
            "height": spec.camera_ring.height,
            "look_at": list(spec.camera_ring.look_at),
        },
        "image_size": list(spec.image_size),
        "seed": spec.seed,
        "fov_deg": spec.fov_deg,
        "eval_count": spec.eval_count,
        "scale_factor": spec.scale_factor,
    }


# ---------------------------------------------------------------------------
# Fixture presets used by the CLI demo and the test suite


def two_blob_spec(seed: int = 7, image_size: tuple[int, int] = (128, 128)) -> SynthSpec:
    return SynthSpec(
        blobs=[
            BlobSpec(center=(-1.5, 0.0, 0.0), radius=0.7, count=500, class_id=1, color=(0.9, 0.25, 0.2)),
            BlobSpec(center=(1.5, 0.0, 0.0), radius=0.7, count=500, class_id=2, color=(0.2, 0.45, 0.9)),
        ],
        camera_ring=CameraRingSpec(count=8, radius=6.0, height=1.2),
        image_size=image_size,
        seed=seed,
    )


def three_blob_spec(seed: int = 11, image_size: tuple[int, int] = (96, 96)) -> SynthSpec:
    return SynthSpec(
        blobs=[
            BlobSpec(center=(-1.8, 0.0, 0.0), radius=0.6, count=300, class_id=1, color=(0.9, 0.3, 0.2)),
            BlobSpec(center=(1.8, 0.0, 0.0), radius=0.6, count=300, class_id=2, color=(0.2, 0.8, 0.3)),
            BlobSpec(center=(0.0, 0.0, 2.4), radius=0.6, count=300, class_id=3, color=(0.25, 0.4, 0.9)),
        ],
        camera_ring=CameraRingSpec(count=8, radius=7.0, height=1.5),
        image_size=image_size,
        seed=seed,
    )
