"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from splatseg.scene_io import Scene, default_class_names
from splatseg.synthetic import BlobSpec, CameraRingSpec, SynthSpec, look_at_camera


def random_scene(rng: np.random.Generator, n: int = 50, k: int = 3, extent: float = 1.2,
                 code_scale: float = 1.0) -> Scene:
    """Unstructured scene: anisotropic footprints, random codes."""
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return Scene(
        means=rng.uniform(-extent, extent, size=(n, 3)),
        scales=rng.uniform(0.05, 0.35, size=(n, 3)),
        rotations=q,
        opacities=rng.uniform(0.2, 0.95, size=n),
        colors_dc=rng.normal(scale=0.5, size=(n, 3)),
        object_codes=rng.normal(scale=code_scale, size=(n, k)),
        class_names=default_class_names(k),
    )


def front_camera(width: int = 48, height: int = 40, dist: float = 5.0, fov: float = 55.0):
    """Camera on the -z axis looking at the origin."""
    return look_at_camera((0.0, 0.0, -dist), (0.0, 0.0, 0.0), width, height, fov)


def random_blob_spec(rng: np.random.Generator, n_classes: int, image_size=(32, 32),
                     n_cameras: int = 2, count_range=(40, 80)) -> SynthSpec:
    """Randomized multi-blob fixture spec (blob geometry drawn from rng)."""
    blobs = []
    for cid in range(1, n_classes + 1):
        angle = 2 * np.pi * (cid - 1) / n_classes
        center = 1.9 * np.array([np.cos(angle), 0.25 * rng.normal(), np.sin(angle)])
        blobs.append(
            BlobSpec(
                center=tuple(center + 0.2 * rng.normal(size=3)),
                radius=float(rng.uniform(0.45, 0.7)),
                count=int(rng.integers(*count_range)),
                class_id=cid,
            )
        )
    return SynthSpec(
        blobs=blobs,
        camera_ring=CameraRingSpec(count=n_cameras, radius=6.5, height=1.1),
        image_size=image_size,
        seed=int(rng.integers(0, 2**63 - 1)),
    )


def scene_geometry_bytes(scene: Scene) -> bytes:
    return b"".join(
        arr.tobytes()
        for arr in (scene.means, scene.scales, scene.rotations, scene.opacities, scene.colors_dc)
    )
