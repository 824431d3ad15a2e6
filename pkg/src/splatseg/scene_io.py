"""Scene, camera, and label-map I/O.

Scenes travel as binary little-endian PLY in the layout used by common
splat-scene tooling: ``x y z nx ny nz f_dc_0..2 [f_rest_*] opacity
scale_0..2 rot_0..3``, extended with one float property per semantic class
(``obj_code_0 .. obj_code_{K-1}``) appended after ``rot_3`` so that a single
file carries the fully labeled scene. Opacity and scale are stored
pre-activation (logit / log space); loading applies sigmoid and exp exactly
once and normalizes the rotation quaternion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from splatseg.errors import SceneFormatError
from splatseg.numerics import logit, sigmoid, softmax

# Properties every scene PLY must carry, in the order we write them.
_REQUIRED_PROPS = (
    "x", "y", "z",
    "nx", "ny", "nz",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)

_QUAT_NORM_TOL = 1e-6
_ROT_ORTHO_TOL = 1e-5
_OPACITY_CLIP = 1e-7  # keeps the logit finite when opacity touches 0 or 1


def default_class_names(k: int) -> list[str]:
    return ["background"] + [f"class_{i}" for i in range(1, k)]


@dataclass
class Gaussian:
    """One scene primitive (a row view into :class:`Scene` arrays)."""

    mean: np.ndarray          # (3,) world position
    scale: np.ndarray         # (3,) strictly positive per-axis extent
    rotation: np.ndarray      # (4,) unit quaternion, w first
    opacity: float            # in [0, 1], post-activation
    color_dc: np.ndarray      # (3,) DC color coefficients
    object_code: np.ndarray   # (K,) unconstrained class logits


@dataclass
class Scene:
    """Ordered collection of Gaussians plus the class table.

    Stored as packed arrays (one row per Gaussian) for the numeric code;
    :meth:`gaussian` materializes a single-primitive view.
    """

    means: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    colors_dc: np.ndarray
    object_codes: np.ndarray
    class_names: list[str] = field(default_factory=lambda: default_class_names(2))

    def __post_init__(self) -> None:
        self.means = np.ascontiguousarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = self.means.shape[0]
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float64).reshape(n)
        self.colors_dc = np.ascontiguousarray(self.colors_dc, dtype=np.float64).reshape(n, 3)
        codes = np.ascontiguousarray(self.object_codes, dtype=np.float64)
        self.object_codes = codes if codes.ndim == 2 else codes.reshape(n, -1)

    @property
    def K(self) -> int:
        return len(self.class_names)

    @property
    def n_gaussians(self) -> int:
        return self.means.shape[0]

    def __len__(self) -> int:
        return self.n_gaussians

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            mean=self.means[i],
            scale=self.scales[i],
            rotation=self.rotations[i],
            opacity=float(self.opacities[i]),
            color_dc=self.colors_dc[i],
            object_code=self.object_codes[i],
        )

    @classmethod
    def from_gaussians(cls, gaussians, class_names) -> "Scene":
        n = len(gaussians)
        k = len(class_names)
        scene = cls(
            means=np.array([g.mean for g in gaussians], dtype=np.float64).reshape(n, 3),
            scales=np.array([g.scale for g in gaussians], dtype=np.float64).reshape(n, 3),
            rotations=np.array([g.rotation for g in gaussians], dtype=np.float64).reshape(n, 4),
            opacities=np.array([g.opacity for g in gaussians], dtype=np.float64),
            colors_dc=np.array([g.color_dc for g in gaussians], dtype=np.float64).reshape(n, 3),
            object_codes=np.array([g.object_code for g in gaussians], dtype=np.float64).reshape(n, k),
            class_names=list(class_names),
        )
        scene.validate()
        return scene

    def copy(self) -> "Scene":
        return Scene(
            means=self.means.copy(),
            scales=self.scales.copy(),
            rotations=self.rotations.copy(),
            opacities=self.opacities.copy(),
            colors_dc=self.colors_dc.copy(),
            object_codes=self.object_codes.copy(),
            class_names=list(self.class_names),
        )

    def class_probabilities(self) -> np.ndarray:
        """Per-Gaussian class distribution, softmax over the code vector."""
        return softmax(self.object_codes, axis=1)

    def validate(self) -> None:
        if self.K < 2:
            raise ValueError(f"need at least background + one object class, got K={self.K}")
        if self.object_codes.shape != (self.n_gaussians, self.K):
            raise ValueError(
                f"object_codes shape {self.object_codes.shape} inconsistent with "
                f"{self.n_gaussians} Gaussians and K={self.K}"
            )
        if self.n_gaussians == 0:
            return
        if not np.all(self.scales > 0):
            raise ValueError("scale components must be strictly positive")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.max(np.abs(norms - 1.0)) > _QUAT_NORM_TOL:
            raise ValueError("rotation quaternions must be unit length")
        if np.any(self.opacities < 0) or np.any(self.opacities > 1):
            raise ValueError("opacities must lie in [0, 1]")


@dataclass
class Camera:
    """Pinhole intrinsics plus a world-to-camera rigid transform."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray  # (4, 4), camera looks along +z

    def __post_init__(self) -> None:
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)

    @property
    def R(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        r = self.R
        err = np.max(np.abs(r @ r.T - np.eye(3)))
        if err > _ROT_ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > _ROT_ORTHO_TOL:
            raise ValueError(f"rotation block is not orthonormal (err={err:.2e})")


@dataclass
class LabelMap:
    """H x W integer class-ID image."""

    width: int
    height: int
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int32).reshape(self.height, self.width)

    def validate(self, k: int | None = None, camera: Camera | None = None) -> None:
        if np.any(self.labels < 0):
            raise ValueError("labels must be non-negative")
        if k is not None and np.any(self.labels >= k):
            raise ValueError(f"label {int(self.labels.max())} out of range for K={k}")
        if camera is not None and (camera.width != self.width or camera.height != self.height):
            raise ValueError("label map dimensions do not match the paired camera")


# ---------------------------------------------------------------------------
# Scene PLY


def _read_ply_header(fh) -> tuple[int, list[str]]:
    def next_line() -> str:
        raw = fh.readline()
        if not raw:
            raise SceneFormatError("unexpected end of PLY header")
        return raw.decode("ascii", errors="replace").strip()

    if next_line() != "ply":
        raise SceneFormatError("not a PLY file (missing 'ply' magic)")
    if next_line() != "format binary_little_endian 1.0":
        raise SceneFormatError("scene PLY must be binary little-endian 1.0")

    n_vertex = None
    names: list[str] = []
    while True:
        line = next_line()
        if line == "end_header":
            break
        if line.startswith("comment"):
            continue
        if line.startswith("element"):
            parts = line.split()
            if len(parts) != 3 or parts[1] != "vertex":
                raise SceneFormatError(f"unsupported PLY element: {line!r}")
            n_vertex = int(parts[2])
        elif line.startswith("property"):
            parts = line.split()
            if len(parts) != 3 or parts[1] != "float":
                raise SceneFormatError(f"unsupported PLY property: {line!r}")
            names.append(parts[2])
        else:
            raise SceneFormatError(f"malformed PLY header line: {line!r}")
    if n_vertex is None:
        raise SceneFormatError("PLY header missing 'element vertex'")
    return n_vertex, names


def load_scene(path, K: int | None = None) -> Scene:
    """Load a splat scene, applying activations exactly once.

    Object codes are read from ``obj_code_*`` properties when present
    (their count must agree with ``K`` if both are given); otherwise every
    code is initialized to the zero vector, i.e. a uniform class
    distribution after softmax.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        n, names, = _read_ply_header(fh)
        blob = fh.read()
    expected = n * len(names) * 4
    if len(blob) < expected:
        raise SceneFormatError(
            f"property count mismatch: header implies {expected} bytes of vertex data, "
            f"file has {len(blob)}"
        )
    data = np.frombuffer(blob[:expected], dtype="<f4").reshape(n, len(names)).astype(np.float64)
    cols = {name: i for i, name in enumerate(names)}

    missing = [p for p in _REQUIRED_PROPS if p not in cols]
    if missing:
        raise SceneFormatError(f"scene PLY missing properties: {missing}")

    def take(*props: str) -> np.ndarray:
        return data[:, [cols[p] for p in props]]

    n_codes = sum(1 for name in names if name.startswith("obj_code_"))
    if n_codes:
        code_props = [f"obj_code_{i}" for i in range(n_codes)]
        if any(p not in cols for p in code_props):
            raise SceneFormatError("obj_code_* properties are not contiguous from 0")
        if K is not None and K != n_codes:
            raise SceneFormatError(f"file has {n_codes} obj_code properties but K={K} was requested")
        codes = take(*code_props)
        k = n_codes
    else:
        if K is None:
            raise SceneFormatError("scene PLY carries no obj_code properties; K is required")
        k = int(K)
        codes = np.zeros((n, k), dtype=np.float64)

    rot = take("rot_0", "rot_1", "rot_2", "rot_3")
    norms = np.linalg.norm(rot, axis=1)
    if n and np.any(norms <= 0):
        raise SceneFormatError("zero-norm rotation quaternion in scene PLY")
    if n:
        rot = rot / norms[:, None]

    scene = Scene(
        means=take("x", "y", "z"),
        scales=np.exp(take("scale_0", "scale_1", "scale_2")),
        rotations=rot,
        opacities=sigmoid(data[:, cols["opacity"]]),
        colors_dc=take("f_dc_0", "f_dc_1", "f_dc_2"),
        object_codes=codes,
        class_names=default_class_names(k),
    )
    scene.validate()
    return scene


def save_scene(scene: Scene, path) -> None:
    """Write the scene as binary PLY; :func:`load_scene` inverts it."""
    scene.validate()
    k = scene.K
    names = list(_REQUIRED_PROPS) + [f"obj_code_{i}" for i in range(k)]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {scene.n_gaussians}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")

    n = scene.n_gaussians
    table = np.zeros((n, len(names)), dtype=np.float32)
    table[:, 0:3] = scene.means
    # normals are carried for layout compatibility only
    table[:, 6:9] = scene.colors_dc
    op = np.clip(scene.opacities, _OPACITY_CLIP, 1.0 - _OPACITY_CLIP)
    table[:, 9] = logit(op)
    table[:, 10:13] = np.log(scene.scales)
    table[:, 13:17] = scene.rotations
    table[:, 17 : 17 + k] = scene.object_codes

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(table.tobytes())


# ---------------------------------------------------------------------------
# Cameras

_CAMERA_KEYS = ("id", "width", "height", "fx", "fy", "cx", "cy", "world_to_camera")


def load_cameras(path) -> list[tuple[Camera, int]]:
    """Load posed cameras from a JSON array, ordered by view id."""
    with open(path) as fh:
        records = json.load(fh)
    if not isinstance(records, list):
        raise SceneFormatError("cameras JSON must be an array of records")
    out = []
    for rec in records:
        missing = [key for key in _CAMERA_KEYS if key not in rec]
        if missing:
            raise SceneFormatError(f"camera record missing fields: {missing}")
        w2c = np.asarray(rec["world_to_camera"], dtype=np.float64)
        if w2c.size != 16:
            raise SceneFormatError("world_to_camera must hold 16 floats (row-major 4x4)")
        cam = Camera(
            fx=float(rec["fx"]),
            fy=float(rec["fy"]),
            cx=float(rec["cx"]),
            cy=float(rec["cy"]),
            width=int(rec["width"]),
            height=int(rec["height"]),
            world_to_camera=w2c.reshape(4, 4),
        )
        try:
            cam.validate()
        except ValueError as exc:
            raise SceneFormatError(f"camera id={rec['id']}: {exc}") from exc
        out.append((cam, int(rec["id"])))
    out.sort(key=lambda pair: pair[1])
    return out


def save_cameras(cameras: list[tuple[Camera, int]], path) -> None:
    records = []
    for cam, view_id in cameras:
        records.append(
            {
                "id": view_id,
                "width": cam.width,
                "height": cam.height,
                "fx": cam.fx,
                "fy": cam.fy,
                "cx": cam.cx,
                "cy": cam.cy,
                "world_to_camera": [float(v) for v in cam.world_to_camera.ravel()],
            }
        )
    with open(path, "w") as fh:
        json.dump(records, fh, indent=1)


# ---------------------------------------------------------------------------
# Label maps


def load_label_map(path, K: int) -> LabelMap:
    """Load a single-channel PNG whose pixel values are class IDs."""
    img = Image.open(path)
    if img.mode not in ("L", "I", "I;16"):
        raise SceneFormatError(f"label map must be single-channel, got mode {img.mode!r}")
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise SceneFormatError("label map must be a single-channel image")
    if arr.max(initial=0) >= K:
        raise SceneFormatError(f"label map contains value {int(arr.max())} >= K={K}")
    lm = LabelMap(width=arr.shape[1], height=arr.shape[0], labels=arr.astype(np.int32))
    lm.validate(K)
    return lm


def save_label_map(label_map: LabelMap, path) -> None:
    labels = label_map.labels
    if labels.max(initial=0) < 256:
        Image.fromarray(labels.astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray(labels.astype(np.uint16)).save(path)
