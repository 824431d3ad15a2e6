"""Screen-space projection of 3D Gaussians.

For one camera this culls Gaussians behind the near plane, maps each
survivor's covariance to a 2x2 pixel-space footprint through the linearized
perspective Jacobian, computes an integer bounding box of the 3-sigma
extent, and depth-sorts the result (ties broken by ascending Gaussian
index, so the order is deterministic).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatseg.scene_io import Camera, Scene

DEFAULT_NEAR = 0.01
# Added to the diagonal of every projected covariance; keeps footprints
# non-degenerate (sub-pixel Gaussians still rasterize) and the conic finite.
DEFAULT_COV_REG = 0.3


def quat_to_rotmats(q: np.ndarray) -> np.ndarray:
    """Unit quaternions (n, 4), w first, to rotation matrices (n, 3, 3)."""
    q = np.asarray(q, dtype=np.float64).reshape(-1, 4)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def build_cov3d(scale: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    """World-space covariance R diag(scale^2) R^T for one Gaussian."""
    r = quat_to_rotmats(rotation)[0]
    s2 = np.asarray(scale, dtype=np.float64) ** 2
    return (r * s2) @ r.T


def build_cov3d_batch(scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    r = quat_to_rotmats(rotations)
    rs = r * (np.asarray(scales, dtype=np.float64) ** 2)[:, None, :]
    return np.einsum("nij,nkj->nik", rs, r)


@dataclass
class Splat2D:
    """One Gaussian's screen-space footprint."""

    gaussian_index: int
    center_px: np.ndarray   # (2,) pixel coordinates, x then y
    cov2d: np.ndarray       # (2, 2) SPD pixel-space covariance
    depth: float            # camera-space z
    opacity: float
    bbox: np.ndarray        # (4,) [x0, y0, x1, y1], half-open, inside image


@dataclass
class SplatList:
    """Depth-sorted splats for one camera, stored as packed arrays."""

    gaussian_index: np.ndarray  # (m,) into Scene.gaussians
    centers: np.ndarray         # (m, 2)
    cov2d: np.ndarray           # (m, 3) packed [xx, xy, yy]
    depths: np.ndarray          # (m,) ascending
    opacities: np.ndarray       # (m,)
    bboxes: np.ndarray          # (m, 4) int64, [x0, y0, x1, y1] half-open
    camera: Camera

    def __len__(self) -> int:
        return self.gaussian_index.shape[0]

    def __getitem__(self, i: int) -> Splat2D:
        xx, xy, yy = self.cov2d[i]
        return Splat2D(
            gaussian_index=int(self.gaussian_index[i]),
            center_px=self.centers[i],
            cov2d=np.array([[xx, xy], [xy, yy]]),
            depth=float(self.depths[i]),
            opacity=float(self.opacities[i]),
            bbox=self.bboxes[i],
        )


def project(
    scene: Scene,
    camera: Camera,
    near: float = DEFAULT_NEAR,
    cov_reg: float = DEFAULT_COV_REG,
) -> SplatList:
    """Project a scene into a camera, cull, and depth-sort.

    Culled: Gaussians at or behind the near plane, and Gaussians whose
    3-sigma bounding box misses the image entirely. An empty list is valid.
    """
    n = scene.n_gaussians
    w, h = camera.width, camera.height
    if n == 0:
        return _empty_splats(camera)

    p_cam = scene.means @ camera.R.T + camera.t
    z = p_cam[:, 2]
    front = z > near
    if not np.any(front):
        return _empty_splats(camera)

    idx = np.flatnonzero(front)
    p_cam = p_cam[idx]
    z = z[idx]

    cx = camera.fx * p_cam[:, 0] / z + camera.cx
    cy = camera.fy * p_cam[:, 1] / z + camera.cy

    cov_world = build_cov3d_batch(scene.scales[idx], scene.rotations[idx])
    cov_cam = np.einsum("ij,njk,lk->nil", camera.R, cov_world, camera.R)

    # Jacobian of (fx X/Z + cx, fy Y/Z + cy) at the Gaussian center.
    m = idx.shape[0]
    jac = np.zeros((m, 2, 3))
    jac[:, 0, 0] = camera.fx / z
    jac[:, 0, 2] = -camera.fx * p_cam[:, 0] / (z * z)
    jac[:, 1, 1] = camera.fy / z
    jac[:, 1, 2] = -camera.fy * p_cam[:, 1] / (z * z)
    cov2d_full = np.einsum("nij,njk,nlk->nil", jac, cov_cam, jac)

    xx = cov2d_full[:, 0, 0] + cov_reg
    xy = 0.5 * (cov2d_full[:, 0, 1] + cov2d_full[:, 1, 0])  # symmetric by construction
    yy = cov2d_full[:, 1, 1] + cov_reg

    rx = 3.0 * np.sqrt(xx)
    ry = 3.0 * np.sqrt(yy)
    x0 = np.maximum(np.floor(cx - rx), 0).astype(np.int64)
    y0 = np.maximum(np.floor(cy - ry), 0).astype(np.int64)
    x1 = np.minimum(np.floor(cx + rx) + 1, w).astype(np.int64)
    y1 = np.minimum(np.floor(cy + ry) + 1, h).astype(np.int64)

    visible = (x0 < x1) & (y0 < y1)
    if not np.any(visible):
        return _empty_splats(camera)

    keep = np.flatnonzero(visible)
    gid = idx[keep]
    order = np.lexsort((gid, z[keep]))  # depth ascending, then Gaussian index
    keep = keep[order]

    return SplatList(
        gaussian_index=idx[keep],
        centers=np.ascontiguousarray(np.stack([cx[keep], cy[keep]], axis=1)),
        cov2d=np.ascontiguousarray(np.stack([xx[keep], xy[keep], yy[keep]], axis=1)),
        depths=np.ascontiguousarray(z[keep]),
        opacities=np.ascontiguousarray(scene.opacities[idx[keep]]),
        bboxes=np.ascontiguousarray(
            np.stack([x0[keep], y0[keep], x1[keep], y1[keep]], axis=1)
        ),
        camera=camera,
    )


def _empty_splats(camera: Camera) -> SplatList:
    return SplatList(
        gaussian_index=np.zeros(0, dtype=np.int64),
        centers=np.zeros((0, 2)),
        cov2d=np.zeros((0, 3)),
        depths=np.zeros(0),
        opacities=np.zeros(0),
        bboxes=np.zeros((0, 4), dtype=np.int64),
        camera=camera,
    )
