"""Project normalized acoustic heatmaps onto point clouds.

A heatmap lives on the scan-grid plane in front of the array.  The plane
maps to acoustic-camera pixels by a homography, so a cloud point is
projected into the acoustic camera and the pixel is pulled back onto the
plane, where the heatmap is sampled bilinearly between cell centers.
There is no occlusion handling: every point along a pixel's ray gets the
same weight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .beamform import AcousticHeatmap
from .geometry import CameraModel, PointCloud, WeightedPointCloud

# reprojection error statistics (mean, std) in pixels at 1920x1080
RING48_REPROJECTION = (2.30, 2.12)
ZED_REPROJECTION = (1.52, 0.84)


class BehindCamera(ValueError):
    pass


class NotNormalized(ValueError):
    pass


def project_point(p, cam: CameraModel):
    """Pixel ``(u, v)`` and depth of a single world point.

    Raises ``BehindCamera`` when the camera-frame depth is not positive.
    """
    uv, z = cam.project(np.asarray(p, dtype=float)[None])
    if not z[0] > 0:
        raise BehindCamera(f"point {list(p)} has depth {z[0]:.4g} in the camera frame")
    return (float(uv[0, 0]), float(uv[0, 1])), float(z[0])


def grid_homography(h: AcousticHeatmap, cam: CameraModel):
    """3x3 homography from scan-plane coordinates (x, y, 1) in the array frame to pixels."""
    grid = h.grid
    T = cam.pose @ grid.array_pose  # array frame -> camera frame
    R, t = T[:3, :3], T[:3, 3]
    return cam.K @ np.column_stack([R[:, 0], R[:, 1], grid.distance * R[:, 2] + t])


@dataclass
class PixelMap:
    pixels: np.ndarray  # (ny, nx, 2) projected cell centers
    homography: np.ndarray

    def cell_at(self, u, v):
        """Nearest cell (row, col) to a pixel, in pixel space."""
        d = np.sum((self.pixels - np.array([u, v])) ** 2, axis=-1)
        return np.unravel_index(int(np.argmin(d)), d.shape)


def heatmap_pixel_map(h: AcousticHeatmap, acoustic_cam: CameraModel):
    """Acoustic-camera pixel of every heatmap cell center."""
    H = grid_homography(h, acoustic_cam)
    xs, ys = h.grid.axes()
    gx, gy = np.meshgrid(xs, ys)
    q = np.stack([gx, gy, np.ones_like(gx)], axis=-1) @ H.T
    return PixelMap(q[..., :2] / q[..., 2:3], H)


def pixels_to_cells(h: AcousticHeatmap, acoustic_cam: CameraModel, uv):
    """Continuous (col, row) heatmap coordinates for pixels; NaN where the ray misses the plane."""
    H = grid_homography(h, acoustic_cam)
    uv = np.atleast_2d(uv)
    q = np.column_stack([uv, np.ones(len(uv))]) @ np.linalg.inv(H).T
    with np.errstate(divide="ignore", invalid="ignore"):
        gx, gy = q[:, 0] / q[:, 2], q[:, 1] / q[:, 2]
    # q[:, 2] is 1 / depth of the plane hit; non-positive means behind the camera
    bad = ~(q[:, 2] > 0)
    dx, dy = h.grid.cell_size
    col = (gx + 0.5 * h.grid.width) / dx - 0.5
    row = (gy + 0.5 * h.grid.height) / dy - 0.5
    col[bad] = np.nan
    row[bad] = np.nan
    return col, row


def sample_bilinear(values, col, row):
    """Bilinear lookup between cell centers; 0 outside the grid extent.

    Points in the outer half-cell rim are clamped to the edge cells.
    """
    ny, nx = values.shape
    out = np.zeros(col.shape)
    ok = np.isfinite(col) & np.isfinite(row)
    ok &= (col >= -0.5) & (col <= nx - 0.5) & (row >= -0.5) & (row <= ny - 0.5)
    c = np.clip(col[ok], 0.0, nx - 1.0)
    r = np.clip(row[ok], 0.0, ny - 1.0)
    c0 = np.minimum(np.floor(c).astype(int), nx - 2)
    r0 = np.minimum(np.floor(r).astype(int), ny - 2)
    fc, fr = c - c0, r - r0
    v = (values[r0, c0] * (1 - fc) * (1 - fr) + values[r0, c0 + 1] * fc * (1 - fr)
         + values[r0 + 1, c0] * (1 - fc) * fr + values[r0 + 1, c0 + 1] * fc * fr)
    out[ok] = v
    return out


@dataclass(frozen=True)
class CalibrationNoise:
    """Random per-point pixel offsets with the given reprojection-error statistics.

    The offset magnitude is |N(mean, std)| in a uniformly random direction.
    """

    mean_px: float = RING48_REPROJECTION[0]
    std_px: float = RING48_REPROJECTION[1]
    seed: int = 0

    def apply(self, uv):
        rng = np.random.default_rng(self.seed)
        mag = np.abs(rng.normal(self.mean_px, self.std_px, len(uv)))
        ang = rng.uniform(0.0, 2.0 * np.pi, len(uv))
        return uv + np.column_stack([mag * np.cos(ang), mag * np.sin(ang)])


def fuse(cloud: PointCloud, h: AcousticHeatmap, acoustic_cam: CameraModel, noise: CalibrationNoise | None = None):
    """Per-point acoustic weight from a normalized heatmap."""
    if not h.normalized:
        raise NotNormalized("fuse expects a normalized heatmap (see normalize_heatmap)")
    pts = cloud.points
    weights = np.zeros(len(pts))
    if len(pts):
        uv, z = acoustic_cam.project(pts)
        front = z > 0
        if np.any(front):
            uvf = uv[front]
            if noise is not None:
                uvf = noise.apply(uvf)
            col, row = pixels_to_cells(h, acoustic_cam, uvf)
            weights[front] = sample_bilinear(h.values, col, row)
    np.clip(weights, 0.0, 1.0, out=weights)
    return WeightedPointCloud(pts, weights, h.video_frame)


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def load_camera(path):
    """Calibration file: JSON with fx, fy, cx, cy, resolution [w, h] and a row-major 4x4 pose."""
    return CameraModel.from_dict(json.loads(Path(path).read_text()))


def save_camera(cam: CameraModel, path):
    Path(path).write_text(json.dumps(cam.to_dict(), indent=2))


def write_ply(path, points, weights=None):
    """ASCII PLY with float x, y, z and optionally a float ``weight`` property."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    header = ["ply", "format ascii 1.0", f"element vertex {len(points)}",
              "property float x", "property float y", "property float z"]
    cols = [points]
    if weights is not None:
        header.append("property float weight")
        cols.append(np.asarray(weights, dtype=float).reshape(-1, 1))
    header.append("end_header")
    data = np.hstack(cols)
    row = " ".join(["%.9g"] * data.shape[1]) + "\n"
    with open(path, "w") as f:
        f.write("\n".join(header) + "\n")
        if len(data):
            f.write((row * len(data)) % tuple(data.ravel().tolist()))


def read_ply(path):
    """Read an ASCII PLY written by ``write_ply``; returns (points, weights or None)."""
    with open(path) as f:
        props, n = [], 0
        for line in f:
            line = line.strip()
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            elif line.startswith("property"):
                props.append(line.split()[-1])
            elif line == "end_header":
                break
        data = np.loadtxt(f, ndmin=2) if n else np.zeros((0, len(props)))
    data = data.reshape(n, len(props))
    pts = data[:, [props.index(k) for k in "xyz"]]
    w = data[:, props.index("weight")] if "weight" in props else None
    return pts, w
