"""Sketch rasterization and pinhole back-projection.

A sketch is a closed pixel-space polygon drawn over a depth image. This
module turns it into the set of enclosed integer pixels (even-odd rule,
boundary pixels included) and lifts those pixels into world-frame 3D
points through the camera model:

    p_world = R_C @ [(u - cx) * z / fx, (v - cy) * z / fy, z] + t_C
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    EmptyRegionError,
    FormatError,
    InvalidDepthError,
)

LABEL_ROI = "roi"
LABEL_PERMISSIBLE = "permissible"
VALID_LABELS = (LABEL_ROI, LABEL_PERMISSIBLE)

DEPTH_MAGIC = b"SDID"

# Distance (in pixels) under which a pixel center counts as lying on the
# polygon boundary.
_BOUNDARY_TOL = 1e-9


@dataclass(eq=False)
class CameraModel:
    """Pinhole intrinsics plus world-frame extrinsics."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # 3x3, camera-to-world
    translation: np.ndarray  # 3-vector, meters

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigurationError("focal lengths must be positive")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-9:
            raise ConfigurationError(f"rotation is not orthonormal (max error {err:.3g})")
        det = np.linalg.det(self.rotation)
        if abs(det - 1.0) > 1e-9:
            raise ConfigurationError(f"rotation determinant {det:.12g} != 1")


@dataclass(eq=False)
class DepthGrid:
    """Per-pixel z-depth in meters with an explicit validity mask."""

    width: int
    height: int
    values: np.ndarray  # (height, width) float32
    valid: np.ndarray  # (height, width) bool

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32).reshape(self.height, self.width)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(self.height, self.width)
        sel = self.values[self.valid]
        if sel.size and not (np.isfinite(sel).all() and (sel > 0).all()):
            raise FormatError("valid depth values must be finite and positive")


@dataclass(eq=False)
class Sketch:
    """Closed pixel polygon with a region label."""

    vertices: np.ndarray  # (n, 2) float, (u, v) pixel coordinates
    label: str

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if self.label not in VALID_LABELS:
            raise ConfigurationError(f"unknown sketch label {self.label!r}")

    def validate(self, width: int | None = None, height: int | None = None):
        """Check polygon invariants; raise if the sketch encloses no region."""
        v = self.vertices
        if len(v) < 3:
            raise EmptyRegionError(f"polygon needs >= 3 vertices, got {len(v)}")
        if abs(polygon_area(v)) < 1e-12:
            raise EmptyRegionError("polygon has zero area")
        if _self_intersects(v):
            raise EmptyRegionError("polygon is self-intersecting")
        if width is not None:
            if (v[:, 0] < 0).any() or (v[:, 0] > width - 1).any() \
                    or (v[:, 1] < 0).any() or (v[:, 1] > height - 1).any():
                raise ConfigurationError("sketch vertices outside image bounds")


@dataclass(eq=False)
class PointSet:
    """3D points (meters) inheriting the label of their source sketch."""

    points: np.ndarray  # (n, 3) float
    label: str = LABEL_ROI

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.points)


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area of a closed polygon."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments(vertices):
    a = np.asarray(vertices, dtype=float)
    b = np.roll(a, -1, axis=0)
    return a, b


def _self_intersects(vertices) -> bool:
    """True when any two non-adjacent edges properly intersect."""
    a, b = _segments(vertices)
    n = len(a)

    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # adjacent edges share an endpoint
            p1, p2, p3, p4 = a[i], b[i], a[j], b[j]
            d1 = orient(p3, p4, p1)
            d2 = orient(p3, p4, p2)
            d3 = orient(p1, p2, p3)
            d4 = orient(p1, p2, p4)
            if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
                return True
    return False


def polygon_contains(vertices: np.ndarray, u, v) -> np.ndarray:
    """Even-odd containment test, boundary inclusive.

    ``u`` and ``v`` may be arrays (broadcast together); returns a boolean
    array of the same shape.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    a, b = _segments(vertices)
    inside = np.zeros(np.broadcast(u, v).shape, dtype=bool)
    boundary = np.zeros_like(inside)
    for (x1, y1), (x2, y2) in zip(a, b):
        dx, dy = x2 - x1, y2 - y1
        seg_len2 = dx * dx + dy * dy
        if seg_len2 > 0:
            cross = dx * (v - y1) - dy * (u - x1)
            t = ((u - x1) * dx + (v - y1) * dy) / seg_len2
            on_seg = (np.abs(cross) / np.sqrt(seg_len2) <= _BOUNDARY_TOL) \
                & (t >= -1e-12) & (t <= 1 + 1e-12)
            boundary |= on_seg
        # Even-odd ray crossing: half-open vertical rule avoids double
        # counting at shared vertices.
        crosses = ((y1 > v) != (y2 > v))
        if np.any(crosses):
            with np.errstate(divide="ignore", invalid="ignore"):
                x_at = x1 + (v - y1) * dx / np.where(dy == 0, 1.0, dy)
            inside ^= crosses & (u < x_at)
    return inside | boundary


def enclosed_pixels(sketch: Sketch, width: int, height: int) -> np.ndarray:
    """Integer pixel centers inside or on the sketch polygon.

    Returns an (m, 2) int array of (u, v) pairs in row-major order
    (v ascending, then u ascending).
    """
    sketch.validate(width, height)
    verts = sketch.vertices
    u0 = max(0, int(np.ceil(verts[:, 0].min() - _BOUNDARY_TOL)))
    u1 = min(width - 1, int(np.floor(verts[:, 0].max() + _BOUNDARY_TOL)))
    v0 = max(0, int(np.ceil(verts[:, 1].min() - _BOUNDARY_TOL)))
    v1 = min(height - 1, int(np.floor(verts[:, 1].max() + _BOUNDARY_TOL)))
    if u1 < u0 or v1 < v0:
        return np.empty((0, 2), dtype=int)
    uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
    mask = polygon_contains(verts, uu, vv)
    vs, us = np.nonzero(mask)  # row-major: v outer, u inner
    return np.column_stack([us + u0, vs + v0]).astype(int)


def project_pixel(camera: CameraModel, u: float, v: float, z: float) -> np.ndarray:
    """Back-project one pixel at depth ``z`` into the world frame."""
    if not np.isfinite(z) or z <= 0:
        raise InvalidDepthError(f"depth must be finite and positive, got {z}")
    ray = np.array([(u - camera.cx) * z / camera.fx,
                    (v - camera.cy) * z / camera.fy,
                    z])
    return camera.rotation @ ray + camera.translation


def project_pixels(camera: CameraModel, uv: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Vectorized back-projection of (n, 2) pixels at depths (n,)."""
    uv = np.asarray(uv, dtype=float)
    z = np.asarray(z, dtype=float)
    if not (np.isfinite(z).all() and (z > 0).all()):
        raise InvalidDepthError("all depths must be finite and positive")
    rays = np.column_stack([(uv[:, 0] - camera.cx) * z / camera.fx,
                            (uv[:, 1] - camera.cy) * z / camera.fy,
                            z])
    return rays @ camera.rotation.T + camera.translation


def project_sketch(camera: CameraModel, depth: DepthGrid, sketch: Sketch) -> PointSet:
    """Back-project every enclosed pixel with a valid depth reading."""
    pix = enclosed_pixels(sketch, depth.width, depth.height)
    if len(pix) == 0:
        raise EmptyRegionError("sketch encloses no pixels")
    ok = depth.valid[pix[:, 1], pix[:, 0]]
    pix = pix[ok]
    if len(pix) == 0:
        raise EmptyRegionError("all enclosed pixels have invalid depth")
    z = depth.values[pix[:, 1], pix[:, 0]].astype(float)
    return PointSet(project_pixels(camera, pix.astype(float), z), label=sketch.label)


def world_to_pixel(camera: CameraModel, point: np.ndarray) -> tuple[float, float, float]:
    """Forward pinhole projection; returns (u, v, camera-frame depth)."""
    p_cam = camera.rotation.T @ (np.asarray(point, dtype=float) - camera.translation)
    z = p_cam[2]
    if z <= 0:
        raise InvalidDepthError("point is behind the camera")
    return (camera.fx * p_cam[0] / z + camera.cx,
            camera.fy * p_cam[1] / z + camera.cy,
            z)


def write_depth(path, grid: DepthGrid, flags: int = 0):
    """Write the binary depth format: 16-byte header + row-major f32, NaN invalid."""
    payload = grid.values.astype("<f4").copy()
    payload[~grid.valid] = np.nan
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC)
        fh.write(struct.pack("<III", grid.width, grid.height, flags))
        fh.write(payload.tobytes())


def read_depth(path) -> DepthGrid:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16 or header[:4] != DEPTH_MAGIC:
            raise FormatError(f"{path}: not a depth grid file")
        width, height, _flags = struct.unpack("<III", header[4:])
        raw = fh.read()
    expected = width * height * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype="<f4").reshape(height, width).copy()
    valid = np.isfinite(values) & (values > 0)
    values[~valid] = 0.0
    return DepthGrid(width, height, values, valid)
