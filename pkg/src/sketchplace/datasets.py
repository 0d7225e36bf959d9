"""Deterministic generators: shape point clouds and synthetic depth scenes.

Shapes are the five density-estimation datasets (cuboid, plane, circle,
plane+circle, star): points uniform on the ideal shape plus isotropic
Gaussian noise.

Scenes are top-down depth images of axis-aligned furniture slabs (plus one
floating sphere scene) with analytic ground truth, so projection oracles
can check the pipeline end to end. The camera sits at (0, 0, 3) looking
straight down; a surface at height h therefore appears at depth 3 - h.

A scene serializes to a single text document plus a binary depth file::

    scene <name>
    camera fx <fx> fy <fy> cx <cx> cy <cy>
    camera-rotation r00 r01 r02 r10 ... r22
    camera-translation tx ty tz
    depth-file <relative-path>
    limits z <lo> <hi>
    limits omega <lo> <hi>
    sketch roi|permissible
    vertex <u> <v>
    ...
    end
    roi-box <xmin> <xmax> <ymin> <ymax> <height>      (ground truth, optional)
    roi-sphere <cx> <cy> <cz> <radius>                (ground truth, optional)
    floor-box <xmin> <xmax> <ymin> <ymax>             (ground truth, optional)
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InvalidSceneError, ParseError
from .geometry import (
    CameraModel,
    DepthGrid,
    LABEL_PERMISSIBLE,
    LABEL_ROI,
    PointSet,
    Sketch,
    polygon_contains,
    read_depth,
    write_depth,
)

SHAPE_KINDS = ("cuboid", "plane", "circle", "plane+circle", "star")
SCENE_KINDS = ("tables-a", "tables-b", "drawer", "mixed", "ball")
BENCHMARK_SCENES = ("tables-a", "tables-b", "drawer", "mixed")

_DEFAULT_EXTENTS = {
    "cuboid": (0.6, 0.4, 0.3),
    "plane": (0.8, 0.5),
    "circle": (0.3,),
    "plane+circle": (0.5, 0.4, 0.25, 0.95),
    "star": (0.35, 0.15),
}


@dataclass
class ShapeSpec:
    """Recipe for one shape dataset."""

    kind: str
    extents: tuple = None
    count: int = 5000
    noise: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ConfigurationError(f"unknown shape kind {self.kind!r}")
        if self.count <= 0:
            raise ConfigurationError("sample count must be positive")
        if self.noise < 0:
            raise ConfigurationError("noise must be non-negative")
        if self.extents is None:
            self.extents = _DEFAULT_EXTENTS[self.kind]
        self.extents = tuple(float(v) for v in self.extents)


def _star_vertices(outer, inner, points=5):
    angles = np.pi / 2 + np.arange(2 * points) * np.pi / points
    radii = np.where(np.arange(2 * points) % 2 == 0, outer, inner)
    return np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])


def _uniform_in_polygon(verts, count, rng):
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    out = np.empty((0, 2))
    while len(out) < count:
        cand = rng.uniform(lo, hi, (max(4 * count, 256), 2))
        keep = polygon_contains(verts, cand[:, 0], cand[:, 1])
        out = np.concatenate([out, cand[keep]])
    return out[:count]


def generate_shape(spec: ShapeSpec) -> PointSet:
    """Sample the ideal shape uniformly, then add isotropic Gaussian noise."""
    rng = np.random.default_rng(spec.seed)
    n = spec.count
    kind = spec.kind
    ext = spec.extents

    if kind == "cuboid":
        half = np.asarray(ext) / 2.0
        pts = rng.uniform(-half, half, (n, 3))
    elif kind == "plane":
        pts = np.zeros((n, 3))
        pts[:, :2] = rng.uniform([-ext[0] / 2, -ext[1] / 2], [ext[0] / 2, ext[1] / 2], (n, 2))
    elif kind == "circle":
        theta = rng.uniform(0, 2 * np.pi, n)
        pts = np.column_stack([ext[0] * np.cos(theta), ext[0] * np.sin(theta), np.zeros(n)])
    elif kind == "plane+circle":
        lx, ly, radius, sep = ext
        n_plane = n // 2
        plane = np.zeros((n_plane, 3))
        plane[:, :2] = rng.uniform([-lx / 2, -ly / 2], [lx / 2, ly / 2], (n_plane, 2))
        plane[:, 0] -= sep / 2
        theta = rng.uniform(0, 2 * np.pi, n - n_plane)
        circ = np.column_stack([sep / 2 + radius * np.cos(theta),
                                radius * np.sin(theta),
                                np.zeros(n - n_plane)])
        pts = np.concatenate([plane, circ])
    elif kind == "star":
        verts = _star_vertices(ext[0], ext[1])
        xy = _uniform_in_polygon(verts, n, rng)
        pts = np.column_stack([xy, np.zeros(n)])
    else:  # pragma: no cover - guarded by ShapeSpec
        raise ConfigurationError(f"unknown shape kind {kind!r}")

    if spec.noise > 0:
        pts = pts + rng.normal(0.0, spec.noise, (n, 3))
    return PointSet(pts, label=LABEL_ROI)


@dataclass
class SceneGroundTruth:
    """Analytic geometry the scene was rendered from."""

    roi_boxes: list = field(default_factory=list)  # (xmin, xmax, ymin, ymax, height)
    roi_spheres: list = field(default_factory=list)  # (cx, cy, cz, radius)
    floor_boxes: list = field(default_factory=list)  # (xmin, xmax, ymin, ymax)

    def roi_centroids(self):
        cents = [np.array([(b[0] + b[1]) / 2, (b[2] + b[3]) / 2, b[4]])
                 for b in self.roi_boxes]
        cents += [np.array(s[:3]) for s in self.roi_spheres]
        return cents


@dataclass(eq=False)
class SceneSpec:
    """Everything needed to fit and solve one scene."""

    name: str
    camera: CameraModel
    depth: DepthGrid
    sketches: list
    z_limits: tuple = (0.15, 0.42)
    omega_limits: tuple = (0.0, 2 * np.pi)
    ground_truth: SceneGroundTruth | None = None

    def __post_init__(self):
        if self.z_limits[0] > self.z_limits[1]:
            raise InvalidSceneError("z_min exceeds z_max")
        if self.omega_limits[0] > self.omega_limits[1]:
            raise InvalidSceneError("omega_min exceeds omega_max")
        if not any(s.label == LABEL_ROI for s in self.sketches):
            raise InvalidSceneError("scene needs at least one ROI sketch")

    def roi_sketches(self):
        return [s for s in self.sketches if s.label == LABEL_ROI]

    def permissible_sketches(self):
        return [s for s in self.sketches if s.label == LABEL_PERMISSIBLE]


# Shared camera for all synthetic scenes: 160x120, overhead at 3 m.
_IMG_W, _IMG_H = 160, 120
_FOCAL = 130.0
_CAM_HEIGHT = 3.0


def _scene_camera() -> CameraModel:
    return CameraModel(
        fx=_FOCAL, fy=_FOCAL, cx=(_IMG_W - 1) / 2, cy=(_IMG_H - 1) / 2,
        rotation=np.diag([1.0, -1.0, -1.0]),
        translation=np.array([0.0, 0.0, _CAM_HEIGHT]))


def _render_depth(slabs, spheres) -> DepthGrid:
    """Z-buffer render of horizontal slabs and spheres over the floor."""
    cam = _scene_camera()
    uu, vv = np.meshgrid(np.arange(_IMG_W, dtype=float), np.arange(_IMG_H, dtype=float))
    depth = np.full((_IMG_H, _IMG_W), _CAM_HEIGHT)  # floor at z = 0
    for (xmin, xmax, ymin, ymax, h) in slabs:
        zc = _CAM_HEIGHT - h
        x = (uu - cam.cx) * zc / cam.fx
        y = -(vv - cam.cy) * zc / cam.fy
        hit = (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax)
        depth = np.where(hit & (zc < depth), zc, depth)
    for (sx, sy, sz, r) in spheres:
        # ray p = origin + s * d, unit-z direction d = ((u-cx)/f, -(v-cy)/f, -1)
        dx = (uu - cam.cx) / cam.fx
        dy = -(vv - cam.cy) / cam.fy
        oc = np.array([0.0, 0.0, _CAM_HEIGHT]) - np.array([sx, sy, sz])
        a = dx * dx + dy * dy + 1.0
        b = 2.0 * (dx * oc[0] + dy * oc[1] - oc[2])
        c = float(oc @ oc) - r * r
        disc = b * b - 4 * a * c
        hit = disc >= 0
        s = np.where(hit, (-b - np.sqrt(np.where(hit, disc, 0.0))) / (2 * a), np.inf)
        depth = np.where(hit & (s > 0) & (s < depth), s, depth)
    valid = np.isfinite(depth)
    return DepthGrid(_IMG_W, _IMG_H, depth.astype(np.float32), valid)


def _slab_sketch(box, label=LABEL_ROI, inset=1.0) -> Sketch:
    """Axis-aligned image rectangle strictly inside a slab's footprint."""
    cam = _scene_camera()
    xmin, xmax, ymin, ymax, h = box
    zc = _CAM_HEIGHT - h
    u0 = np.ceil(cam.cx + xmin * cam.fx / zc + inset)
    u1 = np.floor(cam.cx + xmax * cam.fx / zc - inset)
    v0 = np.ceil(cam.cy - ymax * cam.fy / zc + inset)
    v1 = np.floor(cam.cy - ymin * cam.fy / zc - inset)
    if u1 <= u0 or v1 <= v0:
        raise ConfigurationError("slab too small to sketch")
    return Sketch([(u0, v0), (u1, v0), (u1, v1), (u0, v1)], label)


def _floor_sketch(box) -> Sketch:
    xmin, xmax, ymin, ymax = box
    return _slab_sketch((xmin, xmax, ymin, ymax, 0.0), LABEL_PERMISSIBLE)


def _sphere_sketch(sphere) -> Sketch:
    """Regular polygon safely inside the sphere silhouette."""
    cam = _scene_camera()
    sx, sy, sz, r = sphere
    zc = _CAM_HEIGHT - sz
    uc = cam.cx + sx * cam.fx / zc
    vc = cam.cy - sy * cam.fy / zc
    pix_r = 0.8 * r * cam.fx / zc
    ang = np.linspace(0, 2 * np.pi, 25)[:-1]
    return Sketch(np.column_stack([uc + pix_r * np.cos(ang), vc + pix_r * np.sin(ang)]),
                  LABEL_ROI)


_SCENE_GEOMETRY = {
    # name: (slabs, spheres, floor permissible box)
    "tables-a": ([(-0.6, -0.2, -0.2, 0.2, 0.42), (0.2, 0.6, -0.2, 0.2, 0.42)],
                 [], (-1.0, 1.0, -0.95, -0.40)),
    "tables-b": ([(-1.15, -0.75, -0.2, 0.2, 0.42), (0.75, 1.15, -0.2, 0.2, 0.42)],
                 [], (-1.45, 1.45, -0.95, -0.40)),
    "drawer": ([(0.10, 0.55, 0.0, 0.35, 0.50)],
               [], (-1.2, 1.2, -1.0, -0.35)),
    "mixed": ([(-1.0, -0.6, -0.1, 0.3, 0.42), (0.5, 0.8, 0.2, 0.5, 0.55)],
              [], (-1.3, 1.3, -0.95, -0.35)),
    "ball": ([], [(0.0, 0.0, 0.45, 0.15)], None),
}


def generate_scene(name: str, seed: int = 0) -> SceneSpec:
    """Synthesize a named scene with analytic ground truth.

    Scenes are deterministic constructions; ``seed`` is accepted for API
    uniformity and reserved for future randomized variants.
    """
    if name not in _SCENE_GEOMETRY:
        raise ConfigurationError(
            f"unknown scene {name!r}; known: {', '.join(SCENE_KINDS)}")
    slabs, spheres, floor_box = _SCENE_GEOMETRY[name]
    depth = _render_depth(slabs, spheres)
    sketches = [_slab_sketch(b) for b in slabs]
    sketches += [_sphere_sketch(s) for s in spheres]
    gt = SceneGroundTruth(roi_boxes=list(slabs), roi_spheres=list(spheres))
    if floor_box is not None:
        sketches.append(_floor_sketch(floor_box))
        gt.floor_boxes.append(floor_box)
    return SceneSpec(name=name, camera=_scene_camera(), depth=depth,
                     sketches=sketches, ground_truth=gt)


def save_scene(path, scene: SceneSpec, depth_filename: str | None = None):
    """Write the scene document and its binary depth payload."""
    path = os.fspath(path)
    if depth_filename is None:
        depth_filename = os.path.splitext(os.path.basename(path))[0] + ".sdid"
    write_depth(os.path.join(os.path.dirname(path) or ".", depth_filename), scene.depth)
    cam = scene.camera
    num = lambda v: repr(float(v))
    lines = [
        f"scene {scene.name}",
        f"camera fx {num(cam.fx)} fy {num(cam.fy)} cx {num(cam.cx)} cy {num(cam.cy)}",
        "camera-rotation " + " ".join(num(v) for v in cam.rotation.ravel()),
        "camera-translation " + " ".join(num(v) for v in cam.translation),
        f"depth-file {depth_filename}",
        f"limits z {num(scene.z_limits[0])} {num(scene.z_limits[1])}",
        f"limits omega {num(scene.omega_limits[0])} {num(scene.omega_limits[1])}",
    ]
    for sk in scene.sketches:
        lines.append(f"sketch {sk.label}")
        for (u, v) in sk.vertices:
            lines.append(f"vertex {num(u)} {num(v)}")
        lines.append("end")
    gt = scene.ground_truth
    if gt is not None:
        for b in gt.roi_boxes:
            lines.append("roi-box " + " ".join(num(v) for v in b))
        for s in gt.roi_spheres:
            lines.append("roi-sphere " + " ".join(num(v) for v in s))
        for b in gt.floor_boxes:
            lines.append("floor-box " + " ".join(num(v) for v in b))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_scene(path) -> SceneSpec:
    path = os.fspath(path)
    with open(path) as fh:
        lines = fh.readlines()

    name = "scene"
    cam_kv = {}
    rotation = None
    translation = None
    depth_file = None
    z_limits = (0.15, 0.42)
    omega_limits = (0.0, 2 * np.pi)
    sketches = []
    gt = SceneGroundTruth()
    have_gt = False
    current = None  # (label, [vertices])

    def fvals(tokens, count, lineno, what):
        if len(tokens) != count:
            raise ParseError(f"expected {count} numbers for {what}", path, lineno)
        try:
            return [float(t) for t in tokens]
        except ValueError as exc:
            raise ParseError(f"bad number in {what}: {exc}", path, lineno)

    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        tokens = text.split()
        head, rest = tokens[0], tokens[1:]
        if current is not None and head not in ("vertex", "end"):
            raise ParseError("sketch block must end with 'end'", path, lineno)
        if head == "scene":
            name = rest[0] if rest else name
        elif head == "camera":
            if len(rest) != 8 or rest[::2] != ["fx", "fy", "cx", "cy"]:
                raise ParseError("camera line must be: camera fx v fy v cx v cy v",
                                 path, lineno)
            vals = fvals(rest[1::2], 4, lineno, "camera")
            cam_kv = dict(zip(("fx", "fy", "cx", "cy"), vals))
        elif head == "camera-rotation":
            rotation = np.array(fvals(rest, 9, lineno, "camera-rotation")).reshape(3, 3)
        elif head == "camera-translation":
            translation = np.array(fvals(rest, 3, lineno, "camera-translation"))
        elif head == "depth-file":
            if not rest:
                raise ParseError("depth-file needs a path", path, lineno)
            depth_file = rest[0]
        elif head == "limits":
            if len(rest) != 3 or rest[0] not in ("z", "omega"):
                raise ParseError("limits line must be: limits z|omega lo hi", path, lineno)
            lo, hi = fvals(rest[1:], 2, lineno, "limits")
            if rest[0] == "z":
                z_limits = (lo, hi)
            else:
                omega_limits = (lo, hi)
        elif head == "sketch":
            if len(rest) != 1 or rest[0] not in ("roi", "permissible"):
                raise ParseError("sketch label must be roi or permissible", path, lineno)
            current = (rest[0], [])
        elif head == "vertex":
            if current is None:
                raise ParseError("vertex outside sketch block", path, lineno)
            current[1].append(fvals(rest, 2, lineno, "vertex"))
        elif head == "end":
            if current is None:
                raise ParseError("end outside sketch block", path, lineno)
            label, verts = current
            if len(verts) < 3:
                raise ParseError("sketch needs at least 3 vertices", path, lineno)
            sketches.append(Sketch(np.array(verts), label))
            current = None
        elif head == "roi-box":
            gt.roi_boxes.append(tuple(fvals(rest, 5, lineno, "roi-box")))
            have_gt = True
        elif head == "roi-sphere":
            gt.roi_spheres.append(tuple(fvals(rest, 4, lineno, "roi-sphere")))
            have_gt = True
        elif head == "floor-box":
            gt.floor_boxes.append(tuple(fvals(rest, 4, lineno, "floor-box")))
            have_gt = True
        else:
            raise ParseError(f"unknown directive {head!r}", path, lineno)

    if current is not None:
        raise ParseError("unterminated sketch block", path)
    if not cam_kv or rotation is None or translation is None:
        raise ParseError("scene is missing camera parameters", path)
    if depth_file is None:
        raise ParseError("scene is missing depth-file", path)
    camera = CameraModel(rotation=rotation, translation=translation, **cam_kv)
    depth = read_depth(os.path.join(os.path.dirname(path) or ".", depth_file))
    return SceneSpec(name=name, camera=camera, depth=depth, sketches=sketches,
                     z_limits=tuple(z_limits), omega_limits=tuple(omega_limits),
                     ground_truth=gt if have_gt else None)
