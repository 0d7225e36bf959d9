"""Scene-to-model glue shared by the CLI, the benchmark, and the service."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .datasets import SceneSpec
from .energymodel import EnergyModel, TrainConfig, nce_fit, padded_box
from .errors import InvalidSceneError
from .geometry import PointSet, project_sketch


def scene_train_config(seed: int = 0) -> TrainConfig:
    """Training settings for scene region fits.

    Sketches on a 160x120 image project to only a few hundred points, so
    scene fits run longer, with smaller batches and more negatives than
    the shape-dataset defaults; otherwise a wide multi-region sketch never
    develops structure finer than its bounding box (wide networks fit low
    frequencies first).
    """
    return TrainConfig(seed=seed, epochs=800, negative_ratio=4.0, batch_size=256)


@dataclass(eq=False)
class SceneModels:
    """Fitted region models plus the point sets they were trained on."""

    roi_model: EnergyModel
    constraint_model: EnergyModel | None
    roi_points: PointSet
    permissible_points: PointSet | None


def project_scene(scene: SceneSpec) -> tuple[PointSet, PointSet | None]:
    """Project all sketches; ROI sketches pool into one 3D point set and
    permissible sketches into one (x, y) set."""
    roi_parts = [project_sketch(scene.camera, scene.depth, s).points
                 for s in scene.roi_sketches()]
    if not roi_parts:
        raise InvalidSceneError("scene has no ROI sketch")
    roi = PointSet(np.concatenate(roi_parts), label="roi")
    perm = None
    perm_sketches = scene.permissible_sketches()
    if perm_sketches:
        parts = [project_sketch(scene.camera, scene.depth, s).points
                 for s in perm_sketches]
        perm = PointSet(np.concatenate(parts), label="permissible")
    return roi, perm


def workspace_box(scene: SceneSpec, roi: PointSet, perm: PointSet | None,
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Negative-sampling box for the region model, sized to the solver's
    working volume rather than the region's own bounding box.

    The expected-energy objective averages the model over end-effector
    samples; every such sample must land where the model saw negatives,
    otherwise untrained extrapolation slopes dominate the gradient. The
    box therefore covers the base's roaming footprint plus the arm span
    (span <= 1.0 m for compliant chains) in x, y, and the full reachable
    height band in z.
    """
    pts = [roi.points]
    if perm is not None:
        pts.append(perm.points)
    allp = np.concatenate(pts)
    # bases roam the permissible region; unconstrained solves start within
    # one arm span of the region, so the cloud reaches two spans out
    xy_margin = 1.1 if perm is not None else 2.1
    lo = np.empty(3)
    hi = np.empty(3)
    lo[:2] = allp[:, :2].min(axis=0) - xy_margin
    hi[:2] = allp[:, :2].max(axis=0) + xy_margin
    lo[2] = min(float(roi.points[:, 2].min()), scene.z_limits[0] - 1.1)
    hi[2] = max(float(roi.points[:, 2].max()), scene.z_limits[1] + 1.1)
    return lo, hi


def fit_scene_models(scene: SceneSpec, train: TrainConfig | None = None,
                     constraint_padding: float = 3.0,
                     augment_noise: float = 0.02) -> SceneModels:
    """Train the 3D region model and, when a permissible region was
    sketched, the 2D constraint model (seed offset by 1 to decorrelate).

    Region positives are jittered per epoch by ``augment_noise`` (meters,
    isotropic, seeded) unless the config already augments: projected
    sketch points from exact synthetic depth form zero-thickness sheets,
    and a sheet contributes almost no measure to the expected-energy
    objective. Real depth sensors exhibit roughly this noise level at
    room range.

    The constraint fit widens its negative-sampling box: a classifier
    trained against box noise can only reach an in-region probability of
    box_area / (box_area + region_area), so clearing a 0.95 feasibility
    threshold on a full-dimensional 2D region needs a box much larger than
    the region. Padding 3.0 puts the ceiling near 0.98.
    """
    train = train or scene_train_config()
    roi, perm = project_scene(scene)
    roi_train = train if train.augment > 0 else replace(train, augment=augment_noise)
    # negatives: half dense around the region (carves fine structure), half
    # over the workspace (keeps the landscape flat wherever the solver goes)
    tight = padded_box(roi.points, train.padding)
    wide = workspace_box(scene, roi, perm)
    roi_model = nce_fit(roi.points, roi_train,
                        box=[(tight[0], tight[1], 0.5), (wide[0], wide[1], 0.5)])
    constraint_model = None
    if perm is not None:
        # the threshold ceiling needs 1:1 negatives; a single full-dimensional
        # region also trains much faster than a multi-region fit
        constraint_train = replace(
            train, seed=train.seed + 1, padding=constraint_padding,
            negative_ratio=1.0, batch_size=512,
            epochs=min(train.epochs, 300), augment=0.0)
        constraint_model = nce_fit(perm.points[:, :2], constraint_train)
    return SceneModels(roi_model, constraint_model, roi, perm)
