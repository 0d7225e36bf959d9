import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "ci", derandomize=True, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")


@pytest.fixture(scope="session")
def bundled_chain():
    from sketchplace.kinematics import load_bundled_chain

    return load_bundled_chain()


@pytest.fixture(scope="session")
def scene_cache():
    """Scenes plus fitted models, trained once per session."""
    from sketchplace.datasets import generate_scene
    from sketchplace.pipeline import fit_scene_models, scene_train_config

    cache = {}

    def get(name):
        if name not in cache:
            scene = generate_scene(name)
            cache[name] = (scene, fit_scene_models(scene, scene_train_config(0)))
        return cache[name]

    return get


@pytest.fixture(scope="session")
def shape_model_cache():
    """Shape datasets with a trained energy model per shape."""
    from sketchplace.datasets import ShapeSpec, generate_shape
    from sketchplace.energymodel import TrainConfig, nce_fit

    cache = {}

    def get(kind, **kwargs):
        key = (kind, tuple(sorted(kwargs.items())))
        if key not in cache:
            spec = ShapeSpec(kind, seed=0, **kwargs)
            pts = generate_shape(spec)
            model = nce_fit(pts, TrainConfig(seed=0))
            cache[key] = (spec, pts, model)
        return cache[key]

    return get
