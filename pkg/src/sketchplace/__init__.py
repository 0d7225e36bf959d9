"""Sketch-driven spatial region models and mobile-manipulator base placement.

Pipeline: rasterize sketched image polygons, back-project them through a
depth camera into 3D point sets, fit continuous probabilistic region
models (small energy networks trained by noise-contrastive estimation),
and optimize a mobile base placement by projected gradient ascent on the
expected energy of sampled end-effector positions.
"""

from .baselines import GmmModel, KdeModel, gmm_fit, kde_fit, log_likelihood
from .datasets import (
    BENCHMARK_SCENES,
    SCENE_KINDS,
    SHAPE_KINDS,
    SceneSpec,
    ShapeSpec,
    generate_scene,
    generate_shape,
    load_scene,
    save_scene,
)
from .energymodel import (
    AdamWState,
    EnergyModel,
    TrainConfig,
    adamw_step,
    energy,
    input_gradients,
    load_model,
    membership_probability,
    nce_fit,
    sample_negatives,
    save_model,
)
from .evaluate import (
    BenchmarkConfig,
    ReachabilityReport,
    coverage,
    ik_baseline,
    ik_solve,
    random_baseline,
    run_benchmark,
)
from .geometry import (
    CameraModel,
    DepthGrid,
    PointSet,
    Sketch,
    enclosed_pixels,
    project_pixel,
    project_sketch,
    read_depth,
    write_depth,
)
from .kinematics import (
    BaseConfig,
    JointSpec,
    KinematicChain,
    base_jacobian,
    forward,
    forward_batch,
    load_bundled_chain,
    load_chain,
    sample_joints,
)
from .pipeline import SceneModels, fit_scene_models, project_scene, scene_train_config
from .solver import (
    SolveTrace,
    SolverConfig,
    expected_energy,
    expected_energy_gradient,
    project_to_boundary,
    solve_mbpp,
    solve_multistart,
)

__version__ = "0.1.0"
