"""Reachability scoring and placement baselines.

Coverage is a sampling oracle: a region point counts as reachable from a
base placement when any of M uniformly sampled arm configurations puts the
end-effector within ``delta`` of it. The same frozen test points, delta,
and joint-sample seed score every method, so only the placements differ.

Two comparison methods bracket the optimizer: a random feasible placement,
and an inverse-kinematics baseline that averages base candidates from
which sampled region points were reachable (solved by damped least
squares).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .datasets import SceneSpec
from .energymodel import EnergyModel, TrainConfig, membership_probability
from .errors import BaselineFailureError, ConfigurationError, InfeasibleError
from .geometry import PointSet
from .kinematics import (
    BaseConfig,
    KinematicChain,
    forward,
    forward_batch,
    joint_world_frames,
    reach,
    sample_joints,
)
from .pipeline import SceneModels, fit_scene_models
from .solver import SolverConfig, project_to_boundary, solve_multistart


def coverage(chain: KinematicChain, base: BaseConfig, roi_points,
             fk_samples: int = 100_000, delta: float = 0.02, seed: int = 0) -> float:
    """Fraction of region points within delta of any sampled FK position."""
    pts = np.asarray(getattr(roi_points, "points", roi_points), dtype=float)
    if len(pts) == 0:
        raise ConfigurationError("coverage needs at least one region point")
    Q = sample_joints(chain, fk_samples, seed)
    positions = forward_batch(chain, Q, base)
    tree = cKDTree(positions)
    dist, _ = tree.query(pts, k=1, distance_upper_bound=delta, workers=-1)
    return float(np.mean(np.isfinite(dist)))


def ik_solve(chain: KinematicChain, target, base: BaseConfig,
             max_iters: int = 80, tol: float = 1e-3, damping: float = 0.1):
    """Damped-least-squares IK on position error with limit clamping.

    Returns the joint vector on success (final error < tol) or None.
    """
    target = np.asarray(target, dtype=float).reshape(3)
    if not np.isfinite(target).all():
        raise ConfigurationError("IK target must be finite")
    lo, hi = chain.lower, chain.upper
    q = 0.5 * (lo + hi)
    lam2 = damping * damping
    eye3 = np.eye(3)
    for _ in range(max_iters):
        axes, origins, p_ee = joint_world_frames(chain, q, base)
        err = target - p_ee
        if np.linalg.norm(err) < tol:
            return q
        J = np.empty((3, chain.n_joints))
        for j, joint in enumerate(chain.joints):
            if joint.kind == "revolute":
                J[:, j] = np.cross(axes[j], p_ee - origins[j])
            else:
                J[:, j] = axes[j]
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * eye3, err)
        q = np.clip(q + dq, lo, hi)
    if np.linalg.norm(target - forward(chain, q, base)) < tol:
        return q
    return None


def sample_from_model(model: EnergyModel, count: int, rng,
                      max_rounds: int = 10_000) -> np.ndarray:
    """Rejection-sample points, accepting box proposals with probability
    sigma(energy)."""
    lo = model.box_lo.astype(float)
    hi = model.box_hi.astype(float)
    out = []
    have = 0
    for _ in range(max_rounds):
        cand = rng.uniform(lo, hi, (max(64, count), model.input_dim))
        accept = rng.uniform(size=len(cand)) < membership_probability(model, cand)
        kept = cand[accept]
        if len(kept):
            out.append(kept)
            have += len(kept)
        if have >= count:
            return np.concatenate(out)[:count]
    raise BaselineFailureError("region model accepted no samples")


def _random_feasible(constraint_model, z_limits, omega_limits, rng,
                     tau=0.95, xy_box=None, max_tries=1000) -> BaseConfig:
    z = rng.uniform(*z_limits)
    omega = rng.uniform(*omega_limits)
    if constraint_model is None:
        if xy_box is None:
            raise ConfigurationError("unconstrained sampling needs an xy box")
        xy = rng.uniform(xy_box[0], xy_box[1])
        return BaseConfig(float(xy[0]), float(xy[1]), z, omega)
    lo, hi = constraint_model.box_lo, constraint_model.box_hi
    # proposals drawn in blocks, consumed in draw order (same accepted
    # sample as one-at-a-time rejection, far fewer model evaluations)
    block = 128
    for _ in range(0, max_tries, block):
        xy = rng.uniform(lo, hi, (block, 2))
        ok = np.nonzero(membership_probability(constraint_model, xy) >= tau)[0]
        if len(ok):
            pick = xy[ok[0]]
            return BaseConfig(float(pick[0]), float(pick[1]), z, omega)
    raise InfeasibleError(f"no feasible placement in {max_tries} rejection samples")


def random_baseline(constraint_model: EnergyModel | None, z_limits, omega_limits,
                    seed, tau: float = 0.95, xy_box=None) -> BaseConfig:
    """One random placement satisfying all constraints."""
    rng = np.random.default_rng(seed)
    return _random_feasible(constraint_model, z_limits, omega_limits, rng,
                            tau=tau, xy_box=xy_box)


def ik_baseline(roi_model: EnergyModel, constraint_model: EnergyModel | None,
                chain: KinematicChain, z_limits, omega_limits, seed,
                roi_samples: int = 20, candidates: int = 200,
                max_iters: int = 80, tau: float = 0.95,
                xy_box=None) -> BaseConfig:
    """Mean of base placements from which sampled region points are
    IK-reachable, projected back to feasibility."""
    rng = np.random.default_rng(seed)
    targets = sample_from_model(roi_model, roi_samples, rng)
    # triangle-inequality precheck: skip candidates that cannot reach
    max_reach = 1.02 * reach(chain, samples=8192, seed=0) + 0.05
    found = []
    for target in targets:
        for _ in range(candidates):
            cand = _random_feasible(constraint_model, z_limits, omega_limits, rng,
                                    tau=tau, xy_box=xy_box)
            if np.linalg.norm(target - np.array([cand.x, cand.y, cand.z])) > max_reach:
                continue
            if ik_solve(chain, target, cand, max_iters=max_iters) is not None:
                found.append(cand.as_array())
                break
    if not found:
        raise BaselineFailureError("IK baseline found no reachable placement")
    mean = np.mean(found, axis=0)
    mean[2] = np.clip(mean[2], *z_limits)
    mean[3] = np.clip(mean[3], *omega_limits)
    if constraint_model is not None and \
            membership_probability(constraint_model, mean[:2]) < tau:
        res = project_to_boundary(constraint_model, mean[:2], tau)
        mean[:2] = res.point
    return BaseConfig.from_array(mean)


@dataclass
class BenchmarkConfig:
    delta: float = 0.02
    fk_samples: int = 100_000
    test_points: int = 1000
    restarts: int = 4
    ik_roi_samples: int = 20
    ik_candidates: int = 200
    ik_max_iters: int = 80
    seed: int = 0
    train: TrainConfig = None
    solver: SolverConfig = None


@dataclass
class MethodResult:
    name: str
    base: BaseConfig
    coverage: float
    runtime: float


@dataclass
class ReachabilityReport:
    scene: str
    methods: list
    delta: float
    fk_samples: int
    test_point_count: int
    seed: int

    def method(self, name: str) -> MethodResult:
        return next(m for m in self.methods if m.name == name)

    def table(self) -> str:
        rows = ["method\tcoverage_percent\truntime_s\tx\ty\tz\tomega"]
        for m in self.methods:
            rows.append("\t".join([
                m.name, f"{100 * m.coverage:.6g}", f"{m.runtime:.6g}",
                *(f"{v:.6g}" for v in m.base.as_array())]))
        return "\n".join(rows) + "\n"


def run_benchmark(scene: SceneSpec, chain: KinematicChain,
                  config: BenchmarkConfig | None = None,
                  models: SceneModels | None = None) -> ReachabilityReport:
    """Score random placement, the IK baseline, and the optimizer on one
    scene with identical test points and tolerance."""
    config = config or BenchmarkConfig()
    train = config.train or TrainConfig(seed=config.seed)
    if models is None:
        models = fit_scene_models(scene, train)
    solver_cfg = config.solver or SolverConfig(
        z_limits=scene.z_limits, omega_limits=scene.omega_limits, seed=config.seed)

    rng = np.random.default_rng(config.seed)
    roi_pts = models.roi_points.points
    idx = rng.choice(len(roi_pts), size=min(config.test_points, len(roi_pts)),
                     replace=False)
    test_pts = roi_pts[idx]
    # unconstrained fallback box for candidate placements
    xy_box = (models.roi_model.box_lo[:2] - 1.0, models.roi_model.box_hi[:2] + 1.0)

    def score(base):
        return coverage(chain, base, test_pts, config.fk_samples, config.delta,
                        seed=config.seed)

    methods = []

    t0 = time.perf_counter()
    base_rand = random_baseline(models.constraint_model, scene.z_limits,
                                scene.omega_limits, seed=config.seed,
                                tau=solver_cfg.threshold, xy_box=xy_box)
    t_rand = time.perf_counter() - t0
    methods.append(MethodResult("random", base_rand, score(base_rand), t_rand))

    t0 = time.perf_counter()
    base_ik = ik_baseline(models.roi_model, models.constraint_model, chain,
                          scene.z_limits, scene.omega_limits, seed=config.seed,
                          roi_samples=config.ik_roi_samples,
                          candidates=config.ik_candidates,
                          max_iters=config.ik_max_iters,
                          tau=solver_cfg.threshold, xy_box=xy_box)
    t_ik = time.perf_counter() - t0
    methods.append(MethodResult("ik", base_ik, score(base_ik), t_ik))

    t0 = time.perf_counter()
    result = solve_multistart(models.roi_model, models.constraint_model, chain,
                              solver_cfg, restarts=config.restarts)
    t_ours = time.perf_counter() - t0
    methods.append(MethodResult("ours", result.best, score(result.best), t_ours))

    return ReachabilityReport(scene.name, methods, config.delta,
                              config.fk_samples, len(test_pts), config.seed)
