"""Base-placement optimizer: stochastic gradient ascent on the expected
energy of end-effector positions, with box clamps on height and yaw and a
Newton projection onto the permissible-region contour.

The objective for a base configuration C = (x, y, z, omega) is

    E_hat(C) = (1/N) * sum_i energy(f(q_i | C))

over joint samples q_i drawn uniformly within limits. Its gradient
decomposes through the chain rule into the model's input gradient times
the base Jacobian, so each iteration costs one batched forward/backward
pass. Feasibility in (x, y) is the sigma(G) >= tau level set of a 2D
constraint model; infeasible iterates are pulled back to the contour
G = logit(tau) by Newton steps on the pre-sigmoid residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .energymodel import (
    EnergyModel,
    energy,
    energy_and_input_gradients,
    input_gradients,
    membership_probability,
)
from .errors import (
    ConfigurationError,
    DivergenceError,
    InfeasibleError,
    ShapeError,
    StationaryPointError,
)
from .kinematics import (
    BaseConfig,
    KinematicChain,
    drot_z,
    forward_batch,
    reach,
    rot_z,
    sample_joints,
)


def logit(p: float) -> float:
    """Inverse sigmoid."""
    return float(np.log(p / (1.0 - p)))


@dataclass
class SolverConfig:
    """Optimizer hyperparameters (defaults follow the benchmark setup)."""

    step_size: float = 0.005  # gradient ascent step alpha
    joint_samples: int = 1024  # N per iteration
    iterations: int = 40  # outer loop length
    projection_iterations: int = 20  # Newton steps budget
    projection_tolerance: float = 1e-3  # pre-sigmoid residual epsilon
    threshold: float = 0.95  # tau: minimum membership probability
    z_limits: tuple = (0.15, 0.42)
    omega_limits: tuple = (0.0, 2 * np.pi)
    resampling: str = "fresh"  # fresh: new joints per step; fixed: one draw
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ConfigurationError("step size must be positive")
        if self.joint_samples < 1:
            raise ConfigurationError("need at least one joint sample")
        if not (0.0 < self.threshold < 1.0):
            raise ConfigurationError("threshold must be in (0, 1)")
        if self.projection_tolerance <= 0:
            raise ConfigurationError("projection tolerance must be positive")
        if self.resampling not in ("fresh", "fixed"):
            raise ConfigurationError("resampling must be 'fresh' or 'fixed'")


@dataclass
class TraceEntry:
    iteration: int
    x: float
    y: float
    z: float
    omega: float
    energy: float
    grad_norm: float
    projected: bool
    projection_iters: int
    projection_converged: bool


@dataclass
class SolveTrace:
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def configs(self):
        return [BaseConfig(e.x, e.y, e.z, e.omega) for e in self.entries]

    def table(self) -> str:
        """Delimited text export (tab-separated, 6 significant digits)."""
        rows = ["iteration\tx\ty\tz\tomega\tenergy\tgrad_norm\tprojected\tprojection_iters"]
        for e in self.entries:
            rows.append("\t".join([
                str(e.iteration),
                *(f"{v:.6g}" for v in (e.x, e.y, e.z, e.omega, e.energy, e.grad_norm)),
                str(int(e.projected)), str(e.projection_iters)]))
        return "\n".join(rows) + "\n"


@dataclass
class ProjectionResult:
    point: np.ndarray
    converged: bool
    iterations: int


def expected_energy(model: EnergyModel, chain: KinematicChain, base: BaseConfig,
                    joints: np.ndarray) -> float:
    """Monte-Carlo mean energy of end-effector positions."""
    joints = np.asarray(joints, dtype=float)
    if joints.size == 0:
        raise ConfigurationError("empty joint sample list")
    positions = forward_batch(chain, joints, base)
    return float(np.mean(energy(model, positions)))


def expected_energy_gradient(model: EnergyModel, chain: KinematicChain, base: BaseConfig,
                             joints: np.ndarray) -> np.ndarray:
    """Gradient of the expected energy w.r.t. (x, y, z, omega)."""
    return _energy_and_gradient(model, chain, base, np.asarray(joints, dtype=float))[1]


def _energy_and_gradient(model, chain, base, joints):
    """One shared forward/backward pass for E_hat and its 4-gradient."""
    if joints.size == 0:
        raise ConfigurationError("empty joint sample list")
    if model.input_dim != 3:
        raise ShapeError("expected a 3D region model for the objective")
    p_arm = forward_batch(chain, joints)  # arm frame
    Rw = rot_z(base.omega)
    p_world = p_arm @ Rw.T + np.array([base.x, base.y, base.z])
    e, g = energy_and_input_gradients(model, p_world)
    grad = np.empty(4)
    grad[:3] = g.mean(axis=0)
    dp_domega = p_arm @ drot_z(base.omega).T
    grad[3] = float(np.mean(np.sum(g * dp_domega, axis=1)))
    return float(np.mean(e)), grad


def project_to_boundary(constraint: EnergyModel, p, tau: float = 0.95,
                        max_iters: int = 20, tol: float = 1e-3) -> ProjectionResult:
    """Newton-project a 2D point onto the contour G(p) = logit(tau).

    Exits immediately when the residual is already within ``tol`` (zero
    iterations); otherwise steps ``p -= g / |g|^2 * residual`` up to
    ``max_iters`` times. Raises ``StationaryPointError`` when the gradient
    vanishes at an iterate.
    """
    if constraint.input_dim != 2:
        raise ShapeError("constraint model must be 2D")
    p = np.asarray(p, dtype=float).reshape(2).copy()
    target = logit(tau)
    iters = 0
    for _ in range(max_iters):
        resid = energy(constraint, p) - target
        if abs(resid) <= tol:
            return ProjectionResult(p, True, iters)
        g = input_gradients(constraint, p)
        norm2 = float(g @ g)
        if norm2 < 1e-24:
            raise StationaryPointError(
                f"constraint gradient vanished at ({p[0]:.6g}, {p[1]:.6g})")
        p -= (resid / norm2) * g
        iters += 1
    converged = abs(energy(constraint, p) - target) <= tol
    return ProjectionResult(p, converged, iters)


def solve_mbpp(roi_model: EnergyModel, constraint_model: EnergyModel | None,
               chain: KinematicChain, config: SolverConfig,
               initial: BaseConfig) -> tuple[BaseConfig, SolveTrace]:
    """Projected stochastic gradient ascent from one initial configuration.

    Per iteration: sample N joints, step C by alpha * grad E_hat, clamp z
    and omega to their boxes, and if the (x, y) membership probability
    falls below tau, Newton-project back to the contour. A projection that
    fails (stationary point or non-convergence) rejects the step's (x, y)
    motion so the iterate stays feasible.
    """
    trace = SolveTrace()
    rng = np.random.default_rng(config.seed)
    C = initial.as_array()
    if not np.isfinite(C).all():
        raise ConfigurationError("initial configuration must be finite")
    joints = None
    if config.resampling == "fixed":
        joints = sample_joints(chain, config.joint_samples, rng)

    for it in range(1, config.iterations + 1):
        if config.resampling == "fresh":
            joints = sample_joints(chain, config.joint_samples, rng)
        e_hat, grad = _energy_and_gradient(
            roi_model, chain, BaseConfig.from_array(C), joints)
        if not np.isfinite(e_hat):
            err = DivergenceError(f"non-finite expected energy at iteration {it}")
            err.trace = trace
            raise err
        prev_xy = C[:2].copy()
        C = C + config.step_size * grad
        C[2] = np.clip(C[2], *config.z_limits)
        C[3] = np.clip(C[3], *config.omega_limits)
        projected = False
        proj_iters = 0
        proj_ok = True
        if constraint_model is not None and \
                membership_probability(constraint_model, C[:2]) < config.threshold:
            projected = True
            try:
                res = project_to_boundary(
                    constraint_model, C[:2], config.threshold,
                    config.projection_iterations, config.projection_tolerance)
                proj_iters = res.iterations
                proj_ok = res.converged
                C[:2] = res.point if res.converged else prev_xy
            except StationaryPointError:
                proj_ok = False
                C[:2] = prev_xy
        trace.entries.append(TraceEntry(
            it, *(float(v) for v in C), e_hat, float(np.linalg.norm(grad)),
            projected, proj_iters, proj_ok))
    return BaseConfig.from_array(C), trace


def sample_initial(roi_model: EnergyModel, constraint_model: EnergyModel | None,
                   chain: KinematicChain, config: SolverConfig,
                   rng: np.random.Generator, max_tries: int = 1000) -> BaseConfig:
    """Draw a feasible starting configuration.

    Constrained: rejection-sample (x, y) until the membership probability
    clears tau. Unconstrained: uniform over the region model's box in x, y
    inflated by the arm's reach.
    """
    z = rng.uniform(*config.z_limits)
    omega = rng.uniform(*config.omega_limits)
    if constraint_model is not None:
        lo, hi = constraint_model.box_lo, constraint_model.box_hi
        block = 128
        for _ in range(0, max_tries, block):
            xy = rng.uniform(lo, hi, (block, 2))
            ok = np.nonzero(
                membership_probability(constraint_model, xy) >= config.threshold)[0]
            if len(ok):
                pick = xy[ok[0]]
                return BaseConfig(float(pick[0]), float(pick[1]), z, omega)
        raise InfeasibleError(
            f"no feasible initial found in {max_tries} rejection samples")
    span = reach(chain, samples=8192, seed=0)
    lo = roi_model.data_lo[:2].astype(float) - span
    hi = roi_model.data_hi[:2].astype(float) + span
    xy = rng.uniform(lo, hi)
    return BaseConfig(float(xy[0]), float(xy[1]), z, omega)


@dataclass
class MultistartResult:
    best: BaseConfig
    best_energy: float
    finals: list
    final_energies: list
    traces: list


def solve_multistart(roi_model: EnergyModel, constraint_model: EnergyModel | None,
                     chain: KinematicChain, config: SolverConfig,
                     restarts: int = 8) -> MultistartResult:
    """Run seeded restarts and keep the best final configuration.

    Final candidates are re-scored on one shared 8192-sample joint set so
    the argmax is not skewed by per-run estimator noise.
    """
    if restarts < 1:
        raise ConfigurationError("restarts must be >= 1")
    rng = np.random.default_rng(config.seed)
    eval_joints = sample_joints(chain, 8192, rng)
    finals = []
    energies = []
    traces = []
    for _ in range(restarts):
        initial = sample_initial(roi_model, constraint_model, chain, config, rng)
        sub_seed = int(rng.integers(0, 2**31 - 1))
        final, trace = solve_mbpp(roi_model, constraint_model, chain,
                                  replace(config, seed=sub_seed), initial)
        finals.append(final)
        traces.append(trace)
        energies.append(expected_energy(roi_model, chain, final, eval_joints))
    best_idx = int(np.argmax(energies))
    return MultistartResult(finals[best_idx], energies[best_idx], finals,
                            energies, traces)
