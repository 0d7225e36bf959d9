"""Density-estimation comparators: Gaussian KDE and full-covariance GMMs.

These exist to rank the energy-model representation against classical
estimators by held-out per-sample log-likelihood. The energy model is
unnormalized, so its log-likelihood uses a partition-function estimate
from uniform importance sampling over its negative-sampling box (reported
as an estimate; the standard error is available from the estimator).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .energymodel import EnergyModel, energy
from .errors import ConfigurationError, InsufficientDataError, ShapeError


@dataclass(eq=False)
class KdeModel:
    """Gaussian kernel density with a shared isotropic bandwidth."""

    points: np.ndarray  # (n, d)
    bandwidth: float
    degenerate: bool = False  # zero-variance training data

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.bandwidth <= 0:
            raise ConfigurationError("bandwidth must be positive")

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass(eq=False)
class GmmModel:
    """Mixture of full-covariance Gaussians."""

    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, d)
    covariances: np.ndarray  # (k, d, d)
    log_likelihood_history: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.covariances = np.asarray(self.covariances, dtype=float)
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ConfigurationError("mixture weights must sum to 1")
        for c in self.covariances:
            np.linalg.cholesky(c)  # SPD check

    @property
    def k(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]


def kde_log_density(model: KdeModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dim:
        raise ShapeError(f"expected dimension {model.dim}, got {X.shape[1]}")
    n, d = model.points.shape
    h2 = model.bandwidth ** 2
    const = -np.log(n) - 0.5 * d * np.log(2 * np.pi * h2)
    out = np.empty(len(X))
    chunk = max(1, int(2e7 // max(n, 1)))
    for s in range(0, len(X), chunk):
        diff = X[s:s + chunk, None, :] - model.points[None, :, :]
        sq = np.einsum("mnd,mnd->mn", diff, diff)
        out[s:s + chunk] = logsumexp(-0.5 * sq / h2, axis=1) + const
    return out


def default_bandwidth_grid(points: np.ndarray, size: int = 20) -> np.ndarray:
    """Log-spaced grid over [0.01, 1.0] times the data scale."""
    scale = float(np.asarray(points, dtype=float).std(axis=0).mean())
    if scale < 1e-12:
        scale = 1.0
    return scale * np.logspace(np.log10(0.01), 0.0, size)


def kde_fit(points, bandwidth_grid=None, holdout: float = 0.2, seed: int = 0) -> KdeModel:
    """Pick the grid bandwidth with the best held-out mean log-likelihood,
    then refit on all points."""
    pts = np.asarray(getattr(points, "points", points), dtype=float)
    if len(pts) < 2:
        raise InsufficientDataError("KDE needs at least 2 points")
    if bandwidth_grid is None:
        bandwidth_grid = default_bandwidth_grid(pts)
    grid = np.asarray(bandwidth_grid, dtype=float)
    if grid.size == 0:
        raise ConfigurationError("bandwidth grid is empty")
    if (grid <= 0).any():
        raise ConfigurationError("bandwidths must be positive")

    if pts.std(axis=0).max() < 1e-12:
        return KdeModel(pts, float(grid.min()), degenerate=True)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(pts))
    n_hold = max(1, int(round(holdout * len(pts))))
    hold, train = pts[perm[:n_hold]], pts[perm[n_hold:]]
    scores = [kde_log_density(KdeModel(train, float(h)), hold).mean() for h in grid]
    best = float(grid[int(np.argmax(scores))])
    return KdeModel(pts, best)


def _log_gaussians(X, means, covariances):
    """(m, k) log densities of X under each component."""
    m, d = X.shape
    k = len(means)
    out = np.empty((m, k))
    for j in range(k):
        L = np.linalg.cholesky(covariances[j])
        diff = (X - means[j]).T
        sol = np.linalg.solve(L, diff)
        out[:, j] = (-0.5 * np.sum(sol * sol, axis=0)
                     - np.log(np.diag(L)).sum()
                     - 0.5 * d * np.log(2 * np.pi))
    return out


def gmm_log_density(model: GmmModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dim:
        raise ShapeError(f"expected dimension {model.dim}, got {X.shape[1]}")
    lg = _log_gaussians(X, model.means, model.covariances)
    return logsumexp(lg + np.log(model.weights), axis=1)


def _kmeans_pp(X, k, rng):
    centers = [X[rng.integers(len(X))]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(k - 1):
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(len(X))])
            continue
        idx = rng.choice(len(X), p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - centers[-1]) ** 2, axis=1))
    return np.array(centers)


def gmm_fit(points, k: int, seed: int = 0, max_iters: int = 500,
            tol: float = 1e-6, reg: float = 1e-6) -> GmmModel:
    """EM with kmeans++ seeding and per-step covariance regularization.

    Stops when the mean log-likelihood gain drops below ``tol`` (or at
    ``max_iters``); the per-iteration history is kept on the model.
    """
    X = np.asarray(getattr(points, "points", points), dtype=float)
    n, d = X.shape
    if n < k:
        raise InsufficientDataError(f"GMM with k={k} needs at least {k} points, got {n}")
    rng = np.random.default_rng(seed)

    means = _kmeans_pp(X, k, rng)
    global_cov = np.cov(X.T, bias=True).reshape(d, d) + reg * np.eye(d)
    covs = np.repeat(global_cov[None], k, axis=0)
    weights = np.full(k, 1.0 / k)

    history = []
    prev = -np.inf
    for _ in range(max_iters):
        lg = _log_gaussians(X, means, covs) + np.log(weights)
        norm = logsumexp(lg, axis=1)
        ll = float(norm.mean())
        history.append(ll)
        if ll - prev < tol:
            break
        prev = ll
        resp = np.exp(lg - norm[:, None])
        nk = resp.sum(axis=0)
        alive = nk > 1e-8
        weights = nk / n
        weights = weights / weights.sum()
        new_means = means.copy()
        new_covs = covs.copy()
        for j in np.nonzero(alive)[0]:
            mu = resp[:, j] @ X / nk[j]
            diff = X - mu
            cov = (resp[:, j][:, None] * diff).T @ diff / nk[j]
            new_means[j] = mu
            new_covs[j] = 0.5 * (cov + cov.T) + reg * np.eye(d)
        means, covs = new_means, new_covs

    model = GmmModel(weights, means, covs)
    model.log_likelihood_history = history
    return model


def ebm_log_partition(model: EnergyModel, n_samples: int = 200_000,
                      seed: int = 0) -> tuple[float, float]:
    """Importance-sampled log partition function over the model's box.

    Returns (log Z, standard error of log Z). The density is effectively
    truncated to the negative-sampling box.
    """
    rng = np.random.default_rng(seed)
    lo = model.box_lo.astype(float)
    hi = model.box_hi.astype(float)
    u = rng.uniform(lo, hi, (n_samples, model.input_dim))
    e = energy(model, u)
    log_volume = float(np.log(hi - lo).sum())
    log_z = log_volume + logsumexp(e) - np.log(n_samples)
    w = np.exp(e - e.max())
    se = float(w.std() / (np.sqrt(n_samples) * w.mean()))
    return float(log_z), se


def log_likelihood(model, test_points, seed: int = 0) -> float:
    """Mean per-sample log-likelihood of test points under any fitted model."""
    X = np.atleast_2d(np.asarray(getattr(test_points, "points", test_points), dtype=float))
    if len(X) == 0:
        raise ConfigurationError("test points must be non-empty")
    if isinstance(model, KdeModel):
        return float(kde_log_density(model, X).mean())
    if isinstance(model, GmmModel):
        return float(gmm_log_density(model, X).mean())
    if isinstance(model, EnergyModel):
        if X.shape[1] != model.input_dim:
            raise ShapeError(f"expected dimension {model.input_dim}, got {X.shape[1]}")
        log_z, _ = ebm_log_partition(model, seed=seed)
        return float(np.mean(energy(model, X)) - log_z)
    raise ConfigurationError(f"unsupported model type {type(model).__name__}")
