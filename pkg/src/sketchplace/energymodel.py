"""Continuous region models: a small energy network trained by noise
contrast against uniform box samples.

The model maps a 2D or 3D point to a scalar energy; the sigmoid of that
energy estimates the probability that the point belongs to the sketched
region. Training discriminates region points from uniform negatives drawn
from a padded bounding box, which is the classic noise-contrastive recipe:
maximize sum(log sigmoid(E(x_i)) + log(1 - sigmoid(E(x_neg_i)))), i.e.
minimize the binary cross-entropy of the induced classifier.

Everything is plain numpy: forward, backward, and the AdamW update are
written out so that training is bit-for-bit reproducible from a seed and
the solver can differentiate energies with respect to inputs exactly.
Parameters are held in float32 (the serialized precision); inference casts
to float64 so finite-difference gradient checks hold to tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import struct

import numpy as np
from scipy.special import expit

from .errors import (
    ConfigurationError,
    DivergenceError,
    FormatError,
    InsufficientDataError,
    ShapeError,
)

MODEL_MAGIC = b"SDIM"
MODEL_VERSION = 1

_PARAM_ORDER = ("W1", "b1", "W2", "b2", "W3", "b3")
_NO_DECAY = ("b1", "b2", "b3")

# Fixed smooth nonlinearity: sharpened softplus, softplus_b(x) =
# softplus(b*x)/b with b = 2. Plain softplus (b = 1) turns out to be too
# smooth for this problem class: networks built from it fit the lowest
# spatial frequencies first and bridge across multi-region point sets for
# any feasible training budget, while very sharp variants dig deep moats
# around the data that corrupt the expected-energy landscape. b = 2 keeps
# the function C-infinity (the solver differentiates through it) while
# making fine structure affordable. The derivative is sigmoid(b*x), which
# the forward pass computes via tanh (much faster than cephes expit) and
# caches for backward. Plain Python scalar constants so float32 batches
# stay float32.
_BETA = 2.0
_INV_BETA = 1.0 / _BETA


def _act_parts(x):
    """Returns (softplus_b(x), sigmoid(b x)); the latter is the derivative."""
    bx = _BETA * x
    value = (np.maximum(bx, 0.0) + np.log1p(np.exp(-np.abs(bx)))) * _INV_BETA
    deriv = 0.5 * np.tanh(0.5 * bx) + 0.5
    return value, deriv


def _softplus(x):
    bx = _BETA * x
    return (np.maximum(bx, 0.0) + np.log1p(np.exp(-np.abs(bx)))) * _INV_BETA


@dataclass
class TrainConfig:
    """Hyperparameters for noise-contrastive fitting."""

    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 512
    epochs: int = 400
    padding: float = 0.5  # box expansion factor per axis for negatives
    negative_ratio: float = 1.0  # negatives per positive in each batch
    augment: float = 0.0  # per-epoch Gaussian jitter of positives (meters)
    seed: int = 0
    hidden: tuple[int, int] = (256, 256)
    dtype: str = "float32"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ConfigurationError("weight decay must be non-negative")
        if self.negative_ratio <= 0:
            raise ConfigurationError("negative ratio must be positive")
        if self.padding < 0:
            raise ConfigurationError("padding must be non-negative")
        if self.augment < 0:
            raise ConfigurationError("augment must be non-negative")


@dataclass(eq=False)
class EnergyModel:
    """Two-hidden-layer energy network with a stored input normalizer."""

    input_dim: int
    params: dict  # W1,b1,W2,b2,W3,b3 as float32 arrays
    center: np.ndarray  # (d,) float32
    scale: np.ndarray  # (d,) float32
    box_lo: np.ndarray  # (d,) sampling box the negatives were drawn from
    box_hi: np.ndarray
    data_lo: np.ndarray = None  # (d,) training-point bounding box
    data_hi: np.ndarray = None
    training_loss: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._p64 = None
        if self.data_lo is None:
            self.data_lo = self.box_lo
        if self.data_hi is None:
            self.data_hi = self.box_hi

    def params64(self) -> dict:
        if self._p64 is None:
            self._p64 = {k: np.asarray(v, dtype=np.float64) for k, v in self.params.items()}
        return self._p64

    @property
    def hidden(self) -> tuple[int, int]:
        return (self.params["W1"].shape[0], self.params["W2"].shape[0])


def _init_params(input_dim, hidden, rng, dtype):
    """Uniform fan-in initialization, one draw order for reproducibility."""
    sizes = [(hidden[0], input_dim), (hidden[1], hidden[0]), (1, hidden[1])]
    params = {}
    for i, (out, inp) in enumerate(sizes, start=1):
        bound = 1.0 / np.sqrt(inp)
        params[f"W{i}"] = rng.uniform(-bound, bound, (out, inp)).astype(dtype)
        params[f"b{i}"] = rng.uniform(-bound, bound, out).astype(dtype)
    return params


def _forward(params, X):
    h1 = X @ params["W1"].T + params["b1"]
    a1, s1 = _act_parts(h1)
    h2 = a1 @ params["W2"].T + params["b2"]
    a2, s2 = _act_parts(h2)
    e = a2 @ params["W3"].T + params["b3"]
    return e[:, 0], (X, s1, a1, s2, a2)


def _backward_input(params, cache, de):
    """Gradient of sum(de * e) w.r.t. the inputs only (solver hot path)."""
    X, s1, a1, s2, a2 = cache
    dh2 = (de[:, None] @ params["W3"]) * s2
    dh1 = (dh2 @ params["W2"]) * s1
    return dh1 @ params["W1"]


def _backward(params, cache, de):
    """Gradients of sum(de * e) w.r.t. parameters and inputs."""
    X, s1, a1, s2, a2 = cache
    d3 = de[:, None]
    grads = {"W3": d3.T @ a2, "b3": d3.sum(axis=0)}
    da2 = d3 @ params["W3"]
    dh2 = da2 * s2
    grads["W2"] = dh2.T @ a1
    grads["b2"] = dh2.sum(axis=0)
    da1 = dh2 @ params["W2"]
    dh1 = da1 * s1
    grads["W1"] = dh1.T @ X
    grads["b1"] = dh1.sum(axis=0)
    dX = dh1 @ params["W1"]
    return grads, dX


def _check_input(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.input_dim:
        raise ShapeError(f"expected points of dimension {model.input_dim}, got {X.shape[1]}")
    return X, single


def energy(model: EnergyModel, x) -> float | np.ndarray:
    """Evaluate the energy at one point or a batch of points (float64)."""
    X, single = _check_input(model, x)
    Xn = (X - model.center.astype(np.float64)) / model.scale.astype(np.float64)
    e, _ = _forward(model.params64(), Xn)
    return float(e[0]) if single else e


def membership_probability(model: EnergyModel, x) -> float | np.ndarray:
    """sigmoid(energy): the modeled probability of region membership."""
    e = energy(model, x)
    return expit(e)


def input_gradients(model: EnergyModel, x) -> np.ndarray:
    """d energy / d input, evaluated in float64. Shape matches the input."""
    X, single = _check_input(model, x)
    scale = model.scale.astype(np.float64)
    Xn = (X - model.center.astype(np.float64)) / scale
    p = model.params64()
    e, cache = _forward(p, Xn)
    dX = _backward_input(p, cache, np.ones_like(e)) / scale
    return dX[0] if single else dX


def energy_and_input_gradients(model: EnergyModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Batched energies plus input gradients in one forward/backward pass."""
    X, _ = _check_input(model, X)
    scale = model.scale.astype(np.float64)
    Xn = (X - model.center.astype(np.float64)) / scale
    p = model.params64()
    e, cache = _forward(p, Xn)
    dXn = _backward_input(p, cache, np.ones_like(e))
    return e, dXn / scale


@dataclass
class AdamWState:
    """First/second moment accumulators for decoupled weight decay."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params, **kwargs):
        zeros = lambda p: {k: np.zeros_like(v) for k, v in p.items()}
        return cls(m=zeros(params), v=zeros(params), **kwargs)


def adamw_step(params, grads, state: AdamWState, lr, wd):
    """In-place decoupled-decay Adam update; biases are never decayed."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if wd > 0 and name not in _NO_DECAY:
            update = update + wd * p
        p -= lr * update
    return params, state


def padded_box(points: np.ndarray, padding: float) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounding box expanded by ``padding`` times each extent.

    Zero-extent axes are widened to a fixed 0.1 m minimum.
    """
    pts = np.asarray(points, dtype=float)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    extent = hi - lo
    lo = lo - padding * extent
    hi = hi + padding * extent
    degenerate = extent < 1e-12
    lo[degenerate] -= 0.05
    hi[degenerate] += 0.05
    return lo, hi


def sample_negatives(points, count: int, padding: float, seed) -> np.ndarray:
    """Uniform samples from the padded bounding box of ``points``."""
    pts = getattr(points, "points", points)
    lo, hi = padded_box(pts, padding)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.uniform(lo, hi, (count, len(lo)))


def _normalizer(pts, lo, hi):
    """Zero-mean, unit-per-axis-scale map with floors.

    A near-degenerate axis is floored at a quarter of the widest axis
    spread (so no single axis dominates the classification problem) and
    at a twentieth of the sampling-box halfwidth (so negatives stay
    numerically conditioned).
    """
    center = pts.mean(axis=0)
    halfwidth = 0.5 * (hi - lo)
    std = pts.std(axis=0)
    floor = np.maximum(0.25 * std.max(), np.maximum(0.05 * halfwidth, 1e-9))
    return center, np.maximum(std, floor)


def _resolve_boxes(pts, config, box):
    """Negative-sampling regions as [(lo, hi, fraction)]; overall bounds."""
    if box is None:
        lo, hi = padded_box(pts, config.padding)
        return [(lo, hi, 1.0)], lo, hi
    if isinstance(box, (list,)):
        boxes = []
        for b in box:
            lo = np.asarray(b[0], dtype=np.float64)
            hi = np.asarray(b[1], dtype=np.float64)
            if (hi <= lo).any():
                raise ConfigurationError("sampling box must have positive extent")
            boxes.append((lo, hi, float(b[2])))
        total = sum(b[2] for b in boxes)
        if total <= 0:
            raise ConfigurationError("box fractions must sum to a positive value")
        boxes = [(lo, hi, f / total) for lo, hi, f in boxes]
        lo = np.min([b[0] for b in boxes], axis=0)
        hi = np.max([b[1] for b in boxes], axis=0)
        return boxes, lo, hi
    lo = np.asarray(box[0], dtype=np.float64)
    hi = np.asarray(box[1], dtype=np.float64)
    if (hi <= lo).any():
        raise ConfigurationError("sampling box must have positive extent")
    return [(lo, hi, 1.0)], lo, hi


def nce_fit(points, config: TrainConfig = None, box=None) -> EnergyModel:
    """Fit an energy model by noise-contrastive estimation.

    Positives are the given points; negatives are redrawn each epoch from
    the padded bounding box. ``box`` overrides the sampling region: either
    one (lo, hi) pair, or a weighted list [(lo, hi, fraction), ...] when a
    dense local box and a wide workspace box are both needed (small point
    sets cannot otherwise carve structure finer than the box). Mini-batch
    AdamW minimizes the binary cross-entropy. Raises ``DivergenceError``
    if the loss goes non-finite and ``InsufficientDataError`` below 16
    points.
    """
    config = config or TrainConfig()
    pts = np.asarray(getattr(points, "points", points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise ShapeError(f"training points must be (n, 2) or (n, 3), got {pts.shape}")
    n, dim = pts.shape
    if n < 16:
        raise InsufficientDataError(f"need >= 16 points to fit, got {n}")

    dtype = np.dtype(config.dtype)
    rng = np.random.default_rng(config.seed)
    boxes, lo, hi = _resolve_boxes(pts, config, box)
    center, scale = _normalizer(pts, lo, hi)

    pos = ((pts - center) / scale).astype(dtype)
    boxes_n = [(((blo - center) / scale), ((bhi - center) / scale), f)
               for blo, bhi, f in boxes]

    params = _init_params(dim, config.hidden, rng, dtype)
    state = AdamWState.init(params)
    n_neg_epoch = int(np.ceil(config.negative_ratio * n))
    counts = [int(round(f * n_neg_epoch)) for _, _, f in boxes_n]
    counts[-1] = n_neg_epoch - sum(counts[:-1])
    history = []

    aug_n = (config.augment / scale).astype(np.float64) if config.augment > 0 else None

    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        if len(boxes_n) == 1:
            negs = rng.uniform(boxes_n[0][0], boxes_n[0][1], (n_neg_epoch, dim))
        else:
            negs = np.concatenate([rng.uniform(blo, bhi, (c, dim))
                                   for (blo, bhi, _), c in zip(boxes_n, counts)])
            rng.shuffle(negs)
        negs = negs.astype(dtype)
        if aug_n is None:
            epos = pos
        else:
            epos = (pos + rng.normal(0.0, aug_n, (n, dim))).astype(dtype)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            bpos = epos[perm[start:start + config.batch_size]]
            ns = int(round(start * config.negative_ratio))
            ne = int(round((start + len(bpos)) * config.negative_ratio))
            bneg = negs[ns:ne]
            X = np.concatenate([bpos, bneg])
            y = np.zeros(len(X), dtype=dtype)
            y[:len(bpos)] = 1.0
            e, cache = _forward(params, X)
            # mean BCE: softplus(-e) for positives, softplus(e) for negatives
            loss = float(np.mean(np.logaddexp(0.0, np.where(y > 0, -e, e))))
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            de = ((expit(e) - y) / len(X)).astype(dtype)
            grads, _ = _backward(params, cache, de)
            adamw_step(params, grads, state, config.learning_rate, config.weight_decay)
            epoch_loss += loss
            n_batches += 1
        history.append(epoch_loss / max(n_batches, 1))

    model = EnergyModel(
        input_dim=dim,
        params={k: v.astype(np.float32) for k, v in params.items()},
        center=center.astype(np.float32),
        scale=scale.astype(np.float32),
        box_lo=lo.astype(np.float32),
        box_hi=hi.astype(np.float32),
        data_lo=pts.min(axis=0).astype(np.float32),
        data_hi=pts.max(axis=0).astype(np.float32),
    )
    model.training_loss = history
    return model


def save_model(path, model: EnergyModel):
    """Versioned binary serialization; round-trips bitwise."""
    h1, h2 = model.hidden
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IIII", MODEL_VERSION, model.input_dim, h1, h2))
        for name in _PARAM_ORDER:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f4").tobytes())
        for arr in (model.center, model.scale, model.box_lo, model.box_hi,
                    model.data_lo, model.data_hi):
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_model(path) -> EnergyModel:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise FormatError(f"{path}: not an energy model file")
        version, dim, h1, h2 = struct.unpack("<IIII", fh.read(16))
        if version != MODEL_VERSION:
            raise FormatError(f"{path}: unsupported model version {version}")

        def take(shape):
            count = int(np.prod(shape))
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise FormatError(f"{path}: truncated model file")
            return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

        params = {
            "W1": take((h1, dim)), "b1": take((h1,)),
            "W2": take((h2, h1)), "b2": take((h2,)),
            "W3": take((1, h2)), "b3": take((1,)),
        }
        center, scale, lo, hi, dlo, dhi = (take((dim,)) for _ in range(6))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes in model file")
    return EnergyModel(dim, params, center, scale, lo, hi, dlo, dhi)
