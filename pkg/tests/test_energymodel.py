import numpy as np
import pytest
from scipy.special import expit, logit

import sketchplace.energymodel as em
from sketchplace.datasets import ShapeSpec, generate_shape
from sketchplace.energymodel import (
    AdamWState,
    EnergyModel,
    TrainConfig,
    adamw_step,
    energy,
    input_gradients,
    load_model,
    membership_probability,
    nce_fit,
    padded_box,
    sample_negatives,
    save_model,
)
from sketchplace.errors import (
    ConfigurationError,
    DivergenceError,
    FormatError,
    InsufficientDataError,
    ShapeError,
)

from helpers import central_difference


def tiny_model(dim=3, hidden=(4, 4), seed=0, zero_output=False):
    rng = np.random.default_rng(seed)
    params = em._init_params(dim, hidden, rng, np.float32)
    if zero_output:
        params["W3"][:] = 0
        params["b3"][:] = 0
    ones = np.ones(dim, dtype=np.float32)
    return EnergyModel(dim, params, np.zeros(dim, dtype=np.float32), ones,
                       -ones, ones)


class TestEnergy:
    def test_zero_output_layer_gives_zero(self):
        model = tiny_model(zero_output=True)
        assert energy(model, [0.3, -0.2, 0.9]) == 0.0

    def test_deterministic_repeated_calls(self):
        model = tiny_model()
        x = [0.1, 0.2, 0.3]
        assert energy(model, x) == energy(model, x)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            energy(tiny_model(dim=3), [1.0, 2.0])

    def test_trained_cuboid_centroid_beats_far_point(self, shape_model_cache):
        spec, pts, model = shape_model_cache("cuboid")
        centroid = pts.points.mean(axis=0)
        far = centroid + np.array([3 * spec.extents[0], 0, 0])
        assert energy(model, centroid) > energy(model, far)

    def test_batch_matches_scalar(self):
        model = tiny_model()
        X = np.random.default_rng(1).normal(size=(17, 3))
        batch = energy(model, X)
        for i in range(17):
            assert batch[i] == pytest.approx(energy(model, X[i]), abs=1e-12)


class TestMembershipProbability:
    def test_sigmoid_of_zero(self):
        model = tiny_model(zero_output=True)
        assert membership_probability(model, [0.0, 0.0, 0.0]) == 0.5

    def test_ln19_gives_095(self):
        # sigma(ln 19) = 19/20 by algebra
        assert expit(np.log(19.0)) == pytest.approx(0.95, abs=1e-12)
        model = tiny_model()
        e = energy(model, [0.2, 0.1, -0.3])
        p = membership_probability(model, [0.2, 0.1, -0.3])
        assert p == pytest.approx(expit(e), abs=1e-15)

    def test_monotone_in_energy(self):
        model = tiny_model(seed=3)
        rng = np.random.default_rng(5)
        X = rng.normal(size=(30, 3))
        e = energy(model, X)
        p = membership_probability(model, X)
        order = np.argsort(e)
        assert (np.diff(p[order]) >= 0).all()

    def test_strictly_inside_unit_interval(self):
        model = tiny_model(seed=2)
        p = membership_probability(model, np.random.default_rng(0).normal(size=(50, 3)))
        assert ((p > 0) & (p < 1)).all()


class TestSampleNegatives:
    def test_unit_cube_padding_half(self):
        pts = np.array([[0, 0, 0], [1, 1, 1.0]])
        neg = sample_negatives(pts, 5000, padding=0.5, seed=0)
        assert (neg >= -0.5).all() and (neg <= 1.5).all()

    def test_zero_padding_tight(self):
        pts = np.random.default_rng(2).uniform(0, 1, (100, 3))
        neg = sample_negatives(pts, 1000, padding=0.0, seed=0)
        assert (neg >= pts.min(0)).all() and (neg <= pts.max(0)).all()

    def test_zero_extent_axis_expanded(self):
        pts = np.array([[0, 0, 0.5], [1, 1, 0.5]])
        lo, hi = padded_box(pts, 0.0)
        assert hi[2] - lo[2] == pytest.approx(0.1)
        neg = sample_negatives(pts, 500, padding=0.0, seed=1)
        assert (np.abs(neg[:, 2] - 0.5) <= 0.05).all()

    def test_law_of_large_numbers_mean(self):
        pts = np.array([[0, 0, 0], [1, 2, 3.0]])
        neg = sample_negatives(pts, 100_000, padding=0.0, seed=3)
        np.testing.assert_allclose(neg.mean(axis=0), [0.5, 1.0, 1.5], atol=0.01)

    def test_deterministic(self):
        pts = np.random.default_rng(0).uniform(size=(10, 2))
        a = sample_negatives(pts, 64, 0.5, seed=42)
        b = sample_negatives(pts, 64, 0.5, seed=42)
        np.testing.assert_array_equal(a, b)


class TestAdamW:
    def test_zero_grad_zero_decay_fixed_point(self):
        params = {"W1": np.ones((2, 2)), "b1": np.zeros(2)}
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        state = AdamWState.init(params)
        before = {k: v.copy() for k, v in params.items()}
        for _ in range(5):
            adamw_step(params, grads, state, lr=0.1, wd=0.0)
        for k in params:
            np.testing.assert_array_equal(params[k], before[k])

    def test_first_step_bias_corrected(self):
        params = {"W1": np.array([1.0])}
        grads = {"W1": np.array([1.0])}
        state = AdamWState.init(params)
        adamw_step(params, grads, state, lr=0.1, wd=0.0)
        # bias-corrected m-hat = v-hat = 1 on step one, so the step is ~lr
        assert params["W1"][0] == pytest.approx(0.9, abs=1e-6)

    def test_decay_only_shrinks_weights_multiplicatively(self):
        params = {"W1": np.array([2.0]), "b1": np.array([2.0])}
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        state = AdamWState.init(params)
        lr, wd = 0.01, 0.1
        for _ in range(3):
            adamw_step(params, grads, state, lr, wd)
        assert params["W1"][0] == pytest.approx(2.0 * (1 - lr * wd) ** 3)
        assert params["b1"][0] == 2.0  # biases are never decayed

    def test_shape_mismatch(self):
        params = {"W1": np.zeros((2, 2))}
        grads = {"W1": np.zeros(3)}
        with pytest.raises(ShapeError):
            adamw_step(params, grads, AdamWState.init(params), 0.1, 0.0)


class TestNceFit:
    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            nce_fit(np.zeros((10, 3)), TrainConfig(epochs=1))

    def test_loss_strictly_decreases_first_10_steps(self, shape_model_cache):
        for kind in ("cuboid", "plane", "circle", "plane+circle", "star"):
            spec, pts, _ = shape_model_cache(kind)
            rng = np.random.default_rng(0)
            params = em._init_params(3, (256, 256), rng, np.float64)
            state = AdamWState.init(params)
            lo, hi = padded_box(pts.points, 0.5)
            center, scale = em._normalizer(pts.points, lo, hi)
            pos = (pts.points[:512] - center) / scale
            neg = (rng.uniform(lo, hi, (512, 3)) - center) / scale
            X = np.concatenate([pos, neg])
            y = np.zeros(len(X))
            y[:len(pos)] = 1.0
            losses = []
            for _ in range(10):
                e, cache = em._forward(params, X)
                losses.append(float(np.mean(np.logaddexp(0.0, np.where(y > 0, -e, e)))))
                de = (expit(e) - y) / len(X)
                grads, _ = em._backward(params, cache, de)
                adamw_step(params, grads, state, 1e-3, 1e-4)
            assert all(b < a for a, b in zip(losses, losses[1:])), (kind, losses)

    def test_bitwise_deterministic(self):
        pts = generate_shape(ShapeSpec("plane", count=600, seed=4)).points
        cfg = TrainConfig(seed=11, epochs=5)
        m1 = nce_fit(pts, cfg)
        m2 = nce_fit(pts, cfg)
        for k in m1.params:
            np.testing.assert_array_equal(m1.params[k], m2.params[k])

    def test_plane_quality(self, shape_model_cache):
        spec, pts, model = shape_model_cache("plane")
        held_out = generate_shape(ShapeSpec("plane", count=1000, seed=100)).points
        assert membership_probability(model, held_out).mean() > 0.9
        # fresh negatives well outside the plane slab
        rng = np.random.default_rng(7)
        lo, hi = model.box_lo.astype(float), model.box_hi.astype(float)
        neg = rng.uniform(lo, hi, (4000, 3))
        outside = neg[np.abs(neg[:, 2]) > 8 * spec.noise]
        assert membership_probability(model, outside).mean() < 0.2

    def test_indistinguishable_classes_given_chance_accuracy(self):
        # positives drawn from the same uniform box as the negatives
        rng = np.random.default_rng(8)
        pts = rng.uniform(-1, 1, (2000, 3))
        model = nce_fit(pts, TrainConfig(seed=0, epochs=40, padding=0.0))
        test_pos = rng.uniform(-1, 1, (2000, 3))
        test_neg = sample_negatives(pts, 2000, 0.0, seed=9)
        acc = 0.5 * (membership_probability(model, test_pos) > 0.5).mean() \
            + 0.5 * (membership_probability(model, test_neg) <= 0.5).mean()
        assert acc == pytest.approx(0.5, abs=0.05)

    def test_plane_circle_bimodal(self, shape_model_cache):
        # two high-probability modes with a low-probability gap between them;
        # the ring's on-manifold representatives stand in for its centroid,
        # which by construction lies off the data
        spec, pts, model = shape_model_cache("plane+circle")
        lx, ly, radius, sep = spec.extents
        plane_centroid = np.array([-sep / 2, 0, 0])
        ring_points = np.array([[sep / 2 + radius, 0, 0], [sep / 2 - radius, 0, 0]])
        midpoint = np.zeros(3)
        assert membership_probability(model, plane_centroid) > 0.8
        assert (membership_probability(model, ring_points) > 0.8).all()
        assert membership_probability(model, midpoint) < 0.3

    def test_divergence_reported_with_epoch(self):
        pts = np.random.default_rng(0).uniform(size=(100, 3))
        with pytest.raises(DivergenceError) as err:
            nce_fit(pts, TrainConfig(seed=0, epochs=3, learning_rate=1e30))
        assert err.value.epoch is not None

    def test_shape_accuracy_all_five(self, shape_model_cache):
        # held-out classification accuracy >= 0.9 on every shape dataset
        for kind in ("cuboid", "plane", "circle", "plane+circle", "star"):
            spec, pts, model = shape_model_cache(kind)
            held = generate_shape(ShapeSpec(kind, count=1500, seed=55)).points
            neg = sample_negatives(pts.points, 1500, 0.5, seed=56)
            acc = 0.5 * (membership_probability(model, held) > 0.5).mean() \
                + 0.5 * (membership_probability(model, neg) <= 0.5).mean()
            assert acc >= 0.9, (kind, acc)


class TestGradients:
    def test_input_gradients_match_fd_3d(self, shape_model_cache):
        _, _, model = shape_model_cache("cuboid")
        rng = np.random.default_rng(21)
        lo, hi = model.box_lo.astype(float), model.box_hi.astype(float)
        X = rng.uniform(lo, hi, (100, 3))
        G = input_gradients(model, X)
        for i in range(100):
            fd = central_difference(lambda v: energy(model, v), X[i], h=1e-4)
            denom = max(np.abs(fd).max(), 1e-8)
            assert np.abs(G[i] - fd).max() / denom <= 1e-3

    def test_input_gradients_match_fd_2d(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(0, 0.3, (400, 2))
        model = nce_fit(pts, TrainConfig(seed=1, epochs=30))
        X = rng.uniform(-0.5, 0.5, (100, 2))
        G = input_gradients(model, X)
        for i in range(100):
            fd = central_difference(lambda v: energy(model, v), X[i], h=1e-4)
            denom = max(np.abs(fd).max(), 1e-8)
            assert np.abs(G[i] - fd).max() / denom <= 1e-3

    def test_parameter_gradients_match_fd_width4(self):
        # miniature float64 network so finite differences resolve 1e-4
        rng = np.random.default_rng(10)
        params = em._init_params(3, (4, 4), rng, np.float64)
        X = rng.normal(size=(8, 3))
        y = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=float)

        def loss_fn(p):
            e, _ = em._forward(p, X)
            return float(np.mean(np.logaddexp(0.0, np.where(y > 0, -e, e))))

        e, cache = em._forward(params, X)
        de = (expit(e) - y) / len(X)
        grads, _ = em._backward(params, cache, de)
        for name, g in grads.items():
            flat = params[name].ravel()
            for idx in range(flat.size):
                orig = flat[idx]
                h = 1e-6
                flat[idx] = orig + h
                up = loss_fn(params)
                flat[idx] = orig - h
                down = loss_fn(params)
                flat[idx] = orig
                fd = (up - down) / (2 * h)
                denom = max(abs(fd), 1e-10)
                assert abs(g.ravel()[idx] - fd) / denom <= 1e-4, name


class TestSerialization:
    def test_round_trip_bitwise(self, tmp_path, shape_model_cache):
        _, _, model = shape_model_cache("circle")
        p1 = tmp_path / "m.sdim"
        p2 = tmp_path / "m2.sdim"
        save_model(p1, model)
        again = load_model(p1)
        save_model(p2, again)
        assert p1.read_bytes() == p2.read_bytes()
        x = [0.1, 0.2, 0.0]
        assert energy(again, x) == energy(model, x)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.sdim"
        p.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(FormatError):
            load_model(p)

    def test_truncated(self, tmp_path, shape_model_cache):
        _, _, model = shape_model_cache("circle")
        p = tmp_path / "m.sdim"
        save_model(p, model)
        (tmp_path / "t.sdim").write_bytes(p.read_bytes()[:100])
        with pytest.raises(FormatError):
            load_model(tmp_path / "t.sdim")

    def test_trailing_bytes(self, tmp_path, shape_model_cache):
        _, _, model = shape_model_cache("circle")
        p = tmp_path / "m.sdim"
        save_model(p, model)
        (tmp_path / "t.sdim").write_bytes(p.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            load_model(tmp_path / "t.sdim")


class TestTrainConfigValidation:
    def test_rejects_bad_learning_rate(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(learning_rate=0.0)

    def test_rejects_negative_weight_decay(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(weight_decay=-1e-4)

    def test_rejects_bad_ratio(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(negative_ratio=0.0)
