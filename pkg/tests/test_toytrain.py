import math

import numpy as np
import pytest

from robustks.errors import DataValidationError, NumericalFailure
from robustks.model_metrics import test_accuracy as accuracy
from robustks.robust_test import estimate_alpha
from robustks.toytrain import (
    BlobSpec,
    MlpParams,
    Scenario,
    TrainConfig,
    base_training_set,
    forward,
    generate_dataset,
    init_params,
    loss_and_gradient,
    run_scenario,
    train,
)

SMALL = dict(M=3, epochs=2, n_train=200, n_test=500, batch_size=20)


def central_difference(params, x, y, eps=1e-5):
    grads = []
    for group in (params.weights, params.biases):
        for arr in group:
            g = np.empty_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + eps
                up = loss_and_gradient(params, x, y)[0]
                arr[idx] = old - eps
                down = loss_and_gradient(params, x, y)[0]
                arr[idx] = old
                g[idx] = (up - down) / (2 * eps)
            grads.append(g)
    return grads


class TestDataset:
    def test_same_seed(self):
        a, b = generate_dataset(BlobSpec(), 300, 7), generate_dataset(BlobSpec(), 300, 7)
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_different_seed(self):
        a, b = generate_dataset(BlobSpec(), 300, 7), generate_dataset(BlobSpec(), 300, 8)
        assert not np.array_equal(a.features, b.features)

    def test_two_classes(self):
        d = generate_dataset(BlobSpec(p1=0.5), 2, 0)
        assert sorted(d.labels) == [0, 1]

    def test_well_separated_is_linearly_separable(self):
        spec = BlobSpec(mean0=(-2.0, 0.0), mean1=(2.0, 0.0))
        d = generate_dataset(spec, 2000, 1)
        # Bayes rule for equal isotropic covariances: sign of the first coordinate
        assert accuracy(d.features[:, 0], d.labels) > 0.95

    @pytest.mark.parametrize("cov", [((0.0, 0.0), (0.0, 1.0)), ((1.0, 1.0), (1.0, 1.0))])
    def test_degenerate_covariance(self, cov):
        with pytest.raises(DataValidationError):
            generate_dataset(BlobSpec(cov0=cov), 10, 0)


class TestParams:
    def test_shapes(self):
        p = init_params((2, 32, 2), 0)
        assert [w.shape for w in p.weights] == [(32, 2), (2, 32)]
        assert [b.shape for b in p.biases] == [(32,), (2,)]

    def test_deterministic_template(self):
        a, b = init_params((2, 32, 2)), init_params((2, 32, 2))
        np.testing.assert_array_equal(a.flat(), b.flat())
        # hidden units must not start identical
        assert len({tuple(r) for r in a.weights[0]}) > 1

    def test_seeds_differ(self):
        assert not np.array_equal(init_params((2, 8, 2), 1).flat(), init_params((2, 8, 2), 2).flat())
        np.testing.assert_array_equal(init_params((2, 8, 2), 1).flat(), init_params((2, 8, 2), 1).flat())


class TestForward:
    def test_zero_params(self):
        p = init_params((2, 4, 2), 0)
        p = MlpParams([w * 0 for w in p.weights], [b * 0 for b in p.biases])
        assert forward(p, [0.3, -2.0]) == (0.0, 0.0)

    def test_output_bias_only(self):
        p = init_params((2, 4, 2), 0)
        p.weights[0][:] = 0
        p.biases[-1][:] = [1.5, -0.25]
        for x in ([0, 0], [5, -3], [-1e3, 2]):
            assert forward(p, x) == (1.5, -0.25)

    def test_finite_and_batch_consistent(self):
        p = init_params((2, 16, 2), 3)
        x = np.random.default_rng(0).normal(size=(10, 2))
        mp, mm = forward(p, x)
        assert np.all(np.isfinite(mp)) and np.all(np.isfinite(mm))
        assert forward(p, x[4]) == pytest.approx((mp[4], mm[4]), rel=1e-12)

    def test_overflow_raises(self):
        p = init_params((2, 4, 2), 0)
        p.weights[0][:] = 1e308
        with pytest.raises(NumericalFailure):
            forward(p, [1e10, 1e10])


class TestLoss:
    def test_uniform_softmax(self):
        p = init_params((2, 4, 2), 0)
        p = MlpParams([w * 0 for w in p.weights], [b * 0 for b in p.biases])
        loss, _ = loss_and_gradient(p, np.ones((5, 2)), np.array([0, 1, 1, 0, 1]))
        assert loss == pytest.approx(math.log(2))

    @pytest.mark.parametrize("widths", [(2, 3, 2), (2, 5, 4, 2), (2, 2)])
    def test_gradient_finite_difference(self, widths):
        rng = np.random.default_rng(sum(widths))
        p = init_params(widths, rng.integers(1 << 30))
        for b in p.biases:
            b[:] = rng.normal(scale=0.3, size=b.shape)
        x = rng.normal(size=(12, 2))
        y = rng.integers(0, 2, size=12)
        _, grad = loss_and_gradient(p, x, y)
        numeric = central_difference(p, x, y)
        analytic = [*grad.weights, *grad.biases]
        for a, n in zip(analytic, numeric):
            assert np.max(np.abs(a - n)) / max(np.max(np.abs(n)), 1e-8) < 1e-4

    def test_duplicated_batch(self):
        p = init_params((2, 8, 2), 5)
        x = np.random.default_rng(1).normal(size=(7, 2))
        y = np.array([0, 1, 1, 0, 0, 1, 0])
        l1, g1 = loss_and_gradient(p, x, y)
        l2, g2 = loss_and_gradient(p, np.vstack([x, x]), np.r_[y, y])
        assert l1 == pytest.approx(l2, rel=1e-12)
        np.testing.assert_allclose(g1.flat(), g2.flat(), rtol=1e-12, atol=1e-15)

    def test_empty_batch(self):
        with pytest.raises(DataValidationError):
            loss_and_gradient(init_params((2, 2), 0), np.empty((0, 2)), np.empty(0))


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"M": 0}, {"learning_rate": 0.0}, {"snapshot_epochs": (0,)}, {"epochs": 3, "snapshot_epochs": (4,)},
         {"hidden_widths": (0,)}, {"master_seed": -1}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(DataValidationError):
            TrainConfig(**kwargs)

    def test_defaults(self):
        c = TrainConfig()
        assert c.widths == (2, 32, 2)
        assert c.snapshot_epochs == tuple(range(1, 51))
        assert TrainConfig(scenario="init").scenario is Scenario.INIT_ONLY


class TestSeedIsolation:
    @staticmethod
    def runs(scenario):
        return train(TrainConfig(scenario=scenario, master_seed=4, **{**SMALL, "epochs": 1}))

    @staticmethod
    def same(runs, attr):
        return all(np.array_equal(getattr(r, attr), getattr(runs[0], attr)) for r in runs[1:])

    def test_init_only(self):
        runs = self.runs(Scenario.INIT_ONLY)
        assert self.same(runs, "data_indices") and self.same(runs, "first_epoch_order")
        assert not np.array_equal(runs[0].snapshots[1].flat(), runs[1].snapshots[1].flat())

    def test_batch_only(self):
        runs = self.runs(Scenario.BATCH_ONLY)
        assert self.same(runs, "data_indices")
        assert not self.same(runs, "first_epoch_order")

    def test_train_only(self):
        runs = self.runs(Scenario.TRAIN_ONLY)
        assert not self.same(runs, "data_indices")
        assert self.same(runs, "first_epoch_order")

    def test_all(self):
        runs = self.runs(Scenario.ALL)
        assert not self.same(runs, "data_indices") and not self.same(runs, "first_epoch_order")
        assert not np.array_equal(runs[0].snapshots[1].flat(), runs[1].snapshots[1].flat())

    def test_deterministic_init_shares_start(self):
        cfg = TrainConfig(scenario=Scenario.BATCH_ONLY, deterministic_init=True, **SMALL)
        a, b = train(cfg)[:2]
        assert not np.array_equal(a.snapshots[2].flat(), b.snapshots[2].flat())


class TestTraining:
    def test_deterministic(self):
        cfg = TrainConfig(master_seed=2, **SMALL)
        a, b = run_scenario(cfg, 9), run_scenario(cfg, 9, n_jobs=3)
        assert a.keys() == b.keys() == {1, 2}
        for e in a:
            assert a[e].gaps.tobytes() == b[e].gaps.tobytes()

    def test_base_set_depends_on_seed(self):
        a = base_training_set(TrainConfig(master_seed=0))
        b = base_training_set(TrainConfig(master_seed=1))
        assert not np.array_equal(a.features, b.features)

    def test_loss_drops_over_first_epoch(self):
        drops = 0
        seeds = range(40)
        for seed in seeds:
            cfg = TrainConfig(M=1, epochs=1, master_seed=seed)
            base = base_training_set(cfg)
            run = train(cfg, base)[0]
            x, y = base.features[run.data_indices], base.labels[run.data_indices]
            start = loss_and_gradient(init_params(cfg.widths, np.random.default_rng([seed, 0, 0])), x, y)[0]
            end = loss_and_gradient(run.snapshots[1], x, y)[0]
            drops += end < start
        assert drops >= 0.95 * len(seeds)

    def test_learns(self):
        cfg = TrainConfig(M=1, epochs=5, n_test=1000)
        gaps = run_scenario(cfg, 1)[5]
        assert accuracy(gaps.gaps[0], gaps.labels) > 0.75

    def test_single_model_matrix(self):
        m = run_scenario(TrainConfig(**{**SMALL, "M": 1}), 0)[2]
        assert m.n_models == 1 and m.n_points == 500
        with pytest.raises(DataValidationError):
            estimate_alpha(m, 0, B=2)

    def test_feeds_estimate_alpha(self):
        m = run_scenario(TrainConfig(**SMALL), 0)[2]
        est = estimate_alpha(m, 0, B=3)
        assert 0.0 <= est.alpha_hat <= 1.0
        assert m.model_ids[0] == "model_000" and m.point_ids[-1] == "p00499"
