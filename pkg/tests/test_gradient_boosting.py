import numpy as np
import pytest

from boostcil.gradient_boosting import (
    LEARNER_FAMILIES,
    AdditiveEnsemble,
    LinearLearner,
    StumpLearner,
    boost_step,
    residual_target,
    training_mse,
)


class TestResidualTarget:
    def test_plain_difference(self):
        r = residual_target([3.0, 1.0, -2.0], [1.0, 1.0, 1.0])
        assert np.array_equal(r, [2.0, 0.0, -3.0])

    def test_zero_when_fit_is_exact(self):
        y = np.linspace(-1, 1, 5)
        assert np.array_equal(residual_target(y, y), np.zeros(5))

    def test_is_negative_gradient_of_half_squared_error(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=6)
        pred = rng.normal(size=6)

        def loss(p):
            return 0.5 * np.sum((y - p) ** 2)

        r = residual_target(y, pred)
        eps = 1e-6
        for i in range(6):
            up, down = pred.copy(), pred.copy()
            up[i] += eps
            down[i] -= eps
            fd_grad = (loss(up) - loss(down)) / (2 * eps)
            assert -fd_grad == pytest.approx(r[i], rel=1e-6, abs=1e-8)

    def test_nonfinite_rejected(self):
        with pytest.raises(FloatingPointError):
            residual_target([1.0, np.nan], [0.0, 0.0])
        with pytest.raises(FloatingPointError):
            residual_target([1.0, 2.0], [np.inf, 0.0])


class TestLearners:
    def test_linear_recovers_affine_map(self):
        x = np.linspace(-2, 2, 20)
        y = 2.0 * x + 3.0
        learner = LinearLearner().fit(x, y)
        assert np.allclose(learner(x), y, atol=1e-10)
        assert learner.coef == pytest.approx([2.0, 3.0], abs=1e-10)

    def test_stump_recovers_step_function(self):
        x = np.array([0.0, 1.0, 2.0, 10.0, 11.0, 12.0])
        y = np.array([-1.0, -1.0, -1.0, 4.0, 4.0, 4.0])
        learner = StumpLearner().fit(x, y)
        assert np.array_equal(learner(x), y)
        assert 2.0 < learner.threshold < 10.0

    def test_stump_constant_input_predicts_mean(self):
        x = np.ones(4)
        y = np.array([1.0, 2.0, 3.0, 6.0])
        learner = StumpLearner().fit(x, y)
        assert np.allclose(learner(x), np.full(4, 3.0))

    def test_stump_picks_best_feature(self):
        rng = np.random.default_rng(1)
        noise = rng.normal(size=30) * 0.01
        informative = np.repeat([0.0, 5.0], 15)
        x = np.column_stack([noise, informative])
        y = np.repeat([-1.0, 1.0], 15)
        learner = StumpLearner().fit(x, y)
        assert learner.feature == 1

    def test_family_registry(self):
        assert LEARNER_FAMILIES["linear"] is LinearLearner
        assert LEARNER_FAMILIES["stump"] is StumpLearner


class TestAdditiveEnsemble:
    def test_empty_predicts_zero(self):
        ens = AdditiveEnsemble()
        assert np.array_equal(ens.predict(np.arange(4.0)), np.zeros(4))
        assert len(ens) == 0

    def test_prediction_is_weighted_member_sum(self):
        x = np.linspace(0, 1, 8)
        y = np.sin(x * 6)
        ens = AdditiveEnsemble()
        for _ in range(3):
            ens = boost_step(ens, x, y, family="stump", weight=0.7)
        total = np.zeros(8)
        for weight, learner in ens.members:
            assert weight == 0.7
            total += weight * learner(x.reshape(-1, 1))
        assert np.allclose(ens.predict(x), total, atol=0)

    def test_append_leaves_original_untouched(self):
        x = np.arange(6.0)
        y = x * 2
        base = boost_step(AdditiveEnsemble(), x, y, family="linear")
        before = base.predict(x).copy()
        grown = base.append(LinearLearner().fit(x, y), 1.0)
        assert len(base) == 1 and len(grown) == 2
        assert np.array_equal(base.predict(x), before)
        assert base.members == grown.members[:1]

    def test_members_tuple_is_immutable(self):
        ens = boost_step(AdditiveEnsemble(), np.arange(4.0), np.arange(4.0))
        with pytest.raises(TypeError):
            ens.members[0] = None


class TestBoostStep:
    def test_linear_family_one_step_exact_fit(self):
        x = np.linspace(-3, 3, 25)
        y = 2.0 * x + 3.0
        ens = boost_step(AdditiveEnsemble(), x, y, family="linear")
        assert training_mse(ens, x, y) < 1e-10

    def test_zero_residual_appends_inert_member(self):
        x = np.linspace(-3, 3, 25)
        y = 2.0 * x + 3.0
        ens = boost_step(AdditiveEnsemble(), x, y, family="linear")
        again = boost_step(ens, x, y, family="linear")
        assert np.allclose(again.predict(x), ens.predict(x), atol=1e-9)

    def test_fifty_stumps_monotone_mse_on_noisy_sine(self):
        rng = np.random.default_rng(7)
        x = np.sort(rng.uniform(0, 2 * np.pi, 20))
        y = np.sin(x) + rng.normal(scale=0.1, size=20)
        ens = AdditiveEnsemble()
        history = [training_mse(ens, x, y)]
        for _ in range(50):
            ens = boost_step(ens, x, y, family="stump")
            history.append(training_mse(ens, x, y))
        for prev, cur in zip(history, history[1:]):
            assert cur <= prev + 1e-12
        assert history[-1] < history[0]

    def test_partial_step_weight_shrinks_update(self):
        x = np.arange(10.0)
        y = x.copy()
        full = boost_step(AdditiveEnsemble(), x, y, family="linear", weight=1.0)
        half = boost_step(AdditiveEnsemble(), x, y, family="linear", weight=0.5)
        assert np.allclose(half.predict(x), 0.5 * full.predict(x))

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            boost_step(AdditiveEnsemble(), np.empty((0, 1)), np.empty(0))

    def test_unknown_family_rejected(self):
        with pytest.raises(ValueError):
            boost_step(AdditiveEnsemble(), np.arange(4.0), np.arange(4.0), family="forest")
