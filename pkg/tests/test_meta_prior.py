import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ebblip.features import BIAS, FIRST_ORDER, SECOND_ORDER
from ebblip.meta_prior import (
    BootstrapConfig,
    DegeneratePriorError,
    InsufficientTrafficError,
    bias_of_estimator,
    bootstrap_until_viable,
    estimate_meta_prior,
    prior_from_estimates,
    tau_sq_hat,
)
from ebblip.probit import BlipModel, probit_cdf

FO = [FIRST_ORDER] * 3


class TestEstimate:
    def test_untrained_prior_is_degenerate(self):
        est = estimate_meta_prior([0, 0, 0], [1, 1, 1], FO)[FIRST_ORDER]
        assert est.tau_sq_hat == pytest.approx(-1.0)
        assert est.degenerate and est.nu_hat == 0.0 and est.n_features == 3

    def test_zero_mean_example(self):
        est = estimate_meta_prior([1, -1, 2], [0.5] * 3, FO)[FIRST_ORDER]
        assert est.tau_sq_hat == pytest.approx((1 + 1 + 4) / 3 - 0.5)
        assert est.tau_sq_hat == pytest.approx(1.5)
        assert not est.degenerate

    def test_centred_example(self):
        est = estimate_meta_prior([1, 2, 3], [0.1] * 3, FO, zero_mean=False)[FIRST_ORDER]
        assert est.nu_hat == pytest.approx(2.0)
        assert est.tau_sq_hat == pytest.approx(0.9)

    def test_bias_excluded_and_categories_split(self):
        cats = [BIAS, FIRST_ORDER, FIRST_ORDER, SECOND_ORDER]
        est = estimate_meta_prior([5.0, 1.0, -1.0, 0.5], [1.0, 0.2, 0.2, 0.05], cats)
        assert set(est) == {FIRST_ORDER, SECOND_ORDER}
        assert est[FIRST_ORDER].tau_sq_hat == pytest.approx(0.8)
        assert est[SECOND_ORDER].tau_sq_hat == pytest.approx(0.2)

    def test_threshold_flag_keeps_raw_value(self):
        est = estimate_meta_prior([0.1, -0.1], [0.0, 0.0], [FIRST_ORDER] * 2, min_tau_sq=0.05)
        assert est[FIRST_ORDER].degenerate
        assert est[FIRST_ORDER].tau_sq_hat == pytest.approx(0.01)

    def test_too_few_features_names_category(self):
        with pytest.raises(ValueError, match="second_order"):
            estimate_meta_prior([1.0, 0.0, 2.0], [0.1] * 3,
                                [FIRST_ORDER, FIRST_ORDER, SECOND_ORDER], zero_mean=False)

    def test_mask(self):
        est = estimate_meta_prior([1.0, 100.0, -1.0], [0.0] * 3, FO,
                                  mask=[True, False, True])[FIRST_ORDER]
        assert est.n_features == 2 and est.tau_sq_hat == pytest.approx(1.0)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=30), st.floats(-10, 10))
    def test_centred_estimate_shift_invariant(self, mu, shift):
        mu = np.array(mu)
        s2 = np.full(mu.size, 0.3)
        a = estimate_meta_prior(mu, s2, [FIRST_ORDER] * mu.size, zero_mean=False)[FIRST_ORDER]
        b = estimate_meta_prior(mu + shift, s2, [FIRST_ORDER] * mu.size,
                                zero_mean=False)[FIRST_ORDER]
        assert b.tau_sq_hat == pytest.approx(a.tau_sq_hat, abs=1e-9)

    def test_vectorized_matches_loop(self):
        rng = np.random.default_rng(0)
        mu = rng.normal(size=(4, 20))
        s2 = rng.uniform(0, 1, (4, 20))
        for zm in (True, False):
            vec = tau_sq_hat(mu, s2, zm)
            loop = [estimate_meta_prior(m, s, [FIRST_ORDER] * 20, zero_mean=zm)[FIRST_ORDER]
                    .tau_sq_hat for m, s in zip(mu, s2)]
            np.testing.assert_allclose(vec, loop, rtol=1e-12)


class TestBiasFormula:
    def test_diagonal_is_unbiased(self):
        assert bias_of_estimator(np.diag([0.3, 0.1, 2.0])) == 0.0

    def test_two_features(self):
        assert bias_of_estimator([[1.0, 0.3], [0.3, 1.0]]) == pytest.approx(-0.3)

    def test_perfectly_correlated(self):
        s2 = 0.7
        assert bias_of_estimator(np.full((3, 3), s2)) == pytest.approx(-s2)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            bias_of_estimator([[1.0, 0.2], [0.1, 1.0]])

    def test_monte_carlo_small(self):
        # equicorrelated noise, the bias shows up in the centred estimator
        rng = np.random.default_rng(3)
        n, reps, tau2, s2, c = 6, 40_000, 0.5, 0.3, 0.15
        cov = np.full((n, n), c) + np.eye(n) * (s2 - c)
        truth = rng.normal(0, np.sqrt(tau2), (reps, n))
        noise = rng.multivariate_normal(np.zeros(n), cov, reps)
        est = tau_sq_hat(truth + noise, np.full((reps, n), s2), zero_mean=False)
        se = est.std(ddof=1) / np.sqrt(reps)
        assert abs((est.mean() - tau2) - bias_of_estimator(cov)) < 4 * se


class TestPriorFromEstimates:
    def test_degenerate_raises(self):
        est = estimate_meta_prior([0, 0, 0], [1, 1, 1], FO)
        with pytest.raises(DegeneratePriorError) as info:
            prior_from_estimates(est)
        assert FIRST_ORDER in info.value.estimates

    def test_zero_means_by_default(self):
        est = estimate_meta_prior([1, 2, 3], [0.1] * 3, FO, zero_mean=False)
        assert prior_from_estimates(est).lookup(FIRST_ORDER) == (0.0, pytest.approx(0.9))
        assert prior_from_estimates(est, use_nu=True).lookup(FIRST_ORDER)[0] == 2.0
        assert prior_from_estimates(est).lookup(BIAS) == (0.0, 1.0)


def _toy_batch(n, seed, d1=8, d2=16):
    rng = np.random.default_rng(seed)
    cats = [BIAS] + [FIRST_ORDER] * d1 + [SECOND_ORDER] * d2
    w = np.concatenate([[0.0], rng.normal(0, 1.0, d1), rng.normal(0, 0.5, d2)])
    X = np.column_stack([np.ones(n), rng.random((n, d1 + d2)) < 0.3]).astype(float)
    y = np.where(rng.random(n) < probit_cdf(X @ w), 1, -1)
    return cats, X, y


class TestBootstrap:
    def test_large_batch_viable_in_one_epoch(self):
        cats, X, y = _toy_batch(20_000, 0)
        res = bootstrap_until_viable(cats, X, y, BootstrapConfig(seed=1))
        assert res.epochs_used == 1
        assert all(not e.degenerate for e in res.estimates.values())
        assert res.rows_consumed.size == 20_000

    def test_tiny_batch_fails(self):
        cats, X, y = _toy_batch(5, 0)
        with pytest.raises(InsufficientTrafficError) as info:
            bootstrap_until_viable(cats, X, y, BootstrapConfig(max_epochs=3, seed=0))
        assert info.value.epochs == 3
        assert set(info.value.estimates) == {FIRST_ORDER, SECOND_ORDER}

    @pytest.mark.parametrize("resample", [True, False])
    def test_deterministic(self, resample):
        cats, X, y = _toy_batch(300, 4)
        cfg = BootstrapConfig(seed=7, resample=resample, max_epochs=50)
        a = bootstrap_until_viable(cats, X, y, cfg)
        b = bootstrap_until_viable(cats, X, y, cfg)
        assert a.epochs_used == b.epochs_used
        assert a.estimates == b.estimates
        assert a.model.mean.tobytes() == b.model.mean.tobytes()

    def test_plain_repetition_covers_every_row(self):
        cats, X, y = _toy_batch(50, 1)
        res = bootstrap_until_viable(cats, X, y, BootstrapConfig(resample=False, seed=0,
                                                                  max_epochs=100))
        for order in res.orders:
            assert sorted(order.tolist()) == list(range(50))

    def test_epochs_equal_to_sequential_training(self):
        cats, X, y = _toy_batch(200, 2)
        res = bootstrap_until_viable(cats, X, y, BootstrapConfig(seed=3, max_epochs=50))
        ref = BlipModel(cats)
        for order in res.orders:
            ref.train_batch(X[order], y[order])
        np.testing.assert_allclose(ref.mean, res.model.mean, atol=1e-12)


def test_consistency_trend_small():
    rng = np.random.default_rng(11)
    errs = []
    for n in (10, 100, 1000):
        mu = rng.normal(0, np.sqrt(0.5), (200, n))
        s2 = rng.uniform(0.05, 0.2, (200, n))
        est = tau_sq_hat(mu + rng.normal(size=mu.shape) * np.sqrt(s2), s2)
        errs.append(np.median(np.abs(est - 0.5)))
    assert errs[0] > errs[1] > errs[2]
