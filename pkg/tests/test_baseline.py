import numpy as np
import pytest

from causalgp.baseline import (
    fit_naive_gp,
    neg_log_marginal_likelihood,
    predict_arm_mean,
    predict_naive_ite,
)
from causalgp.data import ObservationalDataset
from causalgp.kernels import CMGPHyperparams, rbf_ard_matrix
from causalgp.optim import AdamSettings
from causalgp.posterior import fit_posterior, predict_batch
from tests.conftest import random_dataset

NO_OPT = AdamSettings(max_iters=0)  # condition at the initial parameters


def _mirrored_dataset(rng, n_half=10, d=2):
    """Every point appears once per arm with the same outcome."""
    X_half = rng.random((n_half, d))
    y_half = np.sin(4 * X_half[:, 0]) + rng.normal(0, 0.1, n_half)
    X = np.vstack([X_half, X_half])
    w = np.concatenate([np.zeros(n_half, int), np.ones(n_half, int)])
    y = np.concatenate([y_half, y_half])
    return ObservationalDataset(X, w, y)


class TestMarginalLikelihood:
    def test_matches_direct_formula(self, rng):
        X = rng.random((8, 2))
        y = rng.normal(size=8)
        vec = np.array([0.7, 1.2, 1.5, 0.3])
        K = 1.5 * rbf_ard_matrix(X, X, vec[:2]) + 0.3 * np.eye(8)
        sign, logdet = np.linalg.slogdet(K)
        expected = 0.5 * (y @ np.linalg.solve(K, y) + logdet
                          + 8 * np.log(2 * np.pi))
        np.testing.assert_allclose(
            neg_log_marginal_likelihood(X, y, vec), expected, rtol=1e-10)

    def test_optimum_not_worse_than_start(self, rng):
        ds = random_dataset(rng, 40, 2)
        idx = np.flatnonzero(ds.treatments == 0)
        X, y = ds.features[idx], ds.outcomes[idx]
        (gp0, _), (trace0, _) = fit_naive_gp(
            ds, AdamSettings(max_iters=30, rel_tol=0.0))
        assert min(trace0.r_hat) <= trace0.r_hat[0] + 1e-9


class TestFitNaiveGp:
    def test_rejects_single_subject_arm(self, rng):
        X = rng.random((3, 1))
        ds = ObservationalDataset(X, np.array([0, 0, 1]), np.zeros(3))
        with pytest.raises(ValueError):
            fit_naive_gp(ds, NO_OPT)

    def test_identical_arms_give_zero_effect(self, rng):
        ds = _mirrored_dataset(rng)
        pair, _ = fit_naive_gp(ds, AdamSettings(max_iters=10))
        Z = rng.random((6, 2))
        np.testing.assert_allclose(predict_naive_ite(pair, Z),
                                   np.zeros(6), atol=1e-10)

    def test_prediction_matches_direct_formula(self, rng):
        ds = random_dataset(rng, 16, 2)
        pair, _ = fit_naive_gp(ds, NO_OPT)
        gp0 = pair[0]
        Z = rng.random((5, 2))
        K = gp0.signal_var * rbf_ard_matrix(gp0.train_features,
                                            gp0.train_features,
                                            gp0.lengthscales)
        K += gp0.noise_var * np.eye(gp0.n)
        Ks = gp0.signal_var * rbf_ard_matrix(Z, gp0.train_features,
                                             gp0.lengthscales)
        expected = Ks @ np.linalg.solve(K, gp0.train_outcomes)
        np.testing.assert_allclose(predict_arm_mean(gp0, Z), expected,
                                   rtol=1e-8, atol=1e-10)

    def test_far_point_reverts_to_prior_mean(self, rng):
        ds = random_dataset(rng, 12, 1)
        pair, _ = fit_naive_gp(ds, NO_OPT)
        far = np.array([[1e6]])
        np.testing.assert_allclose(predict_naive_ite(pair, far), [0.0],
                                   atol=1e-12)

    def test_white_noise_attributed_to_noise_variance(self):
        rng = np.random.default_rng(7)
        n = 150
        X = rng.random((n, 1))
        w = np.tile([0, 1], n // 2)
        y = rng.normal(0.0, 1.0, size=n)  # pure noise, no signal
        ds = ObservationalDataset(X, w, y)
        pair, _ = fit_naive_gp(ds, AdamSettings(learning_rate=0.05,
                                                max_iters=150))
        for arm in (0, 1):
            gp = pair[arm]
            total = gp.signal_var + gp.noise_var
            assert gp.noise_var / total >= 0.8

    def test_control_fit_independent_of_treated_outcomes(self, rng):
        ds = random_dataset(rng, 20, 2)
        y2 = ds.outcomes.copy()
        y2[ds.treatments == 1] += 5.0
        ds2 = ObservationalDataset(ds.features, ds.treatments, y2)
        pair_a, _ = fit_naive_gp(ds, AdamSettings(max_iters=5))
        pair_b, _ = fit_naive_gp(ds2, AdamSettings(max_iters=5))
        Z = rng.random((4, 2))
        np.testing.assert_allclose(predict_arm_mean(pair_a[0], Z),
                                   predict_arm_mean(pair_b[0], Z),
                                   rtol=1e-12)


class TestBridgeToMultiTaskModel:
    def test_uncoupled_multi_task_model_reproduces_two_gps(self, rng):
        # with zero cross-output covariance, component w dedicated to arm w
        # (vanishing opposite-output variance), and matching length scales,
        # the multi-task posterior mean must agree with two separate GPs
        ds = random_dataset(rng, 14, 2)
        pair, _ = fit_naive_gp(ds, NO_OPT)
        gp0, gp1 = pair
        eps = 1e-12
        theta = CMGPHyperparams(
            noise_std=(np.sqrt(gp0.noise_var), np.sqrt(gp1.noise_var)),
            lengthscales0=gp0.lengthscales,
            lengthscales1=gp1.lengthscales,
            coreg0=(gp0.signal_var, eps, 0.0),
            coreg1=(eps, gp1.signal_var, 0.0),
        )
        model = fit_posterior(ds, theta)
        Z = rng.random((6, 2))
        out = predict_batch(model, Z)
        np.testing.assert_allclose(out["f0_hat"], predict_arm_mean(gp0, Z),
                                   rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(out["f1_hat"], predict_arm_mean(gp1, Z),
                                   rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(out["t_hat"], predict_naive_ite(pair, Z),
                                   rtol=1e-8, atol=1e-8)
