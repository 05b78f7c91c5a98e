"""Spectral estimator tests.

Oracle: an exact low-rank construction — probabilities built from a known
rank-K linear structure must pass through the inverse-link decomposition and
come back unchanged, up to float rounding.
"""
from __future__ import annotations

import numpy as np
import pytest
from scipy.special import expit, logit, ndtr

from ifa.identify import align_loadings
from ifa.models import Dataset, Link, loadings_matrix
from ifa.simulate import SimSpec, simulate
from ifa.spectral import (
    SpectralFit,
    decompose_probability_matrix,
    fit_svd_binary,
    fit_svd_ordinal,
    singular_value_cutoff,
)

PROB_EPS = 1e-4


def low_rank_structure(n, j, k, seed):
    """M = 1 d' + Theta A' with |M| kept well inside the clipping range."""
    rng = np.random.default_rng(seed)
    thetas = np.clip(rng.normal(size=(n, k)), -3.0, 3.0)
    loadings = rng.uniform(0.3, 0.7, size=(j, k))
    intercepts = rng.uniform(-1.0, 1.0, size=j)
    m = intercepts[None, :] + thetas @ loadings.T
    return m, thetas, loadings, intercepts


class TestCutoff:
    def test_formula(self):
        assert singular_value_cutoff(2000, 100) == pytest.approx(1.01 * np.sqrt(2000))
        assert singular_value_cutoff(100, 2000) == pytest.approx(1.01 * np.sqrt(2000))
        assert singular_value_cutoff(50, 50) == pytest.approx(1.01 * np.sqrt(50))


class TestDecomposition:
    def test_noiseless_reconstruction_logit(self):
        m, _, loadings, _ = low_rank_structure(300, 40, 2, seed=0)
        p = expit(m)
        thetas_hat, loadings_hat, intercepts_hat = decompose_probability_matrix(p, 2)
        recon = intercepts_hat[None, :] + thetas_hat @ loadings_hat.T
        assert np.max(np.abs(recon - m)) < 1e-8
        assert align_loadings(loadings_hat, loadings).loss < 1e-8

    def test_noiseless_reconstruction_probit(self):
        m, _, loadings, _ = low_rank_structure(200, 30, 2, seed=1)
        p = ndtr(m)
        thetas_hat, loadings_hat, intercepts_hat = decompose_probability_matrix(
            p, 2, Link.PROBIT
        )
        recon = intercepts_hat[None, :] + thetas_hat @ loadings_hat.T
        assert np.max(np.abs(recon - m)) < 1e-8
        assert align_loadings(loadings_hat, loadings).loss < 1e-8

    def test_theta_scaling_convention(self):
        m, _, _, _ = low_rank_structure(500, 25, 2, seed=2)
        thetas_hat, _, _ = decompose_probability_matrix(expit(m), 2)
        # sqrt(N) U has exactly unit second moment per column
        second = thetas_hat.T @ thetas_hat / thetas_hat.shape[0]
        np.testing.assert_allclose(np.diag(second), 1.0, atol=1e-10)


class TestBinaryFit:
    def test_all_ones_is_degenerate_rank_one(self):
        data = Dataset(np.ones((60, 10), dtype=int), np.full(10, 2))
        fit = fit_svd_binary(data, 1)
        assert np.max(np.abs(fit.loadings)) < 1e-10
        np.testing.assert_allclose(
            fit.intercepts, float(logit(1.0 - PROB_EPS)), atol=1e-10
        )
        assert np.all(fit.p_hat >= PROB_EPS) and np.all(fit.p_hat <= 1 - PROB_EPS)

    def test_rank_deficient_input_rejected(self):
        data = Dataset(np.ones((60, 10), dtype=int), np.full(10, 2))
        with pytest.raises(ValueError, match="fewer than 2 informative"):
            fit_svd_binary(data, 2)

    def test_too_small_panel_rejected(self):
        data = Dataset(np.array([[0, 1], [1, 0]]), np.full(2, 2))
        with pytest.raises(ValueError, match="k\\+1"):
            fit_svd_binary(data, 2)

    def test_nonbinary_rejected(self):
        responses = np.array([[0, 2], [1, 1], [2, 0], [1, 2]])
        data = Dataset(responses, np.array([3, 3]))
        with pytest.raises(ValueError, match="binary"):
            fit_svd_binary(data, 1)

    def test_sign_convention_and_probability_bounds(self):
        data, _, _ = simulate(SimSpec(n_persons=400, n_items=30, k=2, seed=3))
        fit = fit_svd_binary(data, 2)
        assert np.all(fit.loadings.sum(axis=0) >= 0)
        assert np.all(fit.p_hat >= PROB_EPS) and np.all(fit.p_hat <= 1 - PROB_EPS)

    def test_missing_cells_supported(self):
        data, _, _ = simulate(
            SimSpec(n_persons=400, n_items=30, k=1, missing_rate=0.2, seed=4)
        )
        fit = fit_svd_binary(data, 1)
        assert np.all(np.isfinite(fit.thetas))
        assert np.all(np.isfinite(fit.loadings))

    def test_deterministic(self):
        data, _, _ = simulate(SimSpec(n_persons=300, n_items=25, k=2, seed=5))
        first = fit_svd_binary(data, 2)
        second = fit_svd_binary(data, 2)
        np.testing.assert_array_equal(first.thetas, second.thetas)
        np.testing.assert_array_equal(first.loadings, second.loadings)
        np.testing.assert_array_equal(first.intercepts, second.intercepts)
        np.testing.assert_array_equal(first.p_hat, second.p_hat)

    def test_consistency_trend(self):
        wins = 0
        for seed in range(10):
            losses = []
            for n, j in [(400, 40), (800, 80)]:
                data, _, items = simulate(SimSpec(n_persons=n, n_items=j, k=2, seed=seed))
                fit = fit_svd_binary(data, 2)
                losses.append(align_loadings(fit.loadings, loadings_matrix(items)).loss)
            wins += losses[1] < losses[0]
        assert wins >= 8


class TestOrdinalFit:
    def test_binary_input_reduces_to_binary_fit(self):
        data, _, _ = simulate(SimSpec(n_persons=300, n_items=20, k=2, seed=6))
        ordinal = fit_svd_ordinal(data, 2)
        binary = fit_svd_binary(data, 2)
        assert ordinal.splits_used == [1]
        np.testing.assert_array_equal(ordinal.thetas, binary.thetas)
        np.testing.assert_array_equal(ordinal.loadings, binary.loadings)
        np.testing.assert_array_equal(ordinal.intercepts, binary.intercepts)

    def test_split_bookkeeping_with_one_three_category_item(self):
        rng = np.random.default_rng(7)
        responses = rng.integers(0, 2, size=(200, 8))
        responses[:, 3] = rng.integers(0, 3, size=200)
        data = Dataset.from_responses(responses)
        assert data.categories[3] == 3
        fit = fit_svd_ordinal(data, 1)
        assert fit.splits_used == [1, 2]

    def test_graded_loading_loss_bound(self):
        spec = SimSpec(
            n_persons=2000, n_items=100, k=2, model="graded", categories=3, seed=8
        )
        data, _, items = simulate(spec)
        fit = fit_svd_ordinal(data, 2)
        loss = align_loadings(fit.loadings, loadings_matrix(items)).loss
        assert np.isfinite(loss)
        assert loss < 0.5
