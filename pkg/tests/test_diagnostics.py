import numpy as np
import pytest
from scipy.stats import norm

from ivi.diagnostics import (
    CovarianceField,
    covariance_error_table,
    covariance_matrix_repr,
    credibility_band,
    frobenius_rel_error,
    hessian_offdiagonal_ratio,
    low_rank_posterior_cov_field,
    prior_preconditioned_hessian_eigenpairs,
    relative_l2_error,
    variance_covariance_functions,
)
from ivi.errors import ValidationError
from ivi.sgd_vi import VariationalPosterior


class TestCovarianceField:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError):
            CovarianceField(np.array([[1.0, 0.5], [0.0, 1.0]]), "exact")

    def test_rejects_negative_variance(self):
        with pytest.raises(ValidationError):
            CovarianceField(np.array([[-1.0, 0.0], [0.0, 1.0]]), "exact")

    def test_rejects_unknown_provenance(self):
        with pytest.raises(ValidationError):
            CovarianceField(np.eye(2), "guess")

    def test_sources(self, elliptic, rng):
        assert covariance_matrix_repr(elliptic.posterior).provenance == "exact"
        nu = VariationalPosterior(np.zeros(100), elliptic.spectrum.c.copy())
        fld = covariance_matrix_repr(nu, elliptic.spectrum)
        assert fld.provenance == "formula"
        np.testing.assert_allclose(fld.matrix, elliptic.spectrum.covariance_matrix(), atol=1e-14)
        X = rng.standard_normal((500, 3))
        emp = covariance_matrix_repr(X)
        np.testing.assert_allclose(emp.matrix, np.cov(X.T), atol=1e-14)

    def test_formula_needs_spectrum(self):
        with pytest.raises(ValidationError):
            covariance_matrix_repr(VariationalPosterior(np.zeros(2), np.ones(2)))


class TestLowRank:
    def test_full_rank_recovers_exact(self, elliptic):
        pairs = prior_preconditioned_hessian_eigenpairs(elliptic.spectrum, elliptic.H, elliptic.data.noise_variance)
        fld = low_rank_posterior_cov_field(elliptic.spectrum, pairs, 100)
        C = elliptic.posterior.covariance
        np.testing.assert_allclose(fld.matrix, C, atol=1e-9 * np.max(np.abs(C)))

    def test_error_decreases_with_rank(self, elliptic):
        pairs = prior_preconditioned_hessian_eigenpairs(elliptic.spectrum, elliptic.H, elliptic.data.noise_variance)
        C = elliptic.posterior.covariance
        errs = [frobenius_rel_error(low_rank_posterior_cov_field(elliptic.spectrum, pairs, r), C) for r in (0, 2, 5, 10, 20)]
        assert all(b <= a + 1e-14 for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 1e-10

    def test_rank_zero_is_prior(self, elliptic):
        pairs = prior_preconditioned_hessian_eigenpairs(elliptic.spectrum, elliptic.H, elliptic.data.noise_variance)
        fld = low_rank_posterior_cov_field(elliptic.spectrum, pairs, 0)
        np.testing.assert_allclose(fld.matrix, elliptic.spectrum.covariance_matrix(), atol=1e-14)

    def test_eigenvalues_sorted_nonnegative(self, elliptic):
        lam, _ = prior_preconditioned_hessian_eigenpairs(elliptic.spectrum, elliptic.H, elliptic.data.noise_variance)
        assert np.all(lam >= 0) and np.all(np.diff(lam) <= 0)
        # at most one informative direction per observation
        assert np.sum(lam > 1e-8 * lam[0]) <= 20


class TestMetrics:
    def test_offsets(self):
        A = np.arange(16.0).reshape(4, 4)
        A = A + A.T
        np.testing.assert_array_equal(variance_covariance_functions(A, 0), np.diag(A))
        np.testing.assert_array_equal(variance_covariance_functions(A, 2), [A[0, 2], A[1, 3]])
        with pytest.raises(ValidationError):
            variance_covariance_functions(A, 4)

    def test_frobenius_is_squared_ratio(self):
        B = np.eye(2)
        assert frobenius_rel_error(2 * B, B) == pytest.approx(1.0)
        assert frobenius_rel_error(B, B) == 0.0
        with pytest.raises(ValidationError):
            frobenius_rel_error(B, np.zeros((2, 2)))

    def test_relative_l2_with_mass(self, elliptic):
        u = np.ones(100)
        assert relative_l2_error(2 * u, u, elliptic.spectrum.mass) == pytest.approx(1.0)
        assert relative_l2_error(u, u) == 0.0

    def test_credibility_band(self):
        lo, hi = credibility_band(np.zeros(3), np.full(3, 4.0), 0.95)
        np.testing.assert_allclose(hi, 2 * norm.ppf(0.975))
        np.testing.assert_allclose(lo, -hi)
        with pytest.raises(ValidationError):
            credibility_band(np.zeros(1), np.ones(1), 1.0)

    def test_band_coverage(self, elliptic):
        post = elliptic.posterior
        lo, hi = credibility_band(post.mean, post.variance)
        X = post.sample(np.random.default_rng(42), 4000)
        inside = np.mean((X[:, 1:-1] >= lo[1:-1]) & (X[:, 1:-1] <= hi[1:-1]))
        assert inside == pytest.approx(0.95, abs=0.01)

    def test_offdiagonal_ratio(self, elliptic):
        r = hessian_offdiagonal_ratio(elliptic.spectrum, elliptic.H, elliptic.data.noise_variance)
        assert 0 < r < 1
        assert hessian_offdiagonal_ratio(elliptic.spectrum, np.zeros((2, 100)), 1.0) == 0.0

    def test_table_layout(self):
        x = np.linspace(0, 1, 25)
        B = np.exp(-np.abs(x[:, None] - x[None, :]))
        rows = covariance_error_table({"x": 2 * B, "y": B}, B)
        assert [r["method"] for r in rows] == ["x", "y"]
        assert set(rows[0]) == {"method", "full", "k0", "k10", "k20"}
        assert rows[1]["full"] == 0.0
        assert rows[0]["k10"] == pytest.approx(1.0)
