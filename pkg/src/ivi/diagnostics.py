"""Posterior comparison: covariance fields, variance/covariance functions, error metrics, bands.

Covariance fields are nodal matrices c(x_i, x_j) with respect to the Lagrange
basis. Both error metrics are squared ratios, ``||A - B||^2 / ||B||^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ValidationError
from .posterior_oracle import GaussianPosterior, hessian_in_prior_basis
from .prior_spectral import PriorSpectrum
from .sgd_vi import VariationalPosterior

__all__ = [
    "CovarianceField",
    "covariance_matrix_repr",
    "prior_preconditioned_hessian_eigenpairs",
    "low_rank_posterior_cov_field",
    "variance_covariance_functions",
    "frobenius_rel_error",
    "relative_l2_error",
    "credibility_band",
    "hessian_offdiagonal_ratio",
    "covariance_error_table",
    "TABLE_OFFSETS",
]

PROVENANCES = ("empirical", "formula", "low_rank", "exact")
TABLE_OFFSETS = (0, 10, 20)


@dataclass(frozen=True)
class CovarianceField:
    matrix: np.ndarray
    provenance: str

    def __post_init__(self) -> None:
        A = np.asarray(self.matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValidationError("covariance field must be a square matrix")
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
        if np.max(np.abs(A - A.T), initial=0.0) > 1e-10 * scale:
            raise ValidationError("covariance field is not symmetric")
        if np.any(np.diag(A) < -1e-12 * scale):
            raise ValidationError("covariance field has a negative variance")
        object.__setattr__(self, "matrix", A)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def to_csv(self, path) -> None:
        np.savetxt(path, self.matrix, delimiter=",", fmt="%.17g")


def covariance_matrix_repr(source, spectrum: PriorSpectrum | None = None) -> CovarianceField:
    """Nodal covariance of samples (rows), of a VariationalPosterior, or of the exact posterior."""
    if isinstance(source, GaussianPosterior):
        return CovarianceField(source.covariance, "exact")
    if isinstance(source, VariationalPosterior):
        if spectrum is None:
            raise ValidationError("a spectrum is needed to map mode variances to nodes")
        C = spectrum.covariance_matrix(source.s)
        return CovarianceField(0.5 * (C + C.T), "formula")
    X = np.asarray(source, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValidationError("empirical covariance needs at least 2 samples")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / (X.shape[0] - 1)
    return CovarianceField(0.5 * (C + C.T), "empirical")


def prior_preconditioned_hessian_eigenpairs(spectrum: PriorSpectrum, H: np.ndarray, gamma):
    """Eigenpairs of C0^{1/2} H^T Gamma^{-1} H C0^{1/2} in prior-basis coordinates, descending."""
    A = hessian_in_prior_basis(H, gamma, spectrum, spectrum.num_modes)
    sc = np.sqrt(spectrum.c)
    lam, V = np.linalg.eigh(sc[:, None] * A * sc[None, :])
    order = np.argsort(lam)[::-1]
    return np.clip(lam[order], 0.0, None), V[:, order]


def low_rank_posterior_cov_field(spectrum: PriorSpectrum, eigenpairs, r: int) -> CovarianceField:
    """c0(x, y) - sum_{k<=r} d_k v_k(x) v_k(y), d_k = lam_k / (lam_k + 1), v_k = C0^{1/2} v_k."""
    lam, V = eigenpairs
    if r < 0 or r > lam.size:
        raise ValidationError(f"rank {r} outside [0, {lam.size}]")
    C = spectrum.covariance_matrix()
    if r > 0:
        d = lam[:r] / (lam[:r] + 1.0)
        Vt = spectrum.e @ (np.sqrt(spectrum.c)[:, None] * V[:, :r])
        C = C - (Vt * d) @ Vt.T
    return CovarianceField(0.5 * (C + C.T), "low_rank")


def variance_covariance_functions(field, k: int) -> np.ndarray:
    """Values c(x_i, x_{i+k}) for i = 1..n-k; k = 0 is the variance function."""
    A = field.matrix if isinstance(field, CovarianceField) else np.asarray(field, dtype=float)
    n = A.shape[0]
    if not 0 <= k < n:
        raise ValidationError(f"offset {k} outside [0, {n})")
    return np.diagonal(A, offset=k).copy()


def frobenius_rel_error(A, B) -> float:
    """||A - B||_F^2 / ||B||_F^2."""
    A = A.matrix if isinstance(A, CovarianceField) else np.asarray(A, dtype=float)
    B = B.matrix if isinstance(B, CovarianceField) else np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValidationError(f"shape mismatch {A.shape} vs {B.shape}")
    nb = float(np.sum(B * B))
    if nb == 0:
        raise ValidationError("reference has zero norm")
    return float(np.sum((A - B) ** 2) / nb)


def relative_l2_error(u, u_ref, mass=None) -> float:
    """||u - u_ref||^2 / ||u_ref||^2 in the mass inner product (Euclidean if mass is None)."""
    u = np.asarray(u, dtype=float)
    u_ref = np.asarray(u_ref, dtype=float)
    diff = u - u_ref
    if mass is None:
        num, den = float(diff @ diff), float(u_ref @ u_ref)
    else:
        num, den = float(diff @ (mass @ diff)), float(u_ref @ (mass @ u_ref))
    if den == 0:
        raise ValidationError("reference has zero norm")
    return num / den


def credibility_band(mean, variances, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise band mean -/+ z sqrt(variance), z the two-sided normal quantile."""
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    var = np.asarray(variances, dtype=float)
    if np.any(var < 0):
        raise ValidationError("variances must be nonnegative")
    z = norm.ppf(0.5 + level / 2.0)
    half = z * np.sqrt(var)
    mean = np.asarray(mean, dtype=float)
    return mean - half, mean + half


def hessian_offdiagonal_ratio(spectrum: PriorSpectrum, H: np.ndarray, gamma, M: int | None = None) -> float:
    """||A - diag(A)||_F / ||A||_F for the data-misfit Hessian on the active modes."""
    A = hessian_in_prior_basis(H, gamma, spectrum, M)
    nrm = np.linalg.norm(A)
    if nrm == 0:
        return 0.0
    return float(np.linalg.norm(A - np.diag(np.diag(A))) / nrm)


def covariance_error_table(fields: dict, reference, offsets=TABLE_OFFSETS) -> list[dict]:
    """Rows of {method, full, k0, k10, ...} with squared-ratio errors against ``reference``."""
    ref = reference.matrix if isinstance(reference, CovarianceField) else np.asarray(reference, dtype=float)
    rows = []
    for name, fld in fields.items():
        A = fld.matrix if isinstance(fld, CovarianceField) else np.asarray(fld, dtype=float)
        row = {"method": name, "full": frobenius_rel_error(A, ref)}
        for k in offsets:
            row[f"k{k}"] = frobenius_rel_error(variance_covariance_functions(A, k), variance_covariance_functions(ref, k))
        rows.append(row)
    return rows

