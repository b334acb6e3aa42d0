"""Exact linear-Gaussian posterior, per-mode Hessian coefficients and Gaussian KL divergences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import NumericError, ValidationError
from .prior_spectral import PriorSpectrum

__all__ = [
    "GaussianPosterior",
    "ModeParams",
    "noise_matrix",
    "exact_posterior",
    "hessian_in_prior_basis",
    "hessian_mode_coefficients",
    "mode_params_from_arrays",
    "kl_diagonal",
    "kl_diagonal_terms",
    "kl_gaussian_dense",
    "kl_gaussian",
]


def noise_matrix(gamma, m: int) -> np.ndarray:
    """Noise covariance as an m x m matrix from a scalar, a diagonal or a full matrix."""
    g = np.asarray(gamma, dtype=float)
    if g.ndim == 0:
        G = float(g) * np.eye(m)
    elif g.ndim == 1:
        G = np.diag(g)
    else:
        G = g
    if G.shape != (m, m):
        raise ValidationError(f"noise covariance has shape {G.shape}, expected {(m, m)}")
    if np.any(np.diag(G) <= 0):
        raise ValidationError("noise variances must be positive")
    return G


@dataclass(frozen=True)
class GaussianPosterior:
    """Posterior N(mean, covariance) on nodal values, with its prior-basis form.

    ``mode_precision`` is E^T H^T Gamma^{-1} H E + diag(1/c), the posterior
    precision in prior-eigenbasis coordinates; ``mode_mean`` the mean there.
    """

    mean: np.ndarray
    covariance: np.ndarray
    spectrum: PriorSpectrum
    mode_mean: np.ndarray
    mode_precision: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.diag(self.covariance).copy()

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Exact posterior draws as rows of nodal values."""
        L = np.linalg.cholesky(self.mode_precision)
        z = rng.standard_normal((self.mode_precision.shape[0], size))
        x = sla.solve_triangular(L.T, z, lower=False)
        return (self.mode_mean[:, None] + x).T @ self.spectrum.e.T


def exact_posterior(spectrum: PriorSpectrum, H: np.ndarray, gamma, d: np.ndarray) -> GaussianPosterior:
    """Posterior of u given d = H u + N(0, Gamma) and u ~ N(0, C0)."""
    H = np.asarray(H, dtype=float)
    d = np.asarray(d, dtype=float)
    if H.shape[0] != d.shape[0] or H.shape[1] != spectrum.num_modes:
        raise ValidationError(f"H {H.shape} inconsistent with data {d.shape} and {spectrum.num_modes} nodes")
    G = noise_matrix(gamma, H.shape[0])
    E, c = spectrum.e, spectrum.c
    C0 = (E * c) @ E.T
    HC0 = H @ C0
    S = G + HC0 @ H.T
    try:
        cho = sla.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Gamma + H C0 H^T is not positive definite: {exc}") from exc
    K = sla.cho_solve(cho, HC0).T
    cov = C0 - K @ HC0
    cov = 0.5 * (cov + cov.T)
    mean = K @ d
    HE = H @ E
    Gi_HE = np.linalg.solve(G, HE)
    P = HE.T @ Gi_HE + np.diag(1.0 / c)
    P = 0.5 * (P + P.T)
    mode_mean = spectrum.coefficients(mean)
    return GaussianPosterior(mean=mean, covariance=cov, spectrum=spectrum, mode_mean=mode_mean, mode_precision=P)


@dataclass(frozen=True)
class ModeParams:
    """Per-mode scalars for the active modes: a_i, c_i, a_tilde_i = a_i + 1/c_i, M' = M + sum a_i c_i."""

    a: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float)
        c = np.asarray(self.c, dtype=float)
        if a.shape != c.shape or a.ndim != 1 or a.size == 0:
            raise ValidationError("a and c must be nonempty vectors of equal length")
        if np.any(c <= 0):
            raise ValidationError("prior eigenvalues must be positive")
        if np.any(a < 0):
            raise ValidationError("Hessian coefficients must be nonnegative")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", c)

    @property
    def M(self) -> int:
        return self.a.shape[0]

    @property
    def a_tilde(self) -> np.ndarray:
        return self.a + 1.0 / self.c

    @property
    def M_prime(self) -> float:
        return float(self.M + np.sum(self.a * self.c))


def mode_params_from_arrays(a, c) -> ModeParams:
    return ModeParams(a=np.asarray(a, dtype=float), c=np.asarray(c, dtype=float))


def hessian_in_prior_basis(H: np.ndarray, gamma, spectrum: PriorSpectrum, M: int | None = None) -> np.ndarray:
    """Data-misfit Hessian E^T H^T Gamma^{-1} H E restricted to the first M modes."""
    M = spectrum.M if M is None else int(M)
    G = noise_matrix(gamma, H.shape[0])
    HE = H @ spectrum.e[:, :M]
    return HE.T @ np.linalg.solve(G, HE)


def hessian_mode_coefficients(H: np.ndarray, gamma, spectrum: PriorSpectrum, M: int | None = None) -> ModeParams:
    """Rayleigh quotients a_i = e_i^T H^T Gamma^{-1} H e_i of the active modes."""
    M = spectrum.M if M is None else int(M)
    A = hessian_in_prior_basis(H, gamma, spectrum, M)
    a = np.clip(np.diag(A).copy(), 0.0, None)
    return ModeParams(a=a, c=spectrum.c[:M].copy())


def kl_diagonal_terms(s: np.ndarray, params: ModeParams) -> np.ndarray:
    """Per-mode terms 0.5 (log(c/s) + s/c + s a)."""
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0) or not np.all(np.isfinite(s)):
        raise ValidationError("variances must be positive and finite")
    c, a = params.c, params.a
    return 0.5 * (np.log(c / s) + s / c + s * a)


def kl_diagonal(s: np.ndarray, params: ModeParams) -> float:
    """KL(nu || mu) up to an s-independent constant under the diagonal Hessian model.

    Minimized mode by mode at s_i = c_i / (1 + a_i c_i) = 1 / a_tilde_i.
    """
    return float(np.sum(kl_diagonal_terms(s, params)))


def kl_gaussian_dense(mean0, cov0, mean1, cov1) -> float:
    """KL(N(mean0, cov0) || N(mean1, cov1)) for dense covariances."""
    mean0, mean1 = np.asarray(mean0, float), np.asarray(mean1, float)
    k = mean0.shape[0]
    L0 = np.linalg.cholesky(np.asarray(cov0, float))
    L1 = np.linalg.cholesky(np.asarray(cov1, float))
    A = sla.solve_triangular(L1, L0, lower=True)
    b = sla.solve_triangular(L1, mean1 - mean0, lower=True)
    logdet = 2.0 * (np.sum(np.log(np.diag(L1))) - np.sum(np.log(np.diag(L0))))
    return float(0.5 * (np.sum(A * A) + b @ b - k + logdet))


def kl_gaussian(nu, post) -> float:
    """KL(nu || post).

    ``post`` may be a ModeParams (diagonal objective on the active modes, using
    ``nu.s[:M]``) or a GaussianPosterior (exact divergence, evaluated in the
    prior eigenbasis where both Gaussians are well conditioned).
    """
    s = np.asarray(nu.s, dtype=float)
    if isinstance(post, ModeParams):
        return kl_diagonal(s[: post.M], post)
    if isinstance(post, GaussianPosterior):
        if np.any(s <= 0):
            raise ValidationError("variances must be positive")
        P = post.mode_precision
        delta = post.mode_mean - np.asarray(nu.mean_coeffs, dtype=float)
        Lp = np.linalg.cholesky(P)
        logdet_P = 2.0 * np.sum(np.log(np.diag(Lp)))
        val = np.sum(np.diag(P) * s) - s.size + delta @ P @ delta - logdet_P - np.sum(np.log(s))
        return float(0.5 * val)
    raise ValidationError(f"unsupported posterior type {type(post).__name__}")
