"""Gaussian prior N(0, C0) with C0 = (I - alpha Lap)^{-2} under Neumann boundary conditions.

The eigensystem comes from the generalized problem ``(M + alpha K) v = lam M v``
with mass-orthonormal ``v``; the prior eigenvalues are ``c = lam^{-2}``. On 2-D
tensor grids the problem separates into two 1-D problems, which is used as a
fast path.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericError, ValidationError
from .pde_forward import Mesh, assemble_operators, build_mesh

__all__ = ["PriorOperator", "PriorSpectrum", "build_prior", "prior_spectrum", "truncation_level", "sample_prior"]


@dataclass(frozen=True)
class PriorOperator:
    """Discrete ``I - alpha Lap`` with natural boundary conditions."""

    alpha_prior: float
    mesh: Mesh
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix

    @property
    def neumann_operator(self) -> sp.csr_matrix:
        """Weak form matrix M + alpha K."""
        return (self.mass + self.alpha_prior * self.stiffness).tocsr()

    def apply_covariance(self, u: np.ndarray) -> np.ndarray:
        """C0 u by two Neumann solves: ((M + alpha K)^{-1} M)^2 u."""
        lu = spla.splu(self.neumann_operator.tocsc())
        return lu.solve(self.mass @ lu.solve(self.mass @ np.asarray(u, dtype=float)))

    def covariance_matrix(self) -> np.ndarray:
        """Nodal covariance Cov(u(x_i), u(x_j)) = A^{-1} M A^{-1}, A = M + alpha K."""
        lu = spla.splu(self.neumann_operator.tocsc())
        X = lu.solve(self.mass.toarray())
        return lu.solve(X.T)


def build_prior(mesh: Mesh, alpha_prior: float = 0.05) -> PriorOperator:
    if not alpha_prior > 0:
        raise ValidationError(f"alpha_prior must be positive, got {alpha_prior}")
    ops = assemble_operators(mesh)
    return PriorOperator(alpha_prior=float(alpha_prior), mesh=mesh, mass=ops.mass, stiffness=ops.stiffness_neumann)


@dataclass(frozen=True)
class PriorSpectrum:
    """Eigenpairs of C0 sorted by decreasing eigenvalue.

    ``e[:, i]`` is the nodal vector of the i-th eigenfunction (0-based column,
    mode i + 1); columns satisfy e^T M e = I. ``M`` counts the active modes.
    """

    c: np.ndarray
    e: np.ndarray
    M: int
    C_M: float
    mass: sp.csr_matrix
    truncation_warning: bool = False

    @property
    def num_modes(self) -> int:
        return self.c.shape[0]

    @property
    def active(self) -> slice:
        return slice(0, self.M)

    def coefficients(self, u: np.ndarray) -> np.ndarray:
        """Coordinates <u, e_i>_M of nodal field(s); works column-wise on 2-D input."""
        return self.e.T @ (self.mass @ u)

    def field(self, coeffs: np.ndarray) -> np.ndarray:
        """Nodal field sum_i coeffs_i e_i."""
        return self.e @ coeffs

    def covariance_matrix(self, variances: np.ndarray | None = None) -> np.ndarray:
        """Nodal covariance sum_i s_i e_i e_i^T; the prior when ``variances`` is None."""
        s = self.c if variances is None else np.asarray(variances)
        return (self.e * s) @ self.e.T

    def to_csv(self, path) -> None:
        idx = np.arange(1, self.num_modes + 1)
        np.savetxt(path, np.column_stack([idx, self.c]), delimiter=",", header="index,eigenvalue", comments="", fmt=["%d", "%.17g"])


def truncation_level(c: np.ndarray, C_M: float) -> tuple[int, bool]:
    """Smallest 1-based m with c_m / c_1 < C_M; (len(c), True) when none qualifies."""
    below = np.flatnonzero(np.asarray(c) / c[0] < C_M)
    if below.size == 0:
        return len(c), True
    return int(below[0]) + 1, False


def _generalized_eigh(A: np.ndarray, B: np.ndarray):
    try:
        lam, V = sla.eigh(A, B)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    return lam, V


def _sorted(lam: np.ndarray, V: np.ndarray):
    order = np.argsort(lam, kind="stable")
    return lam[order], V[:, order]


def prior_spectrum(prior: PriorOperator, C_M: float = 1e-3, method: str = "auto") -> PriorSpectrum:
    """Eigenvalues c_i = lam_i^{-2} and mass-orthonormal eigenvectors of C0.

    ``method`` is "dense" (one generalized dense problem), "tensor" (2-D only,
    products of 1-D eigenpairs) or "auto".
    """
    if not 0.0 < C_M < 1.0 and C_M != 1.0:
        raise ValidationError(f"C_M must lie in (0, 1], got {C_M}")
    mesh = prior.mesh
    if method == "auto":
        method = "tensor" if mesh.dimension == 2 else "dense"
    if method == "dense":
        lam, V = _generalized_eigh(prior.neumann_operator.toarray(), prior.mass.toarray())
    elif method == "tensor":
        if mesh.dimension != 2:
            raise ValidationError("tensor eigensolver needs a 2-D mesh")
        one = build_mesh(1, mesh.n)
        ops = assemble_operators(one)
        mu, W = _generalized_eigh(ops.stiffness_neumann.toarray(), ops.mass.toarray())
        # node index = j * n + i with x index i fastest, hence kron(W_y, W_x)
        lam = (1.0 + prior.alpha_prior * (mu[:, None] + mu[None, :])).ravel()
        V = np.kron(W, W)
    else:
        raise ValidationError(f"unknown eigensolver method {method!r}")
    lam, V = _sorted(lam, V)
    if np.any(lam <= 0):
        raise NumericError("prior operator is not positive definite")
    c = lam**-2.0
    M, flag = truncation_level(c, C_M)
    if flag:
        warnings.warn(f"no eigenvalue ratio falls below C_M={C_M}; keeping all {M} modes", stacklevel=2)
    return PriorSpectrum(c=c, e=V, M=M, C_M=float(C_M), mass=prior.mass, truncation_warning=flag)


def sample_prior(spectrum: PriorSpectrum, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw u = sum_i sqrt(c_i) zeta_i e_i; rows are samples when ``size`` is given."""
    n = spectrum.num_modes
    if size is None:
        return spectrum.e @ (np.sqrt(spectrum.c) * rng.standard_normal(n))
    zeta = rng.standard_normal((size, n))
    return (zeta * np.sqrt(spectrum.c)) @ spectrum.e.T
