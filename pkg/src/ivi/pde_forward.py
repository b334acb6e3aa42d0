"""Meshes, P1/Q1 finite elements and the linear forward maps.

Two forward problems are provided:

* the elliptic source problem ``(I - alpha Lap) w = u`` on (0, 1), w = 0 on the boundary;
* the Darcy pressure equation ``-div(exp(u) grad w) = f`` on (0, 1)^2, linearized in
  the log-permeability around a background field ``u_star``.

Both are linear maps ``u -> observations`` that share one implementation: a
factorized interior system ``A w_I = (R u)_I`` followed by interpolation at the
observation points. Each solve with the factorized system (forward or adjoint)
increments a thread-safe counter so cost accounting can be audited.
"""
from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InverseCrimeError, NumericError, ValidationError

__all__ = [
    "Mesh",
    "AssembledOperators",
    "SolveCounter",
    "LinearPDEProblem",
    "EllipticProblem",
    "LinearizedDarcyProblem",
    "DarcyLinearization",
    "LinearForwardProblem",
    "SyntheticData",
    "build_mesh",
    "assemble_operators",
    "assemble_weighted_stiffness",
    "interpolation_matrix",
    "observe",
    "default_observation_points",
    "solve_elliptic_1d",
    "forward_matrix",
    "linearize_darcy",
    "darcy_pressure",
    "generate_data",
    "elliptic_truth",
    "darcy_truth",
]

# Two-point Gauss rule on [0, 1]; exact for the cubic integrands met here.
_GAUSS_X = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_GAUSS_W = np.array([0.5, 0.5])


class SolveCounter:
    """Counts PDE solves; safe to share between threads."""

    def __init__(self) -> None:
        self._count = 0
        self._lock = threading.Lock()

    def add(self, k: int = 1) -> None:
        if k < 0:
            raise ValidationError("solve counter can only increase")
        with self._lock:
            self._count += int(k)

    @property
    def count(self) -> int:
        return self._count

    def reset(self) -> None:
        with self._lock:
            self._count = 0


@dataclass(frozen=True)
class Mesh:
    """Uniform tensor grid on (0, 1)^dimension with ``n`` nodes per axis.

    Nodes are numbered with the first coordinate running fastest.
    """

    dimension: int
    n: int

    def __post_init__(self) -> None:
        if self.dimension not in (1, 2):
            raise ValidationError(f"dimension must be 1 or 2, got {self.dimension}")
        if int(self.n) != self.n or self.n < 3:
            raise ValidationError(f"mesh needs at least 3 nodes per axis, got {self.n}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    @property
    def num_nodes(self) -> int:
        return self.n**self.dimension

    @property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (num_nodes,) in 1-D and (num_nodes, 2) in 2-D."""
        x = self.axis
        if self.dimension == 1:
            return x.copy()
        xx, yy = np.meshgrid(x, x, indexing="xy")
        return np.column_stack([xx.ravel(), yy.ravel()])

    @property
    def boundary(self) -> np.ndarray:
        """Boolean mask of boundary nodes."""
        edge = np.zeros(self.n, dtype=bool)
        edge[[0, -1]] = True
        if self.dimension == 1:
            return edge
        return (edge[None, :] | edge[:, None]).ravel()

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary)

    @property
    def elements(self) -> np.ndarray:
        """Connectivity; 1-D rows are (left, right), 2-D rows run counter-clockwise."""
        n = self.n
        i = np.arange(n - 1)
        if self.dimension == 1:
            return np.column_stack([i, i + 1])
        ii, jj = np.meshgrid(i, i, indexing="xy")
        ll = (jj * n + ii).ravel()
        return np.column_stack([ll, ll + 1, ll + n + 1, ll + n])


def build_mesh(dimension: int, n: int) -> Mesh:
    """Uniform mesh of (0, 1)^dimension with n nodes per axis."""
    return Mesh(dimension=int(dimension), n=int(n))


def _reference_element(dimension: int):
    """Quadrature weights, shape values (nq, nloc) and reference gradients (nq, nloc, d)."""
    if dimension == 1:
        xi = _GAUSS_X
        w = _GAUSS_W
        N = np.column_stack([1.0 - xi, xi])
        G = np.tile(np.array([[-1.0], [1.0]]), (len(xi), 1, 1))
        return w, N, G
    xi, eta = np.meshgrid(_GAUSS_X, _GAUSS_X, indexing="xy")
    xi, eta = xi.ravel(), eta.ravel()
    w = np.outer(_GAUSS_W, _GAUSS_W).ravel()
    N = np.column_stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])
    dxi = np.column_stack([-(1 - eta), 1 - eta, eta, -eta])
    deta = np.column_stack([-(1 - xi), -xi, xi, 1 - xi])
    G = np.stack([dxi, deta], axis=-1)
    return w, N, G


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    """Sum element matrices of shape (n_el, nloc, nloc) into a global sparse matrix."""
    el = mesh.elements
    nloc = el.shape[1]
    rows = np.repeat(el, nloc, axis=1).ravel()
    cols = np.tile(el, (1, nloc)).ravel()
    N = mesh.num_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(N, N)).tocsr()


def quadrature_values(mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
    """Interpolate a nodal field to the quadrature points, shape (n_el, nq)."""
    _, N, _ = _reference_element(mesh.dimension)
    return np.asarray(nodal)[mesh.elements] @ N.T


def assemble_weighted_stiffness(mesh: Mesh, kappa_q: np.ndarray | None = None) -> sp.csr_matrix:
    """Stiffness matrix of ``-div(kappa grad .)`` with natural boundary conditions.

    ``kappa_q`` holds the coefficient at quadrature points, shape (n_el, nq);
    None means kappa = 1.
    """
    w, _, G = _reference_element(mesh.dimension)
    n_el = mesh.elements.shape[0]
    if kappa_q is None:
        kappa_q = np.ones((n_el, len(w)))
    scale = mesh.h ** (mesh.dimension - 2)
    local = np.einsum("q,eq,qad,qbd->eab", w, kappa_q, G, G) * scale
    return _scatter(mesh, local)


def _assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    w, N, _ = _reference_element(mesh.dimension)
    n_el = mesh.elements.shape[0]
    ref = np.einsum("q,qa,qb->ab", w, N, N) * mesh.h**mesh.dimension
    return _scatter(mesh, np.broadcast_to(ref, (n_el,) + ref.shape))


@dataclass(frozen=True)
class AssembledOperators:
    """Mass and stiffness matrices of the Lagrange basis on a mesh.

    ``stiffness_dirichlet`` is the interior block of the Neumann stiffness,
    i.e. the operator with homogeneous Dirichlet rows and columns eliminated;
    ``interior`` lists the node indices it acts on.
    """

    mass: sp.csr_matrix
    stiffness_neumann: sp.csr_matrix
    stiffness_dirichlet: sp.csr_matrix
    interior: np.ndarray


def assemble_operators(mesh: Mesh) -> AssembledOperators:
    """Assemble mass and stiffness matrices with linear (1-D) or bilinear (2-D) elements."""
    M = _assemble_mass(mesh)
    K = assemble_weighted_stiffness(mesh)
    I = mesh.interior
    KD = K[I][:, I].tocsr()
    return AssembledOperators(mass=M, stiffness_neumann=K, stiffness_dirichlet=KD, interior=I)


def default_observation_points(dimension: int) -> np.ndarray:
    """Observation sites: {i/20, i=1..20} in 1-D, the 20x20 lattice {i/21}^2 in 2-D."""
    if dimension == 1:
        return np.arange(1, 21) / 20.0
    g = np.arange(1, 21) / 21.0
    xx, yy = np.meshgrid(g, g, indexing="xy")
    return np.column_stack([xx.ravel(), yy.ravel()])


def _cell_coords(x: np.ndarray, n: int):
    h = 1.0 / (n - 1)
    cell = np.minimum(np.floor(x / h).astype(int), n - 2)
    return cell, x / h - cell


def interpolation_matrix(mesh: Mesh, points) -> sp.csr_matrix:
    """Sparse matrix evaluating the piecewise (bi)linear interpolant at ``points``."""
    pts = np.asarray(points, dtype=float)
    if mesh.dimension == 1:
        pts = pts.reshape(-1)
    else:
        pts = pts.reshape(-1, 2)
    if np.any(pts < 0.0) or np.any(pts > 1.0) or not np.all(np.isfinite(pts)):
        raise ValidationError("observation point outside the domain")
    n = mesh.n
    m = pts.shape[0]
    if mesh.dimension == 1:
        c, t = _cell_coords(pts, n)
        rows = np.repeat(np.arange(m), 2)
        cols = np.column_stack([c, c + 1]).ravel()
        vals = np.column_stack([1 - t, t]).ravel()
    else:
        cx, tx = _cell_coords(pts[:, 0], n)
        cy, ty = _cell_coords(pts[:, 1], n)
        base = cy * n + cx
        rows = np.repeat(np.arange(m), 4)
        cols = np.column_stack([base, base + 1, base + n + 1, base + n]).ravel()
        vals = np.column_stack(
            [(1 - tx) * (1 - ty), tx * (1 - ty), tx * ty, (1 - tx) * ty]
        ).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(m, mesh.num_nodes)).tocsr()


def observe(w: np.ndarray, mesh: Mesh, points) -> np.ndarray:
    """Values of the interpolant of nodal field ``w`` at ``points``."""
    return interpolation_matrix(mesh, points) @ np.asarray(w, dtype=float)


class LinearPDEProblem:
    """Linear map u -> O w with ``A w_I = (R u)_I`` and w = 0 on the boundary.

    Subclasses provide the interior system ``A`` and the load operator ``R``.
    """

    def __init__(self, mesh: Mesh, system: sp.spmatrix, load: sp.spmatrix, points=None):
        self.mesh = mesh
        self.operators = assemble_operators(mesh)
        self.points = default_observation_points(mesh.dimension) if points is None else np.asarray(points, dtype=float)
        self.obs_matrix = interpolation_matrix(mesh, self.points)
        self.interior = mesh.interior
        self.load = sp.csr_matrix(load)
        A = sp.csc_matrix(system)[self.interior][:, self.interior]
        try:
            self._lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise NumericError(f"state system is singular: {exc}") from exc
        self.counter = SolveCounter()

    @property
    def num_observations(self) -> int:
        return self.obs_matrix.shape[0]

    def _solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        k = 1 if rhs.ndim == 1 else rhs.shape[1]
        self.counter.add(k)
        return self._lu.solve(rhs)

    def solve(self, u: np.ndarray) -> np.ndarray:
        """State field for parameter ``u`` (nodal); one PDE solve."""
        u = np.asarray(u, dtype=float)
        if u.shape[0] != self.mesh.num_nodes:
            raise ValidationError(f"expected {self.mesh.num_nodes} nodal values, got {u.shape[0]}")
        w = np.zeros(self.mesh.num_nodes)
        w[self.interior] = self._solve_interior((self.load @ u)[self.interior])
        return w

    def observe(self, w: np.ndarray) -> np.ndarray:
        return self.obs_matrix @ w

    def apply(self, u: np.ndarray) -> np.ndarray:
        """H u: solve then observe."""
        return self.observe(self.solve(u))

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        """H^T y by one adjoint solve (the interior system is symmetric)."""
        y = np.asarray(y, dtype=float)
        z = (self.obs_matrix.T @ y)[self.interior]
        x = self._solve_interior(z)
        return self.load.T[:, self.interior] @ x

    def forward_matrix(self) -> np.ndarray:
        """Dense H, built from one adjoint solve per observation."""
        Z = self.obs_matrix.T.toarray()[self.interior]
        X = self._solve_interior(Z)
        return np.asarray((self.load.T[:, self.interior] @ X).T)

    def misfit_gradient(self, u: np.ndarray, d: np.ndarray, noise_precision: float) -> np.ndarray:
        """H^T Gamma^{-1} (H u - d): one forward and one adjoint solve."""
        r = self.apply(u) - np.asarray(d, dtype=float)
        return self.apply_adjoint(noise_precision * r)


class EllipticProblem(LinearPDEProblem):
    """Inverse source problem ``(I - alpha Lap) w = u``, w = 0 on the boundary."""

    def __init__(self, mesh: Mesh, alpha_pde: float = 0.05, points=None):
        if not alpha_pde > 0:
            raise ValidationError("alpha_pde must be positive")
        ops = assemble_operators(mesh)
        self.alpha_pde = float(alpha_pde)
        super().__init__(mesh, ops.mass + alpha_pde * ops.stiffness_neumann, ops.mass, points)


def solve_elliptic_1d(problem: EllipticProblem, u: np.ndarray) -> np.ndarray:
    """Nodal solution of the discretized ``(I - alpha Lap) w = u`` with zero boundary values."""
    return problem.solve(u)


def forward_matrix(problem: LinearPDEProblem) -> np.ndarray:
    return problem.forward_matrix()


def _darcy_system(mesh: Mesh, u: np.ndarray) -> sp.csr_matrix:
    return assemble_weighted_stiffness(mesh, np.exp(quadrature_values(mesh, u)))


def darcy_pressure(mesh: Mesh, u: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Solve ``-div(exp(u) grad w) = f`` with w = 0 on the boundary."""
    K = _darcy_system(mesh, u)
    M = assemble_operators(mesh).mass
    I = mesh.interior
    w = np.zeros(mesh.num_nodes)
    try:
        w[I] = spla.spsolve(K[I][:, I].tocsc(), (M @ f)[I])
    except RuntimeError as exc:
        raise NumericError(f"background solve failed: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise NumericError("background solve returned non-finite values")
    return w


def _darcy_load(mesh: Mesh, u_star: np.ndarray, w0: np.ndarray) -> sp.csr_matrix:
    """Matrix B with (B du)_j = -int exp(u*) du grad(w0).grad(phi_j)."""
    w, N, G = _reference_element(mesh.dimension)
    el = mesh.elements
    kappa = np.exp(quadrature_values(mesh, u_star))
    grad_w0 = np.einsum("ea,qad->eqd", w0[el], G)
    scale = mesh.h ** (mesh.dimension - 2)
    # rows: test function j, columns: trial du_k
    local = -np.einsum("q,eq,qk,eqd,qjd->ejk", w, kappa, N, grad_w0, G) * scale
    return _scatter(mesh, local)


class LinearizedDarcyProblem(LinearPDEProblem):
    """du -> observations of dw, ``-div(e^{u*} grad dw) = div(e^{u*} du grad w0)``."""

    def __init__(self, mesh: Mesh, u_star: np.ndarray, f: np.ndarray, points=None):
        if mesh.dimension != 2:
            raise ValidationError("the Darcy problem is two-dimensional")
        u_star = np.asarray(u_star, dtype=float)
        f = np.asarray(f, dtype=float)
        self.u_star = u_star
        self.f = f
        self.w0 = darcy_pressure(mesh, u_star, f)
        super().__init__(mesh, _darcy_system(mesh, u_star), _darcy_load(mesh, u_star, self.w0), points)
        # the background solve is a PDE solve too
        self.counter.add(1)


@dataclass(frozen=True)
class DarcyLinearization:
    """Background state and dense linearized observation map."""

    u_star: np.ndarray
    f: np.ndarray
    w0: np.ndarray
    H_lin: np.ndarray
    problem: LinearizedDarcyProblem = field(repr=False)


def linearize_darcy(mesh: Mesh, u_star=None, f=None, points=None) -> DarcyLinearization:
    """Background solve plus the dense map du -> dw observations."""
    if u_star is None:
        u_star = np.zeros(mesh.num_nodes)
    if f is None:
        f = np.ones(mesh.num_nodes)
    prob = LinearizedDarcyProblem(mesh, u_star, f, points)
    return DarcyLinearization(u_star=prob.u_star, f=prob.f, w0=prob.w0, H_lin=prob.forward_matrix(), problem=prob)


@dataclass(frozen=True)
class LinearForwardProblem:
    """Dense observation operator with diagonal noise covariance and data."""

    H: np.ndarray
    observation_points: np.ndarray
    noise_variance: float
    data: np.ndarray
    pde: LinearPDEProblem | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.H.shape[0] != self.data.shape[0]:
            raise ValidationError("H rows and data length differ")
        if not self.noise_variance > 0:
            raise ValidationError("noise variance must be positive")

    @property
    def num_observations(self) -> int:
        return self.H.shape[0]

    @property
    def noise_precision(self) -> float:
        return 1.0 / self.noise_variance

    @property
    def gamma_noise(self) -> np.ndarray:
        return self.noise_variance * np.eye(self.num_observations)

    @property
    def pde_solve_counter(self) -> int:
        return 0 if self.pde is None else self.pde.counter.count


def elliptic_truth(x) -> np.ndarray:
    """Source used for the 1-D experiment: 10 (cos 4 pi x + 1)."""
    return 10.0 * (np.cos(4.0 * np.pi * np.asarray(x)) + 1.0)


def darcy_truth(xy) -> np.ndarray:
    """Log-permeability with two Gaussian bumps."""
    xy = np.asarray(xy)
    x, y = xy[..., 0], xy[..., 1]
    return np.exp(-20 * (x - 0.3) ** 2 - 20 * (y - 0.4) ** 2) + np.exp(-20 * (x - 0.7) ** 2 - 20 * (y - 0.6) ** 2)


@dataclass(frozen=True)
class SyntheticData:
    data: np.ndarray
    noise_variance: float
    clean: np.ndarray
    fine_n: int


def generate_data(
    truth: Callable[[np.ndarray], np.ndarray],
    fine_n: int,
    setup: LinearPDEProblem,
    noise_pct: float,
    rng: np.random.Generator,
    allow_inverse_crime: bool = False,
) -> SyntheticData:
    """Noisy observations of ``truth`` computed on a finer mesh than ``setup``.

    The clean values are produced by the same kind of forward map rebuilt on a
    mesh with ``fine_n`` nodes per axis and evaluated at the setup's observation
    points. Noise is N(0, sigma^2 I) with sigma = noise_pct * max|clean|.
    """
    if noise_pct < 0:
        raise ValidationError("noise_pct must be nonnegative")
    coarse_n = setup.mesh.n
    if fine_n <= coarse_n:
        msg = f"data mesh ({fine_n}) is not finer than the inversion mesh ({coarse_n})"
        if not allow_inverse_crime:
            raise InverseCrimeError(msg)
        warnings.warn(msg, stacklevel=2)
    fine = build_mesh(setup.mesh.dimension, fine_n)
    u_fine = truth(fine.nodes)
    if isinstance(setup, EllipticProblem):
        fine_problem: LinearPDEProblem = EllipticProblem(fine, setup.alpha_pde, setup.points)
    elif isinstance(setup, LinearizedDarcyProblem):
        fine_problem = LinearizedDarcyProblem(
            fine,
            _resample(setup.mesh, setup.u_star, fine),
            _resample(setup.mesh, setup.f, fine),
            setup.points,
        )
    else:
        raise ValidationError(f"unsupported problem type {type(setup).__name__}")
    clean = fine_problem.apply(u_fine)
    sigma = noise_pct * float(np.max(np.abs(clean)))
    noise_variance = sigma**2 if sigma > 0 else 0.0
    d = clean + sigma * rng.standard_normal(clean.shape) if sigma > 0 else clean.copy()
    return SyntheticData(data=d, noise_variance=noise_variance, clean=clean, fine_n=int(fine_n))


def _resample(coarse: Mesh, values: np.ndarray, fine: Mesh) -> np.ndarray:
    """Interpolate a nodal field to the nodes of a finer mesh."""
    return interpolation_matrix(coarse, fine.nodes) @ np.asarray(values, dtype=float)
