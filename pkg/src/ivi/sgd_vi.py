"""Constant-rate SGD as a sampler: cSGD and its preconditioned variant pcSGD.

Everything works in prior-eigenbasis coordinates. The active modes 1..M follow
the linear recursion

    u_i <- u_i - eta t_i (a_tilde_i (u_i - ubar_i) - sqrt(c_i q_i) zeta_i / S)

whose stationary law is Gaussian with variance

    s_i = eta t_i c_i q_i / (S^2 (2 a_tilde_i - eta t_i a_tilde_i^2)),

while the inactive modes are drawn from the prior. cSGD is the special case
t_i = 1. The learning rate, the noise scale S and the gradient-noise
eigenvalues q_i are chosen by closed-form rules; see ``optimal_eta``,
``optimal_S`` and ``choose_Q``.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import StabilityError, ValidationError
from .pde_forward import LinearForwardProblem, SolveCounter
from .posterior_oracle import ModeParams, kl_diagonal
from .prior_spectral import PriorSpectrum

__all__ = [
    "GradientNoiseSpec",
    "PreconditionerSpec",
    "LearningRateReport",
    "VariationalPosterior",
    "ChainConfig",
    "ChainOutput",
    "ChainResult",
    "full_gradient",
    "stochastic_gradient",
    "stationary_variance",
    "optimal_eta",
    "kl_optimal_eta",
    "optimal_S",
    "s_upper_bound",
    "noise_eigenvalues",
    "projected_gradient",
    "projected_gradient_covariance",
    "choose_Q",
    "p_upper_bound",
    "projection_dimension",
    "estimated_posterior_from_formulas",
    "run_chain",
    "pde_solves_per_step",
]


@dataclass(frozen=True)
class GradientNoiseSpec:
    """Gradient noise with covariance C0 Q on the active modes, scaled by 1/S."""

    S: float
    q: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float)
        if not (np.isfinite(self.S) and self.S > 0):
            raise ValidationError(f"S must be positive and finite, got {self.S}")
        if q.ndim != 1 or np.any(q <= 0) or not np.all(np.isfinite(q)):
            raise ValidationError("q must be a vector of positive finite values")
        object.__setattr__(self, "q", q)


@dataclass(frozen=True)
class PreconditionerSpec:
    """Preconditioner diagonal in the prior basis with eigenvalues t_i."""

    t: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 1 or np.any(t <= 0) or not np.all(np.isfinite(t)):
            raise ValidationError("t must be a vector of positive finite values")
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls, M: int) -> "PreconditionerSpec":
        return cls(np.ones(M))

    @classmethod
    def hessian_inverse(cls, params: ModeParams) -> "PreconditionerSpec":
        """t_i = 1 / a_tilde_i: every mode contracts at the same rate."""
        return cls(1.0 / params.a_tilde)

    def tau(self, params: ModeParams) -> np.ndarray:
        return self.t * params.a_tilde

    def tau_max(self, params: ModeParams) -> float:
        return float(np.max(self.tau(params)))


@dataclass(frozen=True)
class LearningRateReport:
    eta_dagger: float
    S_used: float
    omega_bound: float
    fixed_point_iterations: int = 0
    converged: bool = True

    @property
    def stable(self) -> bool:
        return 0.0 < self.eta_dagger < self.omega_bound


@dataclass(frozen=True)
class VariationalPosterior:
    """Gaussian nu, diagonal in the prior basis: coefficient means and variances for all modes."""

    mean_coeffs: np.ndarray
    s: np.ndarray

    def __post_init__(self) -> None:
        if np.shape(self.mean_coeffs) != np.shape(self.s):
            raise ValidationError("mean and variance vectors differ in length")
        if np.any(np.asarray(self.s) <= 0):
            raise ValidationError("variances must be positive")

    def mean(self, spectrum: PriorSpectrum) -> np.ndarray:
        return spectrum.field(self.mean_coeffs)

    def covariance(self, spectrum: PriorSpectrum) -> np.ndarray:
        return spectrum.covariance_matrix(self.s)

    def to_csv(self, path) -> None:
        idx = np.arange(1, len(self.s) + 1)
        np.savetxt(
            path,
            np.column_stack([idx, self.mean_coeffs, self.s]),
            delimiter=",",
            header="mode,mean_coefficient,variance",
            comments="",
            fmt=["%d", "%.17g", "%.17g"],
        )


def _t(params: ModeParams, precond: PreconditionerSpec | None) -> np.ndarray:
    if precond is None:
        return np.ones(params.M)
    if precond.t.shape[0] != params.M:
        raise ValidationError("preconditioner length differs from the number of active modes")
    return precond.t


def _check_q(params: ModeParams, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (params.M,):
        raise ValidationError(f"q must have length {params.M}")
    return q


def omega_bound(params: ModeParams, precond: PreconditionerSpec | None = None) -> float:
    """Upper end of the stable learning-rate interval, 2 / max(t_i a_tilde_i)."""
    return float(2.0 / np.max(_t(params, precond) * params.a_tilde))


def full_gradient(u: np.ndarray, params: ModeParams, u_bar: np.ndarray) -> np.ndarray:
    """Gradient a_tilde_i (u_i - ubar_i) of the quadratic model on the active modes."""
    u = np.asarray(u, dtype=float)
    return params.a_tilde * (u - np.asarray(u_bar, dtype=float)[: params.M])


def stochastic_gradient(
    u: np.ndarray, params: ModeParams, u_bar: np.ndarray, noise: GradientNoiseSpec, rng: np.random.Generator
) -> np.ndarray:
    """Full gradient minus xi / S with xi_i = sqrt(c_i q_i) zeta_i."""
    zeta = rng.standard_normal(params.M)
    return full_gradient(u, params, u_bar) - np.sqrt(params.c * _check_q(params, noise.q)) * zeta / noise.S


def _assert_stable(eta: float, params: ModeParams, t: np.ndarray) -> None:
    rate = eta * t * params.a_tilde
    bad = np.flatnonzero(~((rate > 0) & (rate < 2)))
    if bad.size:
        i = int(bad[0])
        raise StabilityError(
            f"learning rate {eta:.6g} is unstable for mode {i + 1}: eta t a_tilde = {rate[i]:.6g} not in (0, 2)"
        )


def stationary_variance(
    eta: float,
    noise: GradientNoiseSpec,
    params: ModeParams,
    precond: PreconditionerSpec | None = None,
    tail_c: np.ndarray | None = None,
) -> np.ndarray:
    """Stationary variances of the active modes, followed by ``tail_c`` when given."""
    t = _t(params, precond)
    q = _check_q(params, noise.q)
    _assert_stable(eta, params, t)
    at = params.a_tilde
    s = eta * t * params.c * q / (noise.S**2 * (2.0 * at - eta * t * at**2))
    if tail_c is None:
        return s
    return np.concatenate([s, np.asarray(tail_c, dtype=float)])


def optimal_eta(
    params: ModeParams,
    noise: GradientNoiseSpec,
    precond: PreconditionerSpec | None = None,
    raise_on_unstable: bool = True,
) -> LearningRateReport:
    """Closed-form learning rate

        eta = 2 S^2 sum(a_tilde_i / (t_i q_i)) / (M' + S^2 sum(a_tilde_i^2 / q_i)).
    """
    t = _t(params, precond)
    q = _check_q(params, noise.q)
    at = params.a_tilde
    S2 = noise.S**2
    eta = 2.0 * S2 * np.sum(at / (t * q)) / (params.M_prime + S2 * np.sum(at**2 / q))
    report = LearningRateReport(eta_dagger=float(eta), S_used=float(noise.S), omega_bound=omega_bound(params, precond))
    if raise_on_unstable and not report.stable:
        raise StabilityError(
            f"optimal learning rate {eta:.6g} exceeds the stability bound {report.omega_bound:.6g}; "
            f"choose S below s_upper_bound = {s_upper_bound(params, q, precond):.6g}"
        )
    return report


def kl_optimal_eta(
    params: ModeParams, noise: GradientNoiseSpec, precond: PreconditionerSpec | None = None, xatol: float = 1e-12
) -> float:
    """Learning rate minimizing the diagonal KL objective by bounded scalar search."""
    hi = omega_bound(params, precond)

    def objective(eta: float) -> float:
        return kl_diagonal(stationary_variance(eta, noise, params, precond), params)

    res = minimize_scalar(objective, bounds=(hi * 1e-9, hi * (1 - 1e-9)), method="bounded", options={"xatol": xatol * hi})
    return float(res.x)


def optimal_S(params: ModeParams, eta: float, q: np.ndarray, precond: PreconditionerSpec | None = None) -> float:
    """Noise scale S = sqrt(eta M' / sum((2 a_tilde_i - eta t_i a_tilde_i^2) / (t_i q_i)))."""
    t = _t(params, precond)
    q = _check_q(params, q)
    at = params.a_tilde
    den = np.sum((2.0 * at - eta * t * at**2) / (t * q))
    if not den > 0:
        raise StabilityError(f"no positive S exists for learning rate {eta:.6g}")
    return float(np.sqrt(eta * params.M_prime / den))


def s_upper_bound(params: ModeParams, q: np.ndarray, precond: PreconditionerSpec | None = None) -> float:
    """Largest S keeping the optimal learning rate stable; +inf when every tau_i is equal."""
    t = _t(params, precond)
    q = _check_q(params, q)
    at = params.a_tilde
    tau_max = float(np.max(t * at))
    den = float(np.sum(tau_max * at / (t * q) - at**2 / q))
    scale = float(np.sum(tau_max * at / (t * q)))
    if den < -1e-12 * scale:
        raise ValidationError("negative denominator in the S bound")
    if den <= 1e-14 * scale:
        return float("inf")
    return float(np.sqrt(params.M_prime / den))


def noise_eigenvalues(p: float, a_tilde: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Diagonal of (1/p) A^{1/2} (|z|^2 I + z z^T) A^{1/2} for diagonal A = diag(a_tilde)."""
    if not p > 0:
        raise ValidationError("projection dimension p must be positive")
    z = np.asarray(z, dtype=float)
    return np.asarray(a_tilde) * (z @ z + z**2) / p


def _sqrt_operator(a_sqrt) -> np.ndarray:
    A = np.asarray(a_sqrt, dtype=float)
    return np.diag(A) if A.ndim == 1 else A


def projected_gradient(u, a_sqrt, u_bar, p: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Gradient of 0.5 |P A^{1/2} (u - ubar)|^2 for random P (p x M) with N(0, 1/p) entries.

    ``a_sqrt`` is A^{1/2} as a symmetric matrix or as the diagonal of one.
    With ``size`` the result has one row per independent draw of P.
    """
    if int(p) != p or p < 1:
        raise ValidationError("projection dimension must be a positive integer")
    B = _sqrt_operator(a_sqrt)
    z = B @ (np.asarray(u, dtype=float) - np.asarray(u_bar, dtype=float)[: B.shape[0]])
    n = 1 if size is None else int(size)
    P = rng.standard_normal((n, int(p), z.size)) / np.sqrt(p)
    g = np.einsum("nkj,nk->nj", P, P @ z) @ B.T
    return g[0] if size is None else g


def projected_gradient_covariance(a_sqrt, z, p: float) -> np.ndarray:
    """(1/p) A^{1/2} (|z|^2 I + z z^T) A^{1/2} with z = A^{1/2} (u - ubar)."""
    B = _sqrt_operator(a_sqrt)
    z = np.asarray(z, dtype=float)
    return B @ ((z @ z) * np.eye(z.size) + np.outer(z, z)) @ B.T / p


def choose_Q(
    p: float, params: ModeParams, z: np.ndarray, S: float, q_floor: float | None = None
) -> np.ndarray:
    """q_i = S^2 phi_i / c_i from the random-projection noise eigenvalues phi_i.

    ``q_floor`` bounds q from below; None means 1e-12 max(q). A zero residual
    with a zero floor leaves no noise at all and is rejected.
    """
    phi = noise_eigenvalues(p, params.a_tilde, z)
    q = S**2 * phi / params.c
    floor = 1e-12 * float(np.max(q)) if q_floor is None else float(q_floor)
    if floor <= 0 and np.any(q <= 0):
        raise ValidationError("zero residual gives degenerate gradient noise; set a positive q_floor")
    return np.maximum(q, floor)


def p_upper_bound(params: ModeParams, z: np.ndarray, precond: PreconditionerSpec | None = None) -> float:
    """Largest projection dimension for which the optimal learning rate stays stable.

    With q_i = S^2 phi_i / c_i the S bound no longer depends on S and turns into
    p < M' / sum(c_i (tau_max / t_i - a_tilde_i) / (|z|^2 + z_i^2)).
    """
    t = _t(params, precond)
    at = params.a_tilde
    z = np.asarray(z, dtype=float)
    tau_max = float(np.max(t * at))
    w = params.c * (tau_max / t - at)
    w = np.where(w < 1e-14 * tau_max / t * params.c, 0.0, w)
    den = float(np.sum(w / (z @ z + z**2)))
    if den <= 0 or not np.isfinite(den):
        return float("inf")
    return float(params.M_prime / den)


def projection_dimension(
    p, params: ModeParams, z: np.ndarray, precond: PreconditionerSpec | None = None, safety: float = 0.5
) -> float:
    """Projection dimension used to build Q at residual z.

    A number is capped at ``safety * p_upper_bound``. "auto" takes that cap
    itself; when the bound is infinite (all tau_i equal) it takes |z|^2, for
    which the optimal learning rate is close to 1.
    """
    cap = safety * p_upper_bound(params, z, precond)
    if p == "auto":
        if np.isfinite(cap):
            return float(cap)
        zz = float(np.asarray(z) @ np.asarray(z))
        return zz if zz > 0 else 1.0
    return float(min(float(p), cap))


def estimated_posterior_from_formulas(
    params: ModeParams,
    eta: float,
    noise: GradientNoiseSpec,
    u_bar: np.ndarray,
    c_full: np.ndarray,
    precond: PreconditionerSpec | None = None,
) -> VariationalPosterior:
    """nu with mean ubar on the active modes, zero tail mean, and stationary variances."""
    M = params.M
    c_full = np.asarray(c_full, dtype=float)
    s = stationary_variance(eta, noise, params, precond, tail_c=c_full[M:])
    mean = np.zeros_like(c_full)
    mean[:M] = np.asarray(u_bar, dtype=float)[:M]
    return VariationalPosterior(mean_coeffs=mean, s=s)


def pde_solves_per_step(variant: str, n_ite: int) -> int:
    """Solves per iteration: two for the gradient, plus 2 n_ite for applying T in pcSGD."""
    return 2 if variant == "csgd" else 2 + 2 * int(n_ite)


@dataclass
class ChainConfig:
    """Settings for one cSGD or pcSGD run.

    K outer steps of J iterations each are performed and the iterate at the end
    of every outer step is kept, so exactly K samples are produced. The learning
    rate and S are recomputed at the start of every outer step, and Q is
    rebuilt from the current residual every ``q_refresh`` outer steps (0 keeps
    the Q built at u0 = 0). ``tol`` locates the end of burn-in: the first outer
    step whose relative change ||u_{k+1} - u_k|| / ||u_k|| is at most tol.
    """

    K: int = 100
    J: int = 20
    tol: float = 0.1
    S0: float = 1.0
    p: float | str = "auto"
    p_safety: float = 0.5
    q_floor: float | None = None
    q_refresh: int = 1
    q: np.ndarray | None = None
    eta: float | None = None
    adaptation: str = "per_step"
    gradient: str = "model"
    sample_mode: str = "thin"
    n_ite: int = 10
    precond: str = "hessian_inverse"
    t: np.ndarray | None = None
    discard_burn_in: bool = True

    def validate(self) -> None:
        if self.K < 1 or self.J < 1:
            raise ValidationError("K and J must be at least 1")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if not self.S0 > 0:
            raise ValidationError("S0 must be positive")
        if self.p != "auto" and not (isinstance(self.p, (int, float)) and self.p > 0):
            raise ValidationError("p must be positive or 'auto'")
        if not 0 < self.p_safety <= 1:
            raise ValidationError("p_safety must lie in (0, 1]")
        if self.q_refresh < 0:
            raise ValidationError("q_refresh must be nonnegative")
        if self.adaptation not in ("per_step", "fixed_point"):
            raise ValidationError(f"unknown adaptation {self.adaptation!r}")
        if self.gradient not in ("model", "pde"):
            raise ValidationError(f"unknown gradient mode {self.gradient!r}")
        if self.sample_mode not in ("thin", "average"):
            raise ValidationError(f"unknown sample mode {self.sample_mode!r}")
        if self.precond not in ("hessian_inverse", "identity", "custom"):
            raise ValidationError(f"unknown preconditioner {self.precond!r}")
        if self.precond == "custom" and self.t is None:
            raise ValidationError("custom preconditioner needs t")
        if self.n_ite < 0:
            raise ValidationError("n_ite must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("q", "t"):
            if d[key] is not None:
                d[key] = np.asarray(d[key]).tolist()
        return d


@dataclass
class ChainOutput:
    variant: str
    seed: int | None
    samples: np.ndarray
    sample_coeffs: np.ndarray
    step_means: np.ndarray
    relative_error_series: np.ndarray
    sample_error_series: np.ndarray
    reference_error_series: np.ndarray | None
    eta_series: np.ndarray
    S_series: np.ndarray
    p_series: np.ndarray
    relative_change_series: np.ndarray
    converged_at: int | None
    pde_solve_count: int
    iterations: int
    wall_time: float
    config: dict = field(default_factory=dict)
    iterate_history: np.ndarray | None = None

    @property
    def converged(self) -> bool:
        return self.converged_at is not None

    @property
    def burn_in(self) -> int:
        """Number of leading samples excluded from the empirical statistics."""
        if self.converged_at is None or not self.config.get("discard_burn_in", True):
            return 0
        return min(self.converged_at + 1, self.samples.shape[0] - 2) if self.samples.shape[0] > 2 else 0

    @property
    def retained_coeffs(self) -> np.ndarray:
        return self.sample_coeffs[self.burn_in :]

    @property
    def retained_samples(self) -> np.ndarray:
        return self.samples[self.burn_in :]

    def series_csv(self, path) -> None:
        k = np.arange(1, len(self.relative_error_series) + 1)
        cols = [k, self.relative_error_series, self.sample_error_series, self.eta_series, self.S_series, self.p_series]
        header = "step,relative_error,sample_error,eta,S,p"
        if self.reference_error_series is not None:
            cols.append(self.reference_error_series)
            header += ",reference_error"
        fmt = ["%d"] + ["%.17g"] * (len(cols) - 1)
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="", fmt=fmt)

    def samples_csv(self, path) -> None:
        np.savetxt(path, self.samples, delimiter=",", fmt="%.17g")


@dataclass
class ChainResult:
    output: ChainOutput
    formula_posterior: VariationalPosterior
    empirical_posterior: VariationalPosterior | None
    learning_rate: LearningRateReport
    noise: GradientNoiseSpec
    precond: PreconditionerSpec


def _preconditioner(variant: str, config: ChainConfig, params: ModeParams) -> PreconditionerSpec:
    if variant == "csgd":
        return PreconditionerSpec.identity(params.M)
    if config.precond == "hessian_inverse":
        return PreconditionerSpec.hessian_inverse(params)
    if config.precond == "identity":
        return PreconditionerSpec.identity(params.M)
    t = np.asarray(config.t, dtype=float)
    return PreconditionerSpec(t[: params.M])


def _rel_sq(x: np.ndarray, ref: np.ndarray) -> float:
    return float(np.sum((x - ref) ** 2) / np.sum(ref**2))


def run_chain(
    forward: LinearForwardProblem | None,
    spectrum: PriorSpectrum,
    params: ModeParams,
    u_bar: np.ndarray,
    variant: str = "csgd",
    config: ChainConfig | None = None,
    seed: int | None = 0,
    truth_coeffs: np.ndarray | None = None,
    reference_coeffs: np.ndarray | None = None,
    keep_history: bool = False,
) -> ChainResult:
    """Run cSGD ("csgd") or pcSGD ("pcsgd") and collect K samples.

    ``u_bar`` are the posterior-mean coefficients in the prior basis (all
    modes). ``truth_coeffs`` and ``reference_coeffs`` feed the relative-error
    series (squared mass-norm ratios). Entry k of those series measures the
    step-k mean estimate: the average of the J iterates of outer step k on the
    active modes, with the inactive modes at their prior mean 0.
    ``sample_error_series`` measures the raw samples instead. With ``gradient="model"`` the gradient
    is the quadratic-model gradient a_tilde (u - ubar) and the solve counter of
    ``forward.pde`` is charged with the solves a PDE-based gradient would need;
    ``gradient="pde"`` evaluates H^T Gamma^{-1} (H u - d) with real solves.
    """
    config = ChainConfig() if config is None else config
    config.validate()
    if variant not in ("csgd", "pcsgd"):
        raise ValidationError(f"unknown variant {variant!r}")
    M, n = params.M, spectrum.num_modes
    u_bar = np.asarray(u_bar, dtype=float)
    ub = u_bar[:M]
    at, c = params.a_tilde, params.c
    precond = _preconditioner(variant, config, params)
    t = precond.t
    rng = np.random.default_rng(seed)
    pde = None if forward is None else forward.pde
    counter = pde.counter if pde is not None else SolveCounter()
    start_count = counter.count
    extra = pde_solves_per_step(variant, config.n_ite) - 2

    if config.gradient == "pde":
        if forward is None or pde is None:
            raise ValidationError("gradient='pde' needs a forward problem with a PDE solver")
        E_M = spectrum.e[:, :M]
        precision = forward.noise_precision

        def gradient(u):
            return E_M.T @ pde.misfit_gradient(E_M @ u, forward.data, precision) + u / c
    else:

        def gradient(u):
            counter.add(2)
            return at * (u - ub)

    u = np.zeros(M)
    S = float(config.S0)
    q = None if config.q is None else np.asarray(config.q, dtype=float)[:M]
    samples = np.empty((config.K, n))
    means = np.zeros((config.K, n))
    err, sample_err, ref_err, etas, Ss, ps, changes = [], [], [], [], [], [], []
    history = [] if keep_history else None
    converged_at = None
    sqrt_tail = np.sqrt(spectrum.c[M:])
    eta = None
    t0 = time.perf_counter()
    prev = None
    for k in range(config.K):
        # gradient-noise eigenvalues from the random-projection rule
        p_used = np.nan
        if config.q is None and (q is None or (config.q_refresh and k % config.q_refresh == 0)):
            z = np.sqrt(at) * (u - ub)
            p_used = projection_dimension(config.p, params, z, precond, config.p_safety)
            q = choose_Q(p_used, params, z, S, config.q_floor)
        noise = GradientNoiseSpec(S, q)
        if config.eta is not None:
            eta = float(config.eta)
        else:
            eta = optimal_eta(params, noise, precond).eta_dagger
            S = optimal_S(params, eta, q, precond)
            if config.adaptation == "fixed_point":
                for _ in range(100):
                    eta_new = optimal_eta(params, GradientNoiseSpec(S, q), precond).eta_dagger
                    S = optimal_S(params, eta_new, q, precond)
                    if abs(eta_new - eta) <= 1e-10 * eta:
                        eta = eta_new
                        break
                    eta = eta_new
        _assert_stable(eta, params, t)
        noise_amp = np.sqrt(c * q) / S
        acc = np.zeros(M)
        for _ in range(config.J):
            g = gradient(u) - noise_amp * rng.standard_normal(M)
            counter.add(extra)
            u = u - eta * t * g
            acc += u
            if history is not None:
                history.append(u.copy())
        step_mean = acc / config.J
        active = step_mean if config.sample_mode == "average" else u
        full = np.concatenate([active, sqrt_tail * rng.standard_normal(n - M)])
        samples[k] = full
        means[k, :M] = step_mean
        if prev is not None:
            denom = np.linalg.norm(prev)
            change = np.linalg.norm(full - prev) / denom if denom > 0 else np.inf
            changes.append(change)
            if converged_at is None and change <= config.tol:
                converged_at = k
        prev = full
        etas.append(eta)
        Ss.append(S)
        ps.append(p_used)
        if truth_coeffs is not None:
            err.append(_rel_sq(means[k], truth_coeffs))
            sample_err.append(_rel_sq(full, truth_coeffs))
        if reference_coeffs is not None:
            ref_err.append(_rel_sq(means[k], reference_coeffs))
    wall = time.perf_counter() - t0

    out = ChainOutput(
        variant=variant,
        seed=seed,
        samples=samples @ spectrum.e.T,
        sample_coeffs=samples,
        step_means=means,
        relative_error_series=np.asarray(err) if truth_coeffs is not None else np.full(config.K, np.nan),
        sample_error_series=np.asarray(sample_err) if truth_coeffs is not None else np.full(config.K, np.nan),
        reference_error_series=np.asarray(ref_err) if reference_coeffs is not None else None,
        eta_series=np.asarray(etas),
        S_series=np.asarray(Ss),
        p_series=np.asarray(ps),
        relative_change_series=np.asarray(changes),
        converged_at=converged_at,
        pde_solve_count=counter.count - start_count,
        iterations=config.K * config.J,
        wall_time=wall,
        config=dict(config.to_dict(), variant=variant),
        iterate_history=np.asarray(history) if history is not None else None,
    )
    noise = GradientNoiseSpec(S, q)
    lr = LearningRateReport(eta_dagger=float(eta), S_used=float(S), omega_bound=omega_bound(params, precond))
    formula = estimated_posterior_from_formulas(params, eta, noise, u_bar, spectrum.c, precond)
    kept = out.retained_coeffs
    empirical = None
    if kept.shape[0] >= 2:
        var = kept.var(axis=0, ddof=1)
        if np.all(var > 0):
            empirical = VariationalPosterior(mean_coeffs=kept.mean(axis=0), s=var)
    return ChainResult(output=out, formula_posterior=formula, empirical_posterior=empirical, learning_rate=lr, noise=noise, precond=precond)
