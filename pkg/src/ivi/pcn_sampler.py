"""Preconditioned Crank-Nicolson MCMC for Gaussian priors.

The proposal sqrt(1 - beta^2) u + beta xi with xi from the prior leaves the
prior invariant, so the Metropolis ratio only involves the data misfit Phi.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ValidationError
from .pde_forward import LinearForwardProblem, SolveCounter
from .prior_spectral import PriorSpectrum

__all__ = ["PcnConfig", "PcnResult", "pcn_step", "run_pcn", "misfit_potential"]


@dataclass
class PcnConfig:
    """``n_samples`` retained draws, ``thin`` proposals apart, after ``burn_in`` proposals.

    burn_in None means a fifth of the total budget. ``target_acceptance``
    enables adaptation of beta during burn-in.
    """

    beta: float = 0.1
    n_samples: int = 50_000
    burn_in: int | None = None
    thin: int = 1
    seed: int | None = 0
    target_acceptance: float | None = None

    def validate(self) -> None:
        if not 0 < self.beta <= 1:
            raise ValidationError(f"beta must lie in (0, 1], got {self.beta}")
        if self.n_samples < 1 or self.thin < 1:
            raise ValidationError("n_samples and thin must be at least 1")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValidationError("burn_in must be nonnegative")
        if self.target_acceptance is not None and not 0 < self.target_acceptance < 1:
            raise ValidationError("target_acceptance must lie in (0, 1)")

    @property
    def burn_in_steps(self) -> int:
        if self.burn_in is not None:
            return int(self.burn_in)
        return int(np.ceil(self.n_samples * self.thin / 4))

    @property
    def total_proposals(self) -> int:
        return self.burn_in_steps + self.n_samples * self.thin


@dataclass
class PcnResult:
    samples: np.ndarray
    sample_coeffs: np.ndarray
    acceptance_rate: float
    phi_trace: np.ndarray
    accepted: np.ndarray
    beta: float
    pde_solve_count: int
    wall_time: float

    def trace_csv(self, path) -> None:
        k = np.arange(1, self.phi_trace.size + 1)
        np.savetxt(
            path,
            np.column_stack([k, self.phi_trace, self.accepted.astype(int)]),
            delimiter=",",
            header="iteration,phi,accepted",
            comments="",
            fmt=["%d", "%.17g", "%d"],
        )


def pcn_step(
    u: np.ndarray,
    beta: float,
    potential: Callable[[np.ndarray], float],
    prior_sampler: Callable[[np.random.Generator], np.ndarray],
    rng: np.random.Generator,
    phi_u: float | None = None,
) -> tuple[np.ndarray, bool, float]:
    """One pCN move; returns (next state, accepted, potential at next state)."""
    if phi_u is None:
        phi_u = potential(u)
    xi = prior_sampler(rng)
    v = np.sqrt(1.0 - beta**2) * u + beta * xi
    phi_v = potential(v)
    if not np.isfinite(phi_v):
        warnings.warn("non-finite potential at proposal; rejected", RuntimeWarning, stacklevel=2)
        return u, False, phi_u
    log_a = phi_u - phi_v
    if log_a >= 0 or np.log(rng.uniform()) < log_a:
        return v, True, float(phi_v)
    return u, False, float(phi_u)


def misfit_potential(forward: LinearForwardProblem, spectrum: PriorSpectrum) -> Callable[[np.ndarray], float]:
    """Phi(x) = |H E x - d|^2 / (2 sigma^2) on prior-basis coefficients x."""
    HE = forward.H @ spectrum.e
    d = forward.data
    prec = forward.noise_precision

    def phi(x: np.ndarray) -> float:
        r = HE @ x - d
        return 0.5 * prec * float(r @ r)

    return phi


def run_pcn(forward: LinearForwardProblem | None, spectrum: PriorSpectrum, config: PcnConfig | None = None) -> PcnResult:
    """Sample the posterior with pCN in prior-basis coordinates.

    ``forward`` None samples the prior (Phi = 0). Each proposal is charged one
    PDE solve on the forward problem's counter.
    """
    config = PcnConfig() if config is None else config
    config.validate()
    rng = np.random.default_rng(config.seed)
    sd = np.sqrt(spectrum.c)
    n = sd.size
    if forward is None:
        phi = lambda x: 0.0  # noqa: E731
        counter = SolveCounter()
    else:
        phi = misfit_potential(forward, spectrum)
        counter = forward.pde.counter if forward.pde is not None else SolveCounter()
    start = counter.count

    def prior_sampler(r):
        return sd * r.standard_normal(n)

    beta = float(config.beta)
    x = np.zeros(n)
    phi_x = phi(x)
    total = config.total_proposals
    burn = config.burn_in_steps
    out = np.empty((config.n_samples, n))
    trace = np.empty(total)
    acc = np.zeros(total, dtype=bool)
    t0 = time.perf_counter()
    kept = 0
    window_acc = 0
    for it in range(total):
        x, ok, phi_x = pcn_step(x, beta, phi, prior_sampler, rng, phi_x)
        counter.add(1)
        trace[it] = phi_x
        acc[it] = ok
        if it < burn and config.target_acceptance is not None:
            window_acc += ok
            if (it + 1) % 100 == 0:
                rate = window_acc / 100
                beta = float(np.clip(beta * np.exp(rate - config.target_acceptance), 1e-4, 1.0))
                window_acc = 0
        if it >= burn and (it - burn + 1) % config.thin == 0:
            out[kept] = x
            kept += 1
    wall = time.perf_counter() - t0
    return PcnResult(
        samples=out @ spectrum.e.T,
        sample_coeffs=out,
        acceptance_rate=float(acc[burn:].mean()) if total > burn else float(acc.mean()),
        phi_trace=trace,
        accepted=acc,
        beta=beta,
        pde_solve_count=counter.count - start,
        wall_time=wall,
    )
