"""Spectral filter functions of SGD viewed as an iterative regularization method.

For a step schedule eta_1 >= eta_2 >= ... >= eta_k,

    g(t) = sum_j eta_j prod_{i>j} (1 - eta_i t),    r(t) = prod_i (1 - eta_i t) = 1 - t g(t),

with alpha_k = 1 / sum_i eta_i playing the role of a regularization parameter.
``error_decay_monitor`` summarizes how an error series approaches its plateau.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = ["StepSchedule", "g_alpha", "r_alpha", "qualification_constant", "DecayReport", "error_decay_monitor"]


@dataclass(frozen=True)
class StepSchedule:
    etas: np.ndarray

    def __post_init__(self) -> None:
        e = np.atleast_1d(np.asarray(self.etas, dtype=float))
        if e.ndim != 1 or e.size == 0:
            raise ValidationError("schedule must be a nonempty sequence")
        if np.any(e <= 0) or not np.all(np.isfinite(e)):
            raise ValidationError("step sizes must be positive and finite")
        if np.any(np.diff(e) > 0):
            raise ValidationError("step sizes must be nonincreasing")
        object.__setattr__(self, "etas", e)

    @classmethod
    def constant(cls, eta: float, k: int) -> "StepSchedule":
        return cls(np.full(int(k), float(eta)))

    @property
    def k(self) -> int:
        return self.etas.size

    @property
    def alpha_k(self) -> float:
        return float(1.0 / np.sum(self.etas))

    def alphas(self) -> np.ndarray:
        """alpha_j for every prefix j = 1..k."""
        return 1.0 / np.cumsum(self.etas)


def _check_t(schedule: StepSchedule, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0) or np.any(t >= 1.0 / schedule.etas[0]):
        raise ValidationError(f"t must lie in (0, 1/eta_1) = (0, {1.0 / schedule.etas[0]:.6g})")
    return t


def g_alpha(schedule: StepSchedule, t) -> np.ndarray | float:
    """sum_j eta_j prod_{i>j}(1 - eta_i t), by the recursion g_k = (1 - eta_k t) g_{k-1} + eta_k."""
    t = _check_t(schedule, t)
    g = np.zeros_like(t)
    for eta in schedule.etas:
        g = (1.0 - eta * t) * g + eta
    return g if g.ndim else float(g)


def r_alpha(schedule: StepSchedule, t) -> np.ndarray | float:
    """Residual filter prod_i (1 - eta_i t)."""
    t = _check_t(schedule, t)
    r = np.prod(1.0 - np.multiply.outer(schedule.etas, t), axis=0)
    return r if np.ndim(r) else float(r)


def qualification_constant(schedule: StepSchedule, nu: float, t_grid: np.ndarray) -> float:
    """Smallest C with |r(t)| t^nu <= C alpha_k^nu on the grid."""
    t = _check_t(schedule, t_grid)
    vals = np.abs(r_alpha(schedule, t)) * t**nu
    return float(np.max(vals) / schedule.alpha_k**nu)


@dataclass(frozen=True)
class DecayReport:
    errors: np.ndarray
    running_min: np.ndarray
    decrease_fraction: float
    plateau: float
    plateau_index: int

    @property
    def plateau_step(self) -> int:
        """1-based step at which the series first reaches its plateau band."""
        return self.plateau_index + 1

    def to_csv(self, path) -> None:
        k = np.arange(1, self.errors.size + 1)
        np.savetxt(
            path,
            np.column_stack([k, self.errors, self.running_min]),
            delimiter=",",
            header="step,error,running_min",
            comments="",
            fmt=["%d", "%.17g", "%.17g"],
        )


def error_decay_monitor(
    series,
    truth_coeffs: np.ndarray | None = None,
    mass=None,
    tail_fraction: float = 0.25,
    rel_band: float = 0.1,
) -> DecayReport:
    """Decay statistics of an error series.

    ``series`` is either a vector of errors or, when ``truth_coeffs`` is
    given, a (k, n) array of iterates whose squared distance to the truth is
    measured (in the ``mass`` inner product if provided, else Euclidean).
    The plateau is the mean of the final ``tail_fraction`` of the series; the
    plateau index is the first step within max(rel_band * plateau, 2 std(tail))
    of it.
    """
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise ValidationError("series is empty")
    if truth_coeffs is not None:
        x = np.atleast_2d(x)
        diff = x - np.asarray(truth_coeffs, dtype=float)
        if mass is None:
            errors = np.sum(diff**2, axis=1)
        else:
            errors = np.einsum("ij,ij->i", diff, (mass @ diff.T).T)
    else:
        errors = x.ravel()
    running = np.minimum.accumulate(errors)
    if errors.size > 1:
        frac = float(np.mean(running[1:] < running[:-1]))
    else:
        frac = 0.0
    n_tail = max(1, int(np.ceil(tail_fraction * errors.size)))
    tail = errors[-n_tail:]
    plateau = float(np.mean(tail))
    band = max(rel_band * abs(plateau), 2.0 * float(np.std(tail)))
    idx = int(np.flatnonzero(errors <= plateau + band)[0])
    return DecayReport(errors=errors, running_min=running, decrease_fraction=frac, plateau=plateau, plateau_index=idx)
