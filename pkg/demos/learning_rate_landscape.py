"""How the stationary KL objective depends on the learning rate for one mode set.

Compares the closed-form learning rate with a brute-force grid minimum for a
small problem, for plain and Hessian-preconditioned SGD.
"""
import numpy as np

from ivi.posterior_oracle import kl_diagonal, mode_params_from_arrays
from ivi.sgd_vi import GradientNoiseSpec, PreconditionerSpec, kl_optimal_eta, omega_bound, optimal_eta, s_upper_bound, stationary_variance

c = np.array([1.0, 0.45, 0.11, 0.034, 0.013])
a = np.array([30.0, 12.0, 5.0, 2.0, 0.5])
params = mode_params_from_arrays(a, c)
q = np.ones(5)

for label, pre in (("plain", None), ("preconditioned", PreconditionerSpec.hessian_inverse(params))):
    # half the largest stable S; preconditioning removes the bound, so cap at 1
    noise = GradientNoiseSpec(S=min(0.5 * s_upper_bound(params, q, pre), 1.0), q=q)
    closed = optimal_eta(params, noise, pre).eta_dagger
    grid = np.linspace(0, omega_bound(params, pre), 2001)[1:-1]
    kl = np.array([kl_diagonal(stationary_variance(e, noise, params, pre), params) for e in grid])
    numeric = kl_optimal_eta(params, noise, pre)
    print(f"{label:15s} closed form {closed:.4f}  grid argmin {grid[kl.argmin()]:.4f}  numeric {numeric:.4f}")
    print(f"{'':15s} KL at closed form {kl_diagonal(stationary_variance(closed, noise, params, pre), params):.4f}  minimum {kl.min():.4f}")
