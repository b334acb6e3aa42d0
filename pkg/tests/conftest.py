from dataclasses import dataclass

import numpy as np
import pytest

from ivi.pde_forward import EllipticProblem, LinearForwardProblem, build_mesh, elliptic_truth, generate_data
from ivi.posterior_oracle import exact_posterior, hessian_mode_coefficients
from ivi.prior_spectral import build_prior, prior_spectrum


@dataclass
class EllipticSetup:
    mesh: object
    problem: object
    H: np.ndarray
    data: object
    spectrum: object
    posterior: object
    params: object
    forward: LinearForwardProblem
    truth: np.ndarray
    truth_coeffs: np.ndarray


def make_elliptic_setup(n=100, fine_n=2000, data_seed=1, noise_pct=0.05):
    mesh = build_mesh(1, n)
    problem = EllipticProblem(mesh, 0.05)
    H = problem.forward_matrix()
    data = generate_data(elliptic_truth, fine_n, problem, noise_pct, np.random.default_rng(data_seed))
    spectrum = prior_spectrum(build_prior(mesh, 0.05), 1e-3)
    posterior = exact_posterior(spectrum, H, data.noise_variance, data.data)
    params = hessian_mode_coefficients(H, data.noise_variance, spectrum)
    forward = LinearForwardProblem(H, problem.points, data.noise_variance, data.data, pde=problem)
    truth = elliptic_truth(mesh.nodes)
    return EllipticSetup(mesh, problem, H, data, spectrum, posterior, params, forward, truth, spectrum.coefficients(truth))


@pytest.fixture(scope="session")
def elliptic():
    return make_elliptic_setup()


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
