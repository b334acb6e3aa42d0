import numpy as np
import pytest

from ivi.errors import ValidationError
from ivi.pcn_sampler import PcnConfig, misfit_potential, pcn_step, run_pcn


class TestConfig:
    def test_budget(self):
        cfg = PcnConfig(n_samples=1000, thin=10)
        assert cfg.burn_in_steps == 2500
        assert cfg.total_proposals == 12_500

    @pytest.mark.parametrize("kw", [dict(beta=0.0), dict(beta=1.5), dict(n_samples=0), dict(burn_in=-1), dict(target_acceptance=1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            PcnConfig(**kw).validate()


class TestStep:
    def test_zero_potential_always_accepts(self):
        rng = np.random.default_rng(42)
        u = np.ones(3)
        v, ok, phi = pcn_step(u, 0.5, lambda x: 0.0, lambda r: r.standard_normal(3), rng)
        assert ok and phi == 0.0
        assert not np.array_equal(u, v)

    def test_nonfinite_proposal_rejected(self):
        rng = np.random.default_rng(42)
        u = np.zeros(2)
        with pytest.warns(RuntimeWarning):
            v, ok, phi = pcn_step(u, 0.5, lambda x: 0.0 if np.all(x == 0) else np.nan, lambda r: np.ones(2), rng)
        assert not ok
        np.testing.assert_array_equal(v, u)

    def test_huge_potential_rejects(self):
        rng = np.random.default_rng(42)
        v, ok, _ = pcn_step(np.zeros(2), 0.5, lambda x: 0.0 if np.all(x == 0) else 1e6, lambda r: np.ones(2), rng)
        assert not ok


class TestRun:
    def test_prior_is_invariant(self, elliptic):
        spec = elliptic.spectrum
        res = run_pcn(None, spec, PcnConfig(beta=0.5, n_samples=20_000, thin=2, seed=1))
        assert res.acceptance_rate == 1.0
        var = res.sample_coeffs.var(axis=0)
        np.testing.assert_allclose(var[:3], spec.c[:3], rtol=0.15)

    def test_counts_one_solve_per_proposal(self, elliptic):
        before = elliptic.problem.counter.count
        cfg = PcnConfig(n_samples=100, thin=3, seed=0)
        res = run_pcn(elliptic.forward, elliptic.spectrum, cfg)
        assert res.pde_solve_count == cfg.total_proposals
        assert elliptic.problem.counter.count - before == cfg.total_proposals
        assert res.samples.shape == (100, 100)

    def test_potential_matches_misfit(self, elliptic, rng):
        phi = misfit_potential(elliptic.forward, elliptic.spectrum)
        x = rng.standard_normal(100)
        r = elliptic.H @ elliptic.spectrum.field(x) - elliptic.data.data
        assert phi(x) == pytest.approx(0.5 * r @ r / elliptic.data.noise_variance)

    def test_seeded_runs_identical(self, elliptic):
        cfg = PcnConfig(n_samples=50, seed=4)
        a = run_pcn(elliptic.forward, elliptic.spectrum, cfg)
        b = run_pcn(elliptic.forward, elliptic.spectrum, cfg)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_adaptation_moves_towards_target(self, elliptic):
        cfg = PcnConfig(beta=0.9, n_samples=2000, burn_in=5000, seed=0, target_acceptance=0.3)
        res = run_pcn(elliptic.forward, elliptic.spectrum, cfg)
        assert res.beta < 0.9
        assert abs(res.acceptance_rate - 0.3) < 0.15

    def test_trace_csv(self, elliptic, tmp_path):
        res = run_pcn(elliptic.forward, elliptic.spectrum, PcnConfig(n_samples=10, seed=0))
        res.trace_csv(tmp_path / "t.csv")
        table = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
        assert table.shape == (res.phi_trace.size, 3)
