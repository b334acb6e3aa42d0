import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivi.errors import ValidationError
from ivi.regularization_theory import StepSchedule, error_decay_monitor, g_alpha, qualification_constant, r_alpha


def _schedule(draw_etas):
    return StepSchedule(np.sort(np.asarray(draw_etas))[::-1])


class TestSchedule:
    def test_constant(self):
        s = StepSchedule.constant(0.2, 5)
        assert s.k == 5
        assert s.alpha_k == pytest.approx(1.0)
        np.testing.assert_allclose(s.alphas(), 1 / (0.2 * np.arange(1, 6)))

    @pytest.mark.parametrize("etas", [[], [0.1, -0.1], [0.1, 0.2]])
    def test_invalid(self, etas):
        with pytest.raises(ValidationError):
            StepSchedule(np.array(etas))


class TestFilters:
    @given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=30), st.floats(0.001, 0.999))
    @settings(max_examples=200, deadline=None)
    def test_identities(self, etas, frac):
        s = _schedule(etas)
        t = frac / s.etas[0]
        r = r_alpha(s, t)
        g = g_alpha(s, t)
        assert r == pytest.approx(np.prod(1 - s.etas * t), abs=1e-12)
        assert r + t * g == pytest.approx(1.0, abs=1e-12)
        assert abs(g) <= 1 / s.alpha_k * (1 + 1e-12)
        assert abs(r) <= 1.0

    def test_constant_schedule_closed_form(self):
        s = StepSchedule.constant(0.5, 4)
        t = np.array([0.2, 1.0, 1.9])
        np.testing.assert_allclose(r_alpha(s, t), (1 - 0.5 * t) ** 4)
        np.testing.assert_allclose(g_alpha(s, t), (1 - (1 - 0.5 * t) ** 4) / t)

    @pytest.mark.parametrize("t", [0.0, -1.0, 2.0])
    def test_t_outside_range(self, t):
        with pytest.raises(ValidationError):
            r_alpha(StepSchedule.constant(0.5, 3), t)

    def test_qualification_constant_bounded(self):
        # sup_t (1 - eta t)^k t^nu <= C (k eta)^{-nu} with C independent of k
        consts = [qualification_constant(StepSchedule.constant(0.1, k), 1.0, np.linspace(1e-4, 9.99, 4000)) for k in (10, 100, 1000)]
        assert max(consts) < 1.0
        assert np.ptp(consts) < 0.05


class TestDecayMonitor:
    def test_geometric_decay_to_plateau(self):
        k = np.arange(60)
        series = 0.05 + np.exp(-0.3 * k)
        rep = error_decay_monitor(series)
        assert rep.plateau == pytest.approx(0.05, rel=0.01)
        assert rep.decrease_fraction == 1.0
        assert 10 < rep.plateau_step < 30
        np.testing.assert_array_equal(rep.running_min, series)

    def test_iterates_against_truth(self):
        truth = np.array([1.0, 2.0])
        it = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 2.0]])
        rep = error_decay_monitor(it, truth_coeffs=truth)
        np.testing.assert_allclose(rep.errors, [5.0, 1.0, 0.0])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            error_decay_monitor([])

    def test_csv(self, tmp_path):
        error_decay_monitor([3.0, 2.0, 1.0]).to_csv(tmp_path / "d.csv")
        table = np.loadtxt(tmp_path / "d.csv", delimiter=",", skiprows=1)
        assert table.shape == (3, 3)
