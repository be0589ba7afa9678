import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import expit

from calimp.errors import DataError
from calimp.selection import (SelectionModel, ampute,
                              expected_missing_fraction, observe_prob,
                              solve_alpha0)
from calimp.tabular import MISSING

from conftest import xy_dataset

# joint (x, y) cell probabilities of the reference generating model:
# p(x=1) = 0.7, logit p(y=1|x) = log(0.5) + log(1.5) x
JOINT = np.array([
    [0.3 * (1 - expit(np.log(0.5))), 0.3 * expit(np.log(0.5))],
    [0.7 * (1 - expit(np.log(0.75))), 0.7 * expit(np.log(0.75))],
])


class TestSelectionModel:
    def test_inactive_coefficients_rejected(self):
        with pytest.raises(DataError):
            SelectionModel("M1", 0.2, alpha_x=-1.5)
        with pytest.raises(DataError):
            SelectionModel("M2", 0.2, alpha_x=-1.5, alpha_y=1.5)
        with pytest.raises(DataError):
            SelectionModel("M3", 0.2, alpha_y=1.5)
        with pytest.raises(DataError):
            SelectionModel("M5", 0.2)

    def test_m1_rate_is_expit_alpha0(self):
        m = SelectionModel("M1", np.log(0.55 / 0.45))
        # expit(log(a/b)) = a/(a+b) exactly
        assert_allclose(observe_prob(m, 0), 0.55, atol=1e-12)
        assert_allclose(observe_prob(m, 1), 0.55, atol=1e-12)

    def test_m3_cell_probabilities(self):
        m = SelectionModel("M3", 1.35, alpha_x=-1.5)
        assert_allclose(observe_prob(m, 0), expit(1.35), atol=1e-15)
        assert_allclose(observe_prob(m, 1), expit(-0.15), atol=1e-15)
        # frozen values
        assert_allclose(observe_prob(m, 0), 0.7941296282, atol=1e-9)
        assert_allclose(observe_prob(m, 1), 0.4625701547, atol=1e-9)

    def test_m4_uses_both(self):
        m = SelectionModel("M4", 0.75, alpha_x=-1.5, alpha_y=1.5)
        assert_allclose(observe_prob(m, 1, 1), expit(0.75), atol=1e-15)
        with pytest.raises(DataError):
            observe_prob(m, 1)   # y required


class TestAmpute:
    def test_sure_observation_leaves_data_complete(self, rng):
        ds = xy_dataset(200, 100, 400, 300)
        out = ampute(ds, "x", SelectionModel("M1", 20.0), rng)
        assert out.n_missing("x") == 0

    def test_m1_fraction_close_to_nominal(self, rng):
        ds = xy_dataset(1000, 500, 2000, 1500)   # n = 5000
        m = SelectionModel("M1", np.log(0.55 / 0.45))
        out = ampute(ds, "x", m, rng)
        frac = out.n_missing("x") / out.n_rows
        tol = 4 * np.sqrt(0.45 * 0.55 / 5000)
        assert abs(frac - 0.45) <= tol

    def test_m4_cell_rates_large_sample(self):
        n = 250_000
        ds = xy_dataset(n, n, n, n)
        m = SelectionModel("M4", 0.75, alpha_x=-1.5, alpha_y=1.5)
        out = ampute(ds, "x", m, np.random.default_rng(99), outcome="y")
        r = out.response_indicator("x")
        x_true = ds.codes("x")
        y = ds.codes("y")
        for cx in (0, 1):
            for cy in (0, 1):
                sel = (x_true == cx) & (y == cy)
                p = expit(0.75 - 1.5 * cx + 1.5 * cy)
                obs = r[sel].mean()
                assert abs(obs - p) <= 4 * np.sqrt(p * (1 - p) / n)

    def test_m3_log_odds_of_observation_recovers_alpha_x(self):
        n = 250_000
        ds = xy_dataset(n, n, n, n)
        m = SelectionModel("M3", 1.35, alpha_x=-1.5)
        out = ampute(ds, "x", m, np.random.default_rng(42))
        r = out.response_indicator("x")
        x = ds.codes("x")
        cells = np.array([
            [np.sum((x == 0) & (r == 0)), np.sum((x == 0) & (r == 1))],
            [np.sum((x == 1) & (r == 0)), np.sum((x == 1) & (r == 1))],
        ], dtype=float)
        lor = np.log(cells[1, 1] * cells[0, 0] / (cells[0, 1] * cells[1, 0]))
        se = np.sqrt((1.0 / cells).sum())
        assert abs(lor - (-1.5)) <= 4 * se

    def test_requires_complete_target(self, rng):
        ds = xy_dataset(10, 10, 10, 10, mask_x=[0])
        with pytest.raises(DataError):
            ampute(ds, "x", SelectionModel("M1", 0.0), rng)

    def test_m2_needs_outcome(self, rng):
        ds = xy_dataset(10, 10, 10, 10)
        with pytest.raises(DataError):
            ampute(ds, "x", SelectionModel("M2", 0.0, alpha_y=1.0), rng)

    def test_deterministic_given_stream(self):
        ds = xy_dataset(50, 50, 50, 50)
        m = SelectionModel("M4", 0.0, alpha_x=-1.0, alpha_y=1.0)
        a = ampute(ds, "x", m, np.random.default_rng(1), outcome="y")
        b = ampute(ds, "x", m, np.random.default_rng(1), outcome="y")
        assert a == b

    def test_only_target_column_changes(self, rng):
        ds = xy_dataset(100, 100, 100, 100)
        out = ampute(ds, "x", SelectionModel("M1", -1.0), rng)
        assert np.array_equal(out.codes("y"), ds.codes("y"))
        kept = out.codes("x") != MISSING
        assert np.array_equal(out.codes("x")[kept], ds.codes("x")[kept])


class TestSolveAlpha0:
    def test_m1_closed_form(self):
        a0 = solve_alpha0("M1", 0.45, JOINT)
        assert_allclose(a0, np.log(0.55 / 0.45), atol=1e-8)

    def test_m3_round_trip(self):
        m = SelectionModel("M3", 1.35, alpha_x=-1.5)
        frac = expected_missing_fraction(m, JOINT)
        a0 = solve_alpha0("M3", frac, JOINT, alpha_x=-1.5)
        assert_allclose(a0, 1.35, atol=1e-6)

    @pytest.mark.parametrize("kind,ax,ay", [
        ("M1", 0.0, 0.0), ("M2", 0.0, 1.5), ("M3", -1.5, 0.0),
        ("M4", -1.5, 1.5),
    ])
    @pytest.mark.parametrize("target", [0.1, 0.45, 0.8])
    def test_hits_requested_fraction(self, kind, ax, ay, target):
        a0 = solve_alpha0(kind, target, JOINT, alpha_x=ax, alpha_y=ay)
        m = SelectionModel(
            kind, a0, ax if kind in ("M3", "M4") else 0.0,
            ay if kind in ("M2", "M4") else 0.0)
        assert_allclose(expected_missing_fraction(m, JOINT), target,
                        atol=1e-9)

    def test_invalid_target(self):
        with pytest.raises(DataError):
            solve_alpha0("M1", 1.0, JOINT)
