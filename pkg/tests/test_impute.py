import numpy as np
import pytest
from numpy.testing import assert_allclose

from calimp import glm
from calimp.errors import DataError, FeasibilityError
from calimp.impute import (PopulationDistribution, analyze_pooled,
                           complete_records, impute_calibrated,
                           impute_standard, impute_weighted, marginal_weights,
                           post_stratification_weights, single_impute,
                           write_stacked_csv)
from calimp.pooling import pool_fits
from calimp.selection import SelectionModel, ampute
from calimp.tabular import MISSING, Dataset, Variable

from conftest import xy_dataset


def study_dataset(scale=1):
    """Exact-cell draw of the reference joint: p(x=1)=0.7,
    logit p(y=1|x) = log(0.5) + log(1.5) x, at n = 4000 * scale."""
    return xy_dataset(800 * scale, 400 * scale,
                      1600 * scale, 1200 * scale)


def m3_masked(scale=1, seed=5):
    ds = study_dataset(scale)
    model = SelectionModel("M3", 1.35, alpha_x=-1.5)
    return ampute(ds, "x", model, np.random.default_rng(seed))


CENSUS = PopulationDistribution("x", ("0", "1"), (0.3, 0.7))


def completed_share(result, level=1):
    return np.array([
        d.level_proportions("x")[level] for d in result.datasets])


class TestPopulationDistribution:
    def test_validation(self):
        with pytest.raises(DataError):
            PopulationDistribution("x", ("0", "1"), (0.4, 0.4))
        with pytest.raises(DataError):
            PopulationDistribution("x", ("0", "1"), (0.5,))
        with pytest.raises(DataError):
            PopulationDistribution("x", ("0", "1"), (0.5, 0.5), n_source=1)

    def test_from_partial_completes_one_level(self):
        pop = PopulationDistribution.from_partial(
            "x", ("a", "b", "c"), {"b": 0.5, "c": 0.2})
        assert_allclose(pop.as_array(), [0.3, 0.5, 0.2], atol=1e-12)
        assert not pop.estimated
        est = PopulationDistribution.from_partial(
            "x", ("a", "b"), {"b": 0.7}, n_source=1000)
        assert est.estimated

    def test_from_partial_overdetermined_or_short(self):
        with pytest.raises(DataError):
            PopulationDistribution.from_partial(
                "x", ("a", "b", "c"), {"c": 0.2})
        with pytest.raises(DataError):
            PopulationDistribution.from_partial(
                "x", ("a", "b"), {"a": 0.6, "b": 0.6})


class TestDeterministicFills:
    def test_complete_records_drops_masked_rows(self):
        ds = xy_dataset(10, 10, 10, 10, mask_x=range(0, 40, 4))
        cr = complete_records(ds, "x")
        assert cr.n_rows == 30
        assert cr.n_missing("x") == 0

    def test_single_impute_by_label_and_code(self):
        ds = xy_dataset(10, 10, 10, 10, mask_x=[0, 1, 2])
        by_label = single_impute(ds, "x", "1")
        by_code = single_impute(ds, "x", 1)
        assert by_label == by_code
        assert by_label.n_missing("x") == 0
        assert np.all(by_label.codes("x")[:3] == 1)
        with pytest.raises(DataError):
            single_impute(ds, "x", "7")


class TestStandardMi:
    def test_mcar_recovers_target_distribution(self):
        ds = study_dataset(2)       # n = 8000
        m1 = SelectionModel("M1", 0.2)
        masked = ampute(ds, "x", m1, np.random.default_rng(11))
        res = impute_standard(masked, "x", ("y",), m=20, seed=7)
        share = completed_share(res)
        se = np.sqrt(0.7 * 0.3 / ds.n_rows)
        assert abs(share.mean() - 0.7) <= 4 * (se + share.std(ddof=1))

    def test_zero_missing_short_circuit(self):
        ds = study_dataset()
        res = impute_standard(ds, "x", ("y",), m=4, seed=1)
        assert res.m == 4
        assert all(d == ds for d in res.datasets)

    def test_seed_determinism(self):
        masked = m3_masked()
        a = impute_standard(masked, "x", ("y",), m=3, seed=42)
        b = impute_standard(masked, "x", ("y",), m=3, seed=42)
        c = impute_standard(masked, "x", ("y",), m=3, seed=43)
        assert all(x == y for x, y in zip(a.datasets, b.datasets))
        assert any(x != y for x, y in zip(a.datasets, c.datasets))

    def test_seed_sequence_matches_int(self):
        masked = m3_masked()
        a = impute_standard(masked, "x", ("y",), m=2, seed=9)
        b = impute_standard(masked, "x", ("y",), m=2,
                            seed=np.random.SeedSequence(9))
        assert a.datasets == b.datasets

    def test_validation_errors(self):
        masked = m3_masked()
        with pytest.raises(DataError):
            impute_standard(masked, "x", (), m=2, seed=0)
        with pytest.raises(DataError):
            impute_standard(masked, "x", ("x",), m=2, seed=0)
        with pytest.raises(DataError):
            impute_standard(masked, "x", ("y",), m=0, seed=0)
        both = masked.replace_codes(
            "y", np.where(np.arange(masked.n_rows) == 0, MISSING,
                          masked.codes("y")).astype(np.int32))
        with pytest.raises(DataError):
            impute_standard(both, "x", ("y",), m=2, seed=0)

    def test_unobserved_level_named_in_error(self):
        x = np.array([0, 1, MISSING, MISSING, 0, 1], dtype=np.int32)
        y = np.array([0, 1, 0, 1, 1, 0], dtype=np.int32)
        ds = Dataset(
            (Variable("x", ("a", "b", "c"), role="target"),
             Variable("y", ("0", "1"), role="outcome")),
            {"x": x, "y": y})
        with pytest.raises(DataError, match="'c'"):
            impute_standard(ds, "x", ("y",), m=2, seed=0)


class TestCalibratedMi:
    def test_census_completed_distribution_hits_reference(self):
        masked = m3_masked(scale=1)
        res = impute_calibrated(masked, "x", ("y",), m=30, pop=CENSUS,
                                seed=123)
        share = completed_share(res)
        tol = 4 * (share.std(ddof=1) / np.sqrt(30)
                   + np.sqrt(0.7 * 0.3 / masked.n_rows))
        assert abs(share.mean() - 0.7) <= tol

    def test_diagnostics_recorded(self):
        masked = m3_masked()
        res = impute_calibrated(masked, "x", ("y",), m=5, pop=CENSUS,
                                seed=3)
        assert len(res.diagnostics) == 5
        for d in res.diagnostics:
            assert d.solver_residual <= 1e-10
            assert len(d.offsets) == 1
            assert 0.0 < d.p_r < 1.0
            assert_allclose(sum(d.required_dist), 1.0, atol=1e-9)
            assert d.population_dist == (0.3, 0.7)

    def test_offsets_shift_toward_reference(self):
        # M3 under-observes x=1, so the offset must raise the level-1 rate
        masked = m3_masked()
        res = impute_calibrated(masked, "x", ("y",), m=8, pop=CENSUS,
                                seed=21)
        offs = [d.offsets[0] for d in res.diagnostics]
        assert min(offs) > 0.5

    def test_estimated_reference_draws_vary(self):
        masked = m3_masked()
        est = PopulationDistribution("x", ("0", "1"), (0.3, 0.7),
                                     n_source=500)
        res = impute_calibrated(masked, "x", ("y",), m=6, pop=est, seed=8)
        pops = {d.population_dist for d in res.diagnostics}
        assert len(pops) == 6
        cen = impute_calibrated(masked, "x", ("y",), m=6, pop=CENSUS, seed=8)
        assert {d.population_dist for d in cen.diagnostics} == {(0.3, 0.7)}

    def test_reference_must_match_target(self):
        masked = m3_masked()
        wrong_name = PopulationDistribution("z", ("0", "1"), (0.3, 0.7))
        with pytest.raises(DataError):
            impute_calibrated(masked, "x", ("y",), m=2, pop=wrong_name,
                              seed=0)
        wrong_levels = PopulationDistribution("x", ("0", "2"), (0.3, 0.7))
        with pytest.raises(DataError):
            impute_calibrated(masked, "x", ("y",), m=2, pop=wrong_levels,
                              seed=0)

    def test_infeasible_reference_raises(self):
        # nearly all records observed at level 1, yet the reference says
        # half the population is level 0: no missing-record distribution
        # can reconcile the two
        ds = xy_dataset(4, 4, 120, 120, mask_x=range(8, 16))
        bad = PopulationDistribution("x", ("0", "1"), (0.55, 0.45))
        with pytest.raises(FeasibilityError):
            impute_calibrated(ds, "x", ("y",), m=3, pop=bad, seed=2)

    def test_zero_missing_short_circuit(self):
        ds = study_dataset()
        res = impute_calibrated(ds, "x", ("y",), m=3, pop=CENSUS, seed=1)
        assert all(d == ds for d in res.datasets)


class TestWeights:
    def test_marginal_weights_worked_example(self):
        # n=200, n_obs=100, observed dist (0.2, 0.8), reference (0.4, 0.6):
        # required level-1 share (0.6*200 - 0.8*100) / 100 = 0.4,
        # weights (0.6/0.2, 0.4/0.8) = (3.0, 0.5)
        w = marginal_weights(np.array([0.4, 0.6]), np.array([0.2, 0.8]),
                             n=200, n_obs=100)
        assert_allclose(w, [3.0, 0.5], atol=1e-12)

    def test_marginal_weights_infeasible(self):
        with pytest.raises(FeasibilityError):
            marginal_weights(np.array([0.5, 0.5]), np.array([0.05, 0.95]),
                             n=100, n_obs=90)

    def test_marginal_weights_degenerate_inputs(self):
        with pytest.raises(DataError):
            marginal_weights(np.array([0.4, 0.6]), np.array([0.2, 0.8]),
                             n=100, n_obs=100)
        with pytest.raises(DataError):
            marginal_weights(np.array([0.4, 0.6]), np.array([0.0, 1.0]),
                             n=100, n_obs=50)

    def test_post_stratification_contrast(self):
        w = post_stratification_weights(np.array([0.8, 0.2]),
                                        np.array([0.6, 0.4]))
        assert_allclose(w, [0.75, 2.0], atol=1e-12)


class TestWeightedMi:
    def test_unit_weights_reduce_to_standard(self):
        # observed x-distribution dyadic and reference equal to it, so
        # every weight is exactly 1.0 and the weighted fit is bitwise the
        # unweighted one; with a shared seed the fills must coincide
        x = np.array([0] * 16 + [1] * 48 + [MISSING] * 16, dtype=np.int32)
        y = np.tile(np.array([0, 1], dtype=np.int32), 40)
        ds = Dataset(
            (Variable("x", ("0", "1"), role="target"),
             Variable("y", ("0", "1"), role="outcome")),
            {"x": x, "y": y})
        pop = PopulationDistribution("x", ("0", "1"), (0.25, 0.75))
        a = impute_weighted(ds, "x", ("y",), m=4, pop=pop, seed=6,
                            mode="marginal")
        b = impute_standard(ds, "x", ("y",), m=4, seed=6)
        assert a.datasets == b.datasets

    def test_marginal_weights_fixed_conditional_vary(self):
        masked = m3_masked()
        mar = impute_weighted(masked, "x", ("y",), m=5, pop=CENSUS, seed=4,
                              mode="marginal")
        con = impute_weighted(masked, "x", ("y",), m=5, pop=CENSUS, seed=4,
                              mode="conditional")
        mw = {d.level_weights for d in mar.diagnostics}
        cw = {d.level_weights for d in con.diagnostics}
        assert len(mw) == 1
        assert len(cw) == 5

    def test_completed_distribution_moves_toward_reference(self):
        masked = m3_masked()
        plain = impute_standard(masked, "x", ("y",), m=10, seed=2)
        wtd = impute_weighted(masked, "x", ("y",), m=10, pop=CENSUS, seed=2,
                              mode="marginal")
        gap_plain = abs(completed_share(plain).mean() - 0.7)
        gap_wtd = abs(completed_share(wtd).mean() - 0.7)
        assert gap_wtd < gap_plain

    def test_mode_validated(self):
        masked = m3_masked()
        with pytest.raises(DataError):
            impute_weighted(masked, "x", ("y",), m=2, pop=CENSUS, seed=0,
                            mode="post-stratified")


class TestResultHandling:
    def test_analyze_pooled_matches_manual(self):
        masked = m3_masked()
        res = impute_standard(masked, "x", ("y",), m=4, seed=77)
        spec = glm.DesignSpec("y", ("x",))
        pooled = analyze_pooled(res, spec)
        manual = pool_fits([glm.fit(d, spec) for d in res.datasets])
        for a, b in zip(pooled, manual):
            assert a.name == b.name
            assert_allclose(a.estimate, b.estimate, atol=1e-14)
            assert_allclose(a.se, b.se, atol=1e-14)

    def test_stacked_csv_layout(self, tmp_path):
        masked = m3_masked()
        res = impute_standard(masked, "x", ("y",), m=3, seed=1)
        path = tmp_path / "stack.csv"
        write_stacked_csv(res, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "_imputation,x,y"
        assert len(lines) == 1 + 3 * masked.n_rows
        assert lines[1].startswith("1,")
        assert lines[-1].startswith("3,")
        assert "," == lines[1][1]   # no missing markers in completed data
