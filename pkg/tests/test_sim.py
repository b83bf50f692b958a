import numpy as np
import pytest
from scipy.special import expit

from conftest import ATE_BOUND, ATE_BOUND_SE, ATE_TRUTH, ATE_TRUTH_SE, T2_TRUTH
from riesztmle.estimands import ate_spec, longitudinal_spec, tsm_spec
from riesztmle.sim import (
    DgpSpec,
    SimConfig,
    draw_longitudinal_t2,
    draw_single_timepoint,
    draw_two_phase,
    efficiency_bound,
    longitudinal_t2_schema,
    monte_carlo_truth,
    run_replications,
    single_timepoint_schema,
)


class TestSingleTimepointDraw:
    def test_logistic_intercepts(self):
        # At L = 0 and a = 0 the treatment and outcome probabilities are the
        # plain intercept expits.
        assert expit(-0.4) == pytest.approx(0.40131, abs=1e-5)
        assert expit(-0.8) == pytest.approx(0.31003, abs=1e-5)

    def test_determinism(self):
        a = draw_single_timepoint(100, seed=5)
        b = draw_single_timepoint(100, seed=5)
        for name in a.columns:
            np.testing.assert_array_equal(a.columns[name], b.columns[name])
        c = draw_single_timepoint(100, seed=6)
        assert not np.array_equal(a.columns["L1"], c.columns["L1"])

    def test_treatment_marginal_matches_analytic(self):
        # Monte Carlo integration oracle for E[P(A=1|L)] versus the empirical
        # treated share on an independent large draw.
        ds = draw_single_timepoint(1_000_000, seed=7)
        emp = ds.columns["A"].mean()
        rng = np.random.default_rng(1234)
        L = {
            "L1": rng.standard_normal(1_000_000),
            "L2": rng.standard_normal(1_000_000),
            "L3": rng.standard_normal(1_000_000),
            "L4": rng.binomial(1, 0.5, 1_000_000).astype(float),
            "L5": rng.uniform(-1, 1, 1_000_000),
        }
        marginal = expit(
            -0.4 + 0.6 * L["L2"] - 0.5 * L["L3"] + 0.5 * L["L4"] * L["L5"] - 0.4 * L["L1"] * L["L2"]
        )
        analytic = marginal.mean()
        se = np.sqrt(emp * (1 - emp) / 1e6) + marginal.std(ddof=1) / 1e3
        assert abs(emp - analytic) <= 3 * se

    def test_coefficient_overrides(self):
        dgp = DgpSpec().with_overrides(y_a=0.0, y_al1=0.0, y_al2=0.0)
        assert dgp.coeffs()["y_a"] == 0.0
        with pytest.raises(ValueError, match="coefficient"):
            DgpSpec(overrides=(("nope", 1.0),)).coeffs()


class TestLongitudinalDraw:
    def test_determinism(self):
        a = draw_longitudinal_t2(64, seed=2)
        b = draw_longitudinal_t2(64, seed=2)
        for name in a.columns:
            np.testing.assert_array_equal(a.columns[name], b.columns[name])

    def test_null_treatment_makes_regimes_equal(self):
        # Every treatment pathway into Y is cut: the direct coefficients and
        # the indirect one through the time-varying covariate.
        dgp = DgpSpec(kind="longitudinal_t2").with_overrides(y_a1=0.0, y_a2=0.0, l1_a1=0.0)
        schema = longitudinal_t2_schema()
        t11, se11 = monte_carlo_truth(dgp, longitudinal_spec(schema, [1, 1]), 300_000, seed=3)
        t00, se00 = monte_carlo_truth(dgp, longitudinal_spec(schema, [0, 0]), 300_000, seed=4)
        assert abs(t11 - t00) <= 3 * (se11 + se00)

    def test_frozen_truth_regenerates(self):
        dgp = DgpSpec(kind="longitudinal_t2")
        spec = longitudinal_spec(longitudinal_t2_schema(), [1.0, 1.0])
        value, se = monte_carlo_truth(dgp, spec, 400_000, seed=9)
        assert abs(value - T2_TRUTH) <= 4 * se


class TestTwoPhaseDraw:
    def test_cases_always_sampled(self):
        ds = draw_two_phase(5000, seed=11)
        cases = ds.columns["Y"] == 1.0
        assert np.all(ds.columns["D"][cases] == 1.0)

    def test_pi_one_is_full_sampling(self):
        ds = draw_two_phase(500, seed=13, pi_spec="ones")
        assert np.all(ds.columns["D"] == 1.0)
        assert not ds.is_missing("A").any()

    def test_control_sampling_rate(self):
        n = 200_000
        ds = draw_two_phase(n, seed=17)
        controls = ds.columns["Y"] == 0.0
        emp = ds.columns["D"][controls].mean()
        expected = (0.1 + 0.2 * expit(ds.columns["L1"][controls])).mean()
        se = np.sqrt(emp * (1 - emp) / controls.sum())
        assert abs(emp - expected) <= 3 * se

    def test_masked_treatment(self):
        ds = draw_two_phase(2000, seed=19)
        miss = ds.is_missing("A")
        np.testing.assert_array_equal(miss, ds.columns["D"] == 0.0)


class TestTruthOracle:
    def test_null_effect_ate(self):
        dgp = DgpSpec().with_overrides(y_a=0.0, y_al1=0.0, y_al2=0.0)
        spec = ate_spec(single_timepoint_schema())
        value, se = monte_carlo_truth(dgp, spec, 200_000, seed=21)
        assert abs(value) <= 3 * se

    def test_frozen_ate_truth_regenerates(self):
        value, se = monte_carlo_truth(DgpSpec(), ate_spec(single_timepoint_schema()), 200_000, seed=23)
        assert abs(value - ATE_TRUTH) <= 4 * (se + ATE_TRUTH_SE)

    def test_mc_se_scaling(self):
        spec = ate_spec(single_timepoint_schema())
        _, se1 = monte_carlo_truth(DgpSpec(), spec, 100_000, seed=25)
        _, se2 = monte_carlo_truth(DgpSpec(), spec, 200_000, seed=25)
        assert se1 / se2 == pytest.approx(np.sqrt(2.0), rel=0.05)

    def test_ratio_contrast_truth(self):
        from riesztmle.estimands import contrast_spec

        schema = single_timepoint_schema()
        spec = contrast_spec(tsm_spec(schema, 1.0), tsm_spec(schema, 0.0), "ratio")
        value, se = monte_carlo_truth(DgpSpec(), spec, 200_000, seed=27)
        t1, se1 = monte_carlo_truth(DgpSpec(), tsm_spec(schema, 1.0), 200_000, seed=28)
        t0, se0 = monte_carlo_truth(DgpSpec(), tsm_spec(schema, 0.0), 200_000, seed=29)
        assert value == pytest.approx(t1 / t0, abs=3 * (se + 4 * (se1 + se0)))
        assert se > 0


class TestEfficiencyBound:
    def test_positive_for_default_dgp(self):
        bound, se = efficiency_bound(DgpSpec(), ate_spec(single_timepoint_schema()), 100_000, seed=29)
        assert bound > 0 and se > 0

    def test_frozen_bound_regenerates(self):
        bound, se = efficiency_bound(DgpSpec(), ate_spec(single_timepoint_schema()), 200_000, seed=31)
        assert abs(bound - ATE_BOUND) <= 4 * (se + ATE_BOUND_SE)

    def test_degenerate_two_cell_bound_by_hand(self):
        # Two-cell DGP with Y deterministic given (A, L): the residual term
        # of the EIF vanishes, so the variance of the EIF equals the variance
        # of the plug-in deviations, enumerable by hand.
        p_l = 0.4
        f = {(1.0, 0.0): 0.2, (1.0, 1.0): 0.9, (0.0, 0.0): 0.2, (0.0, 1.0): 0.5}
        g = {0.0: 0.7, 1.0: 0.3}
        psi = (1 - p_l) * f[(1.0, 0.0)] + p_l * f[(1.0, 1.0)]
        var = 0.0
        for l in (0.0, 1.0):
            for a in (0.0, 1.0):
                prob = (p_l if l == 1.0 else 1 - p_l) * (g[l] if a == 1.0 else 1 - g[l])
                phi = f[(1.0, l)] - psi  # Y - f(A, L) = 0 on every atom
                var += prob * phi**2
        hand = (1 - p_l) * (f[(1.0, 0.0)] - psi) ** 2 + p_l * (f[(1.0, 1.0)] - psi) ** 2
        assert var == pytest.approx(hand, abs=1e-12)
        delta = f[(1.0, 1.0)] - f[(1.0, 0.0)]
        assert hand == pytest.approx(p_l * (1 - p_l) * delta**2, abs=1e-12)


class TestReplicationHarness:
    def base_config(self, **kw):
        defaults = dict(
            dgp=DgpSpec(),
            estimand="ate",
            estimators=("tmle",),
            arms=("correct",),
            n_grid=(200,),
            reps=3,
            seed=101,
            threads=1,
            library=("glm_interactions",),
            cv_folds=4,
            psi0=ATE_TRUTH,
            bound=ATE_BOUND,
        )
        defaults.update(kw)
        return SimConfig(**defaults)

    def test_reproducible(self):
        a = run_replications(self.base_config())
        b = run_replications(self.base_config())
        assert a.rows == b.rows
        assert a.psi0 == b.psi0 and a.bound == b.bound

    def test_parallel_serial_equivalence(self):
        serial = run_replications(self.base_config(reps=6, threads=1))
        parallel = run_replications(self.base_config(reps=6, threads=2))
        assert serial.rows == parallel.rows

    def test_single_rep_degenerate_mc_se(self):
        table = run_replications(self.base_config(reps=1))
        for row in table.rows:
            if row["metric"] in ("bias", "mse"):
                assert row["mc_se"] == 0.0
            if row["metric"] == "coverage":
                assert row["value"] in (0.0, 1.0)
                assert row["mc_se"] == 0.0

    def test_metric_set_and_reps(self):
        table = run_replications(self.base_config())
        metrics = {row["metric"] for row in table.rows}
        assert metrics == {"bias", "coverage", "mse", "rel_efficiency"}
        assert all(row["reps"] == 3 for row in table.rows)

    def test_plugin_with_flexible_learners_nearly_unbiased(self):
        table = run_replications(
            self.base_config(estimators=("plugin",), reps=20, n_grid=(500,))
        )
        bias = table.value(500, "plugin", "correct", "bias")
        se = [r["mc_se"] for r in table.rows if r["metric"] == "bias"][0]
        assert abs(bias) <= 4 * se + 0.02

    def test_csv_format(self, tmp_path):
        table = run_replications(self.base_config())
        out = tmp_path / "metrics.csv"
        table.to_csv(out)
        header = out.read_text().splitlines()[0]
        assert header == "n,estimator,arm,metric,value,mc_se,reps"

    def test_misspecified_arm_uses_constant_learner(self):
        table = run_replications(
            self.base_config(arms=("outcome_misspecified",), reps=3, n_grid=(300,))
        )
        assert {row["arm"] for row in table.rows} == {"outcome_misspecified"}

    def test_failure_flagging(self):
        # Arm value outside the observed support fails at validation in
        # every replication; the run is flagged, not aborted.
        config = self.base_config(estimand="tsm", a=2.0)
        table = run_replications(config)
        assert table.failures == 3
        assert table.flagged
        assert table.rows == []


class TestTrueNuisancePlugin:
    def test_bias_within_monte_carlo_error(self):
        from riesztmle.learners import Family
        from riesztmle.models import FormulaRegression
        from riesztmle.riesz import plugin_indicator
        from riesztmle.sim import SINGLE_COEFFS, true_outcome, true_propensity
        from riesztmle.tmle import bundle_from_models, plugin_estimate

        c = SINGLE_COEFFS
        spec = tsm_spec(single_timepoint_schema(), 1.0)
        true_q = FormulaRegression(
            fn=lambda cols: true_outcome(cols, cols["A"], c),
            columns=("A", "L1", "L2", "L3", "L4", "L5"),
            family=Family.BINOMIAL,
        )
        true_g = FormulaRegression(
            fn=lambda cols: true_propensity(cols, c),
            columns=("L1", "L2", "L3", "L4", "L5"),
            family=Family.BINOMIAL,
        )
        estimates = []
        for rep in range(20):
            ds = draw_single_timepoint(2000, seed=1000 + rep)
            alpha = plugin_indicator(true_g, "A", 1.0, 0.001)
            bundle = bundle_from_models(ds, spec, [true_q], [alpha])
            estimates.append(plugin_estimate(bundle, spec, ds))
        estimates = np.array(estimates)
        from conftest import TSM1_TRUTH

        se = estimates.std(ddof=1) / np.sqrt(len(estimates))
        assert abs(estimates.mean() - TSM1_TRUTH) <= 3 * se
