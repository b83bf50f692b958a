import numpy as np
import pytest
from scipy.special import expit

from riesztmle.data import ColumnRole, Dataset
from riesztmle.estimands import (
    HTransform,
    ate_spec,
    contrast_spec,
    longitudinal_spec,
    nde_m_functional_spec,
    tsm_spec,
)
from riesztmle.learners import Family
from riesztmle.models import FormulaRegression
from riesztmle.sim import (
    longitudinal_t2_schema,
    single_timepoint_schema,
)
from riesztmle.tmle import LearnerSetup, RieszSetup, estimate


class TestHTransform:
    def test_identity_kind(self):
        assert HTransform().kind == "identity"

    def test_linearity_probe(self):
        # h is linear in the regression argument: probe with random linear
        # predictors evaluated through the transform.
        rng = np.random.default_rng(0)
        schema = single_timepoint_schema()
        cols = {f"L{i}": rng.standard_normal(30) for i in range(1, 6)}
        cols["A"] = rng.binomial(1, 0.5, 30).astype(float)
        cols["Y"] = rng.binomial(1, 0.5, 30).astype(float)
        ds = Dataset(cols, schema)
        h = HTransform.evaluate_at(A=1.0)

        def linear_model(w):
            return FormulaRegression(
                fn=lambda c: w[0] * c["A"] + w[1] * c["L1"] + w[2] * c["L2"],
                columns=("A", "L1", "L2"),
                family=Family.GAUSSIAN,
            )

        for _ in range(20):
            w1, w2 = rng.standard_normal(3), rng.standard_normal(3)
            c = float(rng.standard_normal())
            sum_apply = h.apply(linear_model(w1 + w2), ds)
            np.testing.assert_allclose(
                sum_apply, h.apply(linear_model(w1), ds) + h.apply(linear_model(w2), ds), atol=1e-12
            )
            np.testing.assert_allclose(
                h.apply(linear_model(c * w1), ds), c * h.apply(linear_model(w1), ds), atol=1e-12
            )


class TestTsmSpec:
    def test_conditioning_set(self):
        spec = tsm_spec(single_timepoint_schema(), 1.0)
        assert spec.depth == 1
        assert spec.levels[0].features == ("A", "L1", "L2", "L3", "L4", "L5")
        assert dict(spec.levels[0].h.assignments) == {"A": 1.0}

    def test_invalid_arm_fails_downstream(self):
        rng = np.random.default_rng(1)
        cols = {f"L{i}": rng.standard_normal(20) for i in range(1, 6)}
        cols["A"] = rng.binomial(1, 0.5, 20).astype(float)
        cols["Y"] = rng.binomial(1, 0.5, 20).astype(float)
        ds = Dataset(cols, single_timepoint_schema())
        spec = tsm_spec(ds.schema, 2.0)
        with pytest.raises(ValueError, match="not among"):
            spec.validate_against(ds)

    def test_ate_is_difference_of_arm_means(self):
        spec = ate_spec(single_timepoint_schema())
        left, right, kind = spec.contrast
        assert kind == "difference"
        assert dict(left.levels[0].h.assignments) == {"A": 1.0}
        assert dict(right.levels[0].h.assignments) == {"A": 0.0}


class TestLongitudinalSpec:
    def test_single_period_reduces_to_tsm(self):
        schema = single_timepoint_schema()
        assert longitudinal_spec(schema, [1.0]).levels == tsm_spec(schema, 1.0).levels

    def test_two_period_conditioning(self):
        spec = longitudinal_spec(longitudinal_t2_schema(), [1.0, 1.0])
        assert spec.depth == 2
        assert spec.levels[0].features == ("A1", "L0")
        assert spec.levels[1].features == ("A1", "A2", "L0", "L1")
        assert dict(spec.levels[1].h.assignments) == {"A1": 1.0, "A2": 1.0}
        assert spec.levels[1].recipe.model_features == ("A1", "L0", "L1")

    def test_regime_length_mismatch(self):
        with pytest.raises(ValueError, match="regime length"):
            longitudinal_spec(longitudinal_t2_schema(), [1.0, 1.0, 0.0])


def mediation_schema():
    return {
        "L": ColumnRole("baseline-covariate"),
        "A": ColumnRole("treatment", 1),
        "M": ColumnRole("mediator"),
        "Y": ColumnRole("outcome"),
    }


class TestMediationSpec:
    def test_two_levels(self):
        spec = nde_m_functional_spec(mediation_schema())
        assert spec.depth == 2

    def test_structure(self):
        spec = nde_m_functional_spec(mediation_schema())
        outer, inner = spec.levels
        assert outer.features == ("A", "L")
        assert dict(outer.h.assignments) == {"A": 0.0}
        assert inner.features == ("A", "M", "L")
        assert dict(inner.h.assignments) == {"A": 1.0}
        # Propensity weight sits at the innermost level.
        assert inner.recipe.treatment_col == "A" and inner.recipe.value == 1.0
        assert outer.recipe.mediator_col == "M" and outer.recipe.a_ref == 0.0

    def test_requires_mediator(self):
        with pytest.raises(ValueError, match="mediator"):
            nde_m_functional_spec(single_timepoint_schema())

    def test_collapse_when_mediator_is_inert(self):
        # M independent of A given L and Y free of M: the M-functional equals
        # the treated-arm mean, whose truth is computed by direct integration.
        rng = np.random.default_rng(42)
        n = 4000
        L = rng.standard_normal(n)
        A = rng.binomial(1, expit(0.5 * L)).astype(float)
        M = rng.binomial(1, expit(0.3 * L)).astype(float)
        Y = rng.binomial(1, expit(-0.2 + 0.8 * A + 0.5 * L)).astype(float)
        ds = Dataset(
            {"L": L, "A": A, "M": M, "Y": Y},
            mediation_schema(),
        )
        spec = nde_m_functional_spec(ds.schema)
        learners = LearnerSetup(outcome=("glm",), propensity=("glm",), cv_folds=5, seed=1)
        report = estimate(ds, spec, learners, RieszSetup(), estimator="tmle")
        big = rng.standard_normal(2_000_000)
        truth = float(np.mean(expit(-0.2 + 0.8 + 0.5 * big)))
        assert abs(report.psi - truth) <= 3 * report.se


class TestContrastSpec:
    def test_ratio_kind(self):
        schema = single_timepoint_schema()
        spec = contrast_spec(tsm_spec(schema, 1.0), tsm_spec(schema, 0.0), "ratio")
        assert spec.contrast[2] == "ratio"

    def test_unknown_kind_rejected(self):
        schema = single_timepoint_schema()
        with pytest.raises(ValueError, match="contrast"):
            contrast_spec(tsm_spec(schema, 1.0), tsm_spec(schema, 0.0), "sum")
