"""Declarative estimand builders.

An estimand is a nested sequence of regression levels, each carrying its
conditioning columns, an intervention transform applied to the fitted
regression, and a recipe for the level's Riesz representer. Contrasts
(differences, ratios) compose two estimands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .models import Overrides, Regression


def _schema_of(source):
    return source.schema if isinstance(source, Dataset) else dict(source)


def _baselines(schema) -> list[str]:
    return [n for n, r in schema.items() if r.kind == "baseline-covariate"]


def _treatments(schema) -> list[str]:
    cols = [(r.t, n) for n, r in schema.items() if r.kind == "treatment"]
    return [n for _, n in sorted(cols)]


def _time_varying(schema, max_t: int) -> list[str]:
    cols = [(r.t, n) for n, r in schema.items() if r.kind == "time-varying-covariate" and r.t <= max_t]
    return [n for _, n in sorted(cols)]


def _mediator(schema) -> str | None:
    for n, r in schema.items():
        if r.kind == "mediator":
            return n
    return None


@dataclass(frozen=True)
class HTransform:
    """Intervention transform: evaluate a regression at assigned column values.

    Empty assignments give the identity transform. The transform is linear in
    its regression argument by construction.
    """

    assignments: tuple[tuple[str, float], ...] = ()

    @classmethod
    def evaluate_at(cls, **assignments: float) -> "HTransform":
        return cls(tuple(sorted((k, float(v)) for k, v in assignments.items())))

    @property
    def kind(self) -> str:
        return "identity" if not self.assignments else "evaluate-at-treatment"

    def overrides(self) -> dict[str, float]:
        return dict(self.assignments)

    def apply(self, regression: Regression, dataset: Dataset, extra: Overrides = None) -> np.ndarray:
        over = self.overrides()
        if extra:
            over.update(extra)
        return regression.predict(dataset, over)


@dataclass(frozen=True)
class IndicatorRecipe:
    """Fit a propensity model and form 1(A = a)/g_a."""

    treatment_col: str
    value: float
    model_features: tuple[str, ...]


@dataclass(frozen=True)
class MediationRatioRecipe:
    """Fit a binary-mediator model and form the density ratio at ``a_ref``."""

    mediator_col: str
    treatment_col: str
    a_ref: float
    model_features: tuple[str, ...]


@dataclass(frozen=True)
class TwoPhaseRecipe:
    """Sampling-indicator weight 1(D = 1)/pi(Y, V)."""

    indicator_col: str
    model_features: tuple[str, ...]


RepresenterRecipe = IndicatorRecipe | MediationRatioRecipe | TwoPhaseRecipe


@dataclass(frozen=True)
class LevelSpec:
    """One nested regression level: conditioning set, transform, representer."""

    features: tuple[str, ...]
    h: HTransform
    recipe: RepresenterRecipe


@dataclass(frozen=True)
class EstimandSpec:
    """A (possibly contrasted) nested linear-functional estimand.

    ``levels`` run from the outermost regression (level 1) inward; level T
    regresses the outcome column. Contrast estimands carry two sub-estimands
    and a combination kind instead of levels.
    """

    name: str
    levels: tuple[LevelSpec, ...] = ()
    contrast: tuple["EstimandSpec", "EstimandSpec", str] | None = None

    def __post_init__(self):
        if self.contrast is None and not self.levels:
            raise ValueError("estimand needs levels or a contrast")
        if self.contrast is not None and self.levels:
            raise ValueError("contrast estimands carry no levels of their own")
        if self.contrast is not None and self.contrast[2] not in ("difference", "ratio"):
            raise ValueError(f"unknown contrast kind {self.contrast[2]!r}")

    @property
    def depth(self) -> int:
        return len(self.levels)

    def validate_against(self, dataset: Dataset) -> None:
        """Check treatment/mediator values required by the transforms."""
        if self.contrast is not None:
            self.contrast[0].validate_against(dataset)
            self.contrast[1].validate_against(dataset)
            return
        for level in self.levels:
            for col, value in level.h.assignments:
                role = dataset.schema.get(col)
                if role is None:
                    raise ValueError(f"estimand references unknown column {col!r}")
                if role.kind in ("treatment", "mediator"):
                    observed = np.unique(dataset.columns[col])
                    if value not in observed:
                        raise ValueError(
                            f"intervention value {value} for {col!r} not among "
                            f"observed values {observed.tolist()}"
                        )
            if isinstance(level.recipe, MediationRatioRecipe):
                m = dataset.columns[level.recipe.mediator_col]
                if not np.all(np.isin(m, (0.0, 1.0))):
                    raise ValueError("mediator column must be binary")


def tsm_spec(schema_or_dataset, a: float) -> EstimandSpec:
    """Treatment-specific mean at arm ``a`` for a single-time-point schema."""
    schema = _schema_of(schema_or_dataset)
    treatments = _treatments(schema)
    if len(treatments) != 1:
        raise ValueError(f"treatment-specific mean needs exactly one treatment column, found {len(treatments)}")
    treatment = treatments[0]
    baselines = _baselines(schema)
    features = (treatment, *baselines)
    level = LevelSpec(
        features=features,
        h=HTransform.evaluate_at(**{treatment: a}),
        recipe=IndicatorRecipe(treatment, float(a), tuple(baselines)),
    )
    return EstimandSpec(name=f"tsm[{treatment}={a:g}]", levels=(level,))


def ate_spec(schema_or_dataset) -> EstimandSpec:
    """Average treatment effect as the difference of the two arm means."""
    left = tsm_spec(schema_or_dataset, 1.0)
    right = tsm_spec(schema_or_dataset, 0.0)
    return EstimandSpec(name="ate", contrast=(left, right, "difference"))


def contrast_spec(left: EstimandSpec, right: EstimandSpec, kind: str, name: str | None = None) -> EstimandSpec:
    """Compose two estimands with a delta-method combination."""
    label = name or f"{kind}({left.name}, {right.name})"
    return EstimandSpec(name=label, contrast=(left, right, kind))


def longitudinal_spec(schema_or_dataset, regime) -> EstimandSpec:
    """Counterfactual mean under a static treatment regime.

    ``regime`` assigns one value per treatment time. Level t conditions on
    treatments up to t plus all covariates realized before treatment t, and
    its representer is the time-t indicator/propensity weight.
    """
    schema = _schema_of(schema_or_dataset)
    treatments = _treatments(schema)
    regime = [float(a) for a in np.atleast_1d(regime)]
    if len(regime) != len(treatments):
        raise ValueError(
            f"regime length {len(regime)} does not match {len(treatments)} treatment columns"
        )
    baselines = _baselines(schema)
    levels = []
    for t in range(1, len(treatments) + 1):
        past = treatments[:t]
        covs = baselines + _time_varying(schema, t)
        assignments = {treatments[k]: regime[k] for k in range(t)}
        levels.append(
            LevelSpec(
                features=(*past, *covs),
                h=HTransform.evaluate_at(**assignments),
                recipe=IndicatorRecipe(
                    treatments[t - 1], regime[t - 1], (*treatments[: t - 1], *covs)
                ),
            )
        )
    label = ",".join(f"{a:g}" for a in regime)
    return EstimandSpec(name=f"regime[{label}]", levels=tuple(levels))


def nde_m_functional_spec(schema_or_dataset) -> EstimandSpec:
    """Mediation M-functional: inner regression at the treated arm, outer at
    the control arm, with the density-ratio and propensity representers
    ordered so the propensity factor multiplies the innermost residual."""
    schema = _schema_of(schema_or_dataset)
    mediator = _mediator(schema)
    if mediator is None:
        raise ValueError("mediation functional needs a mediator column")
    treatments = _treatments(schema)
    if len(treatments) != 1:
        raise ValueError("mediation functional needs exactly one treatment column")
    treatment = treatments[0]
    baselines = _baselines(schema)
    outer = LevelSpec(
        features=(treatment, *baselines),
        h=HTransform.evaluate_at(**{treatment: 0.0}),
        recipe=MediationRatioRecipe(mediator, treatment, 0.0, (treatment, *baselines)),
    )
    inner = LevelSpec(
        features=(treatment, mediator, *baselines),
        h=HTransform.evaluate_at(**{treatment: 1.0}),
        recipe=IndicatorRecipe(treatment, 1.0, tuple(baselines)),
    )
    return EstimandSpec(name="nde-m-functional", levels=(outer, inner))


def nde_spec(schema_or_dataset) -> EstimandSpec:
    """Natural direct effect: M-functional minus the control-arm mean."""
    return contrast_spec(
        nde_m_functional_spec(schema_or_dataset),
        tsm_spec(schema_or_dataset, 0.0),
        "difference",
        name="nde",
    )
