"""Estimator drivers: plug-in, one-step, and the three targeting algorithms.

A FitBundle holds the sequential regressions, representers, and cumulative
weights for an estimand. Targeting fluctuates each level with its clever
covariate so the empirical influence-function equation is solved; the
sequentially doubly-robust variant fits fluctuation functions over earlier
histories with representer-product weights; the two-phase variant projects
the uncentered complete-data influence function onto the always-observed
variables and targets that projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from .data import Dataset
from .eif import EifVector, EstimateReport, eif_sequential, eif_two_phase, wald
from .estimands import (
    EstimandSpec,
    HTransform,
    IndicatorRecipe,
    LevelSpec,
    MediationRatioRecipe,
)
from .learners import Family, fit_glm
from .models import DesignBuilder, Overrides, Regression, fit_regression
from .riesz import (
    CumulativeWeights,
    IndicatorRepresenter,
    MediationRatioRepresenter,
    Representer,
    TwoPhaseRepresenter,
    basis_from_columns,
    plugin_two_phase,
    riesz_regression,
)

FLUCT_CLAMP = 1e-6
SCORE_CRITERION = 1e-6
BOUNDS_PAD = 1e-3


@dataclass(frozen=True)
class LearnerSetup:
    """Learner libraries and cross-validation settings for nuisance fits.

    ``outcome_overrides`` pins a different outcome library at specific
    levels, e.g. ``((2, ("constant",)),)`` to degrade the innermost
    regression of a two-level estimand.
    """

    outcome: tuple[str, ...] = ("constant", "glm", "glm_interactions", "ridge")
    propensity: tuple[str, ...] = ("constant", "glm", "glm_interactions", "ridge")
    cv_folds: int = 10
    fluctuation: str = "glm"
    seed: int = 0
    outcome_overrides: tuple[tuple[int, tuple[str, ...]], ...] = ()

    def outcome_library(self, t: int) -> tuple[str, ...]:
        for level, library in self.outcome_overrides:
            if level == t:
                return library
        return self.outcome


@dataclass(frozen=True)
class RieszSetup:
    """Representer construction: plug-in models or direct Riesz regression."""

    mode: str = "plugin"
    truncation: float = 0.01
    basis: str = "interactions"


class _FluctTerm:
    """One additive link-scale fluctuation term."""

    def value(self, dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        raise NotImplementedError


@dataclass
class _ScalarTerm(_FluctTerm):
    epsilon: float
    covariate: "CumulativeWeights"
    t: int

    def value(self, dataset, overrides=None):
        return self.epsilon * self.covariate.evaluate(dataset, self.t, overrides)


@dataclass
class _FunctionTerm(_FluctTerm):
    coef: np.ndarray
    builder: DesignBuilder

    def value(self, dataset, overrides=None):
        return self.builder.build(dataset, overrides) @ self.coef


@dataclass
class LevelState:
    """A fitted level: initial regression plus accumulated fluctuations.

    ``bounds`` record the min-max scaling used by the logistic fluctuation;
    ``None`` means the fluctuation acts on the identity scale.
    """

    spec: LevelSpec
    regression: Regression
    family: Family
    bounds: tuple[float, float] | None
    fluctuations: list[_FluctTerm] = field(default_factory=list)
    epsilons: list[float] = field(default_factory=list)
    fluct_converged: bool = True

    def predict_star(self, dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        base = self.regression.predict(dataset, overrides)
        if not self.fluctuations:
            return base
        shift = np.zeros(dataset.n)
        for term in self.fluctuations:
            shift = shift + term.value(dataset, overrides)
        if self.bounds is None:
            return base + shift
        lo, hi = self.bounds
        scaled = np.clip((base - lo) / (hi - lo), FLUCT_CLAMP, 1.0 - FLUCT_CLAMP)
        return lo + (hi - lo) * expit(logit(scaled) + shift)

    def as_regression(self, with_h: bool = False) -> Regression:
        return _StarRegression(self, self.spec.h.overrides() if with_h else {})


@dataclass
class _StarRegression(Regression):
    level: LevelState
    base_overrides: dict

    @property
    def family(self) -> Family:
        return self.level.family

    def predict(self, dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        merged = dict(self.base_overrides)
        if overrides:
            merged.update(overrides)
        return self.level.predict_star(dataset, merged)


def _fluct_bounds(target: np.ndarray) -> tuple[float, float] | None:
    """Scaling bounds for the logistic fluctuation; None selects identity."""
    lo, hi = float(np.min(target)), float(np.max(target))
    if lo >= 0.0 and hi <= 1.0:
        return (0.0, 1.0)
    if hi - lo < 1e-12:
        return None
    pad = BOUNDS_PAD * (hi - lo)
    return (lo - pad, hi + pad)


@dataclass
class FitBundle:
    """Fitted nuisances for one estimand on one dataset."""

    dataset: Dataset
    spec: EstimandSpec
    levels: list[LevelState]
    representers: list[Representer]
    omega: CumulativeWeights
    learner_flags: dict = field(default_factory=dict)

    @property
    def depth(self) -> int:
        return len(self.levels)

    def refresh_target(self, t: int) -> np.ndarray:
        """Regression target for level t under the current fluctuations."""
        if t == self.depth:
            return self.dataset.columns[self.dataset.outcome_column()]
        inner = self.levels[t]  # level t+1, zero-indexed
        return inner.spec.h.apply(inner.as_regression(), self.dataset)

    def level_terms(self):
        for t in range(1, self.depth + 1):
            level = self.levels[t - 1]
            omega = self.omega.evaluate(self.dataset, t)
            target = self.refresh_target(t)
            qbar = level.predict_star(self.dataset)
            yield omega, target, qbar

    @property
    def h1_plugin(self) -> np.ndarray:
        level1 = self.levels[0]
        return level1.spec.h.apply(level1.as_regression(), self.dataset)

    def fresh_copy(self) -> "FitBundle":
        levels = [replace(lv, fluctuations=[], epsilons=[], fluct_converged=True) for lv in self.levels]
        return FitBundle(
            dataset=self.dataset,
            spec=self.spec,
            levels=levels,
            representers=list(self.representers),
            omega=self.omega,
            learner_flags=dict(self.learner_flags),
        )

    def diagnostics(self) -> dict:
        return {
            "epsilons": [list(map(float, lv.epsilons)) for lv in self.levels],
            "truncation_count": int(self.omega.truncated_count(self.dataset)),
            "learners_converged": bool(
                all(lv.regression.converged() for lv in self.levels)
                and all(lv.fluct_converged for lv in self.levels)
            ),
        }


def _fit_probability_model(dataset, columns, target_col, setup: LearnerSetup, weights, seed):
    target = dataset.columns[target_col]
    return fit_regression(
        dataset,
        columns,
        target,
        library=list(setup.propensity),
        cv_folds=setup.cv_folds,
        seed=seed,
        weights=weights,
        family=Family.BINOMIAL,
    )


def _fit_representers(dataset, spec, learners, riesz, weights):
    """Plug-in representers per level, from the level recipes."""
    reps: list[Representer] = []
    for t, level in enumerate(spec.levels, start=1):
        recipe = level.recipe
        seed = learners.seed * 1000 + 7 * t
        if isinstance(recipe, IndicatorRecipe):
            model = _fit_probability_model(
                dataset, recipe.model_features, recipe.treatment_col, learners, weights, seed
            )
            rep = IndicatorRepresenter(
                model, recipe.treatment_col, recipe.value, riesz.truncation, t=t
            )
        elif isinstance(recipe, MediationRatioRecipe):
            model = _fit_probability_model(
                dataset, recipe.model_features, recipe.mediator_col, learners, weights, seed
            )
            rep = MediationRatioRepresenter(
                model,
                recipe.mediator_col,
                recipe.treatment_col,
                recipe.a_ref,
                riesz.truncation,
                t=t,
            )
        else:
            raise ValueError(f"recipe {type(recipe).__name__} is not fit by this driver")
        reps.append(rep)
    return reps


def _fit_direct_weights(dataset, spec, riesz):
    """Directly estimated cumulative weights, level by level."""
    for level in spec.levels:
        if not isinstance(level.recipe, IndicatorRecipe):
            raise ValueError(
                "riesz mode 'regression' supports indicator-type representers only"
            )
    fits = []
    previous = None
    for t, level in enumerate(spec.levels, start=1):
        basis = basis_from_columns(level.features, riesz.basis)
        h_over = {level.recipe.treatment_col: level.recipe.value}
        outer = None if previous is None else previous.evaluate(dataset)
        rep = riesz_regression(basis, h_over, dataset, outer_weights=outer)
        rep.t = t
        fits.append(rep)
        previous = rep
    return CumulativeWeights(fits, direct=True)


def fit_bundle(
    dataset: Dataset,
    spec: EstimandSpec,
    learners: LearnerSetup,
    riesz: RieszSetup,
    weights: np.ndarray | None = None,
    cache: dict | None = None,
) -> FitBundle:
    """Fit representers and the sequential regressions for an estimand.

    Regressions are fit innermost first; each outer level regresses the
    intervened prediction of the level inside it. ``cache`` lets contrast
    estimands share probability models and the outcome-level regression.
    """
    if spec.contrast is not None:
        raise ValueError("fit_bundle expects a non-contrast estimand")
    spec.validate_against(dataset)
    cache = cache if cache is not None else {}

    if riesz.mode == "plugin":
        reps = _fit_cached_representers(dataset, spec, learners, riesz, weights, cache)
        omega = CumulativeWeights(reps, direct=False)
    elif riesz.mode == "regression":
        omega = _fit_direct_weights(dataset, spec, riesz)
        reps = list(omega.factors)
    else:
        raise ValueError(f"unknown riesz mode {riesz.mode!r}")

    T = spec.depth
    levels: list[LevelState | None] = [None] * T
    target = dataset.columns[dataset.outcome_column()]
    for t in range(T, 0, -1):
        level_spec = spec.levels[t - 1]
        library = learners.outcome_library(t)
        key = ("qbar-outcome", level_spec.features, library) if t == T else None
        regression = cache.get(key) if key else None
        if regression is None:
            regression = fit_regression(
                dataset,
                level_spec.features,
                target,
                library=list(library),
                cv_folds=learners.cv_folds,
                seed=learners.seed * 1000 + 13 * t,
                weights=weights,
            )
            if key:
                cache[key] = regression
        state = LevelState(
            spec=level_spec,
            regression=regression,
            family=regression.family,
            bounds=_fluct_bounds(target),
        )
        levels[t - 1] = state
        if t > 1:
            target = level_spec.h.apply(regression, dataset)
    return FitBundle(dataset=dataset, spec=spec, levels=levels, representers=reps, omega=omega)


def _fit_cached_representers(dataset, spec, learners, riesz, weights, cache):
    reps = []
    for t, level in enumerate(spec.levels, start=1):
        recipe = level.recipe
        key = ("prob", type(recipe).__name__, recipe.model_features, tuple(learners.propensity))
        if isinstance(recipe, IndicatorRecipe):
            model = cache.get(key + (recipe.treatment_col,))
            if model is None:
                model = _fit_probability_model(
                    dataset,
                    recipe.model_features,
                    recipe.treatment_col,
                    learners,
                    weights,
                    learners.seed * 1000 + 7 * t,
                )
                cache[key + (recipe.treatment_col,)] = model
            reps.append(
                IndicatorRepresenter(model, recipe.treatment_col, recipe.value, riesz.truncation, t=t)
            )
        elif isinstance(recipe, MediationRatioRecipe):
            model = cache.get(key + (recipe.mediator_col,))
            if model is None:
                model = _fit_probability_model(
                    dataset,
                    recipe.model_features,
                    recipe.mediator_col,
                    learners,
                    weights,
                    learners.seed * 1000 + 7 * t,
                )
                cache[key + (recipe.mediator_col,)] = model
            reps.append(
                MediationRatioRepresenter(
                    model,
                    recipe.mediator_col,
                    recipe.treatment_col,
                    recipe.a_ref,
                    riesz.truncation,
                    t=t,
                )
            )
        else:
            raise ValueError(f"recipe {type(recipe).__name__} is not fit by this driver")
    return reps


def bundle_from_models(
    dataset: Dataset,
    spec: EstimandSpec,
    regressions: list[Regression],
    representers: list[Representer],
) -> FitBundle:
    """Assemble a bundle from externally supplied nuisances.

    Used for oracle runs with closed-form (true) regressions and weights.
    ``regressions`` and ``representers`` are ordered outermost first.
    """
    if spec.contrast is not None:
        raise ValueError("bundle_from_models expects a non-contrast estimand")
    if len(regressions) != spec.depth or len(representers) != spec.depth:
        raise ValueError("need one regression and one representer per level")
    levels = []
    target = dataset.columns[dataset.outcome_column()]
    states: dict[int, LevelState] = {}
    for t in range(spec.depth, 0, -1):
        level_spec = spec.levels[t - 1]
        states[t] = LevelState(
            spec=level_spec,
            regression=regressions[t - 1],
            family=regressions[t - 1].family,
            bounds=_fluct_bounds(target),
        )
        if t > 1:
            target = level_spec.h.apply(regressions[t - 1], dataset)
    levels = [states[t] for t in range(1, spec.depth + 1)]
    omega = CumulativeWeights(list(representers), direct=False)
    return FitBundle(
        dataset=dataset, spec=spec, levels=levels, representers=list(representers), omega=omega
    )


def plugin_estimate(bundle: FitBundle, spec: EstimandSpec, dataset: Dataset) -> float:
    """Substitution estimator: the mean of the level-1 intervened prediction."""
    return float(np.mean(bundle.h1_plugin))


def one_step(bundle: FitBundle, spec: EstimandSpec, dataset: Dataset) -> EstimateReport:
    """Plug-in estimate plus the empirical mean of the EIF correction terms."""
    psi_plug = plugin_estimate(bundle, spec, dataset)
    correction = 0.0
    for omega, target, qbar in bundle.level_terms():
        correction += float(np.mean(omega * (target - qbar)))
    psi = psi_plug + correction
    vec = eif_sequential(dataset, bundle, spec, psi)
    report = wald(vec, psi)
    return report.with_diagnostics(plugin_psi=psi_plug, **bundle.diagnostics())


def _scale_for_fluct(y, bounds):
    if bounds is None:
        return y, Family.GAUSSIAN
    lo, hi = bounds
    return np.clip((y - lo) / (hi - lo), 0.0, 1.0), Family.BINOMIAL


def _offset_for_fluct(pred, bounds):
    if bounds is None:
        return pred
    lo, hi = bounds
    scaled = np.clip((pred - lo) / (hi - lo), FLUCT_CLAMP, 1.0 - FLUCT_CLAMP)
    return logit(scaled)


def _fit_offset_glm(x, y, offset, bounds, weights=None):
    """Offset regression on the fluctuation scale; returns the fitted learner."""
    y_scaled, family = _scale_for_fluct(y, bounds)
    return fit_glm(x, y_scaled, family, weights=weights, offset=offset)


def _fluctuate_scalar(bundle: FitBundle, t: int, rows: np.ndarray | None = None) -> None:
    """One-coefficient fluctuation of level t with covariate omega_t."""
    level = bundle.levels[t - 1]
    dataset = bundle.dataset
    y = bundle.refresh_target(t)
    pred = level.predict_star(dataset)
    x = bundle.omega.evaluate(dataset, t)
    offset = _offset_for_fluct(pred, level.bounds)
    design = x[:, None]
    if rows is not None:
        design, y, offset = design[rows], y[rows], offset[rows]
    fit = _fit_offset_glm(design, y, offset, level.bounds)
    epsilon = float(fit.coef[0])
    if not np.isfinite(epsilon):
        epsilon = 0.0
    level.fluct_converged = level.fluct_converged and fit.diagnostics.converged
    level.epsilons.append(epsilon)
    level.fluctuations.append(_ScalarTerm(epsilon, bundle.omega, t))


def _targeting_pass(bundle: FitBundle) -> None:
    for t in range(bundle.depth, 0, -1):
        _fluctuate_scalar(bundle, t)


def _score_state(dataset, bundle, spec):
    psi = plugin_estimate(bundle, spec, dataset)
    vec = eif_sequential(dataset, bundle, spec, psi)
    sd = float(np.std(vec.values, ddof=1)) if vec.n > 1 else 0.0
    return psi, vec, abs(vec.mean()), sd


def riesz_tmle(
    dataset: Dataset,
    spec: EstimandSpec,
    learners: LearnerSetup,
    riesz: RieszSetup,
    iterate: bool = False,
    max_passes: int = 10,
    bundle: FitBundle | None = None,
) -> EstimateReport:
    """Targeted substitution estimator with per-level clever covariates.

    Each level t is fluctuated by a single-coefficient offset regression of
    its target on omega_t, from the innermost level outward; the estimate is
    the mean intervened prediction of the fluctuated outermost level.
    Optional iteration repeats targeting until the score residual criterion
    is met.
    """
    if bundle is None:
        bundle = fit_bundle(dataset, spec, learners, riesz)
    passes = 0
    while True:
        _targeting_pass(bundle)
        passes += 1
        psi, vec, score, sd = _score_state(dataset, bundle, spec)
        if not iterate or score <= SCORE_CRITERION * max(sd, 1e-12) or passes >= max_passes:
            break
    report = wald(vec, psi)
    return report.with_diagnostics(passes=passes, **bundle.diagnostics())


def _epsilon_builder(level_features, kind: str) -> DesignBuilder:
    if kind == "constant":
        return DesignBuilder((), "constant")
    if kind in ("glm", "glm_interactions"):
        return DesignBuilder(
            tuple(level_features), "main" if kind == "glm" else "interactions"
        )
    raise ValueError(f"unknown fluctuation learner {kind!r}")


def sdr_riesz_tmle(
    dataset: Dataset,
    spec: EstimandSpec,
    learners: LearnerSetup,
    riesz: RieszSetup,
    bundle: FitBundle | None = None,
) -> EstimateReport:
    """Sequentially doubly-robust variant with fluctuation functions.

    For each level t (innermost outward), fluctuation functions over the
    time-s history are fit for s = t..1 with representer-product weights
    prod_{u=s+1..t} alpha_u, followed by a scalar omega_t step that pins the
    level's score equation.
    """
    if riesz.mode != "plugin":
        raise ValueError("the sequentially doubly-robust driver needs per-level representers")
    if bundle is None:
        bundle = fit_bundle(dataset, spec, learners, riesz)
    for t in range(bundle.depth, 0, -1):
        level = bundle.levels[t - 1]
        y = bundle.refresh_target(t)
        for s in range(t, 0, -1):
            if s == t:
                w = np.ones(dataset.n)
            else:
                w = bundle.representers[s].evaluate(dataset)
                for u in range(s + 2, t + 1):
                    w = w * bundle.representers[u - 1].evaluate(dataset)
            builder = _epsilon_builder(bundle.levels[s - 1].spec.features, learners.fluctuation)
            pred = level.predict_star(dataset)
            offset = _offset_for_fluct(pred, level.bounds)
            fit = _fit_offset_glm(builder.build(dataset), y, offset, level.bounds, weights=w)
            level.fluct_converged = level.fluct_converged and fit.diagnostics.converged
            level.epsilons.append(float(np.max(np.abs(fit.coef))))
            level.fluctuations.append(_FunctionTerm(fit.coef, builder))
        _fluctuate_scalar(bundle, t)
    psi, vec, _, _ = _score_state(dataset, bundle, spec)
    report = wald(vec, psi)
    return report.with_diagnostics(passes=1, **bundle.diagnostics())


def two_phase_tmle(
    dataset: Dataset,
    complete_spec: EstimandSpec,
    learners: LearnerSetup,
    riesz: RieszSetup,
    sampling_model: Regression | None = None,
) -> EstimateReport:
    """Two-phase-sampling estimator built on the complete-data EIF.

    The uncentered complete-data EIF is computed on the phase-two rows from
    nuisances fit with inverse-sampling weights, regressed onto the
    always-observed variables, and that projection is fluctuated with the
    sampling-indicator representer. The estimate averages the fluctuated
    projection, evaluated at indicator one, over all rows.
    """
    indicator_col = dataset.sampling_column()
    if indicator_col is None:
        raise ValueError("two-phase estimation needs a sampling-indicator column")
    delta = dataset.columns[indicator_col] == 1.0
    if not delta.any():
        raise ValueError("no phase-two rows")

    observed_cols = [
        name
        for name in dataset.schema
        if name != indicator_col and not dataset.is_missing(name).any()
    ]
    outcome_col = dataset.outcome_column()
    obs_features = tuple([outcome_col] + [c for c in observed_cols if c != outcome_col])

    if sampling_model is None:
        sampling_model = fit_regression(
            dataset,
            obs_features,
            dataset.columns[indicator_col],
            library=list(learners.propensity),
            cv_folds=learners.cv_folds,
            seed=learners.seed * 1000 + 3,
            family=Family.BINOMIAL,
        )
    alpha = plugin_two_phase(sampling_model, indicator_col, riesz.truncation)

    phase2 = dataset.select(delta)
    pi2 = np.maximum(sampling_model.predict(phase2), riesz.truncation)
    ip_weights = 1.0 / pi2

    phi_uc = _uncentered_complete_eif(phase2, complete_spec, learners, riesz, ip_weights)

    target_full = np.zeros(dataset.n)
    target_full[delta] = phi_uc
    obs_regression = fit_regression(
        dataset,
        obs_features,
        target_full,
        library=list(learners.outcome),
        cv_folds=learners.cv_folds,
        seed=learners.seed * 1000 + 5,
        rows=delta,
    )

    obs_level = LevelState(
        spec=LevelSpec(
            features=obs_features,
            h=HTransform.evaluate_at(**{indicator_col: 1.0}),
            recipe=IndicatorRecipe(indicator_col, 1.0, obs_features),
        ),
        regression=obs_regression,
        family=obs_regression.family,
        bounds=_fluct_bounds(phi_uc),
    )
    x = alpha.evaluate(dataset)[delta][:, None]
    offset = _offset_for_fluct(obs_level.predict_star(dataset), obs_level.bounds)[delta]
    fit = _fit_offset_glm(x, phi_uc, offset, obs_level.bounds)
    epsilon = float(fit.coef[0])
    obs_level.epsilons.append(epsilon)
    obs_level.fluct_converged = fit.diagnostics.converged
    obs_level.fluctuations.append(_TwoPhaseTerm(epsilon, alpha, indicator_col))

    star = obs_level.as_regression(with_h=True)
    psi = float(np.mean(star.predict(dataset)))
    vec = eif_two_phase(dataset, phi_uc, star, alpha, psi)
    report = wald(vec, psi)
    return report.with_diagnostics(
        epsilons=[[epsilon]],
        truncation_count=int(alpha.truncated_count(dataset)),
        learners_converged=bool(obs_regression.converged() and obs_level.fluct_converged),
        phase_two_rows=int(delta.sum()),
    )


@dataclass
class _TwoPhaseTerm(_FluctTerm):
    epsilon: float
    alpha: TwoPhaseRepresenter
    indicator_col: str

    def value(self, dataset, overrides=None):
        return self.epsilon * self.alpha.evaluate(dataset, overrides)


def _uncentered_complete_eif(phase2, complete_spec, learners, riesz, weights):
    """phi^uc on the phase-two rows; contrasts combine linearly."""
    if complete_spec.contrast is not None:
        left_spec, right_spec, kind = complete_spec.contrast
        if kind != "difference":
            raise ValueError("two-phase estimation supports difference contrasts only")
        cache: dict = {}
        left = _uncentered_single(phase2, left_spec, learners, riesz, weights, cache)
        right = _uncentered_single(phase2, right_spec, learners, riesz, weights, cache)
        return left - right
    return _uncentered_single(phase2, complete_spec, learners, riesz, weights, {})


def _uncentered_single(phase2, spec, learners, riesz, weights, cache):
    bundle = fit_bundle(phase2, spec, learners, riesz, weights=weights, cache=cache)
    values = np.asarray(bundle.h1_plugin, dtype=float)
    for omega, target, qbar in bundle.level_terms():
        values = values + omega * (target - qbar)
    return values


ESTIMATORS = ("plugin", "onestep", "tmle", "sdr_tmle", "two_phase_tmle")


def estimate(
    dataset: Dataset,
    spec: EstimandSpec,
    learners: LearnerSetup,
    riesz: RieszSetup,
    estimator: str = "tmle",
    iterate: bool = False,
    max_passes: int = 10,
    sampling_model: Regression | None = None,
    _cache: dict | None = None,
) -> EstimateReport:
    """Run one estimator on one estimand, resolving contrasts recursively."""
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    if estimator == "two_phase_tmle":
        if spec.contrast is not None and spec.contrast[2] != "difference":
            raise ValueError("two-phase estimation supports difference contrasts only")
        return two_phase_tmle(dataset, spec, learners, riesz, sampling_model=sampling_model)
    if spec.contrast is not None:
        from .eif import contrast as combine

        left_spec, right_spec, kind = spec.contrast
        cache = _cache if _cache is not None else {}
        left = estimate(
            dataset, left_spec, learners, riesz, estimator, iterate, max_passes, _cache=cache
        )
        right = estimate(
            dataset, right_spec, learners, riesz, estimator, iterate, max_passes, _cache=cache
        )
        return combine((left, right), kind)

    cache = _cache if _cache is not None else {}
    bundle = fit_bundle(dataset, spec, learners, riesz, cache=cache)
    if estimator == "plugin":
        psi = plugin_estimate(bundle, spec, dataset)
        vec = eif_sequential(dataset, bundle, spec, psi)
        report = wald(vec, psi)
        return report.with_diagnostics(**bundle.diagnostics())
    if estimator == "onestep":
        return one_step(bundle, spec, dataset)
    if estimator == "tmle":
        return riesz_tmle(
            dataset, spec, learners, riesz, iterate=iterate, max_passes=max_passes, bundle=bundle
        )
    return sdr_riesz_tmle(dataset, spec, learners, riesz, bundle=bundle)
