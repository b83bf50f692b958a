"""Riesz representers: plug-in forms and direct loss-minimizing regression.

Plug-in representers wrap fitted probability models (propensity, sampling,
mediator density). Riesz regression fits a linear-in-basis representer by
minimizing the empirical quadratic loss mean(a^2 - 2 h(a)) whose population
minimizer is the representer of the linear functional. Cumulative products
of per-time representers supply the clever covariates for sequential
targeting; they can alternatively be estimated directly, level by level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .models import Overrides, Regression, column_values, raw_matrix
from .learners import add_intercept, interaction_design

DEFAULT_TRUNCATION = 0.01


class RieszError(RuntimeError):
    """Numerical failure while constructing a representer."""


class Representer:
    """Row-wise evaluable weight function with provenance metadata."""

    provenance = "plugin"
    t: int = 1

    def evaluate(self, dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        raise NotImplementedError

    def truncated_count(self, dataset: Dataset) -> int:
        return 0


@dataclass
class IndicatorRepresenter(Representer):
    """1(A = a) / max(g_a, truncation) built from a propensity model."""

    propensity: Regression
    treatment_col: str
    a: float
    truncation: float = DEFAULT_TRUNCATION
    t: int = 1
    provenance: str = field(default="plugin", init=False)

    def __post_init__(self):
        if not 0.0 < self.truncation < 0.5:
            raise ValueError("truncation must lie in (0, 0.5)")

    def _arm_probability(self, dataset, overrides):
        g1 = self.propensity.predict(dataset, overrides)
        return g1 if self.a == 1.0 else 1.0 - g1

    def evaluate(self, dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        ga = self._arm_probability(dataset, overrides)
        avals = column_values(dataset, self.treatment_col, overrides)
        return (avals == self.a).astype(float) / np.maximum(ga, self.truncation)

    def truncated_count(self, dataset: Dataset) -> int:
        return int(np.sum(self._arm_probability(dataset, None) < self.truncation))


@dataclass
class TwoPhaseRepresenter(Representer):
    """1(D = 1) / max(pi, truncation) from a sampling-probability model."""

    sampling_model: Regression
    indicator_col: str
    truncation: float = DEFAULT_TRUNCATION
    t: int = 1
    provenance: str = field(default="plugin", init=False)

    def evaluate(self, dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        pi = self.sampling_model.predict(dataset, overrides)
        delta = column_values(dataset, self.indicator_col, overrides)
        return (delta == 1.0).astype(float) / np.maximum(pi, self.truncation)

    def truncated_count(self, dataset: Dataset) -> int:
        return int(np.sum(self.sampling_model.predict(dataset) < self.truncation))


@dataclass
class MediationRatioRepresenter(Representer):
    """p(M | A = a_ref, L) / max(p(M | A, L), truncation) for binary M."""

    mediator_model: Regression
    mediator_col: str
    treatment_col: str
    a_ref: float
    truncation: float = DEFAULT_TRUNCATION
    t: int = 1
    provenance: str = field(default="plugin", init=False)

    def _density(self, phat: np.ndarray, m: np.ndarray) -> np.ndarray:
        return m * phat + (1.0 - m) * (1.0 - phat)

    def evaluate(self, dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        m = column_values(dataset, self.mediator_col, overrides)
        if not np.all(np.isin(m, (0.0, 1.0))):
            raise ValueError("mediator column must be binary")
        ref_over = dict(overrides or {})
        ref_over[self.treatment_col] = self.a_ref
        p_ref = self.mediator_model.predict(dataset, ref_over)
        p_obs = self.mediator_model.predict(dataset, overrides)
        num = self._density(p_ref, m)
        den = self._density(p_obs, m)
        return num / np.maximum(den, self.truncation)

    def truncated_count(self, dataset: Dataset) -> int:
        m = dataset.columns[self.mediator_col]
        den = self._density(self.mediator_model.predict(dataset), m)
        return int(np.sum(den < self.truncation))


def plugin_indicator(
    propensity: Regression, treatment_col: str, a: float, truncation: float = DEFAULT_TRUNCATION
) -> IndicatorRepresenter:
    """Indicator/propensity representer for the arm ``a`` of a binary treatment."""
    return IndicatorRepresenter(propensity, treatment_col, a, truncation)


def plugin_two_phase(
    sampling_model: Regression, indicator_col: str, truncation: float = DEFAULT_TRUNCATION
) -> TwoPhaseRepresenter:
    """Sampling-indicator representer for two-phase designs."""
    return TwoPhaseRepresenter(sampling_model, indicator_col, truncation)


def plugin_mediation_ratio(
    mediator_model: Regression,
    mediator_col: str,
    treatment_col: str,
    a_ref: float,
    truncation: float = DEFAULT_TRUNCATION,
) -> MediationRatioRepresenter:
    """Binary-mediator density-ratio representer with reference arm ``a_ref``."""
    return MediationRatioRepresenter(
        mediator_model, mediator_col, treatment_col, a_ref, truncation
    )


BasisFn = Callable[[Dataset, Overrides], np.ndarray]


def basis_from_columns(columns, expansion: str = "main") -> BasisFn:
    """Basis over dataset columns: 'main' or 'interactions' (with intercept)."""
    cols = tuple(columns)

    def basis(dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        X = raw_matrix(dataset, cols, overrides)
        return add_intercept(X) if expansion == "main" else interaction_design(X)

    if expansion not in ("main", "interactions"):
        raise ValueError(f"unknown basis expansion {expansion!r}")
    return basis


@dataclass
class LinearRepresenter(Representer):
    """Representer of the form basis(x)' beta from Riesz regression."""

    beta: np.ndarray
    basis: BasisFn
    t: int = 1
    provenance: str = field(default="riesz-regression", init=False)
    ridge: float = 0.0

    def evaluate(self, dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        return self.basis(dataset, overrides) @ self.beta


def _solve_moments(G: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve G beta = v with an escalating ridge rescue for ill-conditioned G."""
    q = len(v)
    scale = float(np.trace(G)) / max(q, 1)
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    for lam in [0.0] + [scale * 10.0**e for e in range(-10, -1)]:
        M = G if lam == 0.0 else G + lam * np.eye(q)
        try:
            cond = np.linalg.cond(M)
        except np.linalg.LinAlgError:
            continue
        if np.isfinite(cond) and cond < 1e12:
            return np.linalg.solve(M, v), lam
    raise RieszError("moment matrix is singular beyond ridge rescue")


def riesz_loss(alpha_obs: np.ndarray, alpha_intervened: np.ndarray) -> float:
    """Empirical Riesz loss mean(a(X)^2 - 2 h(X; a))."""
    return float(np.mean(alpha_obs**2 - 2.0 * alpha_intervened))


def riesz_regression(
    basis: BasisFn,
    h_overrides: dict[str, float],
    dataset: Dataset,
    folds=None,
    outer_weights: np.ndarray | None = None,
) -> LinearRepresenter:
    """Fit a linear representer by minimizing the empirical Riesz loss.

    The closed-form solution is G^-1 v with G the basis second-moment matrix
    and v the mean of the basis evaluated under the functional's column
    assignments. ``outer_weights`` multiplies the intervened-basis average,
    which is how cumulative weights are estimated directly level by level.
    When ``folds`` is given the ridge level is chosen by cross-validated
    Riesz loss over a small grid including zero.
    """
    B = basis(dataset, None)
    H = basis(dataset, dict(h_overrides))
    n = B.shape[0]
    w = np.ones(n) if outer_weights is None else np.asarray(outer_weights, dtype=float)
    G = (B.T @ B) / n
    v = (H * w[:, None]).mean(axis=0)

    if folds is None:
        beta, lam = _solve_moments(G, v)
        return LinearRepresenter(beta=beta, basis=basis, ridge=lam)

    fold_index = folds.fold_index if hasattr(folds, "fold_index") else np.asarray(folds)
    scale = float(np.trace(G)) / max(len(v), 1)
    grid = [0.0] + list(scale * np.logspace(-8, -2, 4))
    risks = []
    for lam in grid:
        losses = []
        for j in range(int(fold_index.max()) + 1):
            test = fold_index == j
            Gj = (B[~test].T @ B[~test]) / max((~test).sum(), 1)
            vj = (H[~test] * w[~test, None]).mean(axis=0)
            try:
                bj, _ = _solve_moments(Gj + lam * np.eye(len(vj)), vj)
            except RieszError:
                losses.append(np.inf)
                continue
            losses.append(riesz_loss(B[test] @ bj, w[test] * (H[test] @ bj)))
        risks.append(float(np.mean(losses)))
    lam = grid[int(np.argmin(risks))]
    beta, extra = _solve_moments(G + lam * np.eye(len(v)), v)
    return LinearRepresenter(beta=beta, basis=basis, ridge=lam + extra)


class CumulativeWeights:
    """Running products omega_t of per-time representers (or direct fits).

    ``evaluate(dataset, t, overrides)`` returns the row-wise product of the
    first t factors in product mode, or the directly estimated omega_t when
    constructed from direct fits.
    """

    def __init__(self, factors: Sequence[Representer], direct: bool = False):
        if not factors:
            raise ValueError("need at least one representer")
        self.factors = list(factors)
        self.direct = direct

    @property
    def depth(self) -> int:
        return len(self.factors)

    def evaluate(self, dataset: Dataset, t: int, overrides: Overrides = None) -> np.ndarray:
        if not 1 <= t <= self.depth:
            raise ValueError(f"level {t} outside 1..{self.depth}")
        if self.direct:
            return self.factors[t - 1].evaluate(dataset, overrides)
        out = self.factors[0].evaluate(dataset, overrides)
        for k in range(1, t):
            out = out * self.factors[k].evaluate(dataset, overrides)
        return out

    def truncated_count(self, dataset: Dataset) -> int:
        return sum(f.truncated_count(dataset) for f in self.factors)


def cumulative_weights(representers: Sequence[Representer]) -> CumulativeWeights:
    """Explicit-product cumulative weights from per-time representers."""
    return CumulativeWeights(representers, direct=False)
