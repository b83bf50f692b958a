"""Column-bound regression models.

Bridges matrix-level learners and role-annotated datasets: a bound model
knows which columns it reads and how to expand them into a design, and can
predict under column overrides (evaluating a fitted regression at intervened
treatment values).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .data import Dataset, FoldAssignment, assign_folds
from .learners import (
    Family,
    FittedLearner,
    SuperLearner,
    add_intercept,
    fit_glm,
    fit_super_learner,
    interaction_design,
)

Overrides = Mapping[str, float] | None


def column_values(dataset: Dataset, name: str, overrides: Overrides = None) -> np.ndarray:
    """A column, with any override applied as a constant (or row) vector."""
    if overrides and name in overrides:
        value = overrides[name]
        if np.ndim(value) == 0:
            return np.full(dataset.n, float(value))
        return np.asarray(value, dtype=float)
    return dataset.columns[name]


def raw_matrix(dataset: Dataset, columns, overrides: Overrides = None) -> np.ndarray:
    if not columns:
        return np.empty((dataset.n, 0))
    return np.column_stack([column_values(dataset, c, overrides) for c in columns])


@dataclass(frozen=True)
class DesignBuilder:
    """Maps dataset columns into a design matrix.

    ``expansion`` is one of ``raw`` (no intercept), ``main`` (intercept plus
    main terms), or ``interactions`` (intercept, main terms, pairwise
    products).
    """

    columns: tuple[str, ...]
    expansion: str = "main"

    def build(self, dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        if self.expansion == "constant":
            return np.ones((dataset.n, 1))
        X = raw_matrix(dataset, self.columns, overrides)
        if self.expansion == "raw":
            return X
        if self.expansion == "main":
            return add_intercept(X)
        if self.expansion == "interactions":
            return interaction_design(X)
        raise ValueError(f"unknown expansion {self.expansion!r}")


class Regression:
    """Interface: response-scale predictions from a dataset with overrides."""

    family: Family

    def predict(self, dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        raise NotImplementedError

    def converged(self) -> bool:
        return True


@dataclass
class GlmRegression(Regression):
    learner: FittedLearner
    builder: DesignBuilder

    @property
    def family(self) -> Family:
        return self.learner.family

    def predict(self, dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        return self.learner.predict(self.builder.build(dataset, overrides))

    def converged(self) -> bool:
        return self.learner.diagnostics.converged


@dataclass
class SuperLearnerRegression(Regression):
    model: SuperLearner
    columns: tuple[str, ...]

    @property
    def family(self) -> Family:
        return self.model.family

    def predict(self, dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        return self.model.predict(raw_matrix(dataset, self.columns, overrides))

    def converged(self) -> bool:
        return all(c.diagnostics.converged for c in self.model.candidates)


@dataclass
class FormulaRegression(Regression):
    """Closed-form regression used for true-nuisance oracle runs.

    ``fn`` receives per-column value vectors keyed by name (overrides already
    applied) and returns response-scale values.
    """

    fn: Callable[[dict[str, np.ndarray]], np.ndarray]
    columns: tuple[str, ...]
    family: Family = Family.GAUSSIAN

    def predict(self, dataset: Dataset, overrides: Overrides = None) -> np.ndarray:
        values = {c: column_values(dataset, c, overrides) for c in self.columns}
        return np.asarray(self.fn(values), dtype=float)


def infer_family(target: np.ndarray) -> Family:
    """Binomial when the target lies in [0, 1], gaussian otherwise."""
    lo, hi = float(np.min(target)), float(np.max(target))
    if lo >= 0.0 and hi <= 1.0:
        return Family.BINOMIAL
    return Family.GAUSSIAN


def fit_regression(
    dataset: Dataset,
    columns,
    target: np.ndarray,
    library: list[str],
    cv_folds: int = 10,
    seed: int = 0,
    weights: np.ndarray | None = None,
    family: Family | None = None,
    rows: np.ndarray | None = None,
) -> Regression:
    """Fit a bound regression of ``target`` on dataset columns.

    Single-entry libraries fit the learner directly; larger libraries go
    through the cross-validated super learner. ``rows`` restricts the
    training rows while predictions remain available for the whole dataset.
    """
    columns = tuple(columns)
    fam = family if family is not None else infer_family(target)
    train = dataset if rows is None else dataset.select(rows)
    y = target if rows is None else np.asarray(target)[rows]
    w = None if weights is None else (weights if rows is None else np.asarray(weights)[rows])
    X = raw_matrix(train, columns)
    if len(library) == 1 and library[0] != "ridge":
        spec = library[0]
        if spec == "constant":
            from .learners import fit_constant_mean

            learner = fit_constant_mean(y, fam)
            return GlmRegression(learner, DesignBuilder(columns, "constant"))
        expansion = "main" if spec == "glm" else "interactions"
        design = DesignBuilder(columns, expansion)
        learner = fit_glm(design.build(train), y, fam, weights=w)
        return GlmRegression(learner, design)
    k = min(cv_folds, max(2, len(y) // 2))
    folds = assign_folds(len(y), k, seed)
    sl = fit_super_learner(library, X, y, fam, folds, weights=w, seed=seed)
    return SuperLearnerRegression(sl, columns)
