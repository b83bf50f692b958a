"""Nuisance regression stack.

GLMs fit by iteratively reweighted least squares with offsets and observation
weights, a constant-mean learner, a hand-rolled Lawson-Hanson NNLS solver, and
a cross-validated super learner stacked with an NNLS metalearner.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.special import expit, logit

from .data import FoldAssignment

PROB_CLAMP = 1e-6
IRLS_TOL = 1e-10
IRLS_MAX_ITER = 50
SCORE_TOL = 1e-8
RIDGE_GRID = np.logspace(-3.0, 2.0, 8)


class Family(Enum):
    """Exponential family with its canonical link."""

    GAUSSIAN = "gaussian"
    BINOMIAL = "binomial"

    def link(self, mu: np.ndarray) -> np.ndarray:
        if self is Family.GAUSSIAN:
            return np.asarray(mu, dtype=float)
        return logit(np.clip(mu, PROB_CLAMP, 1.0 - PROB_CLAMP))

    def inverse_link(self, eta: np.ndarray) -> np.ndarray:
        if self is Family.GAUSSIAN:
            return np.asarray(eta, dtype=float)
        return expit(eta)

    def clamp(self, mu: np.ndarray) -> np.ndarray:
        if self is Family.GAUSSIAN:
            return np.asarray(mu, dtype=float)
        return np.clip(mu, PROB_CLAMP, 1.0 - PROB_CLAMP)

    def deviance(self, y, mu, weights) -> float:
        if self is Family.GAUSSIAN:
            return float(np.sum(weights * (y - mu) ** 2))
        mu = np.clip(mu, 1e-12, 1.0 - 1e-12)
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(y > 0, y * np.log(y / mu), 0.0)
            term = term + np.where(y < 1, (1.0 - y) * np.log((1.0 - y) / (1.0 - mu)), 0.0)
        return float(2.0 * np.sum(weights * term))

    def loss(self, y, mu) -> float:
        """Per-observation CV risk: squared error or negative log-likelihood."""
        if self is Family.GAUSSIAN:
            return float(np.mean((y - mu) ** 2))
        mu = np.clip(mu, PROB_CLAMP, 1.0 - PROB_CLAMP)
        return float(-np.mean(y * np.log(mu) + (1.0 - y) * np.log(1.0 - mu)))


def add_intercept(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.hstack([np.ones((X.shape[0], 1)), X])


def interaction_design(X: np.ndarray) -> np.ndarray:
    """Intercept, main terms, and all pairwise products of distinct columns."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, p = X.shape
    pieces = [np.ones((n, 1)), X]
    for i in range(p):
        for j in range(i + 1, p):
            pieces.append((X[:, i] * X[:, j])[:, None])
    return np.hstack(pieces)


@dataclass
class FitDiagnostics:
    converged: bool
    iterations: int
    deviance: float
    ridge_fallback: bool = False
    warnings: list[str] = field(default_factory=list)


@dataclass
class FittedLearner:
    """A fitted GLM: coefficients, family, and training diagnostics.

    Prediction is a pure function of the feature matrix; binomial predictions
    are clamped to [1e-6, 1 - 1e-6].
    """

    coef: np.ndarray
    family: Family
    n_features: int
    diagnostics: FitDiagnostics
    penalty: float = 0.0

    def linear_predictor(self, X: np.ndarray, offset=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(
                f"feature dimension {X.shape[1]} does not match training ({self.n_features})"
            )
        eta = X @ self.coef
        if offset is not None:
            eta = eta + offset
        return eta

    def predict(self, X: np.ndarray, offset=None) -> np.ndarray:
        return self.family.clamp(self.family.inverse_link(self.linear_predictor(X, offset)))


def predict(learner: FittedLearner, X: np.ndarray) -> np.ndarray:
    """Response-scale predictions for a fitted learner."""
    return learner.predict(X)


def _penalty_matrix(p: int, penalty: float, penalize_intercept: bool) -> np.ndarray:
    D = np.full(p, penalty)
    if not penalize_intercept and p > 0:
        D[0] = 0.0
    return np.diag(D)


def fit_glm(
    X: np.ndarray,
    y: np.ndarray,
    family: Family,
    weights: np.ndarray | None = None,
    offset: np.ndarray | None = None,
    penalty: float = 0.0,
    penalize_intercept: bool = False,
    max_iter: int = IRLS_MAX_ITER,
    tol: float = IRLS_TOL,
    beta0: np.ndarray | None = None,
) -> FittedLearner:
    """Fit a GLM by IRLS with optional weights, offset, and ridge penalty.

    Convergence requires the relative deviance change to drop below ``tol``
    and the penalized score to satisfy its stationarity bound. Rank-deficient
    designs fall back to a tiny ridge penalty, flagged in the diagnostics.
    A deviance increase triggers step halving.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n < 1:
        raise ValueError("empty design")
    if len(y) != n:
        raise ValueError("response length does not match design")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("NaN or inf in GLM inputs")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("negative weights")
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    if family is Family.BINOMIAL and (y.min() < 0 or y.max() > 1):
        raise ValueError("binomial response must lie in [0, 1]")

    D = _penalty_matrix(p, penalty, penalize_intercept)
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    ridge_fallback = False
    notes: list[str] = []

    def mu_of(b):
        return family.inverse_link(X @ b + off)

    def objective(b):
        dev = family.deviance(y, mu_of(b), w)
        return dev + float(b @ D @ b)

    obj = objective(beta)
    iterations = 0
    deviance_settled = False
    for iterations in range(1, max_iter + 1):
        eta = X @ beta + off
        mu = family.inverse_link(eta)
        if family is Family.GAUSSIAN:
            irls_w = w.copy()
            z = y - off
        else:
            var = np.clip(mu * (1.0 - mu), 1e-10, None)
            irls_w = w * var
            z = (eta - off) + (y - mu) / var
        XtW = X.T * irls_w
        H = XtW @ X + D
        g = XtW @ z
        try:
            new_beta = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            new_beta = None
        if new_beta is None or not np.all(np.isfinite(new_beta)):
            lam = 1e-8 * (np.trace(H) / p + 1.0)
            new_beta = np.linalg.solve(H + lam * np.eye(p), g)
            ridge_fallback = True
        new_obj = objective(new_beta)
        halvings = 0
        while (not np.isfinite(new_obj) or new_obj > obj + 1e-12) and halvings < 30:
            new_beta = 0.5 * (new_beta + beta)
            new_obj = objective(new_beta)
            halvings += 1
        if not np.isfinite(new_obj):
            notes.append("divergent deviance; keeping previous iterate")
            break
        rel = abs(new_obj - obj) / (abs(new_obj) + tol)
        beta, obj = new_beta, new_obj
        if rel < tol:
            deviance_settled = True
            break

    mu = mu_of(beta)
    score = X.T @ (w * (y - mu)) - D @ beta
    score_ok = np.max(np.abs(score), initial=0.0) <= SCORE_TOL * (
        1.0 + np.max(np.abs(y), initial=0.0)
    )
    converged = bool(score_ok and deviance_settled)
    if not converged:
        notes.append("IRLS did not satisfy the score criterion; predictions are clamped")
    diag = FitDiagnostics(
        converged=converged,
        iterations=iterations,
        deviance=family.deviance(y, mu, w),
        ridge_fallback=ridge_fallback,
        warnings=notes,
    )
    return FittedLearner(coef=beta, family=family, n_features=p, diagnostics=diag, penalty=penalty)


def fit_constant_mean(y: np.ndarray, family: Family) -> FittedLearner:
    """Learner predicting the sample mean everywhere (clamped for binomial)."""
    y = np.asarray(y, dtype=float)
    if len(y) < 1:
        raise ValueError("empty response")
    if not np.all(np.isfinite(y)):
        raise ValueError("NaN or inf in response")
    mean = float(family.clamp(np.array([np.mean(y)]))[0])
    coef = np.array([mean if family is Family.GAUSSIAN else float(logit(mean))])
    dev = family.deviance(y, np.full(len(y), mean), np.ones(len(y)))
    diag = FitDiagnostics(converged=True, iterations=0, deviance=dev)
    return FittedLearner(coef=coef, family=family, n_features=1, diagnostics=diag)


def nnls(A: np.ndarray, b: np.ndarray, tol: float = 1e-10, max_iter: int | None = None) -> np.ndarray:
    """Minimize ||Aw - b||^2 subject to w >= 0 (Lawson-Hanson active set).

    Returns weights satisfying the KKT conditions to within ``tol``: the
    gradient of the objective vanishes on the positive set and is nonnegative
    on the zero set.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m, q = A.shape
    if m < 1 or q < 1:
        raise ValueError("NNLS needs at least one row and one column")
    if max_iter is None:
        max_iter = 30 * q
    x = np.zeros(q)
    passive = np.zeros(q, dtype=bool)
    resid = b.copy()
    grad = A.T @ resid  # negative objective gradient
    it = 0
    while it < max_iter:
        candidates = np.where(~passive, grad, -np.inf)
        j = int(np.argmax(candidates))
        if candidates[j] <= tol:
            break
        passive[j] = True
        while True:
            it += 1
            cols = np.flatnonzero(passive)
            sub, *_ = np.linalg.lstsq(A[:, cols], b, rcond=None)
            if np.all(sub > tol):
                x = np.zeros(q)
                x[cols] = sub
                break
            # Step back to the boundary and drop the binding coordinates.
            trial = np.zeros(q)
            trial[cols] = sub
            move = trial - x
            blocking = cols[sub <= tol]
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(move[blocking] < 0, x[blocking] / -move[blocking], np.inf)
            alpha = float(np.min(ratios, initial=1.0))
            alpha = min(alpha, 1.0)
            x = x + alpha * move
            passive &= x > tol
            x[~passive] = 0.0
            if it >= max_iter:
                break
        resid = b - A @ x
        grad = A.T @ resid
    return x


def _expand(X: np.ndarray, spec: str) -> np.ndarray:
    if spec == "constant":
        return np.ones((X.shape[0], 1))
    if spec == "glm":
        return add_intercept(X)
    if spec in ("glm_interactions", "ridge"):
        return interaction_design(X)
    raise ValueError(f"unknown learner spec {spec!r}")


def _fit_candidate(
    spec: str,
    X: np.ndarray,
    y: np.ndarray,
    family: Family,
    weights: np.ndarray | None,
    ridge_folds: int = 3,
    seed: int = 0,
) -> FittedLearner:
    design = _expand(X, spec)
    if spec == "constant":
        return fit_constant_mean(y, family)
    if spec == "ridge":
        lam = _select_ridge(design, y, family, weights, ridge_folds, seed)
        return fit_glm(design, y, family, weights=weights, penalty=lam)
    return fit_glm(design, y, family, weights=weights)


def _select_ridge(design, y, family, weights, k, seed) -> float:
    """Inner CV over a fixed 8-point log grid of ridge penalties.

    Fits walk the grid from the heaviest penalty down, warm-starting each
    IRLS run at the previous solution.
    """
    n = len(y)
    if k > n:
        k = max(2, n // 2)
    folds = assign_like(n, k, seed)
    grid = RIDGE_GRID[::-1]
    risks = np.zeros(len(grid))
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    for j in range(k):
        test = folds == j
        warm = None
        for i, lam in enumerate(grid):
            fit = fit_glm(
                design[~test], y[~test], family, weights=w[~test], penalty=lam, beta0=warm
            )
            warm = fit.coef
            risks[i] += family.loss(y[test], fit.predict(design[test])) / k
    return float(grid[int(np.argmin(risks))])


def assign_like(n: int, k: int, seed: int) -> np.ndarray:
    """Balanced fold labels for n rows (helper for inner CV loops)."""
    order = np.random.Generator(np.random.Philox(key=[seed, 0x1D9E])).permutation(n)
    fold = np.empty(n, dtype=np.int64)
    fold[order] = np.arange(n) % k
    return fold


@dataclass
class SuperLearner:
    """Cross-validated stack of candidate learners with NNLS meta-weights.

    ``meta_weights`` are nonnegative and are applied to response-scale
    candidate predictions; the combination is clamped for binomial families.
    ``cv_risks`` holds each candidate's cross-validated risk under the family
    loss, and ``ensemble_criterion``/``candidate_criteria`` the squared-error
    criterion that the NNLS metalearner optimizes.
    """

    specs: list[str]
    candidates: list[FittedLearner]
    meta_weights: np.ndarray
    cv_risks: np.ndarray
    ensemble_criterion: float
    candidate_criteria: np.ndarray
    family: Family
    dropped: list[str] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        preds = np.column_stack(
            [cand.predict(_expand(X, spec)) for spec, cand in zip(self.specs, self.candidates)]
        )
        return self.family.clamp(preds @ self.meta_weights)


def fit_super_learner(
    library: list[str],
    X: np.ndarray,
    y: np.ndarray,
    family: Family,
    folds: FoldAssignment | np.ndarray,
    weights: np.ndarray | None = None,
    seed: int = 0,
) -> SuperLearner:
    """Fit a super learner over ``library`` using out-of-fold stacking.

    Out-of-sample predictions form the NNLS design; candidates failing on any
    fold are dropped with a warning. A single surviving candidate gets weight
    one without invoking the metalearner.
    """
    if not library:
        raise ValueError("empty learner library")
    known = ("constant", "glm", "glm_interactions", "ridge")
    for spec in library:
        if spec not in known:
            raise ValueError(f"unknown learner spec {spec!r}; choose from {known}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = len(y)
    fold_index = folds.fold_index if isinstance(folds, FoldAssignment) else np.asarray(folds)
    if len(fold_index) != n:
        raise ValueError("fold assignment does not match data")
    k = int(fold_index.max()) + 1
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)

    oos = np.full((n, len(library)), np.nan)
    failed = set()
    for j in range(k):
        test = fold_index == j
        for c, spec in enumerate(library):
            if spec in failed:
                continue
            try:
                fit = _fit_candidate(spec, X[~test], y[~test], family, w[~test], seed=seed)
                oos[test, c] = fit.predict(_expand(X[test], spec))
            except (ValueError, np.linalg.LinAlgError) as err:
                failed.add(spec)
                warnings.warn(f"super learner candidate {spec!r} dropped: {err}")
    keep = [c for c, spec in enumerate(library) if spec not in failed]
    if not keep:
        raise RuntimeError("all super learner candidates failed")
    specs = [library[c] for c in keep]
    Z = oos[:, keep]

    sw = np.sqrt(w)
    if len(specs) == 1:
        meta = np.array([1.0])
    else:
        meta = nnls(Z * sw[:, None], y * sw)
    cv_risks = np.array([family.loss(y, family.clamp(Z[:, c])) for c in range(len(specs))])
    candidate_criteria = np.array([float(np.mean(w * (Z[:, c] - y) ** 2)) for c in range(len(specs))])
    ensemble_criterion = float(np.mean(w * (Z @ meta - y) ** 2))

    refits = [_fit_candidate(spec, X, y, family, w, seed=seed) for spec in specs]
    return SuperLearner(
        specs=specs,
        candidates=refits,
        meta_weights=meta,
        cv_risks=cv_risks,
        ensemble_criterion=ensemble_criterion,
        candidate_criteria=candidate_criteria,
        family=family,
        dropped=sorted(failed),
    )
