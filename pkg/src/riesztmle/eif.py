"""Efficient influence function evaluation, Wald inference, and contrasts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtri

from .data import Dataset
from .estimands import EstimandSpec, HTransform
from .models import Regression
from .riesz import Representer


@dataclass(frozen=True)
class EifVector:
    """Per-row influence-function values together with the centering value."""

    values: np.ndarray
    psi: float

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def n(self) -> int:
        return len(self.values)

    def mean(self) -> float:
        return float(np.mean(self.values))


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate with EIF-based Wald inference and run diagnostics."""

    psi: float
    se: float
    ci: tuple[float, float]
    eif: EifVector
    level: float = 0.95
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.eif.n

    def with_diagnostics(self, **extra) -> "EstimateReport":
        merged = dict(self.diagnostics)
        merged.update(extra)
        return replace(self, diagnostics=merged)

    def to_dict(self) -> dict:
        return {
            "psi": self.psi,
            "se": self.se,
            "ci_lo": self.ci[0],
            "ci_hi": self.ci[1],
            "n": self.n,
            "diagnostics": self.diagnostics,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def covers(self, value: float) -> bool:
        return self.ci[0] <= value <= self.ci[1]


def eif_single(
    dataset: Dataset,
    qbar: Regression,
    alpha: Representer,
    h: HTransform,
    psi: float,
) -> EifVector:
    """Single-level EIF: h(O; Qbar) - psi + alpha * (Y - Qbar)."""
    y = dataset.columns[dataset.outcome_column()]
    fitted = qbar.predict(dataset)
    plug = h.apply(qbar, dataset)
    values = plug - psi + alpha.evaluate(dataset) * (y - fitted)
    return EifVector(values, psi)


def eif_sequential(dataset: Dataset, bundle, spec: EstimandSpec, psi: float) -> EifVector:
    """Sequential EIF: sum_t omega_t (target_t - Qbar_t) + h_1(.; Qbar_1) - psi.

    ``bundle`` supplies the per-level clever covariates, regression targets,
    and fitted values via ``level_terms()`` plus the level-1 plug-in column.
    """
    terms = list(bundle.level_terms())
    if spec.depth and len(terms) != spec.depth:
        raise ValueError(f"bundle has {len(terms)} levels but the estimand needs {spec.depth}")
    values = np.asarray(bundle.h1_plugin, dtype=float) - psi
    for omega, target, qbar in terms:
        values = values + omega * (target - qbar)
    return EifVector(values, psi)


def eif_two_phase(
    dataset: Dataset,
    complete_eif_uncentered: np.ndarray,
    obs_regression: Regression,
    alpha: Representer,
    psi: float,
) -> EifVector:
    """Coarsened-data EIF built from the uncentered complete-data EIF.

    ``complete_eif_uncentered`` holds values for the rows with the sampling
    indicator equal to one; rows outside the phase-two sample contribute only
    the projection term (their weight is identically zero).
    """
    indicator_col = dataset.sampling_column()
    if indicator_col is None:
        raise ValueError("two-phase EIF needs a sampling-indicator column")
    delta = dataset.columns[indicator_col] == 1.0
    complete = np.asarray(complete_eif_uncentered, dtype=float)
    if len(complete) != int(delta.sum()):
        raise ValueError("complete-data EIF length does not match the phase-two rows")
    projection = obs_regression.predict(dataset)
    residual = np.zeros(dataset.n)
    residual[delta] = complete - projection[delta]
    weight = alpha.evaluate(dataset)
    values = projection - psi + weight * residual
    return EifVector(values, psi)


def wald(eif: EifVector, psi: float, level: float = 0.95) -> EstimateReport:
    """Wald report: se = sd(eif)/sqrt(n), CI from the normal quantile."""
    n = eif.n
    if n < 2:
        raise ValueError("Wald inference needs at least two rows")
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must lie in (0, 1)")
    sd = float(np.std(eif.values, ddof=1))
    se = sd / np.sqrt(n)
    z = float(ndtri(0.5 + level / 2.0))
    diagnostics = {"score_residual": eif.mean()}
    if se == 0.0:
        diagnostics["degenerate_ci"] = True
    return EstimateReport(
        psi=float(psi),
        se=se,
        ci=(float(psi - z * se), float(psi + z * se)),
        eif=eif,
        level=level,
        diagnostics=diagnostics,
    )


def contrast(reports: tuple[EstimateReport, EstimateReport], kind: str) -> EstimateReport:
    """Delta-method combination of two reports built on the same rows."""
    left, right = reports
    if left.n != right.n:
        raise ValueError("contrast requires reports on identical rows")
    if kind == "difference":
        psi = left.psi - right.psi
        values = left.eif.values - right.eif.values
    elif kind == "ratio":
        if abs(right.psi) < 1e-12:
            raise ZeroDivisionError("ratio contrast with denominator too close to zero")
        psi = left.psi / right.psi
        values = left.eif.values / right.psi - left.psi * right.eif.values / right.psi**2
    else:
        raise ValueError(f"unknown contrast kind {kind!r}")
    report = wald(EifVector(values, psi), psi, level=left.level)
    merged = {"contrast": kind}
    for label, side in (("left", left), ("right", right)):
        for key, val in side.diagnostics.items():
            merged[f"{label}_{key}"] = val
    return report.with_diagnostics(**merged)
