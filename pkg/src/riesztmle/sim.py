"""Simulation DGPs, Monte Carlo truth and efficiency-bound oracles, and the
replication harness computing bias, coverage, MSE, and relative efficiency.

Random streams use the counter-based Philox generator keyed by
``[seed, stream]``; each replication draws its dataset from stream DATA with
seed = base seed + replication index, so replications are reproducible and
order-independent whether run serially or in a process pool.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data import ColumnRole, Dataset
from .estimands import EstimandSpec, ate_spec, longitudinal_spec, tsm_spec
from .models import FormulaRegression
from .learners import Family
from .tmle import LearnerSetup, RieszSetup, estimate

STREAM_DATA = 0xDA7A
STREAM_TRUTH = 0x77
STREAM_BOUND = 0xB0

SINGLE_COEFFS = {
    "t0": -0.4, "t_l2": 0.6, "t_l3": -0.5, "t_l45": 0.5, "t_l12": -0.4,
    "y0": -0.8, "y_a": 0.9, "y_l2": 0.6, "y_l45": 0.8, "y_al1": 0.7, "y_al2": -0.6,
}

LONGITUDINAL_COEFFS = {
    "g1_l0": 0.3, "l1_l0": 0.5, "l1_a1": 0.4,
    "g2_l1": 0.3, "g2_a1": -0.2,
    "y0": -0.5, "y_a1": 0.5, "y_a2": 0.5, "y_l1": 0.4,
}

DGP_KINDS = ("single_timepoint", "longitudinal_t2", "two_phase")
ARMS = ("correct", "outcome_misspecified", "propensity_misspecified")


@dataclass(frozen=True)
class DgpSpec:
    """Data-generating process: kind, coefficient overrides, nuisance arm."""

    kind: str = "single_timepoint"
    overrides: tuple[tuple[str, float], ...] = ()
    arm: str = "correct"
    pi_spec: str = "default"

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise ValueError(f"unknown DGP kind {self.kind!r}")
        if self.arm not in ARMS:
            raise ValueError(f"unknown arm {self.arm!r}")

    def coeffs(self) -> dict[str, float]:
        base = dict(LONGITUDINAL_COEFFS if self.kind == "longitudinal_t2" else SINGLE_COEFFS)
        for key, value in self.overrides:
            if key not in base:
                raise ValueError(f"unknown coefficient {key!r}")
            base[key] = value
        return base

    def with_overrides(self, **kw: float) -> "DgpSpec":
        merged = dict(self.overrides)
        merged.update(kw)
        return replace(self, overrides=tuple(sorted(merged.items())))


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed, stream]))


def _pi_function(name: str):
    if name == "default":
        return lambda cols: 0.1 + 0.2 * expit(cols["L1"])
    if name == "ones":
        return lambda cols: np.ones_like(cols["L1"])
    raise ValueError(f"unknown pi spec {name!r}")


def single_timepoint_schema() -> dict[str, ColumnRole]:
    schema = {f"L{i}": ColumnRole("baseline-covariate") for i in range(1, 6)}
    schema["A"] = ColumnRole("treatment", 1)
    schema["Y"] = ColumnRole("outcome")
    return schema


def longitudinal_t2_schema() -> dict[str, ColumnRole]:
    return {
        "L0": ColumnRole("baseline-covariate"),
        "A1": ColumnRole("treatment", 1),
        "L1": ColumnRole("time-varying-covariate", 2),
        "A2": ColumnRole("treatment", 2),
        "Y": ColumnRole("outcome"),
    }


def two_phase_schema() -> dict[str, ColumnRole]:
    schema = single_timepoint_schema()
    schema["D"] = ColumnRole("sampling-indicator")
    return schema


def true_propensity(cols: dict[str, np.ndarray], c: dict[str, float]) -> np.ndarray:
    return expit(
        c["t0"]
        + c["t_l2"] * cols["L2"]
        + c["t_l3"] * cols["L3"]
        + c["t_l45"] * cols["L4"] * cols["L5"]
        + c["t_l12"] * cols["L1"] * cols["L2"]
    )


def true_outcome(cols: dict[str, np.ndarray], a, c: dict[str, float]) -> np.ndarray:
    return expit(
        c["y0"]
        + c["y_a"] * a
        + c["y_l2"] * cols["L2"]
        + c["y_l45"] * cols["L4"] * cols["L5"]
        + c["y_al1"] * a * cols["L1"]
        + c["y_al2"] * a * cols["L2"]
    )


def _draw_covariates(rng: np.random.Generator, n: int) -> dict[str, np.ndarray]:
    return {
        "L1": rng.standard_normal(n),
        "L2": rng.standard_normal(n),
        "L3": rng.standard_normal(n),
        "L4": rng.binomial(1, 0.5, n).astype(float),
        "L5": rng.uniform(-1.0, 1.0, n),
    }


def draw_single_timepoint(n: int, seed: int, dgp: DgpSpec | None = None) -> Dataset:
    """Single-time-point draw: five covariates, logistic treatment and outcome."""
    dgp = dgp or DgpSpec()
    c = dgp.coeffs()
    rng = _rng(seed, STREAM_DATA)
    cols = _draw_covariates(rng, n)
    cols["A"] = rng.binomial(1, true_propensity(cols, c)).astype(float)
    cols["Y"] = rng.binomial(1, true_outcome(cols, cols["A"], c)).astype(float)
    return Dataset(cols, single_timepoint_schema())


def draw_longitudinal_t2(n: int, seed: int, dgp: DgpSpec | None = None) -> Dataset:
    """Two-period draw with treatment-confounder feedback (artifact constants)."""
    dgp = dgp or DgpSpec(kind="longitudinal_t2")
    c = dgp.coeffs()
    rng = _rng(seed, STREAM_DATA)
    L0 = rng.standard_normal(n)
    A1 = rng.binomial(1, expit(c["g1_l0"] * L0)).astype(float)
    L1 = c["l1_l0"] * L0 + c["l1_a1"] * A1 + rng.standard_normal(n)
    A2 = rng.binomial(1, expit(c["g2_l1"] * L1 + c["g2_a1"] * A1)).astype(float)
    Y = rng.binomial(
        1, expit(c["y0"] + c["y_a1"] * A1 + c["y_a2"] * A2 + c["y_l1"] * L1)
    ).astype(float)
    return Dataset(
        {"L0": L0, "A1": A1, "L1": L1, "A2": A2, "Y": Y}, longitudinal_t2_schema()
    )


def draw_two_phase(
    n: int, seed: int, pi_spec: str = "default", dgp: DgpSpec | None = None
) -> Dataset:
    """Single-time-point draw under case-control two-phase sampling.

    All case rows (Y = 1) enter phase two; controls enter with probability
    pi(L). The treatment column is the phase-two measurement and is masked
    where the indicator is zero.
    """
    dgp = dgp or DgpSpec(kind="two_phase")
    base = draw_single_timepoint(n, seed, replace(dgp, kind="single_timepoint"))
    rng = _rng(seed, STREAM_DATA + 1)
    cols = {name: np.array(col) for name, col in base.columns.items()}
    pi = _pi_function(pi_spec)(cols)
    delta = np.where(cols["Y"] == 1.0, 1.0, rng.binomial(1, pi).astype(float))
    a = cols["A"].copy()
    a[delta == 0.0] = np.nan
    cols["A"] = a
    cols["D"] = delta
    mask = {"A": delta == 1.0} if (delta == 0.0).any() else {}
    return Dataset(cols, two_phase_schema(), mask=mask)


def draw_dataset(dgp: DgpSpec, n: int, seed: int) -> Dataset:
    if dgp.kind == "single_timepoint":
        return draw_single_timepoint(n, seed, dgp)
    if dgp.kind == "longitudinal_t2":
        return draw_longitudinal_t2(n, seed, dgp)
    return draw_two_phase(n, seed, dgp.pi_spec, dgp)


def dgp_schema(dgp: DgpSpec) -> dict[str, ColumnRole]:
    if dgp.kind == "single_timepoint":
        return single_timepoint_schema()
    if dgp.kind == "longitudinal_t2":
        return longitudinal_t2_schema()
    return two_phase_schema()


def _tsm_values(spec: EstimandSpec):
    """Arm value of a one-level indicator estimand, or None."""
    if spec.depth != 1:
        return None
    (level,) = spec.levels
    assignments = dict(level.h.assignments)
    return assignments.get(level.recipe.treatment_col)


def _per_draw_values(dgp: DgpSpec, spec: EstimandSpec, rng, draws: int) -> np.ndarray:
    """True-formula g-computation values for one batch of draws."""
    c = dgp.coeffs()
    if dgp.kind in ("single_timepoint", "two_phase"):
        a = _tsm_values(spec)
        if a is None:
            raise ValueError(f"no truth oracle for estimand {spec.name!r} on this DGP")
        cols = _draw_covariates(rng, draws)
        return true_outcome(cols, a, c)
    if dgp.kind == "longitudinal_t2":
        if spec.depth != 2:
            raise ValueError("longitudinal truth oracle needs a two-level regime estimand")
        regime = [lvl.recipe.value for lvl in spec.levels]
        L0 = rng.standard_normal(draws)
        L1 = c["l1_l0"] * L0 + c["l1_a1"] * regime[0] + rng.standard_normal(draws)
        return expit(c["y0"] + c["y_a1"] * regime[0] + c["y_a2"] * regime[1] + c["y_l1"] * L1)
    raise ValueError(f"no truth oracle for DGP {dgp.kind!r}")


def monte_carlo_truth(
    dgp: DgpSpec, estimand: EstimandSpec, draws: int, seed: int = 0
) -> tuple[float, float]:
    """g-formula value under the true outcome formulas, by Monte Carlo.

    Returns the estimate and its Monte Carlo standard error. Contrasts are
    combined per draw (difference) or by the delta method (ratio).
    """
    if draws < 1:
        raise ValueError("need at least one draw")
    rng = _rng(seed, STREAM_TRUTH)
    if estimand.contrast is not None:
        left_spec, right_spec, kind = estimand.contrast
        left = _per_draw_values(dgp, left_spec, rng, draws)
        right = _per_draw_values(dgp, right_spec, rng, draws)
        if kind == "difference":
            values = left - right
            return float(np.mean(values)), float(np.std(values, ddof=1) / np.sqrt(draws))
        m1, m0 = float(np.mean(left)), float(np.mean(right))
        linear = left / m0 - m1 * right / m0**2
        return m1 / m0, float(np.std(linear, ddof=1) / np.sqrt(draws))
    values = _per_draw_values(dgp, estimand, rng, draws)
    return float(np.mean(values)), float(np.std(values, ddof=1) / np.sqrt(draws))


def _single_uncentered_eif(cols, a, c):
    qa = true_outcome(cols, a, c)
    q_obs = true_outcome(cols, cols["A"], c)
    g1 = true_propensity(cols, c)
    ga = g1 if a == 1.0 else 1.0 - g1
    indicator = (cols["A"] == a).astype(float)
    return qa + indicator / ga * (cols["Y"] - q_obs)


def _draw_full_single(rng, draws, c):
    cols = _draw_covariates(rng, draws)
    cols["A"] = rng.binomial(1, true_propensity(cols, c)).astype(float)
    cols["Y"] = rng.binomial(1, true_outcome(cols, cols["A"], c)).astype(float)
    return cols


def _uncentered_eif_draws(dgp: DgpSpec, spec: EstimandSpec, rng, draws: int) -> np.ndarray:
    c = dgp.coeffs()
    if dgp.kind == "single_timepoint":
        if spec.contrast is not None:
            left_spec, right_spec, kind = spec.contrast
            if kind != "difference":
                raise ValueError("bound oracle supports difference contrasts only")
            cols = _draw_full_single(rng, draws, c)
            a1, a0 = _tsm_values(left_spec), _tsm_values(right_spec)
            return _single_uncentered_eif(cols, a1, c) - _single_uncentered_eif(cols, a0, c)
        a = _tsm_values(spec)
        if a is None:
            raise ValueError(f"no bound oracle for estimand {spec.name!r}")
        cols = _draw_full_single(rng, draws, c)
        return _single_uncentered_eif(cols, a, c)
    if dgp.kind == "longitudinal_t2":
        regime = [lvl.recipe.value for lvl in spec.levels]
        a1, a2 = regime
        L0 = rng.standard_normal(draws)
        A1 = rng.binomial(1, expit(c["g1_l0"] * L0)).astype(float)
        L1 = c["l1_l0"] * L0 + c["l1_a1"] * A1 + rng.standard_normal(draws)
        A2 = rng.binomial(1, expit(c["g2_l1"] * L1 + c["g2_a1"] * A1)).astype(float)
        Y = rng.binomial(1, expit(c["y0"] + c["y_a1"] * A1 + c["y_a2"] * A2 + c["y_l1"] * L1)).astype(float)
        q2_obs = expit(c["y0"] + c["y_a1"] * A1 + c["y_a2"] * A2 + c["y_l1"] * L1)
        h2 = expit(c["y0"] + c["y_a1"] * a1 + c["y_a2"] * a2 + c["y_l1"] * L1)
        # The regime prediction is a function of L1 only, so the level-1
        # regression coincides with it and its residual term vanishes.
        g1 = expit(c["g1_l0"] * L0)
        g1a = g1 if a1 == 1.0 else 1.0 - g1
        g2 = expit(c["g2_l1"] * L1 + c["g2_a1"] * A1)
        g2a = g2 if a2 == 1.0 else 1.0 - g2
        w1 = (A1 == a1).astype(float) / g1a
        w2 = w1 * (A2 == a2).astype(float) / g2a
        q1 = h2
        h1 = h2
        return w1 * (h2 - q1) + w2 * (Y - q2_obs) + h1
    if dgp.kind == "two_phase":
        cols = _draw_full_single(rng, draws, c)
        pi_ctrl = _pi_function(dgp.pi_spec)(cols)
        pi = np.where(cols["Y"] == 1.0, 1.0, pi_ctrl)
        delta = rng.binomial(1, pi).astype(float)
        if spec.contrast is not None:
            left_spec, right_spec, _ = spec.contrast
            a1, a0 = _tsm_values(left_spec), _tsm_values(right_spec)
            phi_uc = _single_uncentered_eif(cols, a1, c) - _single_uncentered_eif(cols, a0, c)
            m = _true_obs_projection(cols, c, lambda cc: (
                _single_uncentered_eif(cc, a1, c) - _single_uncentered_eif(cc, a0, c)
            ))
        else:
            a = _tsm_values(spec)
            phi_uc = _single_uncentered_eif(cols, a, c)
            m = _true_obs_projection(cols, c, lambda cc: _single_uncentered_eif(cc, a, c))
        return m + delta / pi * (phi_uc - m)
    raise ValueError(f"no bound oracle for DGP {dgp.kind!r}")


def _true_obs_projection(cols, c, phi_fn):
    """E[phi^uc | Y, L] by summing over the binary treatment given (Y, L)."""
    g1 = true_propensity(cols, c)
    q1 = true_outcome(cols, 1.0, c)
    q0 = true_outcome(cols, 0.0, c)
    y = cols["Y"]
    like1 = np.where(y == 1.0, q1, 1.0 - q1) * g1
    like0 = np.where(y == 1.0, q0, 1.0 - q0) * (1.0 - g1)
    p_a1 = like1 / (like1 + like0)
    out = np.zeros_like(y)
    for a_val, weight in ((1.0, p_a1), (0.0, 1.0 - p_a1)):
        cc = dict(cols)
        cc["A"] = np.full_like(y, a_val)
        out = out + weight * phi_fn(cc)
    return out


def efficiency_bound(
    dgp: DgpSpec, estimand: EstimandSpec, draws: int, seed: int = 0
) -> tuple[float, float]:
    """Variance of the true-nuisance EIF, by Monte Carlo.

    Returns the bound and the Monte Carlo standard error of the variance
    estimate.
    """
    rng = _rng(seed, STREAM_BOUND)
    values = _uncentered_eif_draws(dgp, estimand, rng, draws)
    centered = values - values.mean()
    bound = float(np.var(values, ddof=1))
    se = float(np.std(centered**2, ddof=1) / np.sqrt(draws))
    return bound, se


def build_estimand(dgp: DgpSpec, kind: str, a: float = 1.0, regime=None) -> EstimandSpec:
    schema = dgp_schema(dgp)
    if kind == "ate":
        return ate_spec(schema)
    if kind == "tsm":
        return tsm_spec(schema, a)
    if kind == "longitudinal":
        if regime is None:
            raise ValueError("longitudinal estimand needs a regime")
        return longitudinal_spec(schema, regime)
    raise ValueError(f"harness does not support estimand kind {kind!r}")


def arm_learners(
    arm: str,
    library: tuple[str, ...],
    cv_folds: int,
    seed: int,
    fluctuation: str = "glm",
) -> LearnerSetup:
    """Learner libraries for a nuisance specification arm."""
    outcome = library if arm != "outcome_misspecified" else ("constant",)
    propensity = library if arm != "propensity_misspecified" else ("constant",)
    return LearnerSetup(
        outcome=outcome,
        propensity=propensity,
        cv_folds=cv_folds,
        fluctuation=fluctuation,
        seed=seed,
    )


@dataclass(frozen=True)
class SimConfig:
    """Replication-harness configuration (plain data, safe to pickle)."""

    dgp: DgpSpec = DgpSpec()
    estimand: str = "ate"
    a: float = 1.0
    regime: tuple[float, ...] = ()
    estimators: tuple[str, ...] = ("tmle",)
    arms: tuple[str, ...] = ("correct",)
    n_grid: tuple[int, ...] = (250, 1000, 4000)
    reps: int = 500
    seed: int = 1
    threads: int = 1
    library: tuple[str, ...] = ("constant", "glm_interactions")
    cv_folds: int = 5
    truncation: float = 0.01
    riesz_mode: str = "plugin"
    riesz_basis: str = "interactions"
    fluctuation: str = "glm"
    truth_draws: int = 2_000_000
    psi0: float | None = None
    bound: float | None = None


@dataclass
class MetricsTable:
    """Long-format metrics with Monte Carlo standard errors."""

    rows: list[dict]
    psi0: float
    bound: float
    failures: int = 0
    flagged: bool = False

    def value(self, n: int, estimator: str, arm: str, metric: str) -> float:
        for row in self.rows:
            if (
                row["n"] == n
                and row["estimator"] == estimator
                and row["arm"] == arm
                and row["metric"] == metric
            ):
                return row["value"]
        raise KeyError((n, estimator, arm, metric))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "estimator", "arm", "metric", "value", "mc_se", "reps"])
            for row in self.rows:
                writer.writerow(
                    [
                        row["n"],
                        row["estimator"],
                        row["arm"],
                        row["metric"],
                        repr(row["value"]),
                        repr(row["mc_se"]),
                        row["reps"],
                    ]
                )

    def to_json(self) -> str:
        doc = {
            "psi0": self.psi0,
            "bound": self.bound,
            "failures": self.failures,
            "flagged": self.flagged,
            "rows": self.rows,
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def _known_sampling_model(dgp: DgpSpec):
    pi_fn = _pi_function(dgp.pi_spec)
    return FormulaRegression(
        fn=lambda cols: np.where(cols["Y"] == 1.0, 1.0, pi_fn(cols)),
        columns=("Y", "L1"),
        family=Family.BINOMIAL,
    )


def replicate_once(config: SimConfig, estimator: str, arm: str, n: int, rep: int) -> dict:
    """One (estimator, arm, n) replication; returns psi and the CI."""
    seed = config.seed + rep
    dgp = replace(config.dgp, arm=arm)
    dataset = draw_dataset(dgp, n, seed)
    spec = build_estimand(dgp, config.estimand, config.a, config.regime or None)
    learners = arm_learners(arm, config.library, config.cv_folds, seed, config.fluctuation)
    riesz = RieszSetup(
        mode=config.riesz_mode, truncation=config.truncation, basis=config.riesz_basis
    )
    kwargs = {}
    if dgp.kind == "two_phase":
        estimator = "two_phase_tmle"
        kwargs["sampling_model"] = _known_sampling_model(dgp)
    report = estimate(dataset, spec, learners, riesz, estimator=estimator, **kwargs)
    return {"psi": report.psi, "ci_lo": report.ci[0], "ci_hi": report.ci[1]}


def _run_cell(args):
    config, estimator, arm, n, rep = args
    try:
        out = replicate_once(config, estimator, arm, n, rep)
        out.update(estimator=estimator, arm=arm, n=n, rep=rep, ok=True)
    except Exception as err:  # noqa: BLE001 - replication failures are data
        out = {"estimator": estimator, "arm": arm, "n": n, "rep": rep, "ok": False, "error": str(err)}
    return out


def _sd(values: np.ndarray) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def run_replications(config: SimConfig) -> MetricsTable:
    """Run the Monte Carlo study and assemble the metrics table.

    Per-replication seeds are base seed plus replication index; results are
    identical whether cells run serially or across a process pool.
    """
    if config.reps < 1:
        raise ValueError("need at least one replication")
    spec = build_estimand(config.dgp, config.estimand, config.a, config.regime or None)
    if config.psi0 is None or config.bound is None:
        psi0, _ = monte_carlo_truth(config.dgp, spec, config.truth_draws, seed=config.seed)
        bound, _ = efficiency_bound(config.dgp, spec, config.truth_draws, seed=config.seed)
    if config.psi0 is not None:
        psi0 = config.psi0
    if config.bound is not None:
        bound = config.bound
    tasks = [
        (config, estimator, arm, n, rep)
        for estimator in config.estimators
        for arm in config.arms
        for n in config.n_grid
        for rep in range(config.reps)
    ]
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(_run_cell, tasks, chunksize=8))
    else:
        results = [_run_cell(t) for t in tasks]

    rows: list[dict] = []
    failures = 0
    for estimator in config.estimators:
        for arm in config.arms:
            for n in config.n_grid:
                cell = sorted(
                    (
                        r
                        for r in results
                        if r["estimator"] == estimator and r["arm"] == arm and r["n"] == n
                    ),
                    key=lambda r: r["rep"],
                )
                good = [r for r in cell if r["ok"]]
                failures += len(cell) - len(good)
                if not good:
                    continue
                psis = np.array([r["psi"] for r in good])
                covered = np.array(
                    [float(r["ci_lo"] <= psi0 <= r["ci_hi"]) for r in good]
                )
                errs2 = (psis - psi0) ** 2
                reps = len(good)
                bias = float(np.mean(psis) - psi0)
                coverage = float(np.mean(covered))
                mse = float(np.mean(errs2))
                rel = n * mse / bound
                metrics = [
                    ("bias", bias, _sd(psis) / np.sqrt(reps)),
                    ("coverage", coverage, float(np.sqrt(coverage * (1 - coverage) / reps))),
                    ("mse", mse, _sd(errs2) / np.sqrt(reps)),
                    ("rel_efficiency", rel, n * _sd(errs2) / np.sqrt(reps) / bound),
                ]
                for metric, value, mc_se in metrics:
                    rows.append(
                        {
                            "n": n,
                            "estimator": estimator,
                            "arm": arm,
                            "metric": metric,
                            "value": value,
                            "mc_se": mc_se,
                            "reps": reps,
                        }
                    )
    total = len(tasks)
    flagged = failures > 0.01 * total
    return MetricsTable(rows=rows, psi0=psi0, bound=bound, failures=failures, flagged=flagged)
