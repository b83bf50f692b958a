"""Command-line surface: estimate from CSV, run simulations, compute truths.

One strictly validated JSON config drives every command; unknown keys are
rejected with their full path. Exit codes: 0 success, 2 config or data
error, 3 numerical error. Failures print a machine-readable error document.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import ColumnRole, ParseError, SchemaError, load_csv
from .estimands import ate_spec, longitudinal_spec, nde_spec, tsm_spec
from .riesz import RieszError
from .sim import (
    DgpSpec,
    SimConfig,
    build_estimand,
    efficiency_bound,
    monte_carlo_truth,
    run_replications,
)
from .tmle import ESTIMATORS, LearnerSetup, RieszSetup, estimate

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_LEARNER_CHOICES = ("constant", "glm", "glm_interactions", "ridge")

# Registry of every config key: (default, description). REQUIRED marks keys
# without defaults; None-defaulted keys are optional.
REQUIRED = object()
CONFIG_KEYS = {
    "seed": (1, "base RNG seed; --seed overrides"),
    "data.path": (REQUIRED, "input CSV path (estimate only)"),
    "data.schema": (REQUIRED, "map of column name to role, e.g. {\"A\": \"treatment:1\"}"),
    "estimand.kind": ("ate", "one of tsm | ate | longitudinal | nde"),
    "estimand.a": (1, "treatment arm for kind=tsm"),
    "estimand.regime": ([], "per-time treatment values for kind=longitudinal"),
    "estimator.name": ("tmle", "one of " + " | ".join(ESTIMATORS)),
    "estimator.iterate": (False, "repeat targeting until the score criterion holds"),
    "estimator.max_passes": (10, "targeting pass cap when iterating"),
    "learners.outcome": (
        ["constant", "glm", "glm_interactions", "ridge"],
        "outcome-regression library; subset of " + " | ".join(_LEARNER_CHOICES),
    ),
    "learners.propensity": (
        ["constant", "glm", "glm_interactions", "ridge"],
        "propensity/sampling/mediator library; same choices",
    ),
    "learners.cv_folds": (10, "super learner cross-validation folds"),
    "learners.fluctuation": ("glm", "fluctuation-function learner for sdr_tmle"),
    "riesz.mode": ("plugin", "plugin | regression"),
    "riesz.truncation": (0.01, "lower truncation for plug-in weights"),
    "riesz.basis": ("interactions", "main | interactions (regression mode)"),
    "sim.dgp": ("single_timepoint", "single_timepoint | longitudinal_t2 | two_phase"),
    "sim.pi_spec": ("default", "two-phase control sampling probability rule"),
    "sim.n_grid": ([250, 1000, 4000], "sample sizes for simulate"),
    "sim.reps": (500, "Monte Carlo replications per cell"),
    "sim.seed": (1, "base seed for replication streams"),
    "sim.arms": (["correct"], "nuisance arms: correct | outcome_misspecified | propensity_misspecified"),
    "sim.estimators": (["tmle"], "estimators to compare in simulate"),
    "sim.threads": (1, "worker processes for replications"),
    "sim.draws": (2000000, "Monte Carlo draws for truth/bound oracles"),
    "output.path": ("report.json", "output file (simulate adds .csv/.json)"),
    "output.format": ("json", "output format for estimate"),
}


class ConfigError(ValueError):
    pass


def _config_help() -> str:
    lines = ["config keys (JSON; dotted = nested):"]
    for key, (default, desc) in CONFIG_KEYS.items():
        shown = "required" if default is REQUIRED else f"default {json.dumps(default)}"
        lines.append(f"  {key:<24} {shown:<32} {desc}")
    return "\n".join(lines)


def load_config(path) -> dict:
    """Read and strictly validate a JSON config document."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    known = set(CONFIG_KEYS)
    sections = {k.split(".")[0] for k in known if "." in k}
    for key, value in raw.items():
        if key in sections:
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            for sub in value:
                dotted = f"{key}.{sub}"
                if dotted not in known:
                    raise ConfigError(f"unknown config key {dotted!r}")
        elif key in known:
            continue
        else:
            raise ConfigError(f"unknown config key {key!r}")

    config = {}
    for dotted, (default, _) in CONFIG_KEYS.items():
        if "." in dotted:
            section, sub = dotted.split(".")
            value = raw.get(section, {}).get(sub, default)
        else:
            value = raw.get(dotted, default)
        config[dotted] = value
    return config


def _require(config, key):
    value = config[key]
    if value is REQUIRED:
        raise ConfigError(f"config key {key!r} is required for this command")
    return value


def _parse_schema(raw_schema) -> dict[str, ColumnRole]:
    if not isinstance(raw_schema, dict) or not raw_schema:
        raise ConfigError("data.schema must be a non-empty object")
    try:
        return {name: ColumnRole.parse(role) for name, role in raw_schema.items()}
    except SchemaError as err:
        raise ConfigError(f"bad data.schema: {err}") from None


def _learner_setup(config) -> LearnerSetup:
    for key in ("learners.outcome", "learners.propensity"):
        lib = config[key]
        if not isinstance(lib, list) or not lib:
            raise ConfigError(f"{key} must be a non-empty list")
        for spec in lib:
            if spec not in _LEARNER_CHOICES:
                raise ConfigError(f"{key} entry {spec!r} not in {_LEARNER_CHOICES}")
    return LearnerSetup(
        outcome=tuple(config["learners.outcome"]),
        propensity=tuple(config["learners.propensity"]),
        cv_folds=int(config["learners.cv_folds"]),
        fluctuation=str(config["learners.fluctuation"]),
        seed=int(config["seed"]),
    )


def _riesz_setup(config) -> RieszSetup:
    mode = config["riesz.mode"]
    if mode not in ("plugin", "regression"):
        raise ConfigError(f"riesz.mode {mode!r} must be plugin or regression")
    basis = config["riesz.basis"]
    if basis not in ("main", "interactions"):
        raise ConfigError(f"riesz.basis {basis!r} must be main or interactions")
    truncation = float(config["riesz.truncation"])
    if not 0.0 < truncation < 0.5:
        raise ConfigError("riesz.truncation must lie in (0, 0.5)")
    return RieszSetup(mode=mode, truncation=truncation, basis=basis)


def _build_spec(config, schema):
    kind = config["estimand.kind"]
    if kind == "tsm":
        return tsm_spec(schema, float(config["estimand.a"]))
    if kind == "ate":
        return ate_spec(schema)
    if kind == "longitudinal":
        regime = config["estimand.regime"]
        if not regime:
            raise ConfigError("estimand.regime is required for kind=longitudinal")
        return longitudinal_spec(schema, regime)
    if kind == "nde":
        return nde_spec(schema)
    raise ConfigError(f"unknown estimand.kind {kind!r}")


def cmd_estimate(config: dict, quiet: bool) -> int:
    schema = _parse_schema(_require(config, "data.schema"))
    dataset = load_csv(_require(config, "data.path"), schema)
    spec = _build_spec(config, dataset.schema)
    estimator = config["estimator.name"]
    if estimator not in ESTIMATORS:
        raise ConfigError(f"unknown estimator.name {estimator!r}")
    report = estimate(
        dataset,
        spec,
        _learner_setup(config),
        _riesz_setup(config),
        estimator=estimator,
        iterate=bool(config["estimator.iterate"]),
        max_passes=int(config["estimator.max_passes"]),
    )
    out = Path(config["output.path"])
    out.write_text(report.to_json() + "\n")
    if not quiet:
        print(f"psi={report.psi:.6g} se={report.se:.6g} ci=({report.ci[0]:.6g}, {report.ci[1]:.6g})")
        print(f"report written to {out}")
    return EXIT_OK


def _sim_config(config) -> SimConfig:
    dgp = DgpSpec(kind=config["sim.dgp"], pi_spec=config["sim.pi_spec"])
    for arm in config["sim.arms"]:
        if arm not in ("correct", "outcome_misspecified", "propensity_misspecified"):
            raise ConfigError(f"unknown arm {arm!r}")
    estimand = config["estimand.kind"]
    if estimand not in ("tsm", "ate", "longitudinal"):
        raise ConfigError("simulate supports estimand.kind tsm | ate | longitudinal")
    for est in config["sim.estimators"]:
        if est not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {est!r} in sim.estimators")
    return SimConfig(
        dgp=dgp,
        estimand=estimand,
        a=float(config["estimand.a"]),
        regime=tuple(float(a) for a in config["estimand.regime"]),
        estimators=tuple(config["sim.estimators"]),
        arms=tuple(config["sim.arms"]),
        n_grid=tuple(int(n) for n in config["sim.n_grid"]),
        reps=int(config["sim.reps"]),
        seed=int(config["sim.seed"]),
        threads=int(config["sim.threads"]),
        library=tuple(config["learners.outcome"]),
        cv_folds=int(config["learners.cv_folds"]),
        truncation=float(config["riesz.truncation"]),
        riesz_mode=config["riesz.mode"],
        riesz_basis=config["riesz.basis"],
        fluctuation=config["learners.fluctuation"],
        truth_draws=int(config["sim.draws"]),
    )


def cmd_simulate(config: dict, quiet: bool) -> int:
    sim_config = _sim_config(config)
    table = run_replications(sim_config)
    stem = Path(config["output.path"])
    if stem.suffix in (".json", ".csv"):
        stem = stem.with_suffix("")
    csv_path = stem.with_suffix(".csv")
    json_path = stem.with_suffix(".json")
    table.to_csv(csv_path)
    json_path.write_text(table.to_json() + "\n")
    if not quiet:
        print(f"psi0={table.psi0:.6g} bound={table.bound:.6g} failures={table.failures}")
        print(f"metrics written to {csv_path} and {json_path}")
    return EXIT_OK


def cmd_truth(config: dict, quiet: bool) -> int:
    dgp = DgpSpec(kind=config["sim.dgp"], pi_spec=config["sim.pi_spec"])
    spec = build_estimand(
        dgp,
        config["estimand.kind"],
        float(config["estimand.a"]),
        config["estimand.regime"] or None,
    )
    draws = int(config["sim.draws"])
    seed = int(config["sim.seed"])
    psi0, mc_se = monte_carlo_truth(dgp, spec, draws, seed=seed)
    bound, _ = efficiency_bound(dgp, spec, draws, seed=seed)
    doc = {"psi0": psi0, "bound": bound, "mc_se": mc_se}
    out = Path(config["output.path"])
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if not quiet:
        print(f"psi0={psi0:.6g} (mc_se {mc_se:.2g}) bound={bound:.6g}")
        print(f"written to {out}")
    return EXIT_OK


def _error_document(code: int, err: Exception) -> str:
    return json.dumps(
        {"error": {"exit_code": code, "type": type(err).__name__, "message": str(err)}},
        sort_keys=True,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="riesztmle",
        description="Doubly-robust estimation with Riesz representers",
        epilog=_config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--seed", type=int, default=None, help="override the config seeds")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("estimate", "estimate an estimand from a CSV file"),
        ("simulate", "run the Monte Carlo replication harness"),
        ("truth", "compute the oracle truth and efficiency bound"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON config")

    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config["seed"] = int(args.seed)
            config["sim.seed"] = int(args.seed)
        handler = {"estimate": cmd_estimate, "simulate": cmd_simulate, "truth": cmd_truth}
        return handler[args.command](config, args.quiet)
    except (ConfigError, SchemaError, ParseError, FileNotFoundError) as err:
        print(_error_document(EXIT_CONFIG, err))
        return EXIT_CONFIG
    except (ValueError, ZeroDivisionError, RieszError, RuntimeError, np.linalg.LinAlgError) as err:
        print(_error_document(EXIT_NUMERICAL, err))
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
