"""Command-line driver: estimate | graph | simulate.

Configuration is a flat ``key = value`` text file (lists comma-separated,
``#`` comments); every key can be overridden by a flag of the same name.
Unknown keys are fatal. Output files are written atomically (temp file plus
rename), so a failed run never leaves partial output.

Exit codes: 0 success, 1 configuration or data error, 2 numerical failure,
3 infeasible separating-set program on the full sample.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import pandas as pd

from .data import DatasetSchema, VariableSpec, load_csv
from .errors import (
    ConfigError,
    DataError,
    NumericalError,
    SepgenError,
    TotalInfeasibilityError,
)
from .mgm import MgmConfig, fit_mgm, remove_node
from .pipeline import ESTIMATOR_NAMES, PipelineConfig
from .resample import run_bootstrap
from .sepset import DEFAULT_PATH_CAP, INFEASIBLE
from .simulate import SimConfig, bias_table_csv, run_simulation, type_table_csv

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_INFEASIBLE = 3


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_list(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def _parse_int_list(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in _parse_list(raw))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {raw!r}") from None


def _parse_threshold(raw: str):
    low = raw.strip().lower()
    if low == "auto":
        return "auto"
    try:
        return float(low)
    except ValueError:
        raise ConfigError(f"edge_threshold must be a number or 'auto', got {raw!r}") from None


@dataclass(frozen=True)
class Key:
    name: str
    parse: object
    default: object
    help: str


def _typed(parse, raw, name):
    try:
        if parse is int:
            return int(raw)
        if parse is float:
            return float(raw)
        if parse is str:
            return str(raw)
        return parse(raw)
    except ConfigError:
        raise
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {raw!r} for key {name!r}") from None


_COMMON_KEYS = [
    Key("seed", int, 0, "master random seed"),
    Key("threads", int, 1, "worker process count (does not change results)"),
    Key("out", str, ".", "output directory"),
]

_DATA_KEYS = [
    Key("experiment_csv", str, None, "path to the experiment CSV"),
    Key("population_csv", str, None, "path to the population CSV"),
    Key("outcome", str, None, "outcome column in the experiment file"),
    Key("treatment", str, None, "0/1 treatment column in the experiment file"),
    Key("cluster", str, "", "cluster-id column for the block bootstrap"),
    Key("strata", str, "", "stratum column giving per-stratum treatment shares"),
    Key("covariates", _parse_list, (), "comma-separated covariate columns"),
    Key("categorical", _parse_list, (), "categorical declarations, e.g. district:5,urban:2"),
    Key("N", int, 0, "size of the actual target population (0 = n + m, adjustment off)"),
]

_ESTIMATE_KEYS = [
    *_DATA_KEYS,
    Key("sampling_set", _parse_list, (), "covariates assumed to drive sampling"),
    Key("heterogeneity_set", _parse_list, (), "covariates assumed to drive effect heterogeneity"),
    Key("unmeasured", _parse_list, (), "covariates that may not enter the separating set"),
    Key("mode", str, "marginal", "marginal or exact"),
    Key("estimators", _parse_list, ("ipw",), "subset of ipw,outcome_model,aipw,naive"),
    Key("B", int, 1000, "bootstrap replicate count"),
    Key("rule", str, "AND", "edge rule: AND or OR"),
    Key("gamma", float, 0.25, "EBIC gamma"),
    Key("edge_threshold", _parse_threshold, "auto", "edge pruning: auto, 0 (off), or an absolute value"),
    Key("path_cap", int, DEFAULT_PATH_CAP, "maximum number of enumerated simple paths"),
    Key("p_treat", float, 0.0, "constant treatment probability (0 = infer from data/strata)"),
    Key("weight_cap", float, 0.0, "cap on generalization weights (0 = off)"),
    Key("freeze_population", _parse_bool, False, "do not resample population rows"),
    *_COMMON_KEYS,
]

_SIMULATE_KEYS = [
    Key("n", _parse_int_list, (1000,), "experiment sizes, comma-separated"),
    Key("m", int, 10_000, "population sample size"),
    Key("pool_factor", int, 8, "sampling pool size as a multiple of n"),
    Key("reps", int, 500, "simulation replicates per n"),
    Key("constraint_x1_unmeasured", _parse_bool, False, "also solve with X1 excluded"),
    Key("estimators", _parse_list, ("ipw",), "subset of ipw,outcome_model,aipw,naive"),
    Key("estimate_sets", _parse_bool, True, "estimate separating sets (else oracle sets only)"),
    Key("rule", str, "AND", "edge rule: AND or OR"),
    Key("gamma", float, 0.25, "EBIC gamma"),
    Key("edge_threshold", _parse_threshold, "auto", "edge pruning: auto, 0 (off), or an absolute value"),
    Key("path_cap", int, DEFAULT_PATH_CAP, "maximum number of enumerated simple paths"),
    *_COMMON_KEYS,
]

_KEYSETS = {"estimate": _ESTIMATE_KEYS, "graph": _ESTIMATE_KEYS, "simulate": _SIMULATE_KEYS}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _read_config_file(path: str, keys: dict[str, Key]) -> dict:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        name, raw = stripped.split("=", 1)
        name = name.strip()
        if name not in keys:
            raise ConfigError(f"{path}:{lineno}: unknown config key {name!r}")
        values[name] = _typed(keys[name].parse, raw.strip(), name)
    return values


def _build_parser() -> _Parser:
    parser = _Parser(prog="sepgen", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for command, keys in _KEYSETS.items():
        p = sub.add_parser(command, help=f"run the {command} pipeline")
        p.add_argument("--config", help="path to a key = value config file")
        for key in keys:
            p.add_argument(f"--{key.name}", dest=key.name, default=None, help=key.help, metavar="V")
    return parser


def _resolve_config(args, keys: list[Key]) -> dict:
    table = {k.name: k for k in keys}
    values = {k.name: k.default for k in keys}
    if args.config:
        values.update(_read_config_file(args.config, table))
    for key in keys:
        raw = getattr(args, key.name, None)
        if raw is not None:
            values[key.name] = _typed(key.parse, raw, key.name)
    return values


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _require(cfg: dict, names):
    missing = [n for n in names if not cfg[n]]
    if missing:
        raise ConfigError(f"missing required config keys: {missing}")


def _build_schema(cfg: dict) -> DatasetSchema:
    covariates = cfg["covariates"]
    if not covariates:
        raise ConfigError("covariates must list at least one column")
    levels = {}
    for item in cfg["categorical"]:
        if ":" not in item:
            raise ConfigError(f"categorical entries look like name:levels, got {item!r}")
        name, raw_levels = item.split(":", 1)
        name = name.strip()
        if name not in covariates:
            raise ConfigError(f"categorical declaration for unknown covariate {name!r}")
        levels[name] = _typed(int, raw_levels.strip(), "categorical")
    try:
        pop_columns = set(pd.read_csv(cfg["population_csv"], nrows=0).columns)
    except OSError as exc:
        raise DataError(f"cannot read population CSV: {exc}") from exc
    specs = tuple(
        VariableSpec(
            name=name,
            kind="categorical" if name in levels else "continuous",
            level_count=levels.get(name, 1),
            measured_in_population=name in pop_columns,
        )
        for name in covariates
    )
    return DatasetSchema(
        variables=specs,
        outcome=cfg["outcome"],
        treatment=cfg["treatment"],
        cluster=cfg["cluster"] or None,
        strata=cfg["strata"] or None,
    )


def _load_dataset(cfg: dict):
    _require(cfg, ["experiment_csv", "population_csv", "outcome", "treatment", "covariates"])
    schema = _build_schema(cfg)
    dataset = load_csv(
        cfg["experiment_csv"],
        cfg["population_csv"],
        schema,
        population_size_n=cfg["N"] or None,
    )
    return dataset, schema


def _pipeline_config(cfg: dict, schema: DatasetSchema) -> PipelineConfig:
    for key in ("sampling_set", "heterogeneity_set", "unmeasured"):
        bad = [v for v in cfg[key] if v not in schema.covariate_names]
        if bad:
            raise ConfigError(f"{key} names unknown covariates: {bad}")
    if cfg["mode"] not in ("marginal", "exact"):
        raise ConfigError(f"mode must be marginal or exact, got {cfg['mode']!r}")
    if cfg["mode"] == "exact" and not cfg["heterogeneity_set"]:
        raise ConfigError("exact mode requires a nonempty heterogeneity_set")
    unknown = [e for e in cfg["estimators"] if e not in ESTIMATOR_NAMES]
    if unknown:
        raise ConfigError(f"unknown estimators: {unknown}")
    # Variables absent from the population file can never be adjusted for
    # downstream, so they always join the exclusion constraints.
    auto_excluded = tuple(
        v.name for v in schema.variables if not v.measured_in_population
    )
    unmeasured = tuple(dict.fromkeys([*cfg["unmeasured"], *auto_excluded]))
    try:
        return PipelineConfig(
            mode=cfg["mode"],
            sampling_set=cfg["sampling_set"],
            heterogeneity_set=cfg["heterogeneity_set"],
            unmeasured=unmeasured,
            estimators=cfg["estimators"],
            mgm=MgmConfig(rule=cfg["rule"], gamma=cfg["gamma"], edge_threshold=cfg["edge_threshold"]),
            path_cap=cfg["path_cap"],
            p_treat=cfg["p_treat"] or None,
            weight_cap=cfg["weight_cap"] or None,
            freeze_population=cfg["freeze_population"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_estimate(cfg: dict) -> int:
    dataset, schema = _load_dataset(cfg)
    _require(cfg, ["sampling_set"])
    if not cfg["cluster"]:
        raise ConfigError("estimate requires a cluster column for the bootstrap")
    pconfig = _pipeline_config(cfg, schema)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        reports, full = run_bootstrap(
            dataset, pconfig, cfg["B"], cfg["seed"], threads=cfg["threads"]
        )
    except TotalInfeasibilityError as exc:
        payload = {"B": cfg["B"], "seed": cfg["seed"], "error": str(exc)}
        _write_atomic(out / "bootstrap.json", json.dumps(payload, indent=2) + "\n")
        _write_atomic(out / "estimates.json", json.dumps([], indent=2) + "\n")
        _write_atomic(out / "selection.csv", "variable,frequency\n")
        print(f"sepgen: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE

    estimates_rows = []
    for kind in pconfig.estimators:
        report = reports[kind]
        if kind in full.estimates:
            est = full.estimates[kind]
            row = est.to_json_dict(outcome=cfg["outcome"])
            row["se"] = report.se
            row["ci_low"] = report.ci_low
            row["ci_high"] = report.ci_high
            estimates_rows.append(row)
    bootstrap_payload = {
        "B": cfg["B"],
        "seed": cfg["seed"],
        "mode": pconfig.mode,
        "full_sample_solution": full.solution.to_json_dict(),
        "reports": {kind: reports[kind].to_json_dict() for kind in pconfig.estimators},
    }
    selection = reports[pconfig.estimators[0]].selection_frequency
    selection_lines = ["variable,frequency"]
    selection_lines += [f"{name},{freq:.10g}" for name, freq in selection.items()]

    _write_atomic(out / "estimates.json", json.dumps(estimates_rows, indent=2) + "\n")
    _write_atomic(out / "bootstrap.json", json.dumps(bootstrap_payload, indent=2) + "\n")
    _write_atomic(out / "selection.csv", "\n".join(selection_lines) + "\n")

    if full.solution.status == INFEASIBLE:
        print("sepgen: no feasible separating set on the full sample", file=sys.stderr)
        return EXIT_INFEASIBLE
    selected = ", ".join(full.solution.selected) or "(empty set)"
    print(f"separating set [{full.solution.status}]: {selected}")
    for row in estimates_rows:
        print(f"{row['estimator']}: {row['point']:.6g} (se {row['se']:.4g})")
    return EXIT_OK


def cmd_graph(cfg: dict) -> int:
    dataset, schema = _load_dataset(cfg)
    include_y = cfg["mode"] != "exact"
    graph = fit_mgm(
        dataset,
        include_y=include_y,
        rule=cfg["rule"],
        gamma=cfg["gamma"],
        edge_threshold=cfg["edge_threshold"],
    )
    without_t = remove_node(graph, "T")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "rule": graph.rule_used,
        "with_treatment": {"nodes": list(graph.node_names), "edges": graph.to_edge_list()},
        "without_treatment": {
            "nodes": list(without_t.node_names),
            "edges": without_t.to_edge_list(),
        },
    }
    _write_atomic(out / "graph.dot", graph.to_dot())
    _write_atomic(out / "graph.json", json.dumps(payload, indent=2) + "\n")
    print(f"graph: {len(graph.node_names)} nodes, {len(list(graph.edges()))} edges")
    return EXIT_OK


def cmd_simulate(cfg: dict) -> int:
    results = []
    for n in cfg["n"]:
        try:
            config = SimConfig(
                n=n,
                m=cfg["m"],
                pool_factor=cfg["pool_factor"],
                reps=cfg["reps"],
                seed=cfg["seed"],
                constraint_x1_unmeasured=cfg["constraint_x1_unmeasured"],
                estimators=cfg["estimators"],
                estimate_sets=cfg["estimate_sets"],
                mgm=MgmConfig(rule=cfg["rule"], gamma=cfg["gamma"], edge_threshold=cfg["edge_threshold"]),
                path_cap=cfg["path_cap"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        results.append(run_simulation(config, threads=cfg["threads"]))
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_atomic(out / "sim_bias.csv", bias_table_csv(results))
    _write_atomic(out / "sim_types.csv", type_table_csv(results))
    for result in results:
        for row in result.bias_rows:
            print(
                f"n={row.n} {row.estimator}/{row.set_kind}: bias {row.bias:+.4f} "
                f"se {row.se:.4f} rmse {row.rmse:.4f} ({row.reps_used} reps)"
            )
    return EXIT_OK


_COMMANDS = {"estimate": cmd_estimate, "graph": cmd_graph, "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve_config(args, _KEYSETS[args.command])
        return _COMMANDS[args.command](cfg)
    except TotalInfeasibilityError as exc:
        print(f"sepgen: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, DataError) as exc:
        print(f"sepgen: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"sepgen: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"sepgen: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SepgenError as exc:
        print(f"sepgen: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
