"""Command-line experiment runner.

Subcommands map one-to-one onto the laboratory's experiments: single-policy
leakage measurement, a full trade-off grid, the harvest-rate / battery
capacity / grid-waste sweeps, and an internal oracle consistency check.
Every run writes a results table (CSV), a JSON manifest sufficient to
replay it bit for bit, and per-value subfiles for sweeps.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, pareto, trellis
from .errors import (
    ConfigError,
    ConvergenceError,
    EvaluationError,
    InvalidParameterError,
    ZeroProbabilityError,
)
from .model import (
    BatteryParams,
    BinaryEHParams,
    NoBatteryParams,
    SystemSpec,
    complementary_params,
    symmetric_params,
)
from .pareto import (
    RatePair,
    evaluate_policy_replicated,
    evaluation_seeds,
    with_hull,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

KINDS = ("leakage", "pareto", "sweep-pz", "sweep-k", "waste", "oracle-check")
FAMILIES = ("auto", "no-battery", "binary-eh", "battery-symmetric", "battery-complementary")

TABLE_COLUMNS = (
    "family", "K", "params", "px", "pz", "pw", "n", "seed",
    "I_p_raw", "I_p", "E_w_exact", "E_w_mc", "on_front", "on_hull",
)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    px: float = 0.5
    pz: float = 0.0
    K: int = 1
    waste: bool = False
    pw: float = 0.0
    family: str = "auto"
    params: Optional[tuple[float, ...]] = None
    step: float = 0.1
    n: int = 10**6
    seed: int = 0
    replicates: int = 1
    workers: int = 1
    out: str = "results"
    pz_grid: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    k_grid: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    pw_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        for name in ("px", "pz", "pw"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.K < 0:
            raise ConfigError(f"K must be non-negative, got {self.K}")
        if self.n < 1:
            raise ConfigError(f"n must be at least 1, got {self.n}")
        if not 0.0 < self.step <= 1.0:
            raise ConfigError(f"step must lie in (0, 1], got {self.step}")
        if self.replicates < 1:
            raise ConfigError(f"replicates must be at least 1, got {self.replicates}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        for v in self.pz_grid + self.pw_grid:
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"grid probability out of range: {v}")
        for k in self.k_grid:
            if k < 1:
                raise ConfigError(f"k-grid entries must be positive, got {k}")
        if self.params is not None:
            for v in self.params:
                if not 0.0 <= v <= 1.0:
                    raise ConfigError(f"params entries must lie in [0, 1], got {v}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("params", "pz_grid", "k_grid", "pw_grid"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d


CONFIG_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, value):
    if name in ("params", "pz_grid", "pw_grid"):
        return None if value is None else tuple(float(v) for v in value)
    if name == "k_grid":
        return tuple(int(v) for v in value)
    return value


def load_config_file(path: str) -> dict:
    """Read a config (or manifest wrapping one) from JSON."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if isinstance(data, dict) and "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(data) - CONFIG_FIELDS)
    if unknown:
        raise ConfigError(
            f"unknown config keys {unknown}; valid keys: {sorted(CONFIG_FIELDS)}"
        )
    return data


def parse_config(kind: str, file_values: dict, flag_values: dict) -> ExperimentConfig:
    """Merge precedence: flags over file values over defaults."""
    merged: dict = {"kind": kind}
    for name, value in file_values.items():
        if name == "kind":
            if value != kind:
                raise ConfigError(
                    f"config file is for kind {value!r} but the {kind!r} command was invoked"
                )
            continue
        merged[name] = _coerce(name, value)
    for name, value in flag_values.items():
        if value is not None:
            merged[name] = _coerce(name, value)
    try:
        config = ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    config.validate()
    return config


# --------------------------------------------------------------------------
# Results table
# --------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def rate_pair_row(
    pair: RatePair, px: float, pz: float, *, on_front: bool = False, on_hull: bool = False
) -> dict:
    params = pair.params
    pw = params.waste_prob if isinstance(params, BatteryParams) else None
    return {
        "family": params.family,
        "K": params.capacity,
        "params": ";".join(repr(v) for v in params.values()),
        "px": px,
        "pz": pz,
        "pw": pw,
        "n": pair.n,
        "seed": pair.seed,
        "I_p_raw": pair.leakage_raw,
        "I_p": pair.leakage,
        "E_w_exact": pair.waste,
        "E_w_mc": pair.waste_mc,
        "on_front": on_front,
        "on_hull": on_hull,
    }


def write_table(path: Path, rows: Sequence[dict], columns: Sequence[str] = TABLE_COLUMNS) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c)) for c in columns) + "\n")


def front_rows(pairs, front, px: float, pz: float) -> list[dict]:
    on_front = {id(p) for p in front.points}
    on_hull = {id(p) for p in (front.hull or ())}
    return [
        rate_pair_row(p, px, pz, on_front=id(p) in on_front, on_hull=id(p) in on_hull)
        for p in pairs
    ]


# --------------------------------------------------------------------------
# Experiment bodies
# --------------------------------------------------------------------------


def _single_policy_params(config: ExperimentConfig):
    """Resolve the policy parameters for a single-policy experiment."""
    family = config.family
    if family == "auto":
        if config.K == 0:
            family = "no-battery"
        elif config.K == 1 and config.pz > 0.0:
            family = "binary-eh"
        else:
            family = "battery-symmetric"
    values = config.params or ()
    if family == "no-battery":
        return NoBatteryParams()
    if family == "binary-eh":
        if len(values) != 3:
            raise ConfigError("binary-eh needs exactly 3 values in --params")
        return BinaryEHParams(*values)
    pw = config.pw if config.waste else None
    if family == "battery-symmetric":
        charge, discharge = symmetric_params(config.K, values)
    elif family == "battery-complementary":
        charge, discharge = complementary_params(config.K, values)
    else:
        raise ConfigError(f"cannot build a single policy for family {family!r}")
    return BatteryParams(config.K, charge, discharge, pw)


def _system_for_config(config: ExperimentConfig, params) -> SystemSpec:
    if isinstance(params, (NoBatteryParams, BinaryEHParams)):
        return SystemSpec(
            max_load=1, max_harvest=1, max_output=1,
            capacity=params.capacity,
            load_prob=config.px, harvest_prob=config.pz,
        )
    return SystemSpec(
        max_load=1, max_harvest=0, max_output=1, capacity=config.K,
        load_prob=config.px, harvest_prob=0.0,
        grid_waste=params.waste_prob is not None,
    )


def run_leakage(config: ExperimentConfig, out: Path, seeds_log: dict) -> list[Path]:
    params = _single_policy_params(config)
    spec = _system_for_config(config, params)
    seeds = evaluation_seeds(config.seed, 0, 0, config.replicates)
    seeds_log["0:0"] = list(seeds)
    pair = evaluate_policy_replicated(spec, params, config.n, seeds)
    table = out / "results.csv"
    write_table(table, [rate_pair_row(pair, config.px, spec.harvest_prob)])
    return [table]


def run_pareto(config: ExperimentConfig, out: Path, seeds_log: dict) -> list[Path]:
    family = config.family
    if family == "auto":
        family = "binary-eh" if config.K == 1 and not config.waste else (
            "battery-complementary" if config.waste else "battery-symmetric"
        )
    pz = config.pz if family == "binary-eh" else 0.0
    waste_prob = config.pw if config.waste else None
    params_list = list(pareto.grid_policies(family, config.K, config.step, waste_prob))
    if family == "binary-eh":
        spec = SystemSpec(max_load=1, max_harvest=1, max_output=1, capacity=1,
                          load_prob=config.px, harvest_prob=pz)
    else:
        spec = SystemSpec(max_load=1, max_harvest=0, max_output=1, capacity=config.K,
                          load_prob=config.px, harvest_prob=0.0,
                          grid_waste=waste_prob is not None)
    for i in range(len(params_list)):
        seeds_log[f"0:{i}"] = list(evaluation_seeds(config.seed, 0, i, config.replicates))
    pairs = pareto.evaluate_grid(
        spec, params_list, config.n, config.seed,
        replicates=config.replicates, workers=config.workers, context=0,
    )
    front = with_hull(pareto.pareto_filter(pairs))
    table = out / "results.csv"
    write_table(table, front_rows(pairs, front, config.px, pz))
    summary = out / "summary.csv"
    lo, hi = front.min_leakage_point, front.min_waste_point
    write_table(
        summary,
        [
            {"corner": "min_I_p", "I_p": lo.leakage, "E_w": lo.waste,
             "params": ";".join(repr(v) for v in lo.params.values())},
            {"corner": "min_E_w", "I_p": hi.leakage, "E_w": hi.waste,
             "params": ";".join(repr(v) for v in hi.params.values())},
        ],
        columns=("corner", "I_p", "E_w", "params"),
    )
    return [table, summary]


def _log_grid_seeds(config: ExperimentConfig, seeds_log: dict, context: int, count: int) -> None:
    for i in range(count):
        seeds_log[f"{context}:{i}"] = list(
            evaluation_seeds(config.seed, context, i, config.replicates)
        )


def run_sweep_pz(config: ExperimentConfig, out: Path, seeds_log: dict) -> list[Path]:
    base = SystemSpec(max_load=1, max_harvest=1, max_output=1, capacity=1,
                      load_prob=config.px, harvest_prob=0.0)
    grid_size = len(pareto.probability_grid(config.step)) ** 3
    for j in range(len(config.pz_grid)):
        _log_grid_seeds(config, seeds_log, j, grid_size)
    entries = pareto.sweep_harvest_rate(
        config.pz_grid, base, config.step, config.n, config.seed,
        replicates=config.replicates, workers=config.workers,
    )
    written = []
    all_rows: list[dict] = []
    corner_rows = []
    for entry in entries:
        rows = front_rows(entry.pairs, entry.front, config.px, entry.harvest_prob)
        all_rows.extend(rows)
        sub = out / f"pz={entry.harvest_prob!r}.csv"
        write_table(sub, rows)
        written.append(sub)
        corner_rows.append({
            "pz": entry.harvest_prob,
            "min_I_p": entry.min_leakage.leakage,
            "E_w_at_min_I_p": entry.min_leakage.waste,
            "min_E_w": entry.min_waste.waste,
            "I_p_at_min_E_w": entry.min_waste.leakage,
            "no_battery_I_p": entry.no_battery.leakage,
            "no_battery_E_w": entry.no_battery.waste,
        })
    table = out / "results.csv"
    write_table(table, all_rows)
    corners = out / "corners.csv"
    write_table(
        corners, corner_rows,
        columns=("pz", "min_I_p", "E_w_at_min_I_p", "min_E_w", "I_p_at_min_E_w",
                 "no_battery_I_p", "no_battery_E_w"),
    )
    return [table, corners, *written]


def run_sweep_k(config: ExperimentConfig, out: Path, seeds_log: dict) -> list[Path]:
    for j, k in enumerate(config.k_grid):
        grid_size = len(pareto.probability_grid(config.step)) ** (k // 2)
        _log_grid_seeds(config, seeds_log, j, grid_size)
    entries = pareto.sweep_battery_capacity(
        config.k_grid, config.px, config.step, config.n, config.seed,
        replicates=config.replicates, workers=config.workers,
    )
    written = []
    all_rows: list[dict] = []
    summary_rows = []
    for entry in entries:
        rows = [rate_pair_row(p, config.px, 0.0, on_front=(p is entry.best))
                for p in entry.pairs]
        all_rows.extend(rows)
        sub = out / f"K={entry.capacity}.csv"
        write_table(sub, rows)
        written.append(sub)
        summary_rows.append({
            "K": entry.capacity,
            "min_I_p": entry.best.leakage,
            "E_w": entry.best.waste,
            "params": ";".join(repr(v) for v in entry.best.params.values()),
        })
    table = out / "results.csv"
    write_table(table, all_rows)
    summary = out / "summary.csv"
    write_table(summary, summary_rows, columns=("K", "min_I_p", "E_w", "params"))
    return [table, summary, *written]


def run_waste(config: ExperimentConfig, out: Path, seeds_log: dict) -> list[Path]:
    grid_size_per_k = {
        k: len(pareto.probability_grid(config.step)) ** k for k in config.k_grid
    }
    for jk, k in enumerate(config.k_grid):
        for jw in range(len(config.pw_grid)):
            _log_grid_seeds(
                config, seeds_log, jk * len(config.pw_grid) + jw, grid_size_per_k[k]
            )
    entries = pareto.sweep_waste(
        config.k_grid, config.pw_grid, config.px, config.step, config.n, config.seed,
        replicates=config.replicates, workers=config.workers,
    )
    written = []
    all_rows: list[dict] = []
    summary_rows = []
    for entry in entries:
        rows = [rate_pair_row(p, config.px, 0.0, on_front=(p is entry.best))
                for p in entry.pairs]
        all_rows.extend(rows)
        sub = out / f"K={entry.capacity}_pw={entry.waste_prob!r}.csv"
        write_table(sub, rows)
        written.append(sub)
        summary_rows.append({
            "K": entry.capacity,
            "pw": entry.waste_prob,
            "I_p": entry.best.leakage,
            "E_w": entry.best.waste,
            "params": ";".join(repr(v) for v in entry.best.params.values()),
        })
    table = out / "results.csv"
    write_table(table, all_rows)
    summary = out / "summary.csv"
    write_table(summary, summary_rows, columns=("K", "pw", "I_p", "E_w", "params"))
    return [table, summary, *written]


def oracle_check_report(n_marginal: int = 10, n_joint: int = 6) -> list[dict]:
    """Exact-vs-scaled recursion agreement on a reference policy.

    Compares the scaled forward log-probabilities against the unscaled
    exact recursion over every output block of length ``n_marginal`` and
    every (input, output) block pair of length ``n_joint``, and the
    block leakage of the forward enumeration against the recursion-free
    path walker.
    """
    import itertools

    import numpy as np

    from . import kernels as _kernels
    from .model import build_binary_eh_policy

    spec = SystemSpec(max_load=1, max_harvest=1, max_output=1, capacity=1,
                      load_prob=0.5, harvest_prob=0.5)
    policy = build_binary_eh_policy(BinaryEHParams(0.3, 0.6, 0.7))
    cp = _kernels.compile_policy(spec, policy)

    rows = []
    tol = 1e-9

    delta = 0.0
    for y_seq in itertools.product(range(2), repeat=n_marginal):
        exact = trellis.exact_sequence_logprob(y_seq, spec, policy, compiled=cp)
        obs = np.asarray(y_seq, dtype=np.int8)
        scaled, fail = _kernels.forward_single(obs, cp.marginal_kernel)
        if fail >= 0:
            raise ZeroProbabilityError(int(fail))
        delta = max(delta, float(abs(exact - scaled)))
    rows.append({"check": f"marginal_logprob_n{n_marginal}", "max_delta": delta,
                 "tolerance": tol, "ok": delta < tol})

    joint_kernels = cp.joint_kernel.reshape(-1, cp.n_states, cp.n_states)
    delta = 0.0
    for x_seq in itertools.product(range(2), repeat=n_joint):
        for y_seq in itertools.product(range(2), repeat=n_joint):
            exact = trellis.exact_joint_logprob(x_seq, y_seq, spec, policy, compiled=cp)
            if exact == float("-inf"):
                continue
            obs = np.asarray(
                [x * 2 + y for x, y in zip(x_seq, y_seq)], dtype=np.int8
            )
            scaled, fail = _kernels.forward_single(obs, joint_kernels)
            if fail >= 0:
                continue
            delta = max(delta, float(abs(exact - scaled)))
    rows.append({"check": f"joint_logprob_n{n_joint}", "max_delta": delta,
                 "tolerance": tol, "ok": delta < tol})

    recursion = trellis.exact_block_leakage(spec, policy, n_joint)
    pathwalk = trellis.brute_block_leakage(spec, policy, n_joint)
    delta = float(abs(recursion - pathwalk))
    rows.append({"check": f"block_leakage_n{n_joint}", "max_delta": delta,
                 "tolerance": tol, "ok": delta < tol})
    return rows


def run_oracle_check(config: ExperimentConfig, out: Path, seeds_log: dict) -> list[Path]:
    rows = oracle_check_report()
    table = out / "results.csv"
    write_table(table, rows, columns=("check", "max_delta", "tolerance", "ok"))
    if not all(r["ok"] for r in rows):
        bad = [r["check"] for r in rows if not r["ok"]]
        raise ConvergenceError(
            f"oracle checks failed: {bad}", iterations=0,
            residual=max(r["max_delta"] for r in rows),
        )
    return [table]


RUNNERS = {
    "leakage": run_leakage,
    "pareto": run_pareto,
    "sweep-pz": run_sweep_pz,
    "sweep-k": run_sweep_k,
    "waste": run_waste,
    "oracle-check": run_oracle_check,
}


def run(config: ExperimentConfig) -> int:
    """Execute one experiment; returns a process exit code."""
    start = time.perf_counter()
    try:
        config.validate()
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        seeds_log: dict = {}
        outputs = RUNNERS[config.kind](config, out, seeds_log)
        manifest = {
            "version": __version__,
            "config": config.to_dict(),
            "master_seed": config.seed,
            "derived_seeds": seeds_log,
            "outputs": [str(p) for p in outputs],
            "wall_time_s": time.perf_counter() - start,
        }
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except (ConfigError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, ZeroProbabilityError, EvaluationError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v != "")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v != "")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meterpriv",
        description="Privacy/efficiency laboratory for battery-shaped meter loads",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", help="JSON config or manifest to start from")
        p.add_argument("--px", type=float, help="input load probability Pr{X=1}")
        p.add_argument("--pz", type=float, help="harvest probability Pr{Z=1}")
        p.add_argument("--K", type=int, help="battery capacity in energy units")
        p.add_argument("--n", type=int, help="trajectory length per evaluation")
        p.add_argument("--step", type=float, help="parameter grid increment")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--replicates", type=int, help="seeds per policy")
        p.add_argument("--workers", type=int, help="parallel evaluation processes")
        p.add_argument("--waste", action="store_const", const=True, default=None,
                       help="allow discarding grid energy (waste mode)")
        p.add_argument("--pw", type=float, help="grid-waste probability for single runs")
        p.add_argument("--pw-grid", dest="pw_grid", type=_float_list,
                       help="comma-separated waste probabilities for the waste sweep")
        p.add_argument("--pz-grid", dest="pz_grid", type=_float_list,
                       help="comma-separated harvest rates for sweep-pz")
        p.add_argument("--k-grid", dest="k_grid", type=_int_list,
                       help="comma-separated capacities for sweep-k / waste")
        p.add_argument("--family", choices=FAMILIES, help="policy family")
        p.add_argument("--params", type=_float_list,
                       help="comma-separated free policy parameters")
        p.add_argument("--out", help="output directory")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    flag_values = {
        name: getattr(args, name)
        for name in CONFIG_FIELDS
        if name != "kind" and hasattr(args, name)
    }
    try:
        file_values = load_config_file(args.config) if args.config else {}
        config = parse_config(args.kind, file_values, flag_values)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
