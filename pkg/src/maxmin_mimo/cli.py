"""Command-line interface: configuration, experiment dispatch, serialization.

Subcommands:
    sweep-snr       min-rate vs. rho_dl = rho_tr (dB grid)
    sweep-antennas  min-rate vs. N
    validate        run the built-in oracle/property battery
    golden          print the analytic single-link equilibrium values

Results go to --out (or $MAXMIN_MIMO_OUT, default ./results): a long-format
CSV for plotting plus a JSON sidecar with the resolved manifest and the
per-user SINR arrays.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .config import CONFIG_FIELD_NAMES, SystemConfig, db_to_linear
from .errors import (ConfigurationError, ConvergenceError, FeasibilityError,
                     MimoError)
from .sim import ALL_SCHEMES, ExperimentResult, SchemeId, run_experiment

OUT_DIR_ENV = "MAXMIN_MIMO_OUT"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NONCONVERGED = 4

DEFAULT_SNR_GRID_DB = (0.0, 4.0, 8.0, 12.0, 16.0, 20.0)
DEFAULT_ANTENNA_GRID = (40, 60, 80, 100)
DEFAULT_DROPS = 20

# [system] keys: SystemConfig fields, with the SNRs replaced by dB values
_SYSTEM_KEYS = tuple(k for k in CONFIG_FIELD_NAMES if k not in ("rho_dl", "rho_tr")) \
    + ("rho_dl_db", "rho_tr_db")
_SWEEP_KEYS = ("snr_db", "antennas")
_RUN_KEYS = ("drops", "schemes", "out_dir", "workers")

CSV_COLUMNS = ("scheme", "sweep_name", "sweep_value", "min_rate_bits",
               "n_drops", "mc_trials", "failed")


@dataclass(frozen=True)
class RunManifest:
    """Fully resolved run description, serialized alongside the results."""

    config: SystemConfig
    sweep_name: str
    sweep_values: tuple
    schemes: tuple
    n_drops: int
    out_dir: str
    workers: int
    tool_version: str
    timestamp: str

    @property
    def master_seed(self) -> int:
        return self.config.seed

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["config"] = dataclasses.asdict(self.config)
        d["sweep_values"] = list(self.sweep_values)
        d["schemes"] = list(self.schemes)
        d["master_seed"] = self.master_seed
        return d


def manifest_from_dict(data: dict) -> RunManifest:
    cfg = SystemConfig(**data["config"])
    return RunManifest(
        config=cfg, sweep_name=data["sweep_name"],
        sweep_values=tuple(data["sweep_values"]),
        schemes=tuple(data["schemes"]), n_drops=int(data["n_drops"]),
        out_dir=data["out_dir"], workers=int(data["workers"]),
        tool_version=data["tool_version"], timestamp=data["timestamp"])


def _load_toml(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid TOML: {exc}")


def parse_config(sweep_name: str, config_path: str | None = None,
                 overrides: dict | None = None) -> RunManifest:
    """Resolve defaults, the config file and flag overrides into a manifest.

    Every unknown section or key is rejected; all violations are reported
    together. A file declaring both sweep grids is rejected as conflicting.
    """
    overrides = overrides or {}
    violations = []
    file_data = _load_toml(config_path) if config_path else {}

    known_sections = {"system": _SYSTEM_KEYS, "sweep": _SWEEP_KEYS,
                      "run": _RUN_KEYS}
    for section, content in file_data.items():
        if section not in known_sections:
            violations.append(f"unknown config section [{section}]")
            continue
        if not isinstance(content, dict):
            violations.append(f"[{section}] must be a table")
            continue
        for key in content:
            if key not in known_sections[section]:
                violations.append(f"unknown key {key!r} in section [{section}]")

    system = dict(file_data.get("system", {}))
    sweep = dict(file_data.get("sweep", {}))
    run = dict(file_data.get("run", {}))

    if "snr_db" in sweep and "antennas" in sweep:
        violations.append(
            "conflicting sweep specs: give either sweep.snr_db or "
            "sweep.antennas, not both")

    cfg_kwargs = {}
    for key, value in system.items():
        if key == "rho_dl_db":
            cfg_kwargs["rho_dl"] = db_to_linear(float(value))
        elif key == "rho_tr_db":
            cfg_kwargs["rho_tr"] = db_to_linear(float(value))
        elif key in CONFIG_FIELD_NAMES:
            cfg_kwargs[key] = value
    if "seed" in overrides and overrides["seed"] is not None:
        cfg_kwargs["seed"] = int(overrides["seed"])
    if "trials" in overrides and overrides["trials"] is not None:
        cfg_kwargs["mc_trials"] = int(overrides["trials"])

    config = None
    try:
        config = SystemConfig(**cfg_kwargs)
    except ConfigurationError as exc:
        violations.extend(exc.violations)
    except TypeError as exc:
        violations.append(str(exc))

    if sweep_name == "rho_db":
        values = tuple(float(v) for v in sweep.get("snr_db", DEFAULT_SNR_GRID_DB))
    else:
        values = tuple(int(v) for v in sweep.get("antennas", DEFAULT_ANTENNA_GRID))
    if len(values) == 0:
        violations.append("sweep grid must not be empty")

    scheme_names = overrides.get("schemes") or run.get("schemes") \
        or [s.value for s in ALL_SCHEMES]
    schemes = []
    for name in scheme_names:
        try:
            schemes.append(SchemeId(name).value)
        except ValueError:
            valid = ", ".join(s.value for s in ALL_SCHEMES)
            violations.append(f"unknown scheme {name!r} (valid: {valid})")

    n_drops = overrides["drops"] if overrides.get("drops") is not None \
        else run.get("drops", DEFAULT_DROPS)
    if not isinstance(n_drops, int) or n_drops < 1:
        violations.append(f"drops must be a positive integer, got {n_drops!r}")

    workers = run.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        violations.append(f"workers must be a positive integer, got {workers!r}")
    if overrides.get("workers"):
        workers = int(overrides["workers"])

    out_dir = overrides.get("out") or run.get("out_dir") \
        or os.environ.get(OUT_DIR_ENV) or "results"

    if violations:
        raise ConfigurationError(violations)

    return RunManifest(
        config=config, sweep_name=sweep_name, sweep_values=values,
        schemes=tuple(schemes), n_drops=int(n_drops), out_dir=str(out_dir),
        workers=int(workers), tool_version=__version__,
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"))


def render_csv(result: ExperimentResult) -> str:
    """Long-format CSV, stable row and column order, LF line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for point in result.points:
        rate = "" if point.min_rate is None else f"{point.min_rate:.12g}"
        writer.writerow([point.scheme, result.sweep_name,
                         f"{point.sweep_value:.12g}", rate,
                         result.n_drops, result.mc_trials,
                         "true" if point.failed else "false"])
    return buf.getvalue()


def emit_results(result: ExperimentResult, manifest: RunManifest,
                 out_dir: str | None = None):
    """Write results.csv and results.json; returns both paths."""
    directory = Path(out_dir or manifest.out_dir)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / "results.csv"
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(render_csv(result))
        sidecar = {
            "manifest": manifest.to_dict(),
            "wall_time_s": result.wall_time_s,
            "points": [
                {
                    "scheme": p.scheme,
                    "sweep_name": result.sweep_name,
                    "sweep_value": p.sweep_value,
                    "min_rate_bits": p.min_rate,
                    "failed": p.failed,
                    "error": p.error,
                    "per_drop_min_rate": p.per_drop_min_rate,
                    "per_ut_sinr": p.per_ut_sinr,
                }
                for p in result.points
            ],
        }
        json_path = directory / "results.json"
        with open(json_path, "w", encoding="utf-8", newline="") as fh:
            json.dump(sidecar, fh, indent=1)
            fh.write("\n")
    except OSError as exc:
        raise MimoError(f"could not write results under {directory}: {exc}")
    return csv_path, json_path


# ---------------------------------------------------------------------------
# golden / validate subcommands
# ---------------------------------------------------------------------------

def golden_values() -> dict:
    """Analytic single-link equilibrium (one cell, one user, one antenna,
    unit covariance, no estimation error, unit power).

    delta solves delta^2 + delta - 1 = 0; the remaining quantities follow
    in closed form: T = delta, F = delta^2/(1+delta)^2, f = delta^2,
    epsilon = 1/sqrt(5), xi_bar = 2/(5 + 3 sqrt(5)).
    """
    delta = (math.sqrt(5.0) - 1.0) / 2.0
    return {
        "delta": delta,
        "T": (1.0 + delta) / (2.0 + delta),
        "xi_bar": 2.0 / (5.0 + 3.0 * math.sqrt(5.0)),
        "F": delta ** 2 / (1.0 + delta) ** 2,
        "f": delta ** 2,
        "epsilon": 1.0 / math.sqrt(5.0),
    }


def computed_golden_values() -> dict:
    """Same quantities computed by the production solvers at N=1."""
    from . import rmt

    psi = np.ones((1, 1, 1, 1), dtype=np.complex128)
    delta_err = np.zeros_like(psi)
    p = np.ones((1, 1))
    delta, T, _, _ = rmt.solve_fixed_point(psi, delta_err, p, tolerance=1e-14)
    _, T_tilde, epsilon, F, f = rmt.second_order(delta, T, psi, p, 0, 0)
    xi_bar = float((T_tilde[0, 0] / (1.0 + delta[0, 0]) ** 2).real)
    return {"delta": float(delta[0, 0]), "T": float(T[0, 0].real),
            "xi_bar": xi_bar, "F": float(F[0, 0]), "f": float(f[0]),
            "epsilon": float(epsilon[0])}


def _cmd_golden(_args) -> int:
    analytic = golden_values()
    numeric = computed_golden_values()
    print("analytic single-link equilibrium (L=K=N=1, Psi=1, Delta=0, p=1):")
    print(f"  delta   = (sqrt(5)-1)/2       = {analytic['delta']:.12f}")
    print(f"  T       = (1+delta)/(2+delta) = {analytic['T']:.12f}")
    print(f"  xi_bar  = 2/(5+3 sqrt(5))     = {analytic['xi_bar']:.12f}")
    print(f"  F       = delta^2/(1+delta)^2 = {analytic['F']:.12f}")
    print(f"  f       = delta^2             = {analytic['f']:.12f}")
    print(f"  epsilon = 1/sqrt(5)           = {analytic['epsilon']:.12f}")
    print("computed by the fixed-point and second-order solvers:")
    for key in ("delta", "T", "xi_bar", "F", "f", "epsilon"):
        print(f"  {key:7s} = {numeric[key]:.12f}")
    worst = max(abs(numeric[k] - analytic[k]) for k in analytic)
    print(f"max |computed - analytic| = {worst:.3e}")
    return EXIT_OK if worst <= 1e-8 else EXIT_ERROR


def _cmd_validate(_args) -> int:
    from .validation import run_validation

    failures = run_validation(print_fn=print)
    return EXIT_OK if failures == 0 else EXIT_ERROR


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _add_common_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--drops", type=int, help="user drops per sweep point")
    parser.add_argument("--trials", type=int,
                        help="Monte-Carlo trials per expectation")
    parser.add_argument("--schemes",
                        help="comma-separated scheme list (default: all four)")
    parser.add_argument("--out", help=f"output directory (or ${OUT_DIR_ENV})")
    parser.add_argument("--workers", type=int,
                        help="parallel drop workers (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maxmin-mimo",
        description="Max-min multi-cell aware RZF precoding simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("sweep-snr", "minimum rate vs. DL/training SNR in dB"),
            ("sweep-antennas", "minimum rate vs. number of BS antennas")):
        p = sub.add_parser(name, help=help_text)
        _add_common_flags(p)
    sub.add_parser("validate", help="run the oracle/property battery")
    sub.add_parser("golden", help="print analytic equilibrium golden values")
    return parser


def _cmd_sweep(args, sweep_name: str) -> int:
    overrides = {
        "seed": args.seed, "drops": args.drops, "trials": args.trials,
        "out": args.out, "workers": args.workers,
        "schemes": args.schemes.split(",") if args.schemes else None,
    }
    manifest = parse_config(sweep_name, args.config, overrides)
    result = run_experiment(
        manifest.config, manifest.sweep_name, manifest.sweep_values,
        schemes=manifest.schemes, n_drops=manifest.n_drops,
        workers=manifest.workers)
    csv_path, json_path = emit_results(result, manifest)
    print(f"wrote {csv_path} and {json_path} "
          f"({result.wall_time_s:.1f} s)")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "sweep-snr":
            return _cmd_sweep(args, "rho_db")
        if args.command == "sweep-antennas":
            return _cmd_sweep(args, "antennas")
        if args.command == "validate":
            return _cmd_validate(args)
        if args.command == "golden":
            return _cmd_golden(args)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigurationError as exc:
        for violation in exc.violations:
            print(f"config error: {violation}", file=sys.stderr)
        return EXIT_CONFIG
    except FeasibilityError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except MimoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
