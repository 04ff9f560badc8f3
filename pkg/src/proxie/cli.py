"""Command-line entry point: ``proxie simulate|estimate|benchmark|diagnose``.

Exit codes: 0 success, 1 configuration or schema error, 2 every requested
estimator failed, 3 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from .benchmark import EstimatorSpec, run_benchmark
from .datamodel import ColumnRoles, read_csv, write_csv
from .diagnostics import dimensionality_screen, proxy_checks
from .dgm import dgm_from_dict, roles_for, sample, true_ate
from .errors import ConfigurationError, ParseError, ProxieError, SchemaError, ValidationError

EXIT_OK, EXIT_CONFIG, EXIT_ALL_FAILED, EXIT_IO = 0, 1, 2, 3


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _threads(args, cfg) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("PROXIE_THREADS")
    if env:
        try:
            k = int(env)
        except ValueError:
            raise ConfigurationError(f"PROXIE_THREADS must be a positive integer, got {env!r}") from None
        if k < 1:
            raise ConfigurationError("PROXIE_THREADS must be a positive integer")
        return k
    return cfg["benchmark"]["parallelism"]


def _out_dir(args, cfg) -> Path:
    out = Path(args.out if args.out is not None else cfg["output"]["dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_data(cfg):
    """Observed dataset plus the simulation seed (``None`` for CSV input)."""
    if "input" in cfg:
        roles = ColumnRoles.from_dict(cfg["input"]["roles"])
        return read_csv(cfg["input"]["csv"], roles).observed(), None
    spec = dgm_from_dict(cfg["dgm"])
    sim = cfg["simulate"]
    return sample(spec, sim["n"], sim["seed"]).observed(), sim["seed"]


def cmd_simulate(cfg, out: Path) -> int:
    if "dgm" not in cfg:
        raise SchemaError("$.dgm: simulate requires a dgm block", path="$.dgm")
    spec = dgm_from_dict(cfg["dgm"])
    sim = cfg["simulate"]
    data = sample(spec, sim["n"], sim["seed"])
    path = out / "simulated.csv"
    write_csv(data, path, include_hidden=sim["include_hidden"])
    truth = true_ate(spec)
    (out / "truth.json").write_text(json.dumps({
        "true_ate": truth.true_ate,
        "mc_se": truth.mc_se,
        "method": truth.method,
        "assumption_flags": truth.assumption_flags,
        "config": cfg,
    }, indent=2) + "\n")
    flags = " ".join(f"{k}={v}" for k, v in truth.assumption_flags.items())
    print(f"wrote {data.n} rows to {path}")
    print(f"true_ate={truth.true_ate!r} method={truth.method} mc_se={truth.mc_se!r}")
    print(f"assumptions: {flags}")
    return EXIT_OK


RESULT_COLUMNS = ["estimator", "ate_hat", "se", "ci_low", "ci_high", "converged", "n", "seed", "error"]


def cmd_estimate(cfg, out: Path) -> int:
    data, seed = _load_data(cfg)
    specs = [EstimatorSpec.from_dict(e) for e in cfg["estimators"]]
    rows, failures = [], 0
    for spec in specs:
        try:
            res = spec.run(data)
        except (ProxieError, np.linalg.LinAlgError, ValueError) as exc:
            failures += 1
            rows.append([spec.label, "", "", "", "", "0", data.n, _fmt(seed),
                         f"{type(exc).__name__}: {exc}"])
            continue
        rows.append([spec.label, _fmt(res.ate_hat), _fmt(res.se), _fmt(res.ci_low),
                     _fmt(res.ci_high), str(int(res.converged)), data.n, _fmt(seed), ""])
    path = out / "estimates.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        w.writerows(rows)
    for row in rows:
        status = row[8] or f"ate_hat={row[1]} se={row[2]} converged={row[5]}"
        print(f"{row[0]}: {status}")
    return EXIT_ALL_FAILED if failures == len(specs) else EXIT_OK


def cmd_benchmark(cfg, out: Path, threads: int) -> int:
    if "dgm" not in cfg:
        raise SchemaError("$.dgm: benchmark requires a dgm block", path="$.dgm")
    spec = dgm_from_dict(cfg["dgm"])
    bench = cfg["benchmark"]
    specs = [EstimatorSpec.from_dict(e) for e in cfg["estimators"]]
    result = run_benchmark(spec, specs, bench["n"], bench["replications"], bench["seed"], threads)
    # the parallelism degree must not leak into the (deterministic) outputs
    recorded = copy.deepcopy(cfg)
    recorded["benchmark"].pop("parallelism", None)
    header = json.dumps(recorded, sort_keys=True)
    (out / "benchmark_table.csv").write_text(result.table_csv())
    (out / "benchmark_replications.csv").write_text(result.replications_csv())
    text = f"# config: {header}\n" + result.text()
    (out / "benchmark_summary.txt").write_text(text)
    (out / "resolved_config.json").write_text(json.dumps(recorded, indent=2, sort_keys=True) + "\n")
    print(text, end="")
    return EXIT_OK


def cmd_diagnose(cfg, out: Path) -> int:
    data, _ = _load_data(cfg)
    report = proxy_checks(data)
    screen = dimensionality_screen(data.roles, cfg["diagnostics"]["declared_u_dim"])
    text = report.to_text() + "\n" + screen.to_text()
    (out / "diagnostics.txt").write_text(text)
    (out / "diagnostics.csv").write_text(report.to_csv())
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proxie", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("simulate", "draw a dataset from a simulation model"),
        ("estimate", "run estimators on one dataset"),
        ("benchmark", "replicated simulation study with bias and coverage tables"),
        ("diagnose", "proxy association checks and dimensionality screen"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (default: output.dir or .)")
        p.add_argument("--threads", type=int, help="worker processes (fallback: PROXIE_THREADS)")
        p.add_argument("--seed", type=int, help="override the master seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_mod.load(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigurationError("--seed must be an unsigned 64-bit integer")
            cfg["simulate"]["seed"] = args.seed
            cfg["benchmark"]["seed"] = args.seed
        if args.threads is not None and args.threads < 1:
            raise ConfigurationError("--threads must be at least 1")
        threads = _threads(args, cfg)
        out = _out_dir(args, cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, out)
        if args.command == "estimate":
            return cmd_estimate(cfg, out)
        if args.command == "benchmark":
            return cmd_benchmark(cfg, out, threads)
        return cmd_diagnose(cfg, out)
    except OSError as exc:
        print(f"proxie: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SchemaError, ConfigurationError, ParseError, ValidationError) as exc:
        print(f"proxie: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProxieError as exc:
        print(f"proxie: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
