"""Command-line front end: ``solve``, ``simulate`` and ``track``.

Exit codes are 0 on success, 2 for user errors (bad flags, unreadable or
malformed input, invalid config) and 3 for internal failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import itertools
import json
import logging
import os
import sys

import numpy as np

from .core import ConstraintSpec, RegressionData, is_feasible
from .dfo import DfoConfig, dfo_solve
from .experiments import SimConfig, run_experiment
from .l1path import forward_stepwise, forward_stepwise_path
from .mio import DEFAULT_TIME_LIMIT, BigM, big_m_from_dfo, branch_and_bound, build_model, export_model
from .ortho import project, solve_orthogonal
from .tracker import (
    ParseError,
    TrackConfig,
    load_dataset,
    parse_drop_rows,
    split_halves,
    track_many,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("sparsum")

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 2, 3
CSV_COLUMNS = ["method", "snr", "s_star", "measure", "mean", "stderr", "reps"]
SWEEP_KEYS = ("snr", "s_star")


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UserError(message)


def read_matrix(path) -> np.ndarray:
    """Header-less, comma-separated, row-major numeric CSV."""
    rows = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise UserError(f"cannot read {path}: {exc.strerror}")
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise UserError(f"{path}: line {lineno}: non-numeric field")
            if rows and len(vals) != len(rows[0]):
                raise UserError(f"{path}: line {lineno}: expected {len(rows[0])} fields, found {len(vals)}")
            if not np.all(np.isfinite(vals)):
                raise UserError(f"{path}: line {lineno}: non-finite value")
            rows.append(vals)
    if not rows:
        raise UserError(f"{path}: no data")
    return np.array(rows)


def read_vector(path) -> np.ndarray:
    arr = read_matrix(path)
    if arr.shape[0] != 1 and arr.shape[1] != 1:
        raise UserError(f"{path}: expected a single row or column, got shape {arr.shape}")
    return arr.ravel()


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if np.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def _emit(payload: dict, out_path: str | None):
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _spec(args) -> ConstraintSpec:
    try:
        spec = ConstraintSpec(args.k, args.s)
    except ValueError as exc:
        raise UserError(str(exc))
    if not args.time_limit > 0:
        raise UserError("--time-limit must be positive")
    if not args.gap > 0:
        raise UserError("--gap must be positive")
    return spec


def cmd_solve(args) -> int:
    spec = _spec(args)
    y = read_vector(args.y)
    if args.method == "ortho":
        if args.x is not None:
            X = read_matrix(args.x)
            if X.shape[0] != y.size:
                raise UserError(f"X has {X.shape[0]} rows but y has {y.size}")
            if not np.allclose(X.T @ X, np.eye(X.shape[1]), atol=1e-8):
                raise UserError("--method ortho needs X'X = I; use dfo or mio otherwise")
            eta = X.T @ y
        else:
            eta = y
        beta, report = solve_orthogonal(eta, spec)
    else:
        if args.x is None:
            raise UserError(f"--method {args.method} needs --x")
        X = read_matrix(args.x)
        try:
            data = RegressionData(X, y)
        except ValueError as exc:
            raise UserError(str(exc))
        if args.init == "fss":
            init = forward_stepwise(data, spec)
        else:
            init = project(np.full(data.m, 1.0 / data.m), spec)
        try:
            dfo_cfg = DfoConfig(epsilon=args.epsilon, max_iterations=args.max_iter)
        except ValueError as exc:
            raise UserError(str(exc))
        beta, report = dfo_solve(data, spec, init, dfo_cfg)
        if args.method == "mio":
            bigm = BigM.natural(spec) if args.safe_bigm else big_m_from_dfo(beta, spec)
            model = build_model(data, spec, bigm)
            if args.export_mio:
                with open(args.export_mio, "w") as fh:
                    fh.write(export_model(model))
            beta, report = branch_and_bound(
                model, data, spec, time_limit=args.time_limit, gap_tol=args.gap, incumbent=beta
            )
    payload = {
        "command": "solve",
        "method": args.method,
        "k": spec.k,
        "s": spec.s,
        "weights": beta,
        "feasible": bool(is_feasible(beta, spec)),
        "report": report.to_dict(),
    }
    _emit(payload, args.out)
    return EXIT_OK


def load_sim_config(path) -> list[SimConfig]:
    """Read a TOML config; ``snr`` and ``s_star`` may be lists (swept)."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise UserError(f"cannot read {path}: {exc.strerror}")
    except tomllib.TOMLDecodeError as exc:
        raise UserError(f"{path}: {exc}")
    raw = raw.get("simulation", raw)
    known = {f.name for f in dataclasses.fields(SimConfig)}
    for key in raw:
        if key not in known:
            raise UserError(f"{path}: unknown config key {key!r}")
    env_seed = os.environ.get("SPARSUM_SEED")
    if env_seed is not None:
        try:
            raw["seed"] = int(env_seed)
        except ValueError:
            raise UserError(f"SPARSUM_SEED must be an integer, got {env_seed!r}")
    sweeps = {}
    for key in SWEEP_KEYS:
        if key in raw:
            value = raw.pop(key)
            sweeps[key] = value if isinstance(value, list) else [value]
    configs = []
    try:
        for combo in itertools.product(*sweeps.values()):
            configs.append(SimConfig(**raw, **dict(zip(sweeps, combo))))
    except (TypeError, ValueError) as exc:
        raise UserError(f"{path}: {exc}")
    return configs


def cmd_simulate(args) -> int:
    configs = load_sim_config(args.config)
    if args.seed is not None:
        configs = [dataclasses.replace(c, seed=args.seed) for c in configs]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    nrows = 0
    for cfg in configs:
        log.info("simulating snr=%s s_star=%s reps=%d", cfg.snr, cfg.s_star, cfg.replications)
        for row in run_experiment(cfg, jobs=args.jobs).summary():
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row.row()])
            nrows += 1
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    summary = {
        "command": "simulate",
        "out": args.out,
        "rows": nrows,
        "configs": [c.metadata() for c in configs],
    }
    if args.out:
        _emit(summary, None)
    return EXIT_OK


def _parse_ks(text: str) -> list[int]:
    try:
        ks = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UserError(f"--k expects a comma-separated integer list, got {text!r}")
    if not ks:
        raise UserError("--k is empty")
    return ks


def cmd_track(args) -> int:
    ks = _parse_ks(args.k)
    _spec(argparse.Namespace(k=1, s=args.s, time_limit=args.time_limit, gap=args.gap))
    try:
        ds = load_dataset(args.data)
    except FileNotFoundError:
        raise UserError(f"data file not found: {args.data}")
    except OSError as exc:
        raise UserError(f"cannot read {args.data}: {exc.strerror}")
    except (ParseError, ValueError) as exc:
        raise UserError(f"{args.data}: {exc}")
    bad = [k for k in ks if not 1 <= k <= ds.m]
    if bad:
        raise UserError(f"k values {bad} outside [1, {ds.m}]")
    try:
        drop = parse_drop_rows(args.drop_outliers) if args.drop_outliers else ()
    except ValueError as exc:
        raise UserError(str(exc))
    cfg = TrackConfig(
        s=args.s,
        time_limit=args.time_limit,
        gap_tol=args.gap,
        safe_bigm=args.safe_bigm,
        split=args.split,
        drop_rows=drop,
    )

    if args.export_mio:
        written = []
        for k in ks:
            path = args.export_mio if len(ks) == 1 else _suffixed(args.export_mio, k)
            with open(path, "w") as fh:
                fh.write(export_model(_tracking_model(ds, k, cfg)))
            written.append(path)
        _emit({"command": "track", "source": ds.source_id, "exported": written}, args.out)
        return EXIT_OK

    results = track_many(ds, ks, cfg, jobs=args.jobs)
    if args.weights_out:
        with open(args.weights_out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            for res in results:
                writer.writerow([res.k] + [repr(float(v)) for v in res.weights])
    payload = {
        "command": "track",
        "source": ds.source_id,
        "s": args.s,
        "results": [r.to_dict() for r in results],
    }
    _emit(payload, args.out)
    return EXIT_OK


def _suffixed(path: str, k: int) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}.k{k}{ext or '.lp'}"


def _tracking_model(ds, k: int, cfg: TrackConfig):
    train, _ = split_halves(ds, cfg.split)
    data = train.regression()
    spec = ConstraintSpec(k, cfg.s)
    if cfg.safe_bigm:
        return build_model(data, spec, BigM.natural(spec))
    init = forward_stepwise_path(data, cfg.s, k)[-1]
    beta, _ = dfo_solve(data, spec, init, cfg.dfo)
    return build_model(data, spec, big_m_from_dfo(beta, spec))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparsum", description="Sparse unit-sum regression solvers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve one instance from CSV files")
    p.add_argument("--x", help="design matrix CSV (omit with --method ortho to pass scores in --y)")
    p.add_argument("--y", required=True, help="response (or score) vector CSV")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--method", choices=["ortho", "dfo", "mio"], default="dfo")
    p.add_argument("--orthogonal", dest="method", action="store_const", const="ortho")
    p.add_argument("--init", choices=["fss", "uniform"], default="fss")
    p.add_argument("--epsilon", type=float, default=DfoConfig.epsilon)
    p.add_argument("--max-iter", type=int, default=DfoConfig.max_iterations)
    p.add_argument("--time-limit", type=float, default=DEFAULT_TIME_LIMIT)
    p.add_argument("--gap", type=float, default=1e-6)
    p.add_argument("--safe-bigm", action="store_true", help="use the natural bounds -s and 1+s")
    p.add_argument("--export-mio", metavar="LP", help="also write the MIO model in LP format")
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="run the simulation study")
    p.add_argument("--config", required=True, help="TOML file with SimConfig keys")
    p.add_argument("--out", help="results CSV (stdout if omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="build index-tracking portfolios")
    p.add_argument("--data", required=True, help="OR-library .txt or returns .csv")
    p.add_argument("--k", required=True, help="comma-separated cardinalities, e.g. 5,15,25,31")
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--time-limit", type=float, default=60.0)
    p.add_argument("--gap", type=float, default=1e-9)
    p.add_argument("--safe-bigm", action="store_true")
    p.add_argument("--split", type=int, help="training rows (default: half)")
    p.add_argument("--drop-outliers", metavar="idx:t1,t2", help="return rows to drop from the test half")
    p.add_argument("--export-mio", metavar="LP", help="write the LP model(s) and stop")
    p.add_argument("--weights-out", help="CSV of weights, one row per k")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="write JSON here instead of stdout")
    p.set_defaults(func=cmd_track)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UserError as exc:
        print(f"sparsum: error: {exc}", file=sys.stderr)
        return EXIT_USER
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("sparsum: error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USER
    try:
        return args.func(args)
    except UserError as exc:
        print(f"sparsum: error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
