"""Batch command-line interface.

Subcommands: simulate, fit, test, evaluate, mc-table.  Every command
validates its configuration up front, writes its numeric outputs plus a
manifest.json (config echo, seed, version, input checksums) into the
output directory, and reports failures as a machine-readable JSON line on
stdout.  Exit codes: 0 success, 1 numeric/model failure, 2 config/IO
failure.  All randomness flows from the --seed flag.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time

from . import __version__
from ._validation import check_level
from .errors import ConfigError, DataError, NumericError
from .estimator import (first_stage, fit_factors, fit_to_dict, select_k_ratio,
                        select_k_threshold)
from .evaluation import (arbitrage_portfolio, mve_portfolio, oos_factor_fit,
                         oos_predict, r2_insample)
from .inference import alpha_test, coefficient_test, linearity_test
from .montecarlo import (DgpParams, derive_seed, kselect_experiment,
                         mse_experiment, rejection_experiment, simulate)
from .panel import filter_min_cross_section, load_csv, rank_transform, save_csv
from .sieve import SieveSpec, linear_spec

_CELL_KEY = 9  # spawn_key tag for per-cell seeds in mc-table


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _manifest(out_dir: str, command: str, config: dict, seed, inputs, outputs,
              started: float, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": sorted(outputs),
        "wall_time_s": round(time.time() - started, 3),
    }
    if extra:
        manifest.update(extra)
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"input file not found: {path}")
    return path


def _load_json_arg(arg: str, what: str) -> dict:
    if arg.lstrip().startswith("{"):
        try:
            return json.loads(arg)
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid inline JSON for {what}: {err}") from None
    with open(_require_file(arg)) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid JSON in {arg}: {err}") from None


def _load_panel(args):
    path = _require_file(args.input)
    schema = _load_json_arg(args.schema, "schema") if args.schema else None
    panel = load_csv(path, schema)
    if getattr(args, "min_assets", None):
        panel = filter_min_cross_section(panel, args.min_assets)
    if getattr(args, "rank_transform", False):
        panel = rank_transform(panel)
    return panel, path


def _load_spec(args, panel) -> SieveSpec:
    if args.spec is None:
        return linear_spec(panel.n_chars)
    return SieveSpec.from_dict(_load_json_arg(args.spec, "spec"))


def _resolve_k(k_arg: str, managed) -> tuple[int, str]:
    if k_arg.startswith("auto:"):
        mode = k_arg.split(":", 1)[1]
        if mode == "ratio":
            return select_k_ratio(managed), k_arg
        if mode == "threshold":
            k = select_k_threshold(managed)
            if k == 0:
                raise NumericError("threshold selector found no factors")
            return k, k_arg
        raise ConfigError(f"unknown selector {k_arg!r}; use auto:ratio or auto:threshold")
    try:
        k = int(k_arg)
    except ValueError:
        raise ConfigError(f"--k must be an integer or auto:<selector>, got {k_arg!r}") from None
    return k, "fixed"


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("REGPCA_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"REGPCA_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def cmd_simulate(args) -> int:
    started = time.time()
    params = DgpParams(n=args.n, t=args.t, theta=args.theta, delta=args.delta,
                       rho=args.rho, seed=args.seed)
    draw = simulate(params)
    out = _outdir(args)
    panel_path = os.path.join(out, "panel.csv")
    save_csv(draw.panel, panel_path)
    truth = {
        "params": {"n": params.n, "t": params.t, "theta": params.theta,
                   "delta": params.delta, "rho": params.rho, "seed": params.seed},
        "a_true": draw.a_true.tolist(),
        "b_true": draw.b_true.tolist(),
        "f_true": draw.f_true.tolist(),
    }
    _write_json(os.path.join(out, "truth.json"), truth)
    _manifest(out, "simulate", truth["params"], args.seed, [], ["panel.csv", "truth.json"], started)
    return 0


def cmd_fit(args) -> int:
    started = time.time()
    panel, input_path = _load_panel(args)
    spec = _load_spec(args, panel)
    managed = first_stage(panel, spec)
    k, mode = _resolve_k(args.k, managed)
    fit = fit_factors(managed, k)
    out = _outdir(args)
    _write_json(os.path.join(out, "fit.json"), fit_to_dict(fit))
    _write_csv(os.path.join(out, "eigenvalues.csv"), ["index", "eigenvalue"],
               [(i, float(v)) for i, v in enumerate(fit.eigenvalues)])
    rows = [
        (panel.period_labels[t], j, float(managed.ytilde[j, t]))
        for t in range(managed.n_periods)
        for j in range(managed.total_dim)
    ]
    _write_csv(os.path.join(out, "managed_panel.csv"), ["period", "element", "value"], rows)
    config = {"input": input_path, "spec": spec.to_dict(), "k": args.k,
              "min_assets": args.min_assets, "rank_transform": args.rank_transform}
    _manifest(out, "fit", config, None, [input_path],
              ["fit.json", "eigenvalues.csv", "managed_panel.csv"], started,
              extra={"selected_k": fit.k, "k_mode": mode,
                     "eigengap_warning": fit.eigengap_warning})
    return 0


def cmd_test(args) -> int:
    started = time.time()
    level = check_level(args.level)
    panel, input_path = _load_panel(args)
    spec = _load_spec(args, panel)
    managed = first_stage(panel, spec)
    k, _ = _resolve_k(args.k, managed)
    fit = fit_factors(managed, k)
    if args.which == "alpha":
        report = alpha_test(panel, spec, fit, args.boot, level, args.seed)
    elif args.which == "linearity":
        report = linearity_test(panel, spec, fit, args.boot, level, args.seed)
    else:
        if not args.rows:
            raise ConfigError("coef test requires --rows (comma-separated indices)")
        rows = [int(r) for r in args.rows.split(",")]
        report = coefficient_test(panel, spec, fit, args.target, rows,
                                  args.boot, level, args.seed)
    out = _outdir(args)
    payload = {"test": args.which}
    if args.which == "coef":
        payload.update({"target": args.target, "rows": sorted(set(int(r) for r in args.rows.split(",")))})
    payload.update(report.to_dict())
    _write_json(os.path.join(out, "report.json"), payload)
    verdict = "reject" if report.reject else "fail to reject"
    print(f"{args.which} test: statistic={report.statistic:.6g} "
          f"critical={report.critical_value:.6g} p={report.p_value:.4f} -> {verdict}")
    config = {"input": input_path, "spec": spec.to_dict(), "k": args.k,
              "which": args.which, "boot": args.boot, "level": level}
    _manifest(out, "test", config, args.seed, [input_path], ["report.json"], started)
    return 0


def cmd_evaluate(args) -> int:
    started = time.time()
    panel, input_path = _load_panel(args)
    spec = _load_spec(args, panel)
    managed = first_stage(panel, spec)
    k, _ = _resolve_k(args.k, managed)
    fit = fit_factors(managed, k)
    ppy = args.annualization

    suite = r2_insample(panel, fit)
    oos = oos_predict(panel, spec, k, args.t0)
    factors, oos_f = oos_factor_fit(panel, spec, k, args.t0)
    arb = arbitrage_portfolio(panel, spec, k, args.t0, ppy)
    mve = mve_portfolio(factors, periods_per_year=ppy)

    metrics = dict(suite.as_dict())
    metrics.update({f"oos_{k_}": v for k_, v in oos.as_dict().items()})
    metrics.update({f"oos_factor_{k_}": v for k_, v in oos_f.as_dict().items()})
    metrics.update({
        "arbitrage_ann_mean": arb.ann_mean, "arbitrage_ann_std": arb.ann_std,
        "arbitrage_sharpe": arb.sharpe,
        "mve_ann_mean": mve.ann_mean, "mve_ann_std": mve.ann_std,
        "mve_sharpe": mve.sharpe,
    })

    out = _outdir(args)
    _write_json(os.path.join(out, "metrics.json"), metrics)
    _write_csv(os.path.join(out, "metrics.csv"), ["metric", "value"],
               list(metrics.items()))
    labels = panel.period_labels[args.t0:]
    _write_csv(os.path.join(out, "factors_oos.csv"),
               ["period"] + [f"factor_{j + 1}" for j in range(factors.shape[1])],
               [(labels[i], *map(float, factors[i])) for i in range(factors.shape[0])])
    _write_csv(os.path.join(out, "arbitrage.csv"), ["period", "return"],
               [(labels[i], float(arb.returns[i])) for i in range(arb.returns.size)])
    mve_labels = labels[len(labels) - mve.returns.size:]
    _write_csv(os.path.join(out, "mve.csv"), ["period", "return"],
               [(mve_labels[i], float(mve.returns[i])) for i in range(mve.returns.size)])
    config = {"input": input_path, "spec": spec.to_dict(), "k": args.k,
              "t0": args.t0, "annualization": ppy}
    _manifest(out, "evaluate", config, None, [input_path],
              ["metrics.json", "metrics.csv", "factors_oos.csv", "arbitrage.csv", "mve.csv"],
              started)
    return 0


def _mc_cells(config: dict, root_seed: int) -> list[DgpParams]:
    cells = config.get("cells")
    if not cells:
        raise ConfigError("mc-table config needs a non-empty 'cells' list")
    out = []
    for i, cell in enumerate(cells):
        out.append(DgpParams(
            n=int(cell["n"]), t=int(cell["t"]),
            theta=float(cell.get("theta", config.get("theta", 0.0))),
            delta=float(cell.get("delta", config.get("delta", 0.0))),
            rho=float(cell.get("rho", config.get("rho", 0.0))),
            seed=derive_seed(root_seed, _CELL_KEY, i),
        ))
    return out


def cmd_mc_table(args) -> int:
    started = time.time()
    config = _load_json_arg(args.config, "mc-table config")
    table = args.table
    reps = int(config.get("reps", 500))
    root_seed = int(config["seed"]) if "seed" in config else args.seed
    rep_start = int(config.get("rep_start", 0))
    workers = _threads(args)
    cells = _mc_cells(config, root_seed)

    rows = []
    if table == "mse":
        header = ["n", "t", "theta", "delta", "rho", "reps",
                  "mse_a", "mse_b", "mse_f", "n_failed"]
        for p in cells:
            res = mse_experiment(p, reps, k=int(config.get("k", 2)),
                                 workers=workers, rep_start=rep_start)
            rows.append((p.n, p.t, p.theta, p.delta, p.rho, reps,
                         res.mse_a, res.mse_b, res.mse_f, res.n_failed))
    elif table == "kselect":
        header = ["n", "t", "theta", "delta", "rho", "reps",
                  "rate_ratio", "rate_threshold", "n_failed"]
        for p in cells:
            res = kselect_experiment(p, reps, workers=workers, rep_start=rep_start)
            rows.append((p.n, p.t, p.theta, p.delta, p.rho, reps,
                         res.rate_ratio, res.rate_threshold, res.n_failed))
    elif table in ("alpha", "linearity"):
        n_boot = int(config.get("boot", 499))
        level = check_level(float(config.get("level", 0.05)))
        header = ["n", "t", "theta", "delta", "rho", "reps", "boot", "level",
                  "rejection_rate", "n_failed"]
        for cell in rejection_experiment(cells, table, reps, n_boot, level,
                                         workers=workers, rep_start=rep_start):
            p = cell.params
            rows.append((p.n, p.t, p.theta, p.delta, p.rho, reps, n_boot, level,
                         cell.rate, cell.n_failed))
    else:
        raise ConfigError(f"unknown table {table!r}")

    out = _outdir(args)
    _write_csv(os.path.join(out, "table.csv"), header, rows)
    inputs = [args.config] if not args.config.lstrip().startswith("{") else []
    _manifest(out, f"mc-table:{table}", config, root_seed, inputs, ["table.csv"],
              started, extra={"threads": workers})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="regpca",
        description="Latent factor estimation and inference for characteristic panels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="draw a synthetic panel from the benchmark DGP")
    sim.add_argument("--n", type=int, default=200)
    sim.add_argument("--t", type=int, default=10)
    sim.add_argument("--theta", type=float, default=0.0)
    sim.add_argument("--delta", type=float, default=0.0)
    sim.add_argument("--rho", type=float, default=0.0)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    def panel_flags(p):
        p.add_argument("--input", required=True, help="long-format panel CSV")
        p.add_argument("--schema", default=None, help="column-name mapping (JSON file or inline)")
        p.add_argument("--spec", default=None, help="sieve spec (JSON file or inline); default linear")
        p.add_argument("--k", default="auto:ratio", help="factor count or auto:{ratio|threshold}")
        p.add_argument("--min-assets", type=int, default=None, dest="min_assets")
        p.add_argument("--rank-transform", action="store_true", dest="rank_transform")
        p.add_argument("--out", required=True)

    fit_p = sub.add_parser("fit", help="estimate the factor model from a panel CSV")
    panel_flags(fit_p)
    fit_p.set_defaults(func=cmd_fit)

    test_p = sub.add_parser("test", help="bootstrap tests on a fitted model")
    panel_flags(test_p)
    test_p.add_argument("--which", choices=["alpha", "linearity", "coef"], required=True)
    test_p.add_argument("--target", choices=["alpha", "beta"], default="alpha")
    test_p.add_argument("--rows", default=None, help="comma-separated row indices (coef test)")
    test_p.add_argument("--boot", type=int, default=499)
    test_p.add_argument("--level", type=float, default=0.05)
    test_p.add_argument("--seed", type=int, default=0)
    test_p.set_defaults(func=cmd_test)

    ev = sub.add_parser("evaluate", help="fit metrics and out-of-sample portfolios")
    panel_flags(ev)
    ev.add_argument("--t0", type=int, default=120, help="burn-in periods before evaluation")
    ev.add_argument("--annualization", type=float, default=12.0)
    ev.set_defaults(func=cmd_evaluate)

    mc = sub.add_parser("mc-table", help="run a simulation experiment table")
    mc.add_argument("--table", choices=["mse", "kselect", "alpha", "linearity"], required=True)
    mc.add_argument("--config", required=True, help="experiment config (JSON file or inline)")
    mc.add_argument("--seed", type=int, default=0)
    mc.add_argument("--threads", type=int, default=None)
    mc.add_argument("--out", required=True)
    mc.set_defaults(func=cmd_mc_table)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        return _fail("io", str(err), 2)
    except OSError as err:
        return _fail("io", str(err), 2)
    except ConfigError as err:
        return _fail("config", str(err), 2)
    except DataError as err:
        return _fail("data", str(err), 2)
    except NumericError as err:
        return _fail("numeric", str(err), 1)


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"kind": kind, "message": message}))
    return code


if __name__ == "__main__":
    sys.exit(main())
