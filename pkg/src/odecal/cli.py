"""Command-line orchestration of the two-stage calibration pipeline.

Subcommands
-----------
simulate   Generate a design panel plus noiseless truth samples.
smooth     Stage 1: estimate trajectories/derivatives from a panel CSV.
train      Stage 2: fit the sparse ReLU network to an estimate CSV.
evaluate   Metrics for a trained network against regenerated truth.
benchmark  Monte Carlo sweep over (n, d) or (n, sigma) grids with workers.
covid      Ingest a daily-cases CSV and emit per-state growth curves.

Settings come from an INI config file (sections per module) overridden by
command-line flags.  Every run writes a manifest (config, hash, seeds,
versions) sufficient to reproduce its artifacts byte for byte.  Exit codes:
0 ok, 1 user error, 2 internal error.  The environment variable
``ODECAL_OUTPUT_ROOT`` rebases relative output directories.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import covid as covid_mod
from . import panel_io
from .evaluation import METRIC_GRID_SIZE, metrics
from .network import load_checkpoint, save_checkpoint
from .odesim import InvalidDim, NonFiniteState, make_design1, make_design2
from .pipeline import OdeCalibrator
from .smoother import (BandwidthTooLarge, EmptyCandidateSet,
                       GasserMullerSmoother, TimeSeriesPanel,
                       TrajectoryEstimate)

__all__ = ["main", "run_pipeline", "benchmark_rows", "summarize_rows"]

USER_ERRORS = (
    ValueError, KeyError, FileNotFoundError, NotADirectoryError,
    InvalidDim, BandwidthTooLarge, EmptyCandidateSet,
    panel_io.MalformedRow, covid_mod.MissingState,
)

# Benchmark training defaults per design, sized for desk-scale runtimes:
# design 1 must represent a dense-ish linear map, design 2 needs a tight
# parameter budget so the net smooths rather than interpolates its noisy
# derivative targets.
BENCH_DEFAULTS = {
    1: {"hidden": (48, 48), "epochs": 1500, "sparsity_budget": 600,
        "train_trim": 0.05},
    2: {"hidden": (32, 32), "epochs": 1500, "sparsity_budget": 200,
        "train_trim": 0.05},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; that's a user error
        self.print_usage(sys.stderr)
        raise SystemExit(self._user_exit(message))

    @staticmethod
    def _user_exit(message) -> int:
        print(f"error: {message}", file=sys.stderr)
        return 1


def _out_dir(raw: str) -> Path:
    root = os.environ.get("ODECAL_OUTPUT_ROOT")
    path = Path(raw)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_list(text, cast):
    return [cast(x) for x in str(text).replace(",", " ").split()]


def _load_config(path) -> dict:
    """Flat key-value INI with one section per module."""
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    merged = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            merged[key.replace("-", "_")] = value
    return merged


_INT_KEYS = {"design", "d", "n", "seed", "replications", "workers",
             "grid_size", "moment_order", "epochs", "sparsity_budget",
             "metric_grid"}
_FLOAT_KEYS = {"sigma", "bandwidth", "base_lr", "sup_bound", "train_trim",
               "prune_fraction", "trim"}
_LIST_INT_KEYS = {"n_list", "d_list"}
_LIST_FLOAT_KEYS = {"sigma_list"}


def _coerce(settings: dict) -> dict:
    out = {}
    for key, value in settings.items():
        if value is None:
            continue
        if key in _INT_KEYS:
            out[key] = int(value)
        elif key in _FLOAT_KEYS:
            out[key] = float(value)
        elif key in _LIST_INT_KEYS:
            out[key] = _parse_list(value, int) if not isinstance(value, list) else value
        elif key in _LIST_FLOAT_KEYS:
            out[key] = _parse_list(value, float) if not isinstance(value, list) else value
        elif key == "hidden":
            out[key] = (tuple(_parse_list(value, int))
                        if not isinstance(value, tuple) else value)
        elif key == "states":
            out[key] = ([s.strip() for s in str(value).split(",") if s.strip()]
                        if not isinstance(value, list) else value)
        else:
            out[key] = value
    return out


def _settings(args) -> dict:
    """Config file first, then explicit flags on top."""
    merged = {}
    if getattr(args, "config", None):
        merged.update(_load_config(args.config))
    for key, value in vars(args).items():
        if key in ("config", "mode", "func") or value is None:
            continue
        merged[key] = value
    return _coerce(merged)


def _require(settings, keys, mode):
    missing = [k for k in keys if settings.get(k) is None]
    if missing:
        raise ValueError(
            f"mode '{mode}' needs {', '.join(missing)}; pass them as flags "
            f"or config entries"
        )


def _make_design(settings):
    design = settings.get("design", 1)
    seed = settings.get("seed", 0)
    n = settings.get("n", 100)
    if design == 1:
        d = settings.get("d", 10)
        problem, panel, truth = make_design1(d, n, seed)
        sigma = 1.0
    elif design == 2:
        sigma = settings.get("sigma", 0.5)
        problem, panel, truth = make_design2(n, sigma, seed)
        d = problem.dim
    else:
        raise ValueError(f"unknown design {design}; use 1 or 2")
    return problem, panel, truth, {"design": design, "n": n, "d": d,
                                   "sigma": sigma, "seed": seed}


def _calibrator(settings, design=None) -> OdeCalibrator:
    defaults = dict(BENCH_DEFAULTS.get(design, {}))
    def pick(key, fallback):
        return settings.get(key, defaults.get(key, fallback))
    order = 1 if design == 1 else 2 if design == 2 else settings.get("order", 1)
    return OdeCalibrator(
        order=order,
        moment_order=settings.get("moment_order"),
        bandwidth=settings.get("bandwidth"),
        grid_size=settings.get("grid_size"),
        train_trim=pick("train_trim", 0.0),
        hidden=pick("hidden", (64, 64, 64)),
        epochs=pick("epochs", 2000),
        base_lr=settings.get("base_lr", 1e-2),
        prune_fraction=settings.get("prune_fraction", 0.6),
        sparsity_budget=pick("sparsity_budget", None),
        sup_bound=settings.get("sup_bound"),
        seed=settings.get("seed", 0),
    )


def _truth_samples(truth, grid, order):
    return {kappa: truth.deriv(grid, kappa).T for kappa in range(order + 1)}


# ---------------------------------------------------------------------------
# Modes
# ---------------------------------------------------------------------------

def _mode_simulate(settings):
    out = _out_dir(settings.get("out", "out"))
    problem, panel, truth, meta = _make_design(settings)
    panel_io.write_panel(panel, out / "panel.csv")
    obs_grid = panel.times[0]
    panel_io.write_truth(_truth_samples(truth, obs_grid, problem.order),
                         obs_grid, out / "truth.csv")
    fine = np.linspace(0.0, 1.0, METRIC_GRID_SIZE)
    panel_io.write_truth(_truth_samples(truth, fine, problem.order),
                         fine, out / "truth_fine.csv")
    panel_io.write_manifest(out / "manifest.json",
                            {"mode": "simulate", **meta},
                            seeds=[meta["seed"]])
    print(f"wrote panel.csv, truth.csv, truth_fine.csv to {out}")
    return 0


def _mode_smooth(settings):
    _require(settings, ["panel"], "smooth")
    out = _out_dir(settings.get("out", "out"))
    panel = panel_io.read_panel(settings["panel"])
    order = settings.get("order", 1)
    grid_size = settings.get("grid_size") or max(200, max(panel.sizes))
    trim = settings.get("train_trim", 0.0)
    grid = np.linspace(trim, 1.0 - trim, grid_size)
    smoother = GasserMullerSmoother(
        max_deriv=order,
        moment_order=settings.get("moment_order"),
        bandwidth=settings.get("bandwidth"),
    ).fit(panel)
    est = smoother.transform(grid)
    samples = {0: est.values, **est.derivs}
    panel_io.write_truth(samples, grid, out / "estimate.csv")
    panel_io.write_manifest(
        out / "manifest.json",
        {"mode": "smooth", "order": order, "grid_size": grid_size,
         "train_trim": trim,
         "bandwidths": [float(h) for h in smoother.bandwidths_]},
        seeds=[])
    print(f"wrote estimate.csv to {out} "
          f"(bandwidths {np.round(smoother.bandwidths_, 4)})")
    return 0


def _read_estimate(path) -> TrajectoryEstimate:
    samples, grid = panel_io.read_truth(path)
    order = max(samples)
    return TrajectoryEstimate(grid=grid, values=samples[0],
                              derivs={k: samples[k] for k in range(1, order + 1)})


def _mode_train(settings):
    _require(settings, ["estimate"], "train")
    out = _out_dir(settings.get("out", "out"))
    est = _read_estimate(settings["estimate"])
    from .network import ClassSpec, TrainConfig, train as train_net

    inputs, targets = est.design_matrix(), est.response()
    budget = settings.get("sparsity_budget")
    if budget is None:
        spec = ClassSpec("F1")
    else:
        sup = settings.get("sup_bound")
        if sup is None:
            sup = 2.0 * float(np.max(np.abs(targets))) + 1e-12
        spec = ClassSpec("F2", sparsity_budget=budget, sup_bound=sup)
    cfg = TrainConfig(hidden=settings.get("hidden", (64, 64, 64)),
                      epochs=settings.get("epochs", 2000),
                      base_lr=settings.get("base_lr", 1e-2),
                      prune_fraction=settings.get("prune_fraction", 0.6),
                      seed=settings.get("seed", 0))
    net = train_net(inputs, targets, spec, cfg, grid=est.grid)
    save_checkpoint(net, out / "network.json", seed=cfg.seed)
    panel_io.write_manifest(
        out / "manifest.json",
        {"mode": "train", "hidden": list(cfg.hidden), "epochs": cfg.epochs,
         "base_lr": cfg.base_lr, "sparsity_budget": budget,
         "sup_bound": spec.sup_bound, "final_loss": net.final_loss},
        seeds=[cfg.seed])
    print(f"wrote network.json to {out} (final loss {net.final_loss:.6g})")
    return 0


def _mode_evaluate(settings):
    _require(settings, ["checkpoint", "estimate"], "evaluate")
    out = _out_dir(settings.get("out", "out"))
    net = load_checkpoint(settings["checkpoint"])
    est = _read_estimate(settings["estimate"])
    problem, _, truth, meta = _make_design(settings)
    report = metrics(lambda z: net.forward(z), problem.rhs, truth, est,
                     trim=settings.get("trim", 0.0))
    row = {**meta, **report.as_dict()}
    panel_io.write_report([row], out / "report.csv")
    panel_io.write_manifest(out / "manifest.json",
                            {"mode": "evaluate", **meta,
                             "trim": report.trim,
                             "grid_size": report.grid_size},
                            seeds=[meta["seed"]])
    print(f"M1={report.m1:.4f} M2={report.m2:.4f} "
          f"M3={report.m3:.4f} M4={report.m4:.4f} -> {out}/report.csv")
    return 0


def _bench_one(task):
    """One replication: simulate, calibrate, score.  Runs in a worker."""
    design, n, d, sigma, seed, overrides = task
    settings = {**overrides, "design": design, "n": n, "d": d,
                "sigma": sigma, "seed": seed}
    problem, panel, truth, meta = _make_design(settings)
    calib = _calibrator(settings, design=design).fit(panel)
    fine = np.linspace(0.0, 1.0, settings.get("metric_grid", METRIC_GRID_SIZE))
    est = calib.estimate_on(fine)
    report = metrics(calib.predict, problem.rhs, truth, est)
    audit = {
        "nonzeros": calib.network_.num_nonzero(),
        "box_ok": all(calib.network_.layer_bound(l) <= 1.0
                      for l in range(len(calib.network_.weights))),
        "budget": calib.class_spec_.sparsity_budget,
    }
    return {**meta, **report.as_dict()}, audit


def benchmark_rows(design, n_list, d_list=None, sigma_list=None,
                   replications=20, base_seed=0, workers=1, overrides=None):
    """Metric rows for the full (grid x replication) sweep, audited.

    Every F2 fit is audited in-process: the nonzero count must respect the
    sparsity budget and the F1 box must hold exactly.
    """
    overrides = overrides or {}
    if design == 1:
        cells = [(n, d, 1.0) for n in n_list for d in (d_list or [10])]
    else:
        cells = [(n, 8, s) for n in n_list for s in (sigma_list or [0.5])]
    tasks = []
    for n, d, sigma in cells:
        for rep in range(replications):
            tasks.append((design, n, d, sigma, base_seed + rep, overrides))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_bench_one, tasks))
    else:
        results = [_bench_one(t) for t in tasks]
    rows = []
    for (row, audit), task in zip(results, tasks):
        if audit["budget"] is not None and audit["nonzeros"] > audit["budget"]:
            raise RuntimeError(
                f"class audit failed: {audit['nonzeros']} nonzeros exceed "
                f"budget {audit['budget']} for task {task[:5]}"
            )
        if not audit["box_ok"]:
            raise RuntimeError(f"class audit failed: F1 box violated for {task[:5]}")
        rows.append(row)
    rows.sort(key=lambda r: (r["design"], r["n"], r["d"], r["sigma"], r["seed"]))
    return rows


def summarize_rows(rows):
    """Mean and median of each metric per (design, n, d, sigma) cell."""
    cells = {}
    for row in rows:
        key = (row["design"], row["n"], row["d"], row["sigma"])
        cells.setdefault(key, []).append([row[m] for m in ("M1", "M2", "M3", "M4")])
    summary = []
    for key in sorted(cells):
        arr = np.asarray(cells[key])
        for stat, vals in (("mean", arr.mean(axis=0)),
                           ("median", np.median(arr, axis=0))):
            summary.append({
                "design": key[0], "n": key[1], "d": key[2], "sigma": key[3],
                "stat": stat,
                **{m: float(v) for m, v in zip(("M1", "M2", "M3", "M4"), vals)},
            })
    return summary


def _mode_benchmark(settings):
    out = _out_dir(settings.get("out", "out"))
    design = settings.get("design", 1)
    n_list = settings.get("n_list", [100, 200, 500])
    d_list = settings.get("d_list", [settings.get("d", 10)])
    sigma_list = settings.get("sigma_list", [settings.get("sigma", 0.5)])
    reps = settings.get("replications", 20)
    workers = settings.get("workers", 1)
    overrides = {k: settings[k] for k in
                 ("hidden", "epochs", "base_lr", "sparsity_budget", "sup_bound",
                  "train_trim", "moment_order", "bandwidth", "grid_size",
                  "metric_grid", "prune_fraction")
                 if k in settings}
    rows = benchmark_rows(design, n_list, d_list=d_list, sigma_list=sigma_list,
                          replications=reps, base_seed=settings.get("seed", 0),
                          workers=workers, overrides=overrides)
    panel_io.write_report(rows, out / "report.csv")
    summary = summarize_rows(rows)
    with open(out / "summary.csv", "w", newline="") as fh:
        fields = ["design", "n", "d", "sigma", "stat", "M1", "M2", "M3", "M4"]
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in summary:
            w.writerow({k: (repr(row[k]) if isinstance(row[k], float) else row[k])
                        for k in fields})
    panel_io.write_manifest(
        out / "manifest.json",
        {"mode": "benchmark", "design": design, "n_list": n_list,
         "d_list": d_list, "sigma_list": sigma_list,
         "replications": reps, **{k: str(v) for k, v in overrides.items()}},
        seeds=[settings.get("seed", 0) + r for r in range(reps)])
    for row in summary:
        if row["stat"] == "median":
            print(f"design {row['design']} n={row['n']} d={row['d']} "
                  f"sigma={row['sigma']}: median M1={row['M1']:.4f} "
                  f"M2={row['M2']:.4f} M3={row['M3']:.4f} M4={row['M4']:.4f}")
    print(f"wrote report.csv, summary.csv to {out}")
    return 0


def _mode_covid(settings):
    _require(settings, ["cases"], "covid")
    out = _out_dir(settings.get("out", "out"))
    states = settings.get("states")
    panel = covid_mod.ingest_covid(settings["cases"], states=states)
    population = None
    if settings.get("population"):
        population = {}
        with open(settings["population"], newline="") as fh:
            for row in csv.DictReader(fh):
                population[row["state"]] = float(row["population"])
    calibrator = OdeCalibrator(
        order=2,
        moment_order=settings.get("moment_order"),
        bandwidth=settings.get("bandwidth"),
        grid_size=settings.get("grid_size"),
        train_trim=settings.get("train_trim", 0.05),
        hidden=settings.get("hidden", (32, 32)),
        epochs=settings.get("epochs", 1500),
        base_lr=settings.get("base_lr", 1e-2),
        sparsity_budget=settings.get("sparsity_budget"),
        sup_bound=settings.get("sup_bound"),
        seed=settings.get("seed", 0),
    )
    curves, calibrator = covid_mod.covid_growth(
        panel, calibrator=calibrator, population=population,
        checkpoint_path=out / "network.json")
    covid_mod.write_curves(curves, out / "curves.csv")
    panel_io.write_manifest(
        out / "manifest.json",
        {"mode": "covid", "states": panel.states, "day_span": panel.day_span,
         "population": bool(population),
         "epochs": calibrator.epochs, "hidden": list(calibrator.hidden)},
        seeds=[calibrator.seed])
    print(f"wrote curves.csv and network.json for {panel.n_states} states to {out}")
    return 0


def run_pipeline(settings: dict) -> int:
    """Dispatch a coerced settings mapping to its mode runner."""
    mode = settings.get("mode")
    runners = {
        "simulate": _mode_simulate,
        "smooth": _mode_smooth,
        "train": _mode_train,
        "evaluate": _mode_evaluate,
        "benchmark": _mode_benchmark,
        "covid": _mode_covid,
    }
    if mode not in runners:
        raise ValueError(f"unknown mode {mode!r}")
    return runners[mode](settings)


def _build_parser() -> _Parser:
    parser = _Parser(prog="odecal",
                     description="Two-stage ODE calibration from noisy data")
    sub = parser.add_subparsers(dest="mode", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file; flags override it")
        p.add_argument("--out", help="output directory (default ./out)")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("simulate", help="generate a design panel and truth")
    common(p)
    p.add_argument("--design", type=int, choices=(1, 2))
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--sigma", type=float)

    p = sub.add_parser("smooth", help="stage 1 on a panel CSV")
    common(p)
    p.add_argument("--panel", help="panel CSV (component,time,value)")
    p.add_argument("--order", type=int, help="ODE order nu")
    p.add_argument("--moment-order", dest="moment_order", type=int)
    p.add_argument("--bandwidth", type=float)
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--train-trim", dest="train_trim", type=float)

    p = sub.add_parser("train", help="stage 2 on an estimate CSV")
    common(p)
    p.add_argument("--estimate", help="estimate CSV from the smooth mode")
    p.add_argument("--hidden")
    p.add_argument("--epochs", type=int)
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--sparsity-budget", dest="sparsity_budget", type=int)
    p.add_argument("--sup-bound", dest="sup_bound", type=float)

    p = sub.add_parser("evaluate", help="metrics for a trained network")
    common(p)
    p.add_argument("--checkpoint", help="network.json from the train mode")
    p.add_argument("--estimate", help="estimate CSV (its grid is the metric grid)")
    p.add_argument("--design", type=int, choices=(1, 2))
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--trim", type=float)

    p = sub.add_parser("benchmark", help="Monte Carlo table sweep")
    common(p)
    p.add_argument("--design", type=int, choices=(1, 2))
    p.add_argument("--n-list", dest="n_list")
    p.add_argument("--d-list", dest="d_list")
    p.add_argument("--sigma-list", dest="sigma_list")
    p.add_argument("--replications", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--hidden")
    p.add_argument("--epochs", type=int)
    p.add_argument("--sparsity-budget", dest="sparsity_budget", type=int)
    p.add_argument("--train-trim", dest="train_trim", type=float)

    p = sub.add_parser("covid", help="state-level growth-rate pipeline")
    common(p)
    p.add_argument("--cases", help="daily cases CSV (date,state,fips,cases,deaths)")
    p.add_argument("--states", help="comma-separated state filter (default: all 50)")
    p.add_argument("--population", help="CSV state,population for per-100k curves")
    p.add_argument("--hidden")
    p.add_argument("--epochs", type=int)
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--sparsity-budget", dest="sparsity_budget", type=int)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        settings = _settings(args)
        settings["mode"] = args.mode
        return run_pipeline(settings)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NonFiniteState as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - internal failure path
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
