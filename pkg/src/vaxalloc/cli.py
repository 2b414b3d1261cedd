"""Command-line front end: ingest -> train -> allocate/sweep -> report.

Every command takes a JSON config plus per-field override flags (flags win),
and writes deterministic artifacts: identical inputs, config, and seed
produce byte-identical files. Exit codes: 0 success, 2 I/O, 3 schema or
validation, 4 infeasible problem.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import math
import statistics
import sys
from pathlib import Path

import numpy as np

from . import allocator, ingest, regression, risk_metrics
from .config import NORMALIZATION_MODES, RunConfig, derive_seed
from .errors import (
    DataError,
    EmptyInputError,
    InfeasibleProblemError,
    SchemaError,
)

EXIT_OK = 0
EXIT_IO = 2
EXIT_SCHEMA = 3
EXIT_INFEASIBLE = 4

_OVERRIDE_FIELDS = {
    "data": "data_path",
    "static": "static_path",
    "model": "model_path",
    "output_dir": "output_dir",
    "window_start": "window_start",
    "window_end": "window_end",
    "train_fraction": "train_fraction",
    "split_scheme": "split_scheme",
    "seed": "seed",
    "budget": "budget_doses",
    "allocation_date": "allocation_date",
    "omegas": "omegas",
    "max_iters": "max_iters",
    "tol": "tol",
    "starts": "starts",
    "normalization": "normalization",
}


def _add_common_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file; flags override its fields")
    sub.add_argument("--data", help="time-series CSV path")
    sub.add_argument("--static", help="static country attributes CSV path")
    sub.add_argument("--model", help="model JSON path (default <output-dir>/model.json)")
    sub.add_argument("--output-dir", dest="output_dir", help="artifact directory")
    sub.add_argument("--window-start", dest="window_start", help="YYYY-MM-DD")
    sub.add_argument("--window-end", dest="window_end", help="YYYY-MM-DD")
    sub.add_argument("--train-fraction", dest="train_fraction", type=float)
    sub.add_argument(
        "--split-scheme", dest="split_scheme", choices=("chronological", "random")
    )
    sub.add_argument("--seed", type=int)
    sub.add_argument("--budget", type=float, help="total doses for the distribution day")
    sub.add_argument("--allocation-date", dest="allocation_date", help="YYYY-MM-DD")
    sub.add_argument("--omegas", help="comma-separated fairness weights, e.g. 0,8,20,50")
    sub.add_argument("--max-iters", dest="max_iters", type=int)
    sub.add_argument("--tol", type=float)
    sub.add_argument("--starts", type=int)
    sub.add_argument("--normalization", choices=NORMALIZATION_MODES)
    sub.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vaxalloc",
        description="Risk-model-driven, fairness-aware vaccine allocation planning",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name, func, help_text in (
        ("ingest", cmd_ingest, "clean input data and write per-country feature panels"),
        ("train", cmd_train, "fit per-country linear risk models"),
        ("allocate", cmd_allocate, "solve one allocation at the first configured omega"),
        ("sweep", cmd_sweep, "solve across all configured omegas"),
        ("report", cmd_report, "summarize existing artifacts"),
    ):
        sub = commands.add_parser(name, help=help_text)
        _add_common_args(sub)
        sub.set_defaults(func=func)
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{args.config}: not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise SchemaError(f"{args.config}: config must be a JSON object")
        data.update(raw)
    for flag, field_name in _OVERRIDE_FIELDS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if field_name == "omegas":
            value = [float(w) for w in str(value).split(",") if w.strip()]
        data[field_name] = value
    return RunConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return args.func(cfg, verbose=args.verbose)
    except InfeasibleProblemError as exc:
        print(f"error: infeasible problem: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SchemaError, DataError) as exc:
        if isinstance(exc, EmptyInputError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (FileNotFoundError, NotADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def _require(value, name: str):
    if value is None:
        raise SchemaError(f"config field {name!r} is required for this command")
    return value


def _panel_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir) / "panels"


def _model_path(cfg: RunConfig) -> Path:
    return Path(cfg.model_path) if cfg.model_path else Path(cfg.output_dir) / "model.json"


def _load_panels(cfg: RunConfig) -> dict[str, risk_metrics.RiskPanel]:
    panel_dir = _panel_dir(cfg)
    if not panel_dir.is_dir():
        raise FileNotFoundError(f"{panel_dir}: no panel directory (run `ingest` first)")
    sidecar = panel_dir / "norm_params.json"
    stored: dict = {}
    if sidecar.exists():
        with open(sidecar, encoding="utf-8") as fh:
            stored = json.load(fh)
    panels = {}
    for path in sorted(panel_dir.glob("*.csv")):
        cid = path.stem
        params = None
        if cid in stored:
            params = {f: tuple(map(float, stored[cid][f])) for f in risk_metrics.FEATURES}
        panels[cid] = risk_metrics.read_panel_csv(path, cid, norm_params=params)
    if not panels:
        raise EmptyInputError(f"{panel_dir}: no panel files")
    return panels


# ---------------------------------------------------------------- commands


def cmd_ingest(cfg: RunConfig, verbose: bool = False) -> int:
    data_path = _require(cfg.data_path, "data_path")
    static_path = _require(cfg.static_path, "static_path")
    if not Path(data_path).exists():
        raise FileNotFoundError(f"{data_path}: no such file")
    if not Path(static_path).exists():
        raise FileNotFoundError(f"{static_path}: no such file")

    series_list = ingest.parse_country_csv(data_path)
    statics = ingest.parse_static_attributes(static_path)
    all_ids = [s.country_id for s in series_list]
    series_list = ingest.attach_static(series_list, statics)
    dropped_no_static = sorted(set(all_ids) - {s.country_id for s in series_list})

    cleaned = []
    repairs = {}
    dropped_empty = []
    for series in series_list:
        fixed, stats = ingest.clean_series_with_stats(series)
        end = cfg.window_end or (fixed.records[-1].date if fixed.records else None)
        try:
            fixed = ingest.filter_window(fixed, cfg.window_start, end)
        except EmptyInputError:
            dropped_empty.append(series.country_id)
            continue
        cleaned.append(fixed)
        repairs[series.country_id] = stats

    if not cleaned:
        raise EmptyInputError("no country has records inside the analysis window")

    shared_params = (
        risk_metrics.global_norm_params(cleaned) if cfg.normalization == "global" else None
    )

    panel_dir = _panel_dir(cfg)
    panel_dir.mkdir(parents=True, exist_ok=True)
    summary_rows = {}
    norm_sidecar = {}
    for series in cleaned:
        panel = risk_metrics.build_panel(series, norm_params=shared_params)
        risk_metrics.write_panel_csv(panel, panel_dir / f"{series.country_id}.csv")
        norm_sidecar[series.country_id] = {
            f: list(panel.norm_params[f]) for f in risk_metrics.FEATURES
        }
        stats = repairs[series.country_id]
        summary_rows[series.country_id] = {
            "name": series.name or series.country_id,
            "start": panel.dates[0].isoformat(),
            "end": panel.dates[-1].isoformat(),
            "days": len(panel),
            "cells_repaired": stats.total,
        }

    with open(panel_dir / "norm_params.json", "w", encoding="utf-8") as fh:
        json.dump(norm_sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")

    summary = {
        "countries": len(cleaned),
        "normalization": cfg.normalization,
        "window_start": cfg.window_start.isoformat(),
        "window_end": cfg.window_end.isoformat() if cfg.window_end else None,
        "dropped_no_static": dropped_no_static,
        "dropped_empty_window": dropped_empty,
        "per_country": summary_rows,
    }
    with open(Path(cfg.output_dir) / "ingest_summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    total_repairs = sum(r.total for r in repairs.values())
    print(
        f"ingested {len(cleaned)} countries -> {panel_dir} "
        f"({total_repairs} cells repaired)"
    )
    if verbose:
        for cid in sorted(summary_rows):
            row = summary_rows[cid]
            print(f"  {cid}: {row['days']} days {row['start']}..{row['end']}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, verbose: bool = False) -> int:
    static_path = _require(cfg.static_path, "static_path")
    statics = ingest.parse_static_attributes(static_path)
    panels = _load_panels(cfg)

    fits = []
    skipped = []
    for cid in sorted(panels):
        if cid not in statics:
            skipped.append((cid, "no static attributes"))
            continue
        split = regression.SplitSpec(
            train_fraction=cfg.train_fraction,
            scheme=cfg.split_scheme,
            seed=derive_seed(cfg.seed, f"split:{cid}"),
        )
        try:
            fits.append(regression.fit_country(panels[cid], statics[cid], split=split))
        except (regression.RankDeficientError, ValueError) as exc:
            skipped.append((cid, str(exc)))
    for cid, reason in skipped:
        print(f"warning: skipped {cid}: {reason}", file=sys.stderr)
    if not fits:
        raise EmptyInputError("no country could be fit")

    model_path = _model_path(cfg)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    regression.write_model_file(fits, model_path)
    _write_metrics_csv(fits, Path(cfg.output_dir) / "metrics.csv")

    maes = [f.metrics.mae for f in fits]
    print(
        f"fit {len(fits)} countries -> {model_path} "
        f"(test MAE avg {statistics.fmean(maes):.4f}, median {statistics.median(maes):.4f})"
    )
    if verbose:
        for f in fits:
            print(
                f"  {f.country_id}: mae={f.metrics.mae:.4f} mse={f.metrics.mse:.5f} "
                f"r2={f.metrics.r_squared:.3f} beta2={f.beta2:+.4f}"
            )
    return EXIT_OK


def _write_metrics_csv(fits: list[regression.RiskModelFit], path: Path) -> None:
    def fmt(x: float | None) -> str:
        return "" if x is None or math.isnan(x) else repr(float(x))

    rows = [(f.country_id, f.metrics.mae, f.metrics.mse, f.metrics.r_squared) for f in fits]
    r2_defined = [r for (_, _, _, r) in rows if not math.isnan(r)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["country_id", "mae", "mse", "r_squared"])
        for cid, mae, mse, r2 in rows:
            writer.writerow([cid, fmt(mae), fmt(mse), fmt(r2)])
        for label, agg in (("average", statistics.fmean), ("median", statistics.median)):
            writer.writerow(
                [
                    label,
                    fmt(agg([r[1] for r in rows])),
                    fmt(agg([r[2] for r in rows])),
                    fmt(agg(r2_defined) if r2_defined else None),
                ]
            )


def _build_problem(cfg: RunConfig, omega: float) -> allocator.AllocationProblem:
    static_path = _require(cfg.static_path, "static_path")
    statics = ingest.parse_static_attributes(static_path)
    model_path = _model_path(cfg)
    if not model_path.exists():
        raise FileNotFoundError(f"{model_path}: no model file (run `train` first)")
    fits = regression.read_model_file(model_path)
    panels = _load_panels(cfg)
    missing = [f.country_id for f in fits if f.country_id not in panels or f.country_id not in statics]
    if missing:
        raise SchemaError(f"model countries missing panels or statics: {', '.join(missing)}")
    return allocator.build_problem(
        fits,
        statics,
        panels,
        allocation_date=cfg.allocation_date,
        budget_doses=cfg.budget_doses,
        omega=omega,
    )


def _solver_config(cfg: RunConfig) -> allocator.SolverConfig:
    return allocator.SolverConfig(
        max_iters=cfg.max_iters,
        tol=cfg.tol,
        n_starts=cfg.starts,
        seed=derive_seed(cfg.seed, "multistart"),
    )


def cmd_allocate(cfg: RunConfig, verbose: bool = False) -> int:
    omega = float(cfg.omegas[0])
    problem = _build_problem(cfg, omega)
    result = allocator.solve_op_fair(problem, _solver_config(cfg))

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    allocator.write_allocation_csv(problem, result, out_dir / "allocation.csv")
    report = {
        "config": cfg.to_dict(),
        "omega": omega,
        "countries": problem.j_count,
        "solver": {
            "iterations": result.solver_report.iterations,
            "converged": result.solver_report.converged,
            "grad_norm": result.solver_report.grad_norm,
        },
        "totals": {
            "doses": float(np.sum(result.doses)),
            "risk_reduction": float(np.sum(result.risk_reduction)),
            "jain": result.jain,
            "objective": result.objective,
            "saturated_countries": int(np.sum(result.v_new >= 1.0 - 1e-9)),
        },
    }
    with open(out_dir / "run_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

    status = "converged" if result.solver_report.converged else "NOT CONVERGED"
    print(
        f"allocated {report['totals']['doses']:.0f} doses across {problem.j_count} "
        f"countries at omega={omega:g} (jain={result.jain:.4f}, {status})"
    )
    if verbose:
        for j, cid in enumerate(problem.country_ids):
            print(
                f"  {cid}: v {problem.v_prev[j]:.4f} -> {result.v_new[j]:.4f} "
                f"doses={result.doses[j]:.0f}"
            )
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, verbose: bool = False) -> int:
    problem = _build_problem(cfg, float(cfg.omegas[0]))
    entries = allocator.sweep_omega(problem, [float(w) for w in cfg.omegas], _solver_config(cfg))

    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    allocator.write_sweep_csv(entries, out_dir / "sweep.csv")

    succeeded = [e for e in entries if e.result is not None]
    for entry in entries:
        if entry.error is not None:
            print(f"warning: omega={entry.omega:g} failed: {entry.error}", file=sys.stderr)
        elif verbose and entry.result is not None:
            print(
                f"  omega={entry.omega:g}: jain={entry.result.jain:.4f} "
                f"reduction={float(np.sum(entry.result.risk_reduction)):.5f}"
            )
    print(f"swept {len(succeeded)}/{len(entries)} omegas -> {out_dir / 'sweep.csv'}")
    return EXIT_OK if succeeded else EXIT_INFEASIBLE


def cmd_report(cfg: RunConfig, verbose: bool = False) -> int:
    out_dir = Path(cfg.output_dir)
    alloc_path = out_dir / "allocation.csv"
    report_path = out_dir / "run_report.json"
    if not alloc_path.exists() or not report_path.exists():
        raise FileNotFoundError(
            f"{out_dir}: missing allocation artifacts (run `allocate` first)"
        )
    with open(report_path, encoding="utf-8") as fh:
        run_report = json.load(fh)

    rows = []
    with open(alloc_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(row)
    total_doses = sum(float(r["doses"]) for r in rows)
    total_rounded = sum(int(r["doses_rounded"]) for r in rows)
    total_reduction = sum(float(r["risk_reduction"]) for r in rows)
    saturated = sum(1 for r in rows if float(r["v_new"]) >= 1.0 - 1e-9)

    print(f"countries:            {len(rows)}")
    print(f"total doses:          {total_doses!r}")
    print(f"total doses (rounded):{total_rounded}")
    print(f"total risk reduction: {total_reduction!r}")
    print(f"jain index:           {run_report['totals']['jain']!r}")
    print(f"countries at 100%:    {saturated}")
    print(f"solver converged:     {run_report['solver']['converged']}")

    sweep_path = out_dir / "sweep.csv"
    if sweep_path.exists():
        print("omega sweep:")
        with open(sweep_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                print(
                    f"  omega={float(row['omega']):g} jain={row['jain']} "
                    f"reduction={row['total_risk_reduction']} converged={row['converged']}"
                )
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
