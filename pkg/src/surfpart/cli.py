"""Command-line front end: ``surfpart {simulate,sweep,budget,compare} --config FILE``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .config import COMMANDS, RunConfig, parse_config
from .errors import ConfigError, SolveError, SurfpartError, SweepError
from .field_solver import charging_energy
from .geometry import INTERFACES, build_layout
from .mesh import mesh_text
from .participation import ParticipationReport, evaluate

log = logging.getLogger("surfpart")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def fmt(value) -> str:
    """Fixed cross-platform text for one table cell (floats: 9 significant digits)."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.8e}"
    return str(value)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def columns_text(header, rows) -> str:
    """Whitespace-separated columns with a ``#`` header, for plotting tools."""
    lines = ["# " + " ".join(header)]
    lines += [" ".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _sweep_rows(sweeps) -> list[list]:
    return [r.row() for sw in sweeps for r in sw.reports]


def _fit_rows(named_fits) -> list[list]:
    rows = []
    for design, fits in named_fits:
        for tag in INTERFACES:
            f = fits[tag]
            rows.append([design, tag, f.a, f.b, f.r_squared, f.extrapolated_depth, f.extrapolated_value, f.clamped])
    return rows


FIT_COLUMNS = ("design", "interface", "a_per_m", "b_per_m", "r_squared", "extrapolated_depth_nm",
               "extrapolated_per_m", "clamped")


def _fit_curve(sweep, fits, target) -> list[list]:
    grid = np.geomspace(min(target, sweep.depths[0]), sweep.depths[-1], 25)
    return [[sweep.design, d] + [float(fits[t].evaluate(d)) for t in INTERFACES] for d in grid]


def run_simulate(cfg: RunConfig, jobs: int) -> dict[str, str]:
    layout = build_layout(cfg.params, cfg.trench)
    report, sol = evaluate(layout, cfg.materials, cfg.controls, cutoff=cfg.cutoff,
                           marker_fraction=cfg.marker_fraction, include_sidewalls=cfg.include_sidewalls,
                           design=cfg.design, uniform_refinements=cfg.uniform_refinements)
    out = {"participation.csv": csv_text(ParticipationReport.CSV_COLUMNS, [report.row()])}
    length = cfg.params.extrusion_length
    c_total = report.capacitance * length * 1e-6 if length else math.nan
    ec = charging_energy(c_total) if c_total > 0 else math.nan
    out["capacitance.csv"] = csv_text(
        ("design", "trench_nm", "capacitance_F_per_m", "extrusion_um", "capacitance_fF", "charging_energy_MHz"),
        [[cfg.design, report.trench_nm, report.capacitance, length if length else math.nan, c_total * 1e15, ec]])
    if cfg.dump:
        out["mesh.txt"] = mesh_text(sol.mesh)
        cen = sol.mesh.centroids()
        out["field.dat"] = columns_text(("x_m", "y_m", "Ex_V_per_m", "Ey_V_per_m"),
                                        np.column_stack([cen, sol.field]).tolist())
    return out


def run_sweep(cfg: RunConfig, jobs: int) -> dict[str, str]:
    sweep = analysis.trench_sweep(cfg.params, cfg.depths, cfg.controls, cfg.materials, cfg.min_fit_depth, jobs,
                                  cfg.cutoff, cfg.marker_fraction, cfg.include_sidewalls, cfg.uniform_refinements)
    sweep = analysis.SweepResult(cfg.design, sweep.depths, sweep.reports)
    out = {
        "sweep.csv": csv_text(ParticipationReport.CSV_COLUMNS, _sweep_rows([sweep])),
        "sweep_plot.dat": columns_text(("depth_nm", "p_sm_per_m", "p_sa_per_m", "p_ma_per_m"),
                                       [[d] + [r.p_over_t[t] for t in INTERFACES]
                                        for d, r in zip(sweep.depths, sweep.reports)]),
    }
    if cfg.target_depth is not None:
        fits = analysis.log_extrapolate(sweep, cfg.target_depth)
        out["fit.csv"] = csv_text(FIT_COLUMNS, _fit_rows([(cfg.design, fits)]))
        out["fit_plot.dat"] = columns_text(("design", "depth_nm", "fit_sm_per_m", "fit_sa_per_m", "fit_ma_per_m"),
                                           _fit_curve(sweep, fits, cfg.target_depth))
    return out


def run_budget(cfg: RunConfig, jobs: int) -> dict[str, str]:
    b = cfg.budget
    out = {}
    if "p_sm" in b:
        p = {"SM": b["p_sm"], "SA": b["p_sa"], "MA": b["p_ma"]}
        p_sub = b["p_sub"]
    else:
        sweep = analysis.trench_sweep(cfg.params, cfg.depths, cfg.controls, cfg.materials, cfg.min_fit_depth,
                                      jobs, cfg.cutoff, cfg.marker_fraction, cfg.include_sidewalls,
                                      cfg.uniform_refinements)
        sweep = analysis.SweepResult(cfg.design, sweep.depths, sweep.reports)
        fits = analysis.log_extrapolate(sweep, cfg.target_depth)
        p = {t: fits[t].extrapolated_value for t in INTERFACES}
        p_sub = sweep.reports[0].p_bulk["substrate"]
        out["sweep.csv"] = csv_text(ParticipationReport.CSV_COLUMNS, _sweep_rows([sweep]))
        out["fit.csv"] = csv_text(FIT_COLUMNS, _fit_rows([(cfg.design, fits)]))
    mats = cfg.materials
    channels = [analysis.Channel(t, p[t], mats.loss_tangents[t], mats.layer_thicknesses[t]) for t in INTERFACES]
    channels.append(analysis.Channel("substrate", p_sub, mats.loss_tangents["substrate"]))
    budget = analysis.loss_budget(channels, b.get("other_loss", 0.0), b["f"])
    rows = [[c.name, c.participation, c.thickness_nm if c.thickness_nm is not None else math.nan, c.tan_delta,
             c.loss] for c in channels]
    rows.append(["other", math.nan, math.nan, math.nan, budget.other_loss])
    rows.append(["total", math.nan, math.nan, math.nan, budget.inverse_q])
    out["budget.csv"] = csv_text(("channel", "participation", "thickness_nm", "tan_delta", "inverse_q"), rows)

    summary = [["f_GHz", b["f"]], ["inverse_q", budget.inverse_q], ["q_total", budget.Q_total],
               ["t1_us", budget.T1], ["infinite_q", budget.infinite_q]]
    if "t1" in b:
        summary.append(["q_from_t1", analysis.q_from_t1(b["t1"], b["f"])])
    if "q_measured" in b:
        summary.append(["tan_delta_bound", analysis.tan_delta_bound(b["q_measured"], p_sub)])
    if "g" in b:
        params = analysis.PurcellParams(b["g"] * 1e3, b["f_qubit"], b["f_res"], b["q_c"])
        summary.append(["purcell_t1_us", analysis.purcell_limit(params)])
    out["budget_summary.csv"] = csv_text(("quantity", "value"), summary)
    return out


def run_compare(cfg: RunConfig, jobs: int) -> dict[str, str]:
    cmp = analysis.compare_designs(cfg.designs, cfg.target_depth, cfg.materials, cfg.controls, cfg.depths,
                                   cfg.budget.get("other_loss", 0.0), jobs, cfg.cutoff)
    rows = [[r.design, r.p_over_t["SM"], r.p_over_t["SA"], r.p_over_t["MA"], r.inverse_p_sa, r.p_sub,
             r.Q_combined] + [r.Q_by_interface[t] for t in INTERFACES] for r in cmp.rows]
    header = ("design", "p_sm_per_m", "p_sa_per_m", "p_ma_per_m", "inv_p_sa_m", "p_sub", "q_combined",
              "q_sm_only", "q_sa_only", "q_ma_only")
    return {
        "comparison.csv": csv_text(header, rows),
        "compare_plot.dat": columns_text(("design", "inv_p_sa_m", "q_combined", "q_sm_only", "q_sa_only",
                                          "q_ma_only"), [[r[0], r[4]] + r[6:] for r in rows]),
        "sweep.csv": csv_text(ParticipationReport.CSV_COLUMNS, _sweep_rows(cmp.sweeps)),
        "fit.csv": csv_text(FIT_COLUMNS, _fit_rows([(sw.design, f) for sw, f in zip(cmp.sweeps, cmp.fits)])),
    }


RUNNERS = {"simulate": run_simulate, "sweep": run_sweep, "budget": run_budget, "compare": run_compare}


def write_artifacts(out_dir: Path, files: dict[str, str], command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(files):
        data = files[name].encode("utf-8")
        (out_dir / name).write_bytes(data)
        entries.append({"file": name, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})
    manifest = {"command": command, "artifacts": entries}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _error_report(exc: BaseException, command: str) -> dict:
    report = {"status": "error", "command": command, "type": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigError):
        report["errors"] = exc.errors
    if isinstance(exc, SweepError):
        report["depth_nm"] = exc.depth_nm
        cause = exc.__cause__
        if isinstance(cause, SolveError):
            report["diagnostics"] = cause.diagnostics
    if isinstance(exc, SolveError):
        report["diagnostics"] = exc.diagnostics
    return report


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surfpart", description="Surface participation of planar qubit designs.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, type=Path, help="INI run configuration")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        if args.jobs < 1:
            raise ConfigError([f"--jobs must be >= 1, got {args.jobs}"])
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError([f"cannot read config {args.config}: {exc.strerror}"]) from None
        cfg = parse_config(text, args.command)
    except ConfigError as exc:
        print(json.dumps(_error_report(exc, args.command), indent=2, sort_keys=True), file=sys.stderr)
        return EXIT_CONFIG

    log.info("running %s from %s", args.command, args.config)
    try:
        files = RUNNERS[args.command](cfg, args.jobs)
    except SurfpartError as exc:
        report = _error_report(exc, args.command)
        text = json.dumps(report, indent=2, sort_keys=True, default=str)
        print(text, file=sys.stderr)
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "error.json").write_text(text + "\n", encoding="utf-8")
        return EXIT_RUNTIME
    write_artifacts(args.out, files, args.command)
    log.info("wrote %d artifacts to %s", len(files) + 1, args.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
