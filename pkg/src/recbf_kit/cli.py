"""Command-line entry point.

    recbf-kit lane-change --vehicle vehicle1 --set mode=lrecbf --out runs/lc
    recbf-kit acc --seed 3 --out runs/acc
    recbf-kit sysid acc --out runs/id
    recbf-kit road-gen --seed 7 --horizon 300 --out road.csv
    recbf-kit reproduce fig7 --seed 42 --out runs/fig7
    recbf-kit plot runs/lc/trace.csv --y Y_m --hline 3.85 --out y.svg

Exit codes: 0 success, 1 configuration error, 2 simulation abort,
3 safety violation in a mode that asserts safety.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import sim_engine as se
from . import sysid
from .config import dump_flat, from_flat, load_flat, parse_override
from .errors import ConfigError, RecbfError, SimulationAbort
from .lane_change import VEHICLES

log = logging.getLogger("recbf_kit")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_UNSAFE = 0, 1, 2, 3
EXPERIMENTS = ("fig3", "fig4", "fig5", "fig7", "fig8", "table3", "table5")
SAFE_LANE_MODES = ("recbf", "lrecbf")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _common(p, config=True):
    if config:
        p.add_argument("--config", help="flat YAML config with dotted keys")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-plots", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="recbf-kit", description="robust barrier-function safety filters with learned bounds")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("lane-change", help="simulate one lane change")
    p.add_argument("--vehicle", choices=sorted(VEHICLES), default=None)
    _common(p)

    p = sub.add_parser("acc", help="simulate the two-vehicle platoon")
    _common(p)

    p = sub.add_parser("sysid", help="fit parameters from a dataset (generated if not given)")
    p.add_argument("model", choices=("lane", "acc"))
    p.add_argument("--data", help="dataset CSV written by a previous sysid run")
    p.add_argument("--vehicle", choices=sorted(VEHICLES), default=None)
    _common(p)

    p = sub.add_parser("road-gen", help="write a synthetic road profile CSV")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--horizon", type=float, default=300.0)
    p.add_argument("--out", default="road.csv")

    p = sub.add_parser("reproduce", help="run a scripted experiment battery")
    p.add_argument("experiment", choices=EXPERIMENTS)
    _common(p, config=False)

    p = sub.add_parser("plot", help="plot columns of trace CSVs")
    p.add_argument("traces", nargs="+")
    p.add_argument("--y", default="Y_m")
    p.add_argument("--x", default="t_s")
    p.add_argument("--hline", type=float, default=None)
    p.add_argument("--hist", action="store_true", help="histogram of --y instead of a line chart")
    p.add_argument("--bins", type=int, default=25)
    p.add_argument("--labels", nargs="*", default=None)
    p.add_argument("--out", default="plot.svg")
    return ap


# -- config assembly -------------------------------------------------------------

def _load_config(cls, args, base=None):
    cfg = base if base is not None else cls()
    if getattr(args, "config", None):
        cfg = from_flat(cls, load_flat(args.config), cfg)
    for item in getattr(args, "set", []):
        key, value = parse_override(item)
        cfg = from_flat(cls, {key: value}, cfg)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _lane_base(args):
    if getattr(args, "vehicle", None):
        return se.LaneConfig.for_vehicle(args.vehicle)
    return None


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _threads() -> int:
    raw = os.environ.get("RECBF_KIT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"RECBF_KIT_THREADS={raw!r} is not an integer") from exc
    return max(1, n)


# -- single runs ---------------------------------------------------------------------

def _write_lane(run: se.LaneRun, out: Path, stem: str, plots: bool):
    run.trace.to_csv(out / f"{stem}.csv")
    if run.identification is not None:
        ident = run.identification
        src = ident.source.as_dict() if ident.source is not None else None
        sysid.write_report(sysid.fit_report_rows(ident.fit, ident.updates, src),
                           out / f"{stem}_fit.yaml")
    if plots:
        from .plotting import plot_traces
        plot_traces([run.trace], [stem], "Y_m", out / f"{stem}_Y.svg",
                    hline=run.config.Ymax, hline_label="Ymax")


def _write_acc(run: se.AccRun, out: Path, stem: str, plots: bool):
    run.trace.to_csv(out / f"{stem}.csv")
    for i, ident in enumerate(run.identifications):
        actual = {n: getattr(run.config.actual, n) for n in sysid.ACC_PARAMS}
        sysid.write_report(sysid.fit_report_rows(ident.fit, ident.updates, actual),
                           out / f"{stem}_fit{i}.yaml")
    if plots:
        from .plotting import plot_columns
        plot_columns(run.trace, ["d_m", "dmin_worst_m", "dmin_actual_m"], out / f"{stem}_gap.svg", ylabel="m")
        plot_columns(run.trace, ["u_nom_N", "u_N", "bound_N"], out / f"{stem}_force.svg", ylabel="N")
        plot_columns(run.trace, ["v1_mps", "v2_mps"], out / f"{stem}_speed.svg", ylabel="m/s")


def _acc_unsafe(run: se.AccRun) -> bool:
    return run.min_h1 < -1e-6 or run.max_v2 > run.config.brakes.v_max + 1e-6


def cmd_lane(args) -> int:
    cfg = _load_config(se.LaneConfig, args, _lane_base(args))
    out = _outdir(args.out)
    dump_flat(cfg, out / "config.yaml")
    run = se.run_lane_scenario(cfg)
    _write_lane(run, out, "trace", not args.no_plots)
    print(f"{cfg.label} {cfg.mode}: max Y = {run.max_Y:.4f} m (Ymax {cfg.Ymax})")
    if cfg.mode in SAFE_LANE_MODES and not run.safe:
        log.error("safety violation: max Y %.4f > %.4f", run.max_Y, cfg.Ymax)
        return EXIT_UNSAFE
    return EXIT_OK


def cmd_acc(args) -> int:
    cfg = _load_config(se.AccConfig, args)
    out = _outdir(args.out)
    dump_flat(cfg, out / "config.yaml")
    run = se.run_acc_scenario(cfg)
    _write_acc(run, out, "trace", not args.no_plots)
    print(f"acc: min h1 = {run.min_h1:.3f} m, max v2 = {run.max_v2:.3f} m/s")
    if _acc_unsafe(run):
        log.error("safety violation in acc run")
        return EXIT_UNSAFE
    return EXIT_OK


def cmd_sysid(args) -> int:
    out = _outdir(args.out)
    if args.model == "lane":
        cfg = _load_config(se.LaneConfig, args, _lane_base(args))
        cols = (sysid.LANE_INPUT_COLUMNS, sysid.LANE_OUTPUT_COLUMNS)
        if args.data:
            obs = sysid.load_dataset(args.data, *cols)
        else:
            obs = se.lane_observations(se.collect_lane_data(cfg, cfg.delta), cfg.seed,
                                       cfg.noise_std, cfg.id_rate_hz)
        ident = se.identify_lane(cfg, obs, cfg.delta)
        result, updates, actual = ident.fit, ident.updates, cfg.delta.as_dict()
    else:
        cfg = _load_config(se.AccConfig, args)
        cols = (sysid.ACC_INPUT_COLUMNS, sysid.ACC_OUTPUT_COLUMNS)
        if args.data:
            obs = sysid.load_dataset(args.data, *cols)
        else:
            t_end = min(e[0] for e in se.parse_events(cfg.events, cfg.duration)
                        if e[1] == "update-bounds") if cfg.events else cfg.duration
            pre = dataclasses.replace(cfg, duration=t_end, events=())
            obs = se.acc_observations(se.run_acc_scenario(pre).trace, t_end - cfg.id_window,
                                      t_end, cfg.noise_std)
        _, result, updates = se.identify_acc(cfg, obs, cfg.uncertainty)
        actual = {n: getattr(cfg.actual, n) for n in sysid.ACC_PARAMS}
    dump_flat(cfg, out / "config.yaml")
    sysid.save_dataset(obs, out / "dataset.csv", *cols)
    rows = sysid.fit_report_rows(result, updates, actual)
    sysid.write_report(rows, out / "fit.yaml")
    for r in rows:
        flag = "accepted" if r["accepted"] else "rejected"
        print(f"{r['name']:>7s}  mu={r['mu']:.6g}  sigma={r['sigma']:.3g}  {flag}")
    return EXIT_OK


def cmd_road(args) -> int:
    road = se.synthesize_road(args.seed, args.horizon)
    path = Path(args.out)
    _outdir(path.parent if str(path.parent) else ".")
    road.to_csv(path)
    print(f"road {path}: min grade {road.grade.min():.4f} rad")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_histogram, plot_traces
    traces = [se.Trace.from_csv(p) for p in args.traces]
    out = Path(args.out)
    _outdir(out.parent if str(out.parent) else ".")
    if args.hist:
        if args.y not in traces[0].columns:
            raise ConfigError(f"trace has no column {args.y!r}")
        data = np.concatenate([tr[args.y] for tr in traces if args.y in tr.columns])
        plot_histogram(se.histogram(data, args.bins), out, xlabel=args.y)
    else:
        labels = args.labels or [Path(p).stem for p in args.traces]
        plot_traces(traces, labels, args.y, out, x=args.x, hline=args.hline)
    return EXIT_OK


# -- reproduce batteries ---------------------------------------------------------------

def _job(kind: str, cfg):
    if kind == "lane":
        return se.run_lane_scenario(cfg)
    return se.run_acc_scenario(cfg)


def _battery(name: str, seed: int) -> list:
    """``(stem, kind, config)`` triples for one experiment."""
    lane = lambda v, mode: se.LaneConfig.for_vehicle(v, mode, seed=seed)  # noqa: E731
    if name == "fig3":
        return [(f"{v}_{m}", "lane", lane(v, m))
                for v in ("nominal", "vehicle1", "vehicle2") for m in ("ecbf", "recbf", "lrecbf")]
    if name == "fig4":
        return [("nominal_recbf", "lane", lane("nominal", "recbf"))]
    if name == "fig5":
        return [("vehicle1_lrecbf-stale", "lane", lane("vehicle1", "lrecbf-stale")),
                ("vehicle1_lrecbf", "lane", lane("vehicle1", "lrecbf"))]
    if name == "table3":
        return [(f"{v}_lrecbf", "lane", lane(v, "lrecbf")) for v in ("vehicle1", "vehicle2")]
    if name in ("fig7", "fig8", "table5"):
        return [("acc", "acc", se.AccConfig(seed=seed))]
    raise ConfigError(f"unknown experiment {name!r}")


def _run_all(jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [_job(kind, cfg) for _, kind, cfg in jobs]
    with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
        futures = [pool.submit(_job, kind, cfg) for _, kind, cfg in jobs]
        return [f.result() for f in futures]


def cmd_reproduce(args) -> int:
    name = args.experiment
    seed = 0 if args.seed is None else args.seed
    out = _outdir(Path(args.out))
    plots = not args.no_plots
    jobs = _battery(name, seed)
    runs = _run_all(jobs, _threads())
    status = EXIT_OK
    for (stem, _kind, cfg), run in zip(jobs, runs):
        dump_flat(cfg, out / f"{stem}_config.yaml")

    if name in ("fig3", "fig4", "fig5", "table3"):
        for (stem, _, cfg), run in zip(jobs, runs):
            _write_lane(run, out, stem, plots and name != "table3")
            print(f"{stem}: max Y = {run.max_Y:.4f} m")
            if name != "fig5" and cfg.mode in SAFE_LANE_MODES and not run.safe:
                log.error("%s: safety violation (max Y %.4f)", stem, run.max_Y)
                status = EXIT_UNSAFE
        if name == "fig3" and plots:
            from .plotting import plot_traces
            for v in ("nominal", "vehicle1", "vehicle2"):
                sel = [(s, r) for (s, _, _), r in zip(jobs, runs) if s.startswith(v + "_")]
                plot_traces([r.trace for _, r in sel], [s for s, _ in sel], "Y_m",
                            out / f"{v}_overlay.svg", hline=3.85, hline_label="Ymax")
        if name == "fig4" and plots:
            from .plotting import plot_columns
            tr = runs[0].trace
            plot_columns(tr, ["phi_nom_rad", "phi_r_rad", "bound_rad"], out / "control.svg", ylabel="rad")
            plot_columns(tr, ["delta1_worst", "delta2_worst", "delta3_worst"], out / "worst_delta.svg")
        if name == "table3":
            rows = {}
            for (stem, _, cfg), run in zip(jobs, runs):
                ident = run.identification
                rows[cfg.label] = sysid.fit_report_rows(ident.fit, ident.updates, ident.source.as_dict())
            sysid.write_report([rows], out / "table3.yaml")
        return status

    run = runs[0]
    if name == "fig7":
        _write_acc(run, out, "acc", plots)
    elif name == "fig8":
        hist = se.histogram(run.trace["a1_mps2"], 25)
        lines = ["edge_lo_mps2,edge_hi_mps2,count"]
        lines += [f"{a!r},{b!r},{int(c)}" for a, b, c in zip(hist.edges[:-1].tolist(), hist.edges[1:].tolist(), hist.counts)]
        (out / "a1_hist.csv").write_text("\n".join(lines) + "\n")
        print(f"a1: mu = {hist.mu:.4f}, sigma = {hist.sigma:.4f} m/s^2")
        if plots:
            from .plotting import plot_histogram
            plot_histogram(hist, out / "a1_hist.svg", xlabel="a1 (m/s^2)")
    elif name == "table5":
        ident = run.identifications[0]
        actual = {n: getattr(run.config.actual, n) for n in sysid.ACC_PARAMS}
        sysid.write_report(sysid.fit_report_rows(ident.fit, ident.updates, actual), out / "table5.yaml")
        for u in ident.updates:
            print(f"{u.name:>7s}  mu={u.mu:.6g}  sigma={u.sigma:.3g}  {'accepted' if u.accepted else 'rejected'}")
    if _acc_unsafe(run):
        log.error("acc: safety violation")
        status = EXIT_UNSAFE
    return status


COMMANDS = {
    "lane-change": cmd_lane, "acc": cmd_acc, "sysid": cmd_sysid,
    "road-gen": cmd_road, "reproduce": cmd_reproduce, "plot": cmd_plot,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationAbort as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (RecbfError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
