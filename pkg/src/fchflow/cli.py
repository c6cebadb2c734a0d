"""Command-line entry point: ``fchflow {run,twin,verify,inspect}``.

Exit codes: 0 success, 1 configuration or I/O error (or a failed
verification suite), 2 blow-up detected, 3 twin-run envelope violated.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, initial_state, load_config, serialize_config, twin_perturbation
from .diagnostics import CSV_COLUMNS, CSV_VERSION, DiagnosticsCollector, twin_run
from .model import ModelError, PhaseState
from .snapshot import SnapshotError, read_header, read_sidecar, read_snapshot, write_snapshot
from .solver import BlowUpError, Sinks, SolverConfigError, galerkin_project, run
from .spectral import Field, GridError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BLOWUP = 2
EXIT_TWIN_VIOLATION = 3

log = logging.getLogger("fchflow")

SETUP_ERRORS = (ConfigError, ModelError, GridError, SolverConfigError, SnapshotError, OSError, KeyError)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


class CsvSink:
    """Streams DiagnosticsRecord rows; flushes every row so partial runs stay readable."""

    def __init__(self, path: Path, append: bool = False):
        exists = path.exists() and path.stat().st_size > 0
        if append and exists:
            with open(path, newline="") as fh:
                header = next(csv.reader(fh), None)
            if header != CSV_COLUMNS:
                raise ConfigError("", f"{path} has a different column layout; cannot append")
            self.fh = open(path, "a", newline="")
        else:
            self.fh = open(path, "w", newline="")
            self.fh.write(",".join(CSV_COLUMNS) + "\n")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.rows = 0

    def __call__(self, record) -> None:
        self.writer.writerow([_fmt(v) for v in record.row()])
        self.fh.flush()
        self.rows += 1

    def close(self) -> None:
        self.fh.close()


def _manifest(out: Path, cfg: RunConfig | None, **fields) -> None:
    doc = {
        "fchflow_version": __version__,
        "python": platform.python_version(),
        "csv_version": CSV_VERSION,
        "csv_columns": CSV_COLUMNS,
        "config": serialize_config(cfg) if cfg is not None else None,
    }
    doc.update(fields)
    (out / "manifest.json").write_text(json.dumps(doc, indent=1, default=str))


def _setup_logging(quiet: bool) -> None:
    logging.basicConfig(level=logging.WARNING if quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def _load(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.ic.seed = args.seed
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("resolved configuration:\n%s", serialize_config(cfg))
    return cfg, out


def _sidecar(step_index: int, collector: DiagnosticsCollector) -> dict:
    return {"step_index": step_index, "collector": collector.state_dict()}


def cmd_run(args) -> int:
    t0 = time.perf_counter()
    cfg = out = None
    sink = None
    status, code, extra = "config-error", EXIT_CONFIG, {}
    try:
        cfg, out = _load(args)
        grid = cfg.grid.build()
        params = cfg.model.build()
        solver_cfg = cfg.solver.build(grid, params)
        collector = DiagnosticsCollector(params, cfg.gamma, cfg.output.lp_every)
        step_index = 0
        if args.restart:
            state = read_snapshot(args.restart, cfg.grid.dealias_fraction, params)
            if not state.grid.same_as(grid):
                raise ConfigError("grid", "snapshot grid differs from the configured grid")
            side = read_sidecar(args.restart)
            if side is None:
                raise SnapshotError(f"{args.restart}: missing restart sidecar")
            collector.load_state_dict(side["collector"])
            step_index = int(side["step_index"])
        else:
            state = initial_state(cfg, grid, params)
        sink = CsvSink(out / "diagnostics.csv", append=bool(args.restart))
    except SETUP_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        if out is not None:
            _manifest(out, cfg, status=status, exit_code=code, error=str(exc))
        return code

    def on_snapshot(s: PhaseState, idx: int) -> None:
        write_snapshot(out / f"snap_{idx:08d}.fchf", s, _sidecar(idx, collector))

    sinks = Sinks(on_record=sink, on_snapshot=on_snapshot, record_every=cfg.output.every,
                  snapshot_times=[ts for ts in cfg.output.snapshot_times if ts > state.t],
                  collector=collector)
    final = state
    try:
        final = run(state, params, solver_cfg, sinks, step_index=step_index)
        steps = step_index + round((final.t - state.t) / solver_cfg.dt)
        write_snapshot(out / "final.fchf", final, _sidecar(steps, collector))
        status, code = "completed", EXIT_OK
        extra = {"t_final": final.t, "steps": steps}
    except BlowUpError as exc:
        status, code = "blow-up", EXIT_BLOWUP
        extra = {"t_blowup": exc.t, "first_diverging_monitor": exc.monitor}
        print(f"blow-up: {exc} [monitor {exc.monitor}]", file=sys.stderr)
    except (OSError, SnapshotError) as exc:
        status, code = "io-error", EXIT_CONFIG
        extra = {"error": str(exc)}
        print(f"error: {exc}", file=sys.stderr)
    finally:
        sink.close()
        _manifest(out, cfg, status=status, exit_code=code, wall_time_s=time.perf_counter() - t0,
                  restart_from=str(args.restart) if args.restart else None,
                  rows_written=sink.rows, **extra)
    if not args.quiet and code == EXIT_OK:
        print(f"completed t={final.t:.6g}, {sink.rows} rows -> {out / 'diagnostics.csv'}")
    return code


def cmd_twin(args) -> int:
    t0 = time.perf_counter()
    cfg = out = None
    try:
        cfg, out = _load(args)
        if cfg.twin is None:
            raise ConfigError("twin", "a twin block is required for twin runs")
        grid = cfg.grid.build()
        params = cfg.model.build()
        solver_cfg = cfg.solver.build(grid, params)
        raw = initial_state(cfg, grid, params)
        dphi = twin_perturbation(grid, cfg.twin)
        # both members take the same projection path, so a zero perturbation gives bitwise twins
        s1 = galerkin_project(raw, params)
        s2 = galerkin_project(PhaseState(raw.t, Field(grid, raw.phi.values + dphi.values), raw.u.copy()), params)
    except SETUP_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        if out is not None:
            _manifest(out, cfg, status="config-error", exit_code=EXIT_CONFIG, error=str(exc))
        return EXIT_CONFIG
    try:
        result = twin_run(s1, s2, params, solver_cfg, p=cfg.twin.p, q=cfg.twin.q,
                          fit_fraction=cfg.twin.fit_fraction)
    except BlowUpError as exc:
        _manifest(out, cfg, status="blow-up", exit_code=EXIT_BLOWUP, t_blowup=exc.t,
                  first_diverging_monitor=exc.monitor, wall_time_s=time.perf_counter() - t0)
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    with open(out / "twin.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "H", "h_a", "envelope"])
        for r in result.records:
            w.writerow([_fmt(r.t), _fmt(r.H), _fmt(r.h_a), _fmt(r.envelope)])
    code = EXIT_OK if result.envelope_respected else EXIT_TWIN_VIOLATION
    _manifest(out, cfg, status="completed" if code == EXIT_OK else "envelope-violated", exit_code=code,
              c_fit=result.c_fit, fit_until=result.fit_until, violations=result.violations[:20],
              wall_time_s=time.perf_counter() - t0)
    if not args.quiet:
        print(f"twin run: C_fit={result.c_fit:.4g}, envelope "
              f"{'respected' if code == EXIT_OK else 'VIOLATED'}")
    return code


def cmd_verify(args) -> int:
    from .verification import SUITES, run_suites

    if args.list:
        for name in SUITES:
            print(name)
        return EXIT_OK
    try:
        results = run_suites(args.suite or None)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.seconds:6.2f}s  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CONFIG


def cmd_inspect(args) -> int:
    try:
        hdr = read_header(args.snapshot)
        if Path(args.snapshot).stat().st_size - hdr.payload_offset < hdr.payload_bytes:
            raise SnapshotError("truncated payload")
    except (SnapshotError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(hdr.describe())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fchflow", description="Pseudo-spectral NS / functionalized Cahn-Hilliard runner")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML run configuration")
        sp.add_argument("--out", help="output directory (default: output.dir)")
        sp.add_argument("--seed", type=int, help="override ic.seed")
        sp.add_argument("--quiet", action="store_true")

    r = sub.add_parser("run", help="integrate and stream diagnostics")
    common(r)
    r.add_argument("--restart", help="resume from a snapshot (needs its .json sidecar)")
    r.set_defaults(fn=cmd_run)

    t = sub.add_parser("twin", help="twin-run distance against a fitted Gronwall envelope")
    common(t)
    t.set_defaults(fn=cmd_twin)

    v = sub.add_parser("verify", help="run verification suites")
    v.add_argument("--list", action="store_true", help="print suite names")
    v.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    v.add_argument("--quiet", action="store_true")
    v.set_defaults(fn=cmd_verify)

    i = sub.add_parser("inspect", help="print a snapshot header")
    i.add_argument("snapshot")
    i.add_argument("--quiet", action="store_true")
    i.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.quiet)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
