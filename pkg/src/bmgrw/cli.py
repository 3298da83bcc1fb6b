"""Command-line entry point: ``bmgrw <subcommand> [--config c] [--seed s] [--out dir] ...``.

Exit status 0 when every assertion passes, 2 when any fails, 1 on usage or
configuration errors; failures are also summarized as JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import acceptance
from . import harness as H
from .artifacts import write_increments, write_snapshot
from .bohm import write_trajectories
from .config import RunConfig, load_config, parse_config, serialize_config
from .errors import BmGrwError, ConfigError
from .filtering import write_filter_summary
from .grw import write_events
from .report import RunReport

DEFAULT_PRESET = {
    "schrodinger": "free_gaussian",
    "bohm": "two_slit",
    "grw-discrete": "grw_discrete",
    "grw-continuous": "free_gaussian",
    "filter": "bohmian_filter",
    "equivalence": "collapse_equivalence",
    "collapse-stats": "two_gaussian",
    "equilibrium": "equilibrium",
    "continuum-limit": "continuum",
    "verify-all": "free_gaussian",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bmgrw", description="Bohmian / GRW / filtering simulator")
    sub = parser.add_subparsers(dest="command", metavar="subcommand")
    for name in DEFAULT_PRESET:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", help="worker threads: a positive integer or 'auto'")
        p.add_argument("--quick", action="store_true", help="desk-scale sizes (verify-all)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out is not None:
        out["output_dir"] = args.out
    if args.threads is not None:
        out["threads"] = args.threads if args.threads == "auto" else _int(args.threads, "threads")
    return out


def _int(text, key):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}", key=key) from None


def resolve_config(args) -> RunConfig:
    overrides = _overrides(args)
    if args.config:
        return load_config(args.config, overrides)
    text = f"scenario = {DEFAULT_PRESET[args.command]}\n"
    return parse_config(text, overrides)


def _prepare_output(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    for sub in ("snapshots", "paths"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    (out / "resolved_config").write_text(serialize_config(cfg))
    return out


def _write_snapshots(out: Path, cfg: RunConfig, snaps) -> None:
    if "snapshots" not in cfg.emit:
        return
    grid = cfg.scenario.build_grid()
    for j, (t, psi) in enumerate(snaps):
        write_snapshot(out / "snapshots" / f"psi_{j:04d}.pwf", grid, psi, t)


def _write_paths(out: Path, rep: RunReport, dt: float) -> None:
    for name in ("dW", "dY", "dB"):
        if name in rep.paths:
            write_increments(out / "paths" / f"{name}.bin", rep.paths[name], dt)


def run_command(command: str, cfg: RunConfig, quick: bool) -> RunReport:
    sc = cfg.scenario
    threads = cfg.thread_count()
    out = _prepare_output(cfg)
    events = []
    if command == "schrodinger":
        snaps = []
        rep = H.run_schrodinger(sc, snapshots=snaps)
        _write_snapshots(out, cfg, snaps)
    elif command == "grw-continuous":
        snaps = []
        rep = H.run_grw_continuous(sc, snapshots=snaps)
        _write_snapshots(out, cfg, snaps)
    elif command == "grw-discrete":
        rep = H.run_grw_discrete(sc, events=events)
    elif command == "bohm":
        traj = []
        rep = H.run_bohm(sc, trajectories=traj, threads=threads)
        if "csv" in cfg.emit:
            write_trajectories(out / "paths" / "trajectories.csv", *traj)
    elif command == "filter":
        rep = H.run_filter_linear(sc) if sc.filter.drift == "linear" else H.run_filter_bohmian(sc)
    elif command == "equivalence":
        rep = H.run_equivalence(sc, threads=threads)
    elif command == "collapse-stats":
        rep = H.run_collapse_statistics(sc, threads=threads)
    elif command == "equilibrium":
        rep = H.run_equilibrium_under_collapse(sc, threads=threads)
    elif command == "continuum-limit":
        rep = H.run_continuum_limit(sc)
    elif command == "verify-all":
        rep = verify_all(cfg, quick, out)
    else:  # pragma: no cover - argparse restricts the choices
        raise UsageError(f"unknown subcommand {command}")
    _write_paths(out, rep, sc.dt)
    if "filter_summary" in rep.paths and "jsonl" in cfg.emit:
        t, m, v, l1 = rep.paths["filter_summary"]
        write_filter_summary(out / "filter_summary.jsonl", t, m, v, l1)
    if command == "grw-discrete" and "jsonl" in cfg.emit:
        write_events(out / "events.jsonl", events)
    rep.write(out, svg="svg" in cfg.emit)
    if "csv" not in cfg.emit:
        (out / "metrics.csv").unlink(missing_ok=True)
    return rep


def verify_all(cfg: RunConfig, quick: bool, out: Path) -> RunReport:
    seed = cfg.seed

    def progress(n, rep):
        status = "PASS" if rep.passed else "FAIL"
        print(f"criterion {n:2d} {status}  {acceptance.CRITERIA[n]}  ({rep.wall_clock:.1f} s)", flush=True)
        rep.write(out / f"criterion_{n}", svg="svg" in cfg.emit)

    reports = acceptance.verify_all(seed, quick=quick, threads=cfg.thread_count(), progress=progress)
    return acceptance.combined_report(reports, seed, quick)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(json.dumps({"error": "config", "message": str(exc), "key": getattr(exc, "key", None),
                          "line": getattr(exc, "line", None)}), file=sys.stderr)
        return 1
    t0 = time.perf_counter()
    try:
        rep = run_command(args.command, cfg, args.quick)
    except BmGrwError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    print(f"{rep.name}: {'PASS' if rep.passed else 'FAIL'}  digest {rep.digest()}  "
          f"({time.perf_counter() - t0:.1f} s)  -> {cfg.output_dir}")
    if not rep.passed:
        print(json.dumps(rep.failure_summary()), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
