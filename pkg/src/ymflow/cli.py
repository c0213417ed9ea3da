"""Command line: ``run``, ``validate`` and ``inspect``.

Exit codes: 0 success, 1 config error, 2 numerical abort, 3 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .runner import EXIT_CONFIG, EXIT_IO, EXIT_OK, run_scenario
from .snapshot import SnapshotError, inspect_snapshot


def _grid(text: str) -> list[int]:
    try:
        return [int(p) for p in text.replace(" ", "").split(",") if p]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}: comma-separated integers") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ymflow", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and write its artifacts")
    run.add_argument("--config", required=True, help="scenario config file")
    run.add_argument("--out", help="output directory (default: output.directory)")
    run.add_argument("--grid", type=_grid,
                     help="grid sizes, comma separated; one value applies to every axis")
    run.add_argument("--tmax", type=float, help="override flow.t_max")
    run.add_argument("--dt", type=float, help="override flow.dt")
    run.add_argument("--snapshot-every", type=int, help="override flow.snapshot_every")

    val = sub.add_parser("validate", help="parse and check a config without running it")
    val.add_argument("--config", required=True)

    ins = sub.add_parser("inspect", help="print a snapshot header and summary statistics")
    ins.add_argument("snapshot")
    return ap


def _overrides(args, n_hint: int | None) -> dict:
    out = {}
    if args.grid is not None:
        g = args.grid
        if len(g) == 1 and n_hint:
            g = g * (2 * n_hint)
        out["torus", "grid"] = g
    if args.tmax is not None:
        out["flow", "t_max"] = args.tmax
    if args.dt is not None:
        out["flow", "dt"] = args.dt
    if args.snapshot_every is not None:
        out["flow", "snapshot_every"] = args.snapshot_every
    return out


def _load(path: str, args=None):
    """Config plus an exit code; errors are printed with their line numbers."""
    try:
        cfg = load_config(path)
        if args is not None:
            ov = _overrides(args, cfg.torus.n)
            if ov:
                cfg = load_config(path, ov)
        return cfg, EXIT_OK
    except OSError as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return None, EXIT_IO
    except ConfigError as exc:
        for ln, msg in exc.errors:
            where = f"{path}:{ln}" if ln else f"{path}"
            print(f"{where}: {msg}", file=sys.stderr)
        return None, EXIT_CONFIG


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        cfg, code = _load(args.config)
        if cfg is not None:
            print(f"{args.config}: ok")
        return code
    if args.command == "inspect":
        try:
            print(inspect_snapshot(args.snapshot))
        except OSError as exc:
            print(f"{args.snapshot}: {exc}", file=sys.stderr)
            return EXIT_IO
        except SnapshotError as exc:
            print(f"{args.snapshot}: {exc}", file=sys.stderr)
            return EXIT_IO
        return EXIT_OK
    cfg, code = _load(args.config, args)
    if cfg is None:
        return code
    res = run_scenario(cfg, args.out)
    if res.error:
        print(f"run ended with status {res.status}: {res.error}", file=sys.stderr)
    else:
        print(f"wrote {res.out_dir} ({len(res.rows)} rows)")
    return res.status


if __name__ == "__main__":
    sys.exit(main())
