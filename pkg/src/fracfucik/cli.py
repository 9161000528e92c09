"""Command line entry point.

    fracfucik <command> CONFIG [--output-dir DIR] [--seed N] [--threads N]
    fracfucik validate PATH [PATH ...]

Exit codes: 0 all checks passed, 2 a check failed or was flagged (including a
solver or hypothesis error), 1 usage or configuration error.  ``FRACFUCIK_THREADS`` sets the thread count when
``--threads`` is not given.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .estimates import EstimateError
from .fucik import FucikConvergenceError
from .operator import QuadratureError
from .pipelines import (Timer, load_solution, run_bubble, run_degiorgi, run_eigs, run_fucik,
                        run_linking, run_solve)
from .report import validate_file, write_manifest
from .solver import LinkingError
from .spectrum import EigenSolverError

log = logging.getLogger("fracfucik")

COMMANDS = ("eigs", "fucik", "bubble-check", "linking-check", "solve", "degiorgi")
THREADS_ENV = "FRACFUCIK_THREADS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fracfucik", description="Fractional Fucik spectrum and critical-growth solver")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("config", help="INI run configuration")
        c.add_argument("--output-dir", default=".", help="directory for reports (created if missing)")
        c.add_argument("--seed", type=int, default=None, help="overrides [solver] seed")
        c.add_argument("--threads", type=int, default=None, help=f"worker threads (else ${THREADS_ENV}, else 1)")
        c.add_argument("-v", "--verbose", action="store_true")
        if name == "eigs":
            c.add_argument("--dump-matrices", action="store_true", help="write K and M as triplets")
        if name == "degiorgi":
            c.add_argument("--solution", default=None, help="solution.csv from a previous solve run")
    v = sub.add_parser("validate")
    v.add_argument("paths", nargs="+", help="output files or directories")
    return p


def _threads(arg) -> int:
    if arg is not None:
        n = arg
    else:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            n = int(raw)
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"thread count must be >= 1, got {n}")
    return n


def _validate(paths) -> int:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files += sorted(f for f in p.iterdir() if f.suffix in (".csv", ".json", ".triplets"))
        else:
            files.append(p)
    if not files:
        raise UsageError("no files to validate")
    bad = 0
    for f in files:
        problems = validate_file(f)
        for msg in problems:
            print(msg, file=sys.stderr)
        bad += bool(problems)
        print(f"{'ok  ' if not problems else 'FAIL'} {f}")
    return 2 if bad else 0


def _run(args) -> int:
    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.solver["seed"]
    threads = _threads(args.threads)
    out = args.output_dir
    os.makedirs(out, exist_ok=True)
    timer = Timer()
    cmd = args.command
    if cmd == "eigs":
        passed, _, files = run_eigs(cfg, out, seed, timer, dump=args.dump_matrices)
    elif cmd == "fucik":
        passed, _, files = run_fucik(cfg, out, seed, timer, threads=threads)
    elif cmd == "bubble-check":
        passed, _, files = run_bubble(cfg, out, seed, timer)
    elif cmd == "linking-check":
        passed, _, files = run_linking(cfg, out, seed, timer)
    elif cmd == "solve":
        passed, _, files, _ = run_solve(cfg, out, seed, timer)
    else:
        solution = None
        if args.solution:
            sv = cfg.solver
            if sv["a"] is None or sv["b"] is None:
                raise ConfigError("--solution needs explicit [solver] a and b")
            u = load_solution(args.solution, cfg.mesh.dim)
            solution = (u, sv["a"], sv["b"])
        passed, _, files = run_degiorgi(cfg, out, seed, timer, solution=solution)
    write_manifest(out, cmd, seed, cfg.to_dict(), timer.stages, files, __version__)
    log.info("%s: %s (%s)", cmd, "passed" if passed else "FLAGGED", out)
    return 0 if passed else 2


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"fracfucik: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "validate":
            return _validate(args.paths)
        return _run(args)
    except (UsageError, ConfigError) as exc:
        print(f"fracfucik: error: {exc}", file=sys.stderr)
        return 1
    except (LinkingError, EstimateError, FucikConvergenceError, QuadratureError, EigenSolverError) as exc:
        # the computation ran but a hypothesis or convergence check failed
        print(f"fracfucik: check failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # inadmissible parameters caught by the domain types (bubble support, grids, levels)
        print(f"fracfucik: error: invalid parameters: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
