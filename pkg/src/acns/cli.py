"""Command-line entry point.

    acns validate CONFIG
    acns run CONFIG OUT
    acns ensemble CONFIG OUT [--workers W]
    acns dependence CONFIG OUT [--eps E ...]
    acns pressure TRAJECTORY_DIR OUT
    acns converge CONFIG OUT

Exit codes: 0 success, 1 a verdict failed, 2 invalid configuration or
arguments, 3 blow-up, 4 ensemble member failure, 5 unusable run directory.
Errors are printed to stderr as one JSON object.  ACNS_WORKERS overrides
the configured worker count.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from . import config as cfgmod
from . import runner
from .galerkin import BlowUpError
from .snapshot import SnapshotError

EXIT_VERDICT = 1
EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_MEMBER = 4
EXIT_RUNDIR = 5


def _emit(obj, stream=None):
    print(json.dumps(obj, sort_keys=True), file=stream or sys.stdout)


def cmd_validate(args):
    cfg = cfgmod.load(args.config)
    _emit({"valid": True, "config_sha256": cfg.digest()})
    return 0


def cmd_run(args):
    summary = runner.run_single(cfgmod.load(args.config), args.out)
    _emit(summary)
    return 0


def cmd_ensemble(args):
    cfg = cfgmod.load(args.config)
    verdict = runner.run_ensemble(cfg, args.out, workers=args.workers)
    _emit(verdict.summary())
    return 0 if verdict.passed else EXIT_VERDICT


def cmd_dependence(args):
    cfg = cfgmod.load(args.config)
    summary = runner.run_dependence(cfg, args.out, eps=args.eps)
    head, _ = runner.dependence_records(summary)
    _emit(head)
    return 0


def cmd_pressure(args):
    report = runner.run_pressure(args.trajectory, args.out)
    _emit({k: v for k, v in report.items() if k != "factors"})
    return 0


def cmd_converge(args):
    report = runner.run_converge(cfgmod.load(args.config), args.out)
    _emit(report.to_dict())
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="acns", description="Stochastic Allen-Cahn-Navier-Stokes simulator and checks")
    p.add_argument("--version", action="version", version=f"acns {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a configuration file")
    s.add_argument("config")
    s.set_defaults(fn=cmd_validate)

    for name, fn, text in (("run", cmd_run, "single trajectory"),
                           ("converge", cmd_converge, "self-convergence ladder")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config")
        s.add_argument("out", help="output directory (must not exist or be empty)")
        s.set_defaults(fn=fn)

    s = sub.add_parser("ensemble", help="Monte-Carlo energy inequality verdict")
    s.add_argument("config")
    s.add_argument("out")
    s.add_argument("--workers", type=int, default=None, help=f"worker processes (default: ${runner.WORKERS_ENV} or config)")
    s.set_defaults(fn=cmd_ensemble)

    s = sub.add_parser("dependence", help="paired-path continuous dependence experiment")
    s.add_argument("config")
    s.add_argument("out")
    s.add_argument("--eps", type=float, nargs="+", default=None, help="override the eps ladder")
    s.set_defaults(fn=cmd_dependence)

    s = sub.add_parser("pressure", help="recover the pressure along a stored trajectory")
    s.add_argument("trajectory", help="run directory written with output.cadence = 1")
    s.add_argument("out")
    s.set_defaults(fn=cmd_pressure)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", None) is not None and args.workers < 1:
        _emit({"error": "config", "path": "--workers", "message": "must be >= 1"}, sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except cfgmod.ConfigError as exc:
        _emit(exc.to_dict(), sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        _emit({"error": "blowup", "message": str(exc), "step": exc.step, "t": exc.t}, sys.stderr)
        return EXIT_BLOWUP
    except runner.MemberFailure as exc:
        _emit({"error": "member_failure", "failures": exc.failures}, sys.stderr)
        return EXIT_MEMBER
    except (runner.RunDirError, SnapshotError, FileNotFoundError) as exc:
        _emit({"error": "rundir", "message": str(exc)}, sys.stderr)
        return EXIT_RUNDIR
    except ValueError as exc:
        # initial-data and domain checks that can only run once the basis exists
        _emit({"error": "config", "path": "initial", "message": str(exc)}, sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
