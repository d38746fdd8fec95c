"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or failed run, 2 observability
dimension mismatch, 64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, dump_config, parse_config

EXIT_OK, EXIT_INVALID, EXIT_MISMATCH, EXIT_USAGE = 0, 1, 2, 64

log = logging.getLogger("teskf")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _globals(p: argparse.ArgumentParser, top: bool):
    # Defaults are suppressed on subparsers so a flag given before the
    # subcommand is not clobbered by the subparser default.
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=d(None), help="master seed (overrides config)")
    p.add_argument("--config", type=Path, default=d(None), help="JSON run configuration")
    p.add_argument("--out", type=Path, default=d(Path("teskf-out")), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="teskf", description="T-ESKF visual-inertial simulation toolkit")
    _globals(ap, True)
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("simulate", help="export IMU, feature and ground-truth streams")
    s.add_argument("--run", type=int, default=0, help="run index for the derived seed")

    s = sub.add_parser("run", help="one run of every configured filter")
    s.add_argument("--run", type=int, default=0)
    s.add_argument("--updates", action="store_true", help="also write per-frame update reports (JSONL)")

    s = sub.add_parser("montecarlo", help="Monte-Carlo batch with summary statistics")
    s.add_argument("--runs", type=int, default=None)
    s.add_argument("--jobs", type=int, default=None)

    s = sub.add_parser("observability", help="numeric null-space audit of one estimator trace")
    s.add_argument("--mode", choices=("ideal", "eskf", "fej", "teskf"), required=True)
    s.add_argument("--tol", type=float, default=None, help="null threshold relative to s_max")

    s = sub.add_parser("bench", help="time efficient vs naive transformed propagation")
    s.add_argument("--landmarks", type=int, nargs="+", default=None, metavar="M")
    s.add_argument("--trials", type=int, default=None)

    for p in sub.choices.values():
        _globals(p, False)
    return ap


def _load(args) -> RunConfig:
    cfg = parse_config(args.config) if args.config is not None else RunConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        over["n_runs"] = args.runs
    if getattr(args, "jobs", None) is not None:
        over["jobs"] = args.jobs
    if getattr(args, "landmarks", None) is not None:
        over["bench_landmarks"] = list(args.landmarks)
    if getattr(args, "trials", None) is not None:
        over["bench_trials"] = args.trials
    if getattr(args, "updates", False):
        over["write_updates"] = True
    return replace(cfg, **over) if over else cfg


def _cmd_simulate(cfg: RunConfig, args) -> int:
    from .simulator import export, gen_frames, gen_imu

    world = cfg.world(args.run)
    imu = gen_imu(world)
    frames = gen_frames(world, imu)
    export(world, imu, frames, args.out)
    print(f"wrote {len(imu.t)} IMU samples and {len(frames)} frames to {args.out}")
    return EXIT_OK


def _report(doc: dict) -> int:
    for kind, s in doc["filters"].items():
        late = s["nees_late_mean"]
        print(f"{kind:7s} rot {s['rmse_rot_deg']:.3f} deg  pos {s['rmse_pos_m']:.3f} m  "
              f"pose NEES {late['nees_pose']:.2f}  yaw NEES {late['nees_yaw']:.2f}")
    for f in doc["failures"]:
        print(f"run {f['run']} failed: {f['error']}", file=sys.stderr)
    return EXIT_INVALID if doc["failures"] else EXIT_OK


def _cmd_run(cfg: RunConfig, args) -> int:
    from .harness import _safe_run, write_outputs

    res = _safe_run((cfg, args.run, cfg.write_updates))
    return _report(write_outputs(args.out, cfg, [res]))


def _cmd_montecarlo(cfg: RunConfig, args) -> int:
    from .harness import run_monte_carlo, write_outputs

    results = run_monte_carlo(cfg, updates=cfg.write_updates)
    return _report(write_outputs(args.out, cfg, results))


def _cmd_observability(cfg: RunConfig, args) -> int:
    from .observability import EXPECTED_NULL, NULL_TOL, run_audit

    tol = NULL_TOL if args.tol is None else args.tol
    audit = run_audit(args.mode, cfg.seed, cfg.obs_ticks, cfg.obs_landmarks)
    s = audit.singular_values
    with open(args.out / "observability.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("index", "singular_value", "ratio", "null"))
        for i, v in enumerate(s):
            w.writerow((i, repr(float(v)), repr(float(v / s[0])), int(v < tol * s[0])))
    dim = audit.null_dim(tol)
    expected = EXPECTED_NULL[args.mode]
    gap = audit.gap_ok(tol)
    print(f"mode {args.mode}: null dim {dim} (expected {expected}), gap {'ok' if gap else 'too small'}")
    return EXIT_OK if dim == expected and gap else EXIT_MISMATCH


def _cmd_bench(cfg: RunConfig, args) -> int:
    from .harness import bench_propagation

    rows = bench_propagation(cfg)
    with open(args.out / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("m", "method", "mean_ns", "p95_ns", "median_ns"))
        w.writerows(rows)
    med = {(m, k): v for m, k, _, _, v in rows}
    for m in dict.fromkeys(r[0] for r in rows):
        e, n = med[(m, "efficient")], med[(m, "naive")]
        print(f"m={m:4d}  efficient {e / 1e3:9.1f} us  naive {n / 1e3:9.1f} us  speedup {n / e:6.1f}x")
    return EXIT_OK


COMMANDS = {
    "simulate": _cmd_simulate, "run": _cmd_run, "montecarlo": _cmd_montecarlo,
    "observability": _cmd_observability, "bench": _cmd_bench,
}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        if args.command is None:
            raise UsageError(ap.format_usage() + "teskf: error: a command is required")
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
    except (ConfigError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_INVALID
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, args.out / "effective_config.json")
        return COMMANDS[args.command](cfg, args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
