"""flexpi command line: run, sweep, verify and trace-gen."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from flexpi.types import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("flexpi")


def _load(args):
    from flexpi.bench.config import load_config

    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("trials", "must be >= 1")
        changes["trials"] = args.trials
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _out_dir(args, cfg) -> Path:
    return Path(args.out_dir if args.out_dir is not None else cfg.output)


def cmd_run(args) -> int:
    """One trial of the first cell under the first noise scenario."""
    from flexpi.bench.config import LinearQuadraticSpec
    from flexpi.bench.sweep import TRIAL_HEADER, initial_impedances, run_cell

    cfg = _load(args)
    if isinstance(cfg.plant, LinearQuadraticSpec):
        return _run_lq(cfg)
    cfg = dataclasses.replace(cfg, trials=1)
    cell, noise = cfg.cells[0], cfg.noise[0]
    row = run_cell(cfg, cell, noise, initial_impedances(cfg))[0]
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "run.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_HEADER)
        w.writerow(row.as_csv())
    status = "success" if row.success else "failure"
    print(f"{row.cell_id} seed {row.seed}: {status} after {row.cycles} cycles, "
          f"RMSE {row.rmse_before:.3f} -> {row.rmse_after:.3f} deg")
    print(f"wrote {path}")
    return EXIT_OK


def _run_lq(cfg) -> int:
    from flexpi.approximator import LinearStateBasis, quadratic_basis
    from flexpi.bench.oracle import riccati_oracle
    from flexpi.engine import run_fpi
    from flexpi.plant import LinearQuadraticPlant

    spec = cfg.plant
    n, m = spec.b.shape
    fpi = cfg.cells[0].fpi.replace(rng_seed=cfg.rng_seed)
    plant = LinearQuadraticPlant(spec.a, spec.b, state_box=spec.state_box)
    policy, _, trace = run_fpi(plant, fpi, initial_gains=spec.initial_gains,
                               critic_basis=quadratic_basis(n, m), actor_basis=LinearStateBasis(n))
    gain, _ = riccati_oracle(spec.a, spec.b, fpi.r_x, fpi.r_u)
    err = float(np.max(np.abs(policy.gains.T + gain)))
    print(f"FPI gain {(-policy.gains.T).tolist()} after {len(trace)} iterations")
    print(f"Riccati gain {gain.tolist()}, max-abs difference {err:.3g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from flexpi.bench.sweep import run_sweep, write_sweep

    cfg = _load(args)
    result = run_sweep(cfg)
    trials, aggs = write_sweep(result, _out_dir(args, cfg))
    for a in result.aggregates:
        print(f"{a.cell_id:32s} {a.setting}  success {a.successes:3d}/{a.trials:<3d} "
              f"tuning {a.tuning_time_mean:7.1f} +/- {a.tuning_time_std:5.1f} cycles")
    print(f"wrote {trials} and {aggs}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from flexpi.bench.verify import verify

    report = verify(args.suite, noise=args.noise)
    print(report.text())
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_trace_gen(args) -> int:
    from flexpi.plant import synthetic_trace, write_trace

    if args.cycles < 1:
        raise ConfigError("cycles", "must be >= 1")
    seed = 0 if args.seed is None else args.seed
    out = Path(args.out)
    if args.out_dir is not None and not out.is_absolute():
        out = Path(args.out_dir) / out
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trace(out, synthetic_trace(args.cycles, np.random.default_rng(seed)))
    print(f"wrote {args.cycles}-cycle trace to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config rng_seed")
    common.add_argument("--out-dir", default=None, help="directory for output files")
    common.add_argument("--trials", type=int, default=None, help="override trials per cell")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    p = argparse.ArgumentParser(prog="flexpi", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run a single trial")
    r.add_argument("config", nargs="?", default=None, help="YAML config (default: shipped)")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common], help="run every cell and noise scenario")
    s.add_argument("config", nargs="?", default=None, help="YAML config (default: shipped)")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", parents=[common], help="property suites on LQ instances")
    v.add_argument("suite", nargs="?", default="all",
                   choices=["all", "riccati", "lq", "monotonicity", "stability",
                            "supplemental", "error-bound", "per"])
    v.add_argument("--noise", type=float, default=0.0,
                   help="sensor noise fraction for a diagnostic monotonicity run")
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("trace-gen", parents=[common], help="write a synthetic variance trace")
    t.add_argument("cycles", type=int)
    t.add_argument("out")
    t.set_defaults(func=cmd_trace_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:  # a missing input is a validation failure
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
