"""Command-line entry point: ``nystromnet <command> --config FILE``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

from . import experiments as ex
from .checkpoint import save_checkpoint
from .config import ConfigError, RunConfig, Seeds, load_config
from .linalg import NotPSDError
from .training import DivergenceError

log = logging.getLogger("nystromnet")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def write_rows(path, rows, columns=None):
    columns = columns or (list(rows[0]) if rows else [])
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    log.info("wrote %d rows to %s", len(rows), path)


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def build_parser():
    p = argparse.ArgumentParser(prog="nystromnet", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key=value run configuration")
    common.add_argument("--out", type=Path, help="output directory (default: output.path)")
    common.add_argument("--repeats", type=int, help="number of seeded repeats")
    common.add_argument("--seed", type=int, help="base seed applied to data, init and landmarks")
    common.add_argument("--threads", type=int, default=1, help="parallel repeats")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train one configuration")
    sp = sub.add_parser("sweep", parents=[common], help="accuracy against model size")
    sp.add_argument("--axis", choices=sorted(ex.AXIS_ARCHS), default="m")
    sp.add_argument("--values", type=_ints, help="comma-separated axis values")
    sp = sub.add_parser("smallset", parents=[common], help="few labeled samples per class")
    sp.add_argument("--per-class", type=_ints, default=(5, 20))
    sp.add_argument("--archs", type=lambda s: tuple(s.split(",")), help=f"subset of {sorted(ex.SMALLSET_ARCHS)}")
    sp = sub.add_parser("mkl", parents=[common], help="RBF bandwidth grid against the fused multi-kernel layer")
    sp.add_argument("--scales", type=_floats, default=(0.01, 0.1, 1.0, 10.0, 100.0),
                    help="bandwidths as multiples of the heuristic sigma")
    sp.add_argument("--ms", type=_ints, default=(2, 4, 8))
    sub.add_parser("embed2d", parents=[common], help="2-D Nystrom coordinates of test rows")
    sub.add_parser("gramcheck", parents=[common], help="feature-map invariant checks")
    return p


def _setup(args):
    if args.config is None:
        if args.command != "gramcheck":
            raise ConfigError("--config is required")
        cfg = RunConfig()
    else:
        if not args.config.exists():
            raise ConfigError(f"config file {args.config} not found")
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=Seeds(args.seed, args.seed, args.seed))
    out = args.out or Path(cfg.output)
    threads = args.threads
    if os.environ.get("NYSTROM_DETERMINISTIC") == "1":
        threads = 1
    return cfg, out, max(1, threads)


def run(args):
    cfg, out, threads = _setup(args)
    cmd = args.command
    if cmd == "train":
        rows, first = ex.run_train(cfg, args.repeats or 1, threads, keep_stack=True)
        write_rows(out / "train.csv", rows)
        save_checkpoint(first.stack, out / "model.ckpt")
        print(f"test_acc={first.test_acc:.4f} trainable_params={first.trainable_params}")
    elif cmd == "sweep":
        rows = ex.run_sweep(cfg, args.axis, args.values, args.repeats or 10, threads)
        write_rows(out / "sweep.csv", rows)
        write_rows(out / "sweep_summary.csv", ex.summarize(rows, ["value"]))
    elif cmd == "smallset":
        rows = ex.run_smallset(cfg, args.per_class, args.repeats or 30, args.archs, threads)
        write_rows(out / "smallset.csv", rows)
        write_rows(out / "smallset_summary.csv", ex.summarize(rows, ["arch", "per_class"]))
    elif cmd == "mkl":
        rows = ex.run_mkl(cfg, args.scales, args.ms, args.repeats or 10, threads)
        write_rows(out / "mkl.csv", rows)
        write_rows(out / "mkl_summary.csv", ex.summarize(rows, ["m", "sigma_scale"]))
    elif cmd == "embed2d":
        write_rows(out / "embed2d.csv", ex.run_embed2d(cfg), ["phi1", "phi2", "label"])
    elif cmd == "gramcheck":
        rows = ex.run_gramcheck(cfg.seed.data)
        write_rows(out / "gramcheck.csv", rows)
        for r in rows:
            print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['check']:<32} {r['value']:.3e} <= {r['tolerance']:.0e}")
        if not all(r["passed"] for r in rows):
            return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = None
    if os.environ.get("NYSTROM_DETERMINISTIC") == "1":
        try:
            from threadpoolctl import threadpool_limits
            limiter = threadpool_limits(1)
        except ImportError:
            pass
    try:
        return run(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, NotPSDError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        if limiter is not None:
            limiter.unregister()


if __name__ == "__main__":
    sys.exit(main())
