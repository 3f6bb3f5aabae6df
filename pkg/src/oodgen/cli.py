"""Command-line entry point.

    oodgen toy3d --out runs
    oodgen train-cvae --preset mnist --override in_images=... --override in_labels=...
    oodgen report --out runs/toy3d-<hash>-s0
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from . import metrics
from .nn import ContractError

log = logging.getLogger("oodgen")


def _config(args):
    base = ex.preset(args.preset)
    cfg = ex.load_config(args.config, args.override or (), base=base)
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out is not None:
        kw["out"] = args.out
    return cfg.replace(**kw)


def _train_cvae(cfg):
    run = ex.RunDir(cfg)
    run.write_manifest()
    train, _ = ex.load_inliers(cfg)
    ex.stage_cvae(cfg, run, train)
    return run.path


def _gen_ood(cfg):
    run = ex.RunDir(cfg)
    run.write_manifest()
    train, _ = ex.load_inliers(cfg)
    model, _ = ex.stage_cvae(cfg, run, train)
    ex.stage_gen_ood(cfg, run, model, train)
    return run.path


def _train_detector(cfg):
    run = ex.RunDir(cfg)
    run.write_manifest()
    train, held = ex.load_inliers(cfg)
    model, _ = ex.stage_cvae(cfg, run, train)
    t1, t2 = ex.stage_gen_ood(cfg, run, model, train)
    det = ex.stage_detector(cfg, run, train, held, ex.OodBatch.merge(t1, t2))
    print(f"held-out inlier accuracy {det.heldout_accuracy:.4f}")
    return run.path


def _evaluate(cfg):
    result = ex.run_pipeline(cfg)
    print(metrics.format_table(result.reports))
    print(f"accuracy {result.accuracy:.4f}  best rule {result.best_rule}")
    return result.run_dir


def _baselines(cfg):
    result = ex.run_baselines(cfg)
    print(metrics.format_table(result.reports))
    print(f"plain classifier accuracy {result.accuracy:.4f}")
    return result.run_dir


def _toy3d(cfg):
    if cfg.in_dataset != "toy3d":
        raise ContractError("toy3d needs in_dataset=toy3d")
    result = ex.run_pipeline(cfg)
    ex.emit_toy_plotdata(result.run_dir, result.train)
    print(metrics.format_table(result.reports))
    print(f"accuracy {result.accuracy:.4f}  ({result.seconds:.1f} s)")
    return result.run_dir


COMMANDS = {
    "train-cvae": _train_cvae,
    "gen-ood": _gen_ood,
    "train-detector": _train_detector,
    "evaluate": _evaluate,
    "baselines": _baselines,
    "toy3d": _toy3d,
}


def _report(paths):
    """Collect metrics/baselines CSVs from run directories into one table."""
    reports = []
    for p in paths:
        p = Path(p)
        for name in ("metrics.csv", "baselines.csv"):
            if (p / name).exists():
                reports.extend(metrics.reports_from_csv((p / name).read_text()))
    if not reports:
        raise ContractError(f"no metrics found under {', '.join(map(str, paths))}")
    print(metrics.format_table(reports))


def build_parser():
    parser = argparse.ArgumentParser(prog="oodgen", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--preset", default="mnist" if name != "toy3d" else "toy3d", choices=("toy3d", "mnist"))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="parent directory for run directories")
        p.add_argument("--override", action="append", metavar="KEY=VALUE")
    p = sub.add_parser("report")
    p.add_argument("runs", nargs="+", help="run directories")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "report":
            _report(args.runs)
            return 0
        cfg = _config(args)
        run_dir = COMMANDS[args.command](cfg)
        print(f"run directory: {run_dir}")
        return 0
    except (ContractError, ex.StageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
