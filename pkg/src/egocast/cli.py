"""Command-line entry point: ``egocast <command> [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from egocast import experiments
from egocast.config import RunConfig, load_config

log = logging.getLogger("egocast")

TRAIN_COMMANDS = {"train-current", "train-forecast", "ablate-window", "ablate-visual"}


def _add_common(p: argparse.ArgumentParser, seed_required: bool) -> None:
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--run-dir", help="output directory for checkpoints, curves and reports")
    p.add_argument("--seed", type=int, required=seed_required, help="global seed")
    p.add_argument("--train-data", help="training sequences (JSONL)")
    p.add_argument("--test-data", help="evaluation sequences (JSONL)")
    p.add_argument("--skeleton", choices=["body17", "body21"])
    p.add_argument("--paper-arch", action="store_true", help="full-scale widths, depths and iteration counts")
    p.add_argument("--iterations", type=int, help="training iterations for the module(s) being trained")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--k", type=int, help="past window length (frames)")
    p.add_argument("--n", type=int, help="forecast length (frames)")
    p.add_argument("--provider", choices=["informative", "null"])
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--gt-past", action="store_true", help="feed ground-truth past poses to the forecaster")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="egocast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write synthetic train/test sequence files")
    _add_common(p, seed_required=False)
    p.add_argument("--per-archetype", type=int, help="training sequences per archetype")
    p.add_argument("--test-per-archetype", type=int)
    p.add_argument("--duration", type=float, help="sequence length in seconds")

    p = sub.add_parser("train-current", help="train the current-frame estimator")
    _add_common(p, seed_required=True)
    p.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")

    p = sub.add_parser("train-forecast", help="train the forecaster on pseudo-groundtruth past poses")
    _add_common(p, seed_required=True)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("eval", help="horizon curves, AUC and per-joint errors")
    _add_common(p, seed_required=False)
    p.add_argument("--predictor", default="model", choices=["model", "groundtruth", "translated", "last-pose"])
    p.add_argument("--oracle", action="store_true", help="also report with per-frame root translation aligned")
    p.add_argument("--stride", type=int, help="anchor stride in frames")

    p = sub.add_parser("ablate-window", help="forecaster MPJPE for several past-window lengths")
    _add_common(p, seed_required=True)
    p.add_argument("--k-list", default="5,10,20,40", help="comma-separated window lengths")
    p.add_argument("--horizon", type=float, default=1.0)

    p = sub.add_parser("ablate-visual", help="informative vs null visual provider for the estimator")
    _add_common(p, seed_required=True)

    p = sub.add_parser("show-config", help="print the effective config as JSON")
    _add_common(p, seed_required=False)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    if args.paper_arch:
        cfg.use_full_scale()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.run_dir:
        cfg.run_dir = args.run_dir
    if args.train_data:
        cfg.data.train = args.train_data
    if args.test_data:
        cfg.data.test = args.test_data
    if args.skeleton:
        cfg.skeleton = args.skeleton
    if args.provider:
        cfg.provider.kind = args.provider
    if args.noise_sigma is not None:
        cfg.provider.noise_sigma = args.noise_sigma
    if args.gt_past:
        cfg.forecaster.gt_past = True
    targets = {
        "train-current": [cfg.estimator],
        "train-forecast": [cfg.forecaster],
        "ablate-window": [cfg.forecaster],
        "ablate-visual": [cfg.estimator],
    }.get(args.command, [cfg.estimator, cfg.forecaster])
    for section in targets:
        if args.iterations is not None:
            section.iterations = args.iterations
        if args.lr is not None:
            section.lr = args.lr
        if args.batch_size is not None:
            section.batch_size = args.batch_size
    if args.k is not None:
        cfg.estimator.k = cfg.forecaster.k = args.k
    if args.n is not None:
        cfg.forecaster.n = args.n
    if getattr(args, "per_archetype", None) is not None:
        cfg.generator.sequences_per_archetype = args.per_archetype
    if getattr(args, "test_per_archetype", None) is not None:
        cfg.generator.test_sequences_per_archetype = args.test_per_archetype
    if getattr(args, "duration", None) is not None:
        cfg.generator.duration_s = args.duration
    if getattr(args, "stride", None) is not None:
        cfg.metrics.anchor_stride = args.stride
    return cfg.finalize()


def run(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "show-config":
        print(json.dumps(cfg.to_json(), indent=2, sort_keys=True))
        return 0
    experiments.write_config_echo(cfg, f"config_{cmd}.json")
    if cmd == "generate":
        train, test = experiments.generate(cfg)
        print(f"wrote {train} and {test}")
    elif cmd == "train-current":
        res = experiments.train_current(cfg, resume=args.resume)
        print(f"estimator: {len(res.trace)} iterations, loss {res.trace[0]:.4f} -> {res.trace[-1]:.4f}")
    elif cmd == "train-forecast":
        res = experiments.train_forecast(cfg, resume=args.resume)
        print(f"forecaster: {len(res.trace)} iterations, loss {res.trace[0]:.4f} -> {res.trace[-1]:.4f}")
    elif cmd == "eval":
        reports = experiments.run_eval(cfg, args.predictor, oracle=args.oracle, gt_past=cfg.forecaster.gt_past)
        for tag, rep in reports.items():
            vals = ", ".join(f"{h:g}s {v:.2f}" for h, v in zip(rep.horizons, rep.curve.values))
            print(f"{tag}: {vals} | AUC {rep.auc:.2f} cm")
    elif cmd == "ablate-window":
        try:
            k_list = [int(x) for x in args.k_list.split(",") if x.strip()]
        except ValueError:
            raise experiments.ConfigurationError(f"bad --k-list {args.k_list!r}") from None
        for k, err, area in experiments.ablate_window(cfg, k_list, args.horizon):
            print(f"k={k}: {err:.2f} cm at {args.horizon:g}s, AUC {area:.2f} cm")
    elif cmd == "ablate-visual":
        for arm, err, loss in experiments.ablate_visual(cfg):
            print(f"{arm}: current-frame MPJPE {err:.2f} cm (final train loss {loss:.4f})")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"egocast {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
