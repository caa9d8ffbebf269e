"""Command-line entry point: ``mmss {synth,train,eval,inspect-labels}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .dataset import DataError, load_manifest, make_synthetic, write_dataset
from .ssplabel import PseudoLabelStore
from .train import ConfigError, SyntheticSpec, Trainer, TrainConfig, run_training

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    parser = _Parser(prog="mmss", description="Multimodal review helpfulness ranking.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic train/dev/test corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--products", type=int, default=8)
    p.add_argument("--eval-products", type=int, default=None)
    p.add_argument("--reviews", type=int, default=8)
    p.add_argument("--d-t", type=int, default=16)
    p.add_argument("--d-roi", type=int, default=16)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("train", help="train and report test metrics")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--data", help="directory holding train.json / dev.json / test.json")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--ablate", action="append", choices=["ptrt", "pvrv", "ptrv", "pvrt", "rtrv"])
    p.add_argument("--disable-ssp", action="store_true")
    p.add_argument("--direct-concat", action="store_true")
    p.add_argument("--tau", type=int)
    p.add_argument("--clamp-labels", action="store_true")
    p.add_argument("--out", help="run directory (checkpoints, logs, report)")
    p.add_argument("--show-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("eval", help="score a manifest with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--tau", type=int)
    p.add_argument("--out", help="write the report as JSON here")

    p = sub.add_parser("inspect-labels", help="dump pseudo-label history")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--labels", help="pseudo-label JSON written by train")
    p.add_argument("--subtask", choices=["ptrt", "pvrv", "ptrv", "pvrt", "rtrv"])
    return parser


def resolve_config(args):
    config = TrainConfig()
    if args.config:
        try:
            config = TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"bad config {args.config}: {exc}") from exc
    overrides = {
        "seed": args.seed,
        "seeds": args.seeds,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "margin": args.margin,
        "learning_rate": args.lr,
        "tau": args.tau,
        "out": args.out,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    if args.ablate:
        config.ablate = sorted(set(config.ablate) | set(args.ablate))
    if args.disable_ssp:
        config.disable_ssp = True
    if args.direct_concat:
        config.direct_concat = True
    if args.clamp_labels:
        config.ssp.clamp = True
    if args.data:
        base = Path(args.data)
        config.data = {split: str(base / f"{split}.json") for split in ("train", "dev", "test")}
    if config.out is None:
        config.out = "mmss-run"
    return config.validate()


def cmd_synth(args):
    spec = SyntheticSpec(
        n_products=args.products,
        reviews_per_product=args.reviews,
        d_t=args.d_t,
        d_roi=args.d_roi,
        s_noise=args.noise,
        seed=args.seed,
        n_eval_products=args.eval_products,
    )
    n_eval = spec.n_eval_products or spec.n_products
    for offset, (split, n) in enumerate([("train", spec.n_products), ("dev", n_eval), ("test", n_eval)]):
        products = make_synthetic(
            n, spec.reviews_per_product, spec.d_t, spec.d_roi,
            seed=spec.seed + offset, s_noise=spec.s_noise, prefix=f"{split}-",
        )
        path = write_dataset(args.out, products, name=f"{split}.json")
        print(f"wrote {path}")
    return EXIT_OK


def cmd_train(args):
    config = resolve_config(args)
    if args.show_config:
        print(json.dumps(config.to_dict(), indent=1))
        return EXIT_OK
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    result = run_training(config)
    label = "MM-SS"
    if config.direct_concat:
        label = "w/o module(b)"
    elif config.disable_ssp:
        label = "w/o module(d)"
    elif config.ablate:
        label = "w/o " + ",".join(config.ablate)
    print(result.report.table(label))
    for r in result.seeds:
        print(f"seed {r.seed}: best epoch {r.best_epoch} dev MAP {r.best_dev_map:.4f} "
              f"test MAP {r.test_report.map_score:.4f}")
    print(f"run directory: {config.out}")
    return EXIT_OK


def cmd_eval(args):
    try:
        trainer = Trainer.load(args.checkpoint)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror}") from exc
    except ValueError as exc:
        raise DataError(f"{args.checkpoint}: {exc}") from exc
    if args.tau is not None:
        trainer.config.tau = args.tau
    manifest, products = load_manifest(args.manifest)
    if (manifest.d_t, manifest.d_roi) != (trainer.dims.d_t, trainer.dims.d_roi):
        raise DataError(
            f"manifest dims ({manifest.d_t}, {manifest.d_roi}) do not match checkpoint "
            f"({trainer.dims.d_t}, {trainer.dims.d_roi})"
        )
    report = trainer.evaluate(products)
    print(report.table())
    if args.out:
        report.save(args.out)
    return EXIT_OK


def cmd_inspect_labels(args):
    if args.checkpoint:
        try:
            store = Trainer.load(args.checkpoint).store
        except OSError as exc:
            raise DataError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror}") from exc
        except ValueError as exc:
            raise DataError(f"{args.checkpoint}: {exc}") from exc
    else:
        try:
            store = PseudoLabelStore.load(args.labels)
        except OSError as exc:
            raise DataError(f"cannot read labels {args.labels}: {exc.strerror}") from exc
        except (ValueError, KeyError) as exc:
            raise DataError(f"{args.labels}: malformed label file") from exc
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["review_id", "subtask", "epoch", "value"])
    for epoch, rid, subtask, value in store.history:
        if args.subtask and subtask != args.subtask:
            continue
        writer.writerow([rid, subtask, epoch, repr(float(value))])
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "inspect-labels": cmd_inspect_labels,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
