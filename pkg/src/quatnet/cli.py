"""Train and inspect quaternion-valued acoustic models.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .checkpoint import load_checkpoint
from .errors import DataError, QuatnetError, UsageError
from .features import EnergyMatrix, load_features, logmel_extract, read_wav, save_features, save_features_csv
from .model import ModelConfig, param_table, preset

log = logging.getLogger("quatnet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="override the config seed")
    parser.add_argument("--threads", type=int, default=default if suppress else 1,
                        help="evaluation worker threads (results do not depend on it)")
    parser.add_argument("--config", default=default, help="model/training config document")
    parser.add_argument("-v", "--verbose", action="store_true", default=default if suppress else False)


def build_parser():
    parser = _Parser(prog="quatnet", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def command(name, help):
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)
        return p

    p = command("features", "convert audio or CSV energies to a QACF1 file")
    p.add_argument("input", help="16-bit mono .wav, .csv (frames x bands) or QACF1 file")
    p.add_argument("output", help="QACF1 file, or .csv to export")
    p.add_argument("--bands", type=int, default=40)

    p = command("train", "train a model on a data directory")
    p.add_argument("--preset", help="named config used when --config is absent")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--dev-dir", required=True)
    p.add_argument("--out", required=True, help="output directory for metrics.jsonl and checkpoints")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.add_argument("--resume", help="continue from a last.ckpt")
    p.add_argument("--figure", help="learning-curve image path (default: OUT/curves.png)")

    p = command("eval", "decode a data directory with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", help="write the report here instead of standard output")

    p = command("params", "per-layer parameter table")
    p.add_argument("--preset", action="append", help="named config (repeatable)")
    p.add_argument("--figure", help="bar chart image path")

    command("selftest", "run algebra, gradient and CTC oracle checks")

    p = command("toydata", "write a bundled synthetic dataset")
    p.add_argument("task", choices=["ctc", "framewise"])
    p.add_argument("out")
    p.add_argument("--utterances", type=int, default=24)
    p.add_argument("--bands", type=int, default=8)
    return parser


def _config(args, required=True):
    if args.config:
        cfg = ModelConfig.load(args.config) if Path(args.config).is_file() else None
        if cfg is None:
            raise UsageError(f"config file not found: {args.config}")
    elif getattr(args, "preset", None):
        name = args.preset[0] if isinstance(args.preset, list) else args.preset
        cfg = preset(name)
    elif required:
        raise UsageError("a --config path (or --preset) is required")
    else:
        return None
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def cmd_features(args):
    src, dst = Path(args.input), Path(args.output)
    if not src.is_file():
        raise DataError(f"no such file: {src}")
    if src.suffix.lower() == ".wav":
        samples, rate = read_wav(src)
        m = logmel_extract(samples, rate, bands=args.bands)
    else:
        m = load_features(src)
    if dst.suffix.lower() == ".csv":
        save_features_csv(m, dst)
    else:
        save_features(m, dst)
    print(f"{dst}\t{m.bands}\t{m.frames}")
    return 0


def cmd_train(args):
    from .report import plot_training_curves
    from .train import train

    cfg = load_checkpoint(args.resume)[0].cfg if args.resume else _config(args)
    train_set = D.read_dataset(args.train_dir)
    dev_set = D.read_dataset(args.dev_dir)
    result = train(cfg, train_set, dev_set, out_dir=args.out, threads=args.threads, resume=args.resume,
                   epochs=args.epochs)
    figure = args.figure or str(Path(args.out) / "curves.png")
    plot_training_curves(result.records, figure, title=cfg.kind)
    last = result.records[-1]
    print("epoch\ttrain_loss\tdev_loss\tdev_per\tlr")
    for r in result.records:
        print(f"{r['epoch']}\t{r['train_loss']:.6g}\t{r['dev_loss']:.6g}\t{r['dev_per']:.4g}\t{r['lr']:.6g}")
    log.info("best epoch %d, final dev PER %.2f", result.best_epoch, last["dev_per"])
    return 0


def cmd_eval(args):
    from .train import evaluate

    model, state, _ = load_checkpoint(args.checkpoint)
    report = evaluate(model, D.read_dataset(args.data_dir), threads=args.threads)
    report.epoch_losses = [r["train_loss"] for r in state.get("records", [])]
    text = report.dumps()
    if args.out:
        Path(args.out).write_text(text)
        print(f"PER\t{report.per:.4f}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_params(args):
    names = args.preset or []
    configs = {}
    if args.config:
        configs[Path(args.config).stem] = _config(args)
    for name in names:
        configs[name] = preset(name)
    if not configs:
        raise UsageError("params needs --config or --preset")
    tables = {}
    print("model\tlayer\tparameters")
    for name, cfg in configs.items():
        rows = param_table(cfg)
        tables[name] = rows
        for layer, n in rows:
            print(f"{name}\t{layer}\t{n}")
        print(f"{name}\ttotal\t{sum(n for _, n in rows)}")
    if args.figure:
        from .report import plot_param_table

        plot_param_table(tables, args.figure)
    return 0


def cmd_selftest(args):
    from .selftest import run

    ok = True
    for name, passed, detail in run(args.seed or 0):
        print(f"{'PASS' if passed else 'FAIL'}\t{name}\t{detail}")
        ok &= passed
    return 0 if ok else 3


def cmd_toydata(args):
    seed = args.seed or 0
    if args.task == "ctc":
        utts = D.ctc_toy(n=args.utterances, bands=args.bands, seed=seed)
    else:
        utts = D.framewise_toy(n=args.utterances, bands=args.bands, seed=seed)
    D.write_dataset(utts, args.out)
    print(f"{args.out}\t{len(utts)}")
    return 0


COMMANDS = {
    "features": cmd_features, "train": cmd_train, "eval": cmd_eval, "params": cmd_params,
    "selftest": cmd_selftest, "toydata": cmd_toydata,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except QuatnetError as exc:
        print(f"quatnet: {type(exc).__name__}: {exc}", file=sys.stderr)
        if isinstance(exc, UsageError):
            parser.print_usage(sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"quatnet: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
