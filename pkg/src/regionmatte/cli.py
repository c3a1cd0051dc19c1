"""Command-line entry point: ``regionmatte {train,infer,eval,flops,selftest}``."""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig
from .errors import MatteError
from .flops import count_flops
from .imageio import read_image, write_image


def _parse_override(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected section.field=value, got {text!r}")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _load_config(args):
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = dict(args.set or [])
    for flag, key in (("steps", "train.steps"), ("seed", "train.seed"), ("lr", "train.learning_rate"),
                      ("data", "io.data_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return config.override(overrides) if overrides else config


def cmd_train(args):
    from .pipeline import Trainer

    config = _load_config(args)
    trainer = Trainer(config)
    trainer.run()
    out = args.out or config.io.checkpoint
    save_checkpoint(trainer.checkpoint(), out)
    last = trainer.history[-1] if trainer.history else {}
    print(f"trained {trainer.step_count} steps, final loss {last.get('total', float('nan')):.5f}, wrote {out}")
    if config.io.log_file:
        with open(config.io.log_file, "w") as fh:
            json.dump(trainer.history, fh, indent=1)
    return 0


def cmd_infer(args):
    from .pipeline import infer

    ckpt = load_checkpoint(args.ckpt)
    image = read_image(args.input)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=-1)
    result = infer(image, ckpt)
    write_image(args.out, result.alpha, bits=args.bits)
    if args.dump_regions:
        payload = result.regions.to_json(s=ckpt.config["refine"]["s"])
        payload["meta"] = result.meta
        with open(args.dump_regions, "w") as fh:
            json.dump(payload, fh, indent=1)
    print(f"wrote {args.out} ({len(result.regions)} refined regions)")
    return 0


def cmd_eval(args):
    from .pipeline import evaluate

    report = evaluate(args.images, args.gt, load_checkpoint(args.ckpt))
    with open(args.report, "w") as fh:
        fh.write(report.dumps() + "\n")
    text = report.to_text()
    root, _ = os.path.splitext(args.report)
    with open(root + ".txt", "w") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


def cmd_flops(args):
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    result = count_flops(config, args.height, args.width, args.regions)
    for key in ("coarse_flops", "refine_flops", "total"):
        print(f"{key:>13}: {result[key]:>16,d}  ({result[key] / 1e9:.3f} GFLOPs)")
    return 0


def cmd_selftest(args):
    from .selftest import run_selftest

    return 0 if run_selftest(verbose=True) else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="regionmatte", description="Two-stage alpha matting on numpy.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", help="JSON config file (defaults when omitted)")
    p.add_argument("--out", help="checkpoint path (default: io.checkpoint)")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--data", help="directory with images/ and alphas/")
    p.add_argument("--set", action="append", type=_parse_override, metavar="SECTION.FIELD=VALUE",
                   help="override any config field (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict the alpha matte of one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-regions", help="write the refined regions and their neighbors as JSON")
    p.add_argument("--bits", type=int, choices=(8, 16), default=8)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a checkpoint on paired image / ground-truth directories")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True, help="JSON report path; a .txt table is written next to it")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="analytic FLOP count of one inference")
    p.add_argument("--config")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--regions", type=int, required=True)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("selftest", help="run the built-in oracle checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (MatteError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
