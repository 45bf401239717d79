"""
Command-line interface: ``cto-seg {train,eval,infer,synth,make-boundaries}``.

Flags win over ``CTO_SEG_*`` environment variables, which win over the config
file and the built-in defaults.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .checkpoint import load_checkpoint, restore
from .config import VARIANTS, ExperimentConfig, ModelConfig
from .data import SyntheticShapes, load_dataset, make_boundaries, write_dataset
from .engine import Trainer, evaluate, infer
from .exceptions import CTOSegError
from .logging import configure_logging
from .model import build_model
from .reports import format_summary
from .utils import seed_everything

logger = logging.getLogger("cto_seg.cli")

EXIT_ERROR = 2


def tiny_overrides() -> Dict[str, Any]:
    tiny = ModelConfig.tiny()
    return {
        "stem_channels": tiny.backbone.stem_channels,
        "stage_channels": tiny.backbone.stage_channels,
        "blocks_per_stage": tiny.backbone.blocks_per_stage,
        "vit_dmodel": tiny.vit_dmodel,
        "heads": tiny.heads,
        "vit_ffn_dim": tiny.vit_ffn_dim,
        "vit_channels": tiny.vit_channels,
        "boundary_channels": tiny.boundary_channels,
        "decoder_channels": tiny.decoder_channels,
    }


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Flat key = value config file")
    parser.add_argument("--log-level", dest="log_level", help="DEBUG, INFO, WARNING, ...")
    parser.add_argument("--log-format", dest="log_format", choices=("json", "text"))


def _add_run(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--size", type=int, help="Square input size (multiple of 32)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--desk", action="store_true", default=None, help="Batch 4 at 64x64")
    parser.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cto-seg", description="Boundary-aware CNN + transformer segmentation"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="Train a model")
    _add_common(train)
    _add_run(train)
    train.add_argument("--variant", choices=VARIANTS)
    train.add_argument("--lr", type=float)
    train.add_argument("--batch", type=int)
    train.add_argument("--epochs", type=int)
    train.add_argument("--alpha", type=float)
    train.add_argument("--classes", type=int)
    train.add_argument("--max-steps", dest="max_steps", type=int)
    train.add_argument("--tiny", action="store_true", help="Use the smallest model widths")
    train.add_argument("--data", type=Path, help="Dataset root; omit to train on synthetic shapes")
    train.add_argument("--split", help="Sub-directory of --data, e.g. train")
    train.add_argument("--synth", type=int, default=8, help="Synthetic samples without --data")
    train.add_argument("--checkpoint", help="Checkpoint directory")
    train.add_argument("--resume", type=Path, help="Resume from an epoch checkpoint")

    ev = commands.add_parser("eval", help="Evaluate a checkpoint")
    _add_common(ev)
    _add_run(ev)
    ev.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint file")
    ev.add_argument("--data", type=Path, required=True)
    ev.add_argument("--split")
    ev.add_argument("--out", type=Path, default=Path("."), help="Report directory")

    inf = commands.add_parser("infer", help="Segment one image")
    _add_common(inf)
    inf.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint file")
    inf.add_argument("--image", type=Path, required=True)
    inf.add_argument("--out", type=Path, required=True, help="Output mask PNG")
    inf.add_argument("--size", type=int)
    inf.add_argument("--boundary", action="store_true", help="Also write the boundary map")
    inf.add_argument("--overlay", action="store_true", help="Also write a contour overlay")

    synth = commands.add_parser("synth", help="Write a synthetic dataset")
    _add_common(synth)
    synth.add_argument("--out", type=Path, required=True)
    synth.add_argument("--n", type=int, default=8)
    synth.add_argument("--size", type=int, default=64)
    synth.add_argument("--seed", type=int, default=0)

    boundaries = commands.add_parser("make-boundaries", help="Write boundary maps for a dataset")
    _add_common(boundaries)
    boundaries.add_argument("--data", type=Path, required=True)
    boundaries.add_argument("--split")
    boundaries.add_argument("--width", type=int, default=1)
    return parser


CONFIG_FLAGS = (
    "variant",
    "lr",
    "batch",
    "epochs",
    "alpha",
    "size",
    "seed",
    "classes",
    "max_steps",
    "workers",
    "desk",
    "checkpoint",
    "log_level",
    "log_format",
)


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if getattr(args, "tiny", False):
        overrides.update(tiny_overrides())
    for key in CONFIG_FLAGS:
        value = getattr(args, key, None)
        if value is None or (key == "checkpoint" and args.command != "train"):
            continue
        overrides[key] = value
    return overrides


def _write(text: str) -> None:
    sys.stdout.write(text)
    sys.stdout.flush()


def cmd_train(args: argparse.Namespace, config: ExperimentConfig) -> int:
    model_config = config.model_config()
    train_config = config.train_config()
    seed_everything(train_config.seed)
    model = build_model(model_config)

    if args.data is not None:
        _, dataset = load_dataset(
            args.data, size=train_config.size, split=args.split,
            boundary_width=model_config.boundary_width,
        )
    else:
        dataset = SyntheticShapes(
            args.synth, size=train_config.size, seed=train_config.seed,
            boundary_width=model_config.boundary_width,
        )

    trainer = Trainer(
        model, model_config, train_config, config=config,
        checkpoint_dir=train_config.checkpoint_dir,
    )
    try:
        result = trainer.train(dataset, resume_from=args.resume)
    finally:
        trainer.close()
    last = result.checkpoints[-1] if result.checkpoints else None
    final = result.loss_history[-1] if result.loss_history else float("nan")
    _write(
        f"variant: {model_config.variant}\n"
        f"steps: {result.step}\nepochs: {result.epoch}\n"
        f"final loss: {final:.4f}\ncheckpoint: {last}\n"
    )
    return 0


def cmd_eval(args: argparse.Namespace, config: ExperimentConfig) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    model = build_model(checkpoint.model_config)
    restore(checkpoint, model)
    size = args.size or checkpoint.train_config.size
    _, dataset = load_dataset(
        args.data, size=size, split=args.split,
        boundary_width=checkpoint.model_config.boundary_width,
    )
    summary, _ = evaluate(
        model, dataset, out_dir=args.out,
        workers=config.get("workers", 0), config=config,
    )
    _write(format_summary(summary))
    return 0


def cmd_infer(args: argparse.Namespace, config: ExperimentConfig) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    model = build_model(checkpoint.model_config)
    restore(checkpoint, model)
    result = infer(
        model, args.image, args.out,
        size=args.size or checkpoint.train_config.size,
        boundary=args.boundary, overlay=args.overlay, config=config,
    )
    lines = [f"mask: {result.mask}"]
    if result.boundary:
        lines.append(f"boundary: {result.boundary}")
    if result.overlay:
        lines.append(f"overlay: {result.overlay}")
    _write("\n".join(lines) + "\n")
    return 0


def cmd_synth(args: argparse.Namespace, config: ExperimentConfig) -> int:
    dataset = SyntheticShapes(args.n, size=args.size, seed=args.seed)
    count = write_dataset((dataset[i] for i in range(len(dataset))), args.out)
    _write(f"wrote {count} samples to {args.out}\n")
    return 0


def cmd_make_boundaries(args: argparse.Namespace, config: ExperimentConfig) -> int:
    count = make_boundaries(args.data, split=args.split, width=args.width)
    _write(f"wrote {count} boundary maps\n")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "synth": cmd_synth,
    "make-boundaries": cmd_make_boundaries,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = ExperimentConfig(config_file=args.config, overrides=_overrides(args))
    except CTOSegError as e:
        sys.stderr.write(f"cto-seg: {e}\n")
        return EXIT_ERROR

    configure_logging(config)
    try:
        return COMMANDS[args.command](args, config)
    except CTOSegError as e:
        logger.error(
            f"{args.command} failed: {e}",
            extra={"command": args.command, "error_type": e.__class__.__name__},
        )
        sys.stderr.write(f"cto-seg: {e}\n")
        return EXIT_ERROR


def run(argv: Optional[List[str]] = None) -> None:
    sys.exit(main(argv))
