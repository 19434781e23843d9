"""Command-line entry point.

Exit codes: 0 success, 1 user error (bad flags, missing or invalid inputs),
2 internal error.  Every successful command prints one JSON summary line.
Settings resolve as command-line flag > config file > built-in default.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import apply_overrides, load_config
from .curation import CurationConfig, curate_directory, dataset_stats, write_kept_list, write_report
from .exceptions import ConfigurationError, InfMAEError
from .io import atomic_write, load_image

logger = logging.getLogger("infmae")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser():
    parser = _Parser(prog="infmae", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("curate", help="filter small images and near-duplicates")
    p.add_argument("--in", dest="input", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="REPORT")
    p.add_argument("--min-dim", type=int, default=CurationConfig.min_dim)
    p.add_argument("--dup-threshold", type=int, default=CurationConfig.dup_threshold)
    p.add_argument("--hash-side", type=int, default=CurationConfig.hash_side)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--apply", action="store_true",
                   help="also write REPORT.kept.txt listing kept files (originals are never deleted)")

    p = sub.add_parser("stats", help="brightness-entropy statistics of a directory")
    p.add_argument("--in", dest="input", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="REPORT")

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--config", default="desk", metavar="FILE",
                   help="config file or profile name (tiny, desk, base)")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--resume", metavar="CKPT")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--max-steps", type=int)

    p = sub.add_parser("preview", help="original | masked | reconstruction triptych")
    p.add_argument("--ckpt", required=True, metavar="FILE")
    p.add_argument("--image", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("extract", help="write the F1-F4 feature pyramid of one image")
    p.add_argument("--ckpt", required=True, metavar="FILE")
    p.add_argument("--image", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("gradcheck", help="finite-difference check of analytic gradients")
    p.add_argument("--config", default="tiny", metavar="FILE")
    p.add_argument("--coords", type=int, default=200)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _require_dir(path, flag):
    if not Path(path).is_dir():
        raise UsageError(f"{flag} {path}: no such directory")


def _require_file(path, flag):
    if not Path(path).is_file():
        raise UsageError(f"{flag} {path}: no such file")


def cmd_curate(args):
    _require_dir(args.input, "--in")
    cfg = CurationConfig(min_dim=args.min_dim, hash_side=args.hash_side, dup_threshold=args.dup_threshold)
    report = curate_directory(args.input, cfg, workers=args.workers)
    write_report(report, args.out)
    if args.apply:
        write_kept_list(report, f"{args.out}.kept.txt")
    s = report.summary()
    return {"command": "curate", "total": s["total"], "kept": s["count"], "duplicate": s["duplicate"],
            "too_small": s["too_small"], "error": s["error"], "mean_entropy": s["mean_entropy"]}


def cmd_stats(args):
    _require_dir(args.input, "--in")
    stats, records = dataset_stats(args.input)
    with atomic_write(args.out, "w") as fh:
        for r in records:
            fh.write(json.dumps({"path": r.path, "width": r.width, "height": r.height, "entropy": r.entropy}) + "\n")
        fh.write(json.dumps({"summary": stats}) + "\n")
    return {"command": "stats", **stats}


def cmd_pretrain(args):
    from .pretrainer import pretrain_loop

    _require_dir(args.data, "--data")
    model_cfg, train_cfg = load_config(args.config)
    overrides = {k: v for k, v in (("seed", args.seed), ("epochs", args.epochs),
                                   ("max_steps", args.max_steps)) if v is not None}
    resume = None
    if args.resume:
        _require_file(args.resume, "--resume")
        resume = load_checkpoint(args.resume)
        model_cfg, train_cfg = resume.model_config, resume.train_config
    model_cfg, train_cfg = apply_overrides(model_cfg, train_cfg, overrides)
    ckpt = pretrain_loop(args.data, model_cfg, train_cfg, out_dir=args.out, resume=resume)
    return {"command": "pretrain", "step": ckpt.step, "epoch": ckpt.epoch,
            "checkpoint": str(Path(args.out) / "last.ckpt")}


def _load_for_model(args):
    _require_file(args.ckpt, "--ckpt")
    _require_file(args.image, "--image")
    ckpt = load_checkpoint(args.ckpt)
    mode = "replicate" if ckpt.model_config.in_channels == 3 else "gray"
    return ckpt, load_image(args.image, mode)


def cmd_preview(args):
    from .pretrainer import model_from_checkpoint
    from .preview import write_preview

    ckpt, image = _load_for_model(args)
    plan = write_preview(model_from_checkpoint(ckpt), image, args.out)
    return {"command": "preview", "out": str(Path(args.out) / "preview.png"),
            "n_tokens": plan.n_tokens, "n_visible": plan.n_visible}


def cmd_extract(args):
    from .pyramid import extract_pyramid, write_pyramid

    ckpt, image = _load_for_model(args)
    pyramid = extract_pyramid(image, ckpt)
    write_pyramid(pyramid, args.out)
    return {"command": "extract", "shapes": {k: list(v) for k, v in pyramid.shapes().items()}}


def cmd_gradcheck(args):
    from .gradcheck import finite_difference_check

    model_cfg, _ = load_config(args.config)
    report = finite_difference_check(model_cfg, tolerance=args.tolerance,
                                     n_coords=args.coords, seed=args.seed)
    summary = {"command": "gradcheck", "coords": report.n_coords,
               "tensors": len(report.per_tensor), "max_rel_error": report.max_rel_error,
               "tolerance": report.tolerance, "passed": report.passed}
    if not report.passed:
        summary["worst"] = [report.worst[1], report.worst[2]]
    return summary


COMMANDS = {
    "curate": cmd_curate,
    "stats": cmd_stats,
    "pretrain": cmd_pretrain,
    "preview": cmd_preview,
    "extract": cmd_extract,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        summary = COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except (InfMAEError, ConfigurationError, FileNotFoundError, NotADirectoryError,
            IsADirectoryError, PermissionError, IndexError) as exc:
        print(f"infmae: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        # undecodable images surface as PIL's OSError subclasses
        print(f"infmae: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        print(f"infmae: internal error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary))
    if args.command == "gradcheck" and not summary["passed"]:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
