"""Command line entry point: ``weathercycle {train,infer,analyze-swap,classify}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checkpoint as ckpt
from .colorspace import ColorspaceError
from .dacr import DEFAULT_PROMPTS, BackendError, classify_batch, load_backend
from .data import DataError, load_root
from .evaluation import motivation_experiment, run_inference
from .imaging import is_image_file, read_image, write_image
from .trainer import (ConfigError, NumericalError, TrainConfig, init_state, load_checkpoint, run,
                      save_checkpoint)

log = logging.getLogger("weathercycle")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad arguments; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def cmd_train(args) -> int:
    cfg = TrainConfig.from_file(args.config)
    if args.data:
        cfg.data_root = args.data
    if not cfg.data_root:
        raise UsageError("no data_root in config and no --data given")
    ds = load_root(cfg.data_root, crop=cfg.crop)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    state = load_checkpoint(args.resume, cfg) if args.resume else init_state(cfg)
    remaining = cfg.iterations - state.step
    log.info("training %d steps (from step %d), %d clean / %d degraded images",
             remaining, state.step, *ds.sizes)

    def on_step(st, _):
        if cfg.ckpt_every and st.step % cfg.ckpt_every == 0:
            save_checkpoint(st, out / f"step{st.step:07d}.ckpt")

    state = run(state, ds, max(0, remaining), on_step)
    save_checkpoint(state, out / "last.ckpt")
    with open(out / "losses.jsonl", "a") as fh:
        for rec in state.history:
            fh.write(json.dumps(rec.as_dict()) + "\n")
    print(f"saved {out / 'last.ckpt'} at step {state.step}")
    return EXIT_OK


def cmd_infer(args) -> int:
    report = run_inference(args.ckpt, args.input, args.output, args.ref, args.psnr_on)
    print(f"restored {len(report.written)} images into {args.output}")
    if args.ref is not None and report.count:
        print(f"mean PSNR {report.mean_psnr:.3f} dB  mean SSIM {report.mean_ssim:.4f}  over {report.count}")
    for path, err in report.failures:
        print(f"failed: {path}: {err}", file=sys.stderr)
    return EXIT_OK


def cmd_analyze_swap(args) -> int:
    degraded, clean = read_image(args.degraded), read_image(args.clean)
    if degraded.shape != clean.shape:
        raise DataError(f"image sizes differ: {tuple(degraded.shape)} vs {tuple(clean.shape)}")
    res = motivation_experiment(degraded, clean, args.psnr_on)
    out = Path(args.output)
    for name, img in res.pop("images").items():
        write_image(out / f"{name}.png", img)
    (out / "swap_psnr.json").write_text(json.dumps(res, indent=2, sort_keys=True))
    for k, v in res.items():
        print(f"{k} {v:.3f}")
    return EXIT_OK


def cmd_classify(args) -> int:
    backend = load_backend(args.backend, role="classifier")
    folder = Path(args.input)
    if not folder.is_dir():
        raise DataError(f"not a directory: {folder}")
    files = sorted(p for p in folder.iterdir() if is_image_file(p))
    if not files:
        log.warning("no images in %s", folder)
    for path in files:
        try:
            img = read_image(path)
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable %s: %s", path, exc)
            continue
        label = classify_batch(backend, img.unsqueeze(0), DEFAULT_PROMPTS)[0]
        scores = " ".join(f"{s:.4f}" for s in label.scores)
        print(f"{path.name}\t{label.level.label}\t{scores}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="weathercycle", description="Unpaired all-weather image restoration.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train from a key = value config file")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--data", help="dataset root, overrides data_root")
    t.set_defaults(fn=cmd_train)

    i = sub.add_parser("infer", help="restore a folder of images")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--in", dest="input", required=True)
    i.add_argument("--out", dest="output", required=True)
    i.add_argument("--ref", help="folder of references with matching file names")
    i.add_argument("--psnr-on", choices=("rgb", "y"), default="rgb")
    i.set_defaults(fn=cmd_infer)

    a = sub.add_parser("analyze-swap", help="luma and amplitude swap PSNRs on an aligned pair")
    a.add_argument("--degraded", required=True)
    a.add_argument("--clean", required=True)
    a.add_argument("--out", dest="output", required=True)
    a.add_argument("--psnr-on", choices=("rgb", "y"), default="rgb")
    a.set_defaults(fn=cmd_analyze_swap)

    c = sub.add_parser("classify", help="difficulty label per image")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--backend", default="stub")
    c.set_defaults(fn=cmd_classify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError, BackendError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ColorspaceError, ckpt.CheckpointError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
