"""Command-line entry point: filter-bank export, training, reconstruction,
expansion, and evaluation.

Every run writes its fully resolved configuration next to its outputs so
results can be reproduced from the recorded flags alone.  Exit codes:
0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import checkpoint as ckpt
from . import data as tiles
from . import draw, imgio, synthesis, textons, training
from .filterbank import build_lm_bank, export_bank
from .imgio import DataError
from .losses import LossSpec
from .synthesis import SynthesisError
from .training import NumericError

LOSS_FLAGS = {"ce": "cross_entropy", "l2": "l2", "fb": "fb",
              "fltbnk": "fltbnk", "gram": "gram"}


def _record_config(out_dir: str, command: str, args: argparse.Namespace) -> None:
    os.makedirs(out_dir, exist_ok=True)
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    resolved["command"] = command
    with open(os.path.join(out_dir, "run_config.json"), "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)


def cmd_filterbank_export(args) -> int:
    bank = build_lm_bank(support=args.support)
    _record_config(args.out, "filterbank export", args)
    manifest = export_bank(bank, args.out)
    print(f"wrote {manifest['kernel_count']} kernels to {args.out}")
    return 0


def _loss_spec(args) -> LossSpec:
    return LossSpec(kind=LOSS_FLAGS[args.loss], tv_weight=args.tv_weight,
                    color_weight=args.color_weight)


def _model_config(args, tile_size: int) -> draw.DrawConfig:
    return draw.DrawConfig(steps=args.steps, z_dim=args.z_dim,
                           enc_hidden=args.hidden, dec_hidden=args.hidden,
                           tile_size=tile_size, channels=3,
                           attention_grid=args.attention)


def _train_one(direction: str, seed: int, dataset, args, bank) -> str:
    model = draw.DrawModel.initialize(_model_config(args, dataset.tile_size), seed)
    ckpt_path = os.path.join(args.out, f"model_{direction}.ckpt")
    log_path = os.path.join(args.out, f"loss_{direction}.csv")
    cfg = training.TrainConfig(loss=_loss_spec(args), epochs=args.epochs,
                               batch_size=args.batch_size,
                               learning_rate=args.lr, clip_norm=args.clip,
                               seed=seed, direction=direction,
                               checkpoint_path=ckpt_path, log_path=log_path)
    training.train(model, dataset, cfg, bank=bank)
    return ckpt_path


def cmd_train(args) -> int:
    dataset = tiles.load_dataset(args.data)
    _record_config(args.out, "train", args)
    spec = _loss_spec(args)
    bank = build_lm_bank(args.support) if spec.kind in ("fb", "fltbnk", "gram") else None
    if args.all_directions:
        cap = int(os.environ.get("TEXWEAVE_THREADS", "4"))
        workers = max(1, min(4, cap))
        jobs = [(d, args.seed + i) for i, d in enumerate(draw.DIRECTIONS)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(lambda job: _train_one(*job, dataset, args, bank),
                                  jobs))
    else:
        paths = [_train_one(args.direction, args.seed, dataset, args, bank)]
    for path in paths:
        print(f"checkpoint: {path}")
    return 0


def cmd_reconstruct(args) -> int:
    model = ckpt.load_model(args.checkpoint)
    header, _ = ckpt.read_container(args.checkpoint)
    direction = header.get("direction") or args.direction
    dataset = tiles.load_dataset(args.data)
    if dataset.tile_size != model.config.tile_size:
        raise DataError(f"dataset tile size {dataset.tile_size} does not match "
                        f"checkpoint tile size {model.config.tile_size}")
    _record_config(args.out, "reconstruct", args)

    rng = np.random.default_rng(args.seed)
    quintets = dataset.epoch(rng)[:args.tiles]
    bank = build_lm_bank(args.support)
    dictionary = textons.learn_textons([t.pixels for t in dataset.textures],
                                       bank, k=args.textons_k, seed=args.seed)
    originals, reconstructions, rows = [], [], []
    for i, quintet in enumerate(quintets):
        target = quintet.neighbor(direction)
        output, _ = draw.forward(model, quintet.center, target, rng)
        recon = output.data
        rmse = float(np.sqrt(((recon - target) ** 2).mean()))
        gram_d = textons.gram_distance(target, recon, bank)
        hist_d = textons.histogram_distance(
            textons.texton_histogram(target, dictionary, bank),
            textons.texton_histogram(recon, dictionary, bank))
        rows.append((i, rmse, gram_d, hist_d))
        originals.append(target)
        reconstructions.append(recon)

    imgio.save_image(os.path.join(args.out, "reconstruction.png"),
                     imgio.montage([originals, reconstructions]))
    with open(os.path.join(args.out, "metrics.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tile", "rmse", "gram", "histogram"])
        for row in rows:
            writer.writerow(row)
    print(f"reconstructed {len(rows)} tiles into {args.out}")
    return 0


def cmd_expand(args) -> int:
    models = {}
    tile_size = None
    for direction, path in zip(draw.DIRECTIONS, args.checkpoints):
        models[direction] = ckpt.load_model(path)
        tile_size = models[direction].config.tile_size
    center = imgio.load_image(args.center)
    if center.shape[0] != tile_size or center.shape[1] != tile_size:
        raise DataError(f"center tile is {center.shape[0]}x{center.shape[1]}, "
                        f"models expect {tile_size}x{tile_size}")
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    _record_config(out_dir, "expand", args)
    image = synthesis.expand(center, models, args.size, args.seed,
                             blend=args.blend, debug_dir=args.debug_cells)
    imgio.save_image(args.out, image)
    print(f"expanded to {image.shape[0]}x{image.shape[1]}: {args.out}")
    return 0


def cmd_eval(args) -> int:
    original = imgio.load_image(args.original)
    generated = imgio.load_image(args.generated)
    bank = build_lm_bank(args.support)
    if args.metric == "gram":
        value = textons.gram_distance(original, generated, bank)
    else:
        if args.textons:
            dictionary = textons.load_dictionary(args.textons)
        else:
            dictionary = textons.learn_textons([original], bank,
                                               k=args.textons_k, seed=args.seed)
        value = textons.histogram_distance(
            textons.texton_histogram(original, dictionary, bank),
            textons.texton_histogram(generated, dictionary, bank))
    row = (args.original, args.generated, args.metric, repr(value))
    if args.out:
        out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
        _record_config(out_dir, "eval", args)
        with open(args.out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_a", "image_b", "metric", "value"])
            writer.writerow(row)
    print(",".join(str(v) for v in row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="texweave",
                                     description="Texture expansion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fb = sub.add_parser("filterbank", help="filter bank utilities")
    fb_sub = p_fb.add_subparsers(dest="action", required=True)
    p_export = fb_sub.add_parser("export", help="write kernel images + manifest")
    p_export.add_argument("--support", type=int, default=15)
    p_export.add_argument("--out", required=True)
    p_export.set_defaults(func=cmd_filterbank_export)

    p_train = sub.add_parser("train", help="train one (or all) direction models")
    p_train.add_argument("--data", required=True, help="dataset config JSON")
    p_train.add_argument("--direction", choices=draw.DIRECTIONS, default="north")
    p_train.add_argument("--all-directions", action="store_true")
    p_train.add_argument("--loss", choices=sorted(LOSS_FLAGS), default="l2")
    p_train.add_argument("--epochs", type=int, default=200)
    p_train.add_argument("--batch-size", type=int, default=16)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--clip", type=float, default=5.0)
    p_train.add_argument("--tv-weight", type=float, default=1e-3)
    p_train.add_argument("--color-weight", type=float, default=10.0)
    p_train.add_argument("--steps", type=int, default=10)
    p_train.add_argument("--z-dim", type=int, default=100)
    p_train.add_argument("--hidden", type=int, default=256)
    p_train.add_argument("--attention", type=int, default=0,
                         help="glimpse grid size; 0 disables attention")
    p_train.add_argument("--support", type=int, default=15)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_rec = sub.add_parser("reconstruct", help="montage of targets vs reconstructions")
    p_rec.add_argument("--checkpoint", required=True)
    p_rec.add_argument("--data", required=True)
    p_rec.add_argument("--direction", choices=draw.DIRECTIONS, default="north",
                       help="used only if the checkpoint does not record one")
    p_rec.add_argument("--tiles", type=int, default=8)
    p_rec.add_argument("--textons-k", type=int, default=32)
    p_rec.add_argument("--support", type=int, default=15)
    p_rec.add_argument("--seed", type=int, default=0)
    p_rec.add_argument("--out", required=True)
    p_rec.set_defaults(func=cmd_reconstruct)

    p_exp = sub.add_parser("expand", help="grow a center tile into a texture")
    p_exp.add_argument("--checkpoints", nargs=4, required=True,
                       metavar=("NORTH", "SOUTH", "EAST", "WEST"))
    p_exp.add_argument("--center", required=True, help="center tile image")
    p_exp.add_argument("--size", type=int, required=True)
    p_exp.add_argument("--blend", type=int, default=0,
                       help="cosmetic seam cross-fade width; 0 keeps stitching lossless")
    p_exp.add_argument("--debug-cells", default=None,
                       help="directory for per-cell tile dumps")
    p_exp.add_argument("--seed", type=int, default=0)
    p_exp.add_argument("--out", required=True)
    p_exp.set_defaults(func=cmd_expand)

    p_eval = sub.add_parser("eval", help="distance between two texture images")
    p_eval.add_argument("--original", required=True)
    p_eval.add_argument("--generated", required=True)
    p_eval.add_argument("--metric", choices=("gram", "histogram"), required=True)
    p_eval.add_argument("--textons", default=None,
                        help="texton dictionary file; learned from --original if omitted")
    p_eval.add_argument("--textons-k", type=int, default=32)
    p_eval.add_argument("--support", type=int, default=15)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", default=None, help="CSV output path")
    p_eval.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ckpt.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (SynthesisError, ValueError) as exc:
        print(f"invalid arguments: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
