"""Command-line entry point.

Subcommands: synth, build-dataset, gen-masks, pretrain, train, register,
evaluate. Global flags (--config/--seed/--out/--device) come before the
subcommand; SSMREG_* environment variables override the config file, and
command-line flags override both. Every run writes its resolved config next
to its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import torch

from . import data, metrics, roi, synth, train
from .config import (ABLATIONS, TrainConfig, apply_ablation, resolve_config,
                     save_config)
from .errors import ConfigError
from .metrics import DICE_CONVENTIONS


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ssmreg",
        description="Unsupervised multi-modal deformable registration toolkit")
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--out", help="output directory (default ./runs/<command>)")
    ap.add_argument("--device", help="torch device, e.g. cpu")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic pair dataset")
    p.add_argument("--n", type=int, default=64, help="number of pairs")
    p.add_argument("--size", type=int, nargs=2, default=None, metavar=("H", "W"))
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--magnitude", type=float, default=4.0,
                   help="max displacement in pixels")
    p.add_argument("--smoothing", type=float, default=8.0)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--leaves", type=int, nargs=2, default=(3, 6),
                   metavar=("MIN", "MAX"))
    p.add_argument("--force", action="store_true",
                   help="write into a non-empty directory")

    p = sub.add_parser("build-dataset",
                       help="crop, pair, and split a raw plant-image tree")
    p.add_argument("--raw", required=True, help="root of raw plant directories")
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--size", type=int, nargs=2, default=None, metavar=("H", "W"))
    p.add_argument("--moving-modality", default="rgb")
    p.add_argument("--fixed-modality", default="ir")
    p.add_argument("--min-dt", type=int, default=0)
    p.add_argument("--max-dt", type=int, default=None)
    p.add_argument("--train-n", type=int, default=300)
    p.add_argument("--test-n", type=int, default=900)
    p.add_argument("--mask-kernel", type=int, nargs=2, default=(5, 5),
                   metavar=("KH", "KW"))
    p.add_argument("--mask-min-size", type=int, default=None)
    p.add_argument("--dark-foreground", action="append", default=[],
                   metavar="MODALITY",
                   help="modalities whose plants are darker than background")

    p = sub.add_parser("gen-masks", help="write ROI masks for a dataset tree")
    p.add_argument("--data", required=True)
    p.add_argument("--kernel", type=int, nargs=2, default=(5, 5),
                   metavar=("KH", "KW"))
    p.add_argument("--min-size", type=int, default=None)
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--dark-foreground", action="append", default=[],
                   metavar="MODALITY")

    for name, extra in (("pretrain", "guidance network on aligned pairs"),
                        ("train", "registration model (stage 2)")):
        p = sub.add_parser(name, help=f"train the {extra}")
        p.add_argument("--data", required=True, help="dataset dir with pairs.tsv")
        p.add_argument("--ablation", choices=sorted(ABLATIONS), default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--size", type=int, nargs=2, default=None,
                       metavar=("H", "W"))
        if name == "train":
            p.add_argument("--guidance", required=True,
                           help="stage-1 checkpoint path")

    p = sub.add_parser("register", help="register one pair with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--moving", required=True)
    p.add_argument("--fixed", required=True)

    p = sub.add_parser("evaluate", help="score a checkpoint on labeled pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset dir with pairs.tsv")
    p.add_argument("--dice-convention", choices=sorted(DICE_CONVENTIONS),
                   default="standard")
    return ap


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path("runs") / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _base_config(args) -> TrainConfig:
    overrides = {}
    for name in ("seed", "device", "epochs", "batch_size", "lr",
                 "channels"):
        if getattr(args, name, None) is not None:
            overrides[name] = getattr(args, name)
    if getattr(args, "size", None) is not None:
        overrides["image_size"] = tuple(args.size)
    cfg = resolve_config(file=args.config, overrides=overrides)
    if getattr(args, "ablation", None):
        cfg = apply_ablation(cfg, args.ablation)
    return cfg


def _write_json(obj: dict, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    out = _out_dir(args)
    if any(out.iterdir()) and not args.force:
        print(f"error: {out} is not empty (use --force)", file=sys.stderr)
        return 2
    cfg = _base_config(args)
    params = synth.SynthParams(
        size=tuple(args.size) if args.size else cfg.image_size,
        channels=args.channels if args.channels is not None else cfg.channels,
        n_leaves=tuple(args.leaves), magnitude=args.magnitude,
        smoothing=args.smoothing, noise=args.noise)
    records = synth.write_synth_dataset(out, args.n, params, seed=cfg.seed)
    _write_json({"command": "synth", "n": args.n, "seed": cfg.seed,
                 "params": asdict(params)}, out / "synth_config.json")
    print(f"wrote {len(records)} pairs to {out}")
    return 0


def cmd_build_dataset(args) -> int:
    out = _out_dir(args)
    cfg = _base_config(args)
    size = tuple(args.size) if args.size else cfg.image_size
    raw = Path(args.raw)
    crops = out / "crops"
    warnings = []
    for plant in sorted(p for p in raw.iterdir() if p.is_dir()):
        warnings += data.crop_by_latest_labels(plant, crops / plant.name,
                                              margin=args.margin, size=size)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    _gen_masks_tree(crops, kernel=tuple(args.mask_kernel),
                    min_size=args.mask_min_size, bins=256,
                    dark_modalities=set(args.dark_foreground))
    rule = data.PairRule(moving_modality=args.moving_modality,
                         fixed_modality=args.fixed_modality,
                         min_dt=args.min_dt, max_dt=args.max_dt)
    records = data.select_pairs(crops, rule)
    train_recs, test_recs = data.make_splits(records, train_n=args.train_n,
                                             test_n=args.test_n, seed=cfg.seed)
    data.write_manifest(records, crops / "pairs.tsv")
    data.write_manifest(train_recs, crops / "train_pairs.tsv")
    data.write_manifest(test_recs, crops / "test_pairs.tsv")
    _write_json({"command": "build-dataset", "raw": str(raw), "seed": cfg.seed,
                 "pairs": len(records), "train": len(train_recs),
                 "test": len(test_recs), "size": list(size)},
                out / "build_config.json")
    print(f"{len(records)} pairs ({len(train_recs)} train / "
          f"{len(test_recs)} test) under {crops}")
    return 0


def _gen_masks_tree(root: Path, kernel, min_size, bins, dark_modalities):
    """Write masks/ siblings for every modality image under root."""
    count = 0
    for plant in sorted(p for p in Path(root).iterdir() if p.is_dir()):
        for mod_dir in sorted(p for p in plant.iterdir()
                              if p.is_dir() and p.name not in data.NON_MODALITY_DIRS):
            for frame in sorted(mod_dir.iterdir()):
                img = data.load_image(frame)
                h, w = img.shape[:2]
                params = roi.MaskParams(
                    bins=bins, kernel=tuple(kernel),
                    min_size=min_size if min_size is not None
                    else roi.MaskParams.scaled_min_size(h, w),
                    bright_foreground=mod_dir.name not in dark_modalities)
                mask = roi.gen_roi_mask(img, params)
                roi.save_mask(mask, plant / "masks"
                              / roi.mask_filename(f"{mod_dir.name}_{frame.stem}"))
                count += 1
    return count


def cmd_gen_masks(args) -> int:
    count = _gen_masks_tree(Path(args.data), kernel=tuple(args.kernel),
                            min_size=args.min_size, bins=args.bins,
                            dark_modalities=set(args.dark_foreground))
    print(f"wrote {count} masks under {args.data}")
    return 0


def _load_records(data_dir: str) -> list:
    manifest = Path(data_dir) / "pairs.tsv"
    if not manifest.is_file():
        manifest = Path(data_dir)
    return data.read_manifest(manifest)


def cmd_pretrain(args) -> int:
    out = _out_dir(args)
    cfg = _base_config(args)
    records = _load_records(args.data)
    _, history = train.pretrain_guidance(records, cfg, out_dir=out)
    print(f"guidance checkpoint: {out / 'guidance.pt'} "
          f"(final recon {history[-1]['recon']:.6g})")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args)
    cfg = _base_config(args)
    records = [r.strip_labels() for r in _load_records(args.data)]
    _, history = train.train_registration(records, cfg, args.guidance,
                                          out_dir=out)
    print(f"model checkpoint: {out / 'model.pt'} "
          f"(final total {history[-1]['total']:.6g})")
    return 0


def cmd_register(args) -> int:
    from .viz import save_panel

    out = _out_dir(args)
    blob = train.load_checkpoint(args.checkpoint)
    model, cfg = train.restore_model(blob)
    if args.device is not None:
        cfg = replace(cfg, device=args.device)
    save_config(cfg, out / "config.json")
    i_x = train._to_tensor(data.load_image(args.moving, channels=cfg.channels))
    i_y = train._to_tensor(data.load_image(args.fixed, channels=cfg.channels))
    phi, warped = train.infer_register(i_x, i_y, model)
    np.savez_compressed(out / "phi.npz", phi=phi.numpy())
    arr = warped.permute(1, 2, 0).numpy().squeeze()
    data.save_image(arr, out / "warped.png")
    save_panel(out / "panel.png", i_x, i_y, warped, phi)
    print(f"wrote {out / 'phi.npz'}, {out / 'warped.png'}, {out / 'panel.png'}")
    return 0


def cmd_evaluate(args) -> int:
    out = _out_dir(args)
    blob = train.load_checkpoint(args.checkpoint)
    model, cfg = train.restore_model(blob)
    save_config(cfg, out / "config.json")
    records = [r for r in _load_records(args.data) if r.has_labels]
    if not records:
        print("error: no labeled pairs to evaluate", file=sys.stderr)
        return 2
    report = metrics.evaluate_records(records, model, cfg,
                                      convention=args.dice_convention)
    (out / "metrics.tsv").write_text(report.to_tsv())
    print(report.summary())
    if report.has_nan():
        print("error: NaN metric value", file=sys.stderr)
        return 1
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "build-dataset": cmd_build_dataset,
    "gen-masks": cmd_gen_masks,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "register": cmd_register,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    torch.set_num_threads(max(1, torch.get_num_threads()))
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
