"""Command-line entry point: ``xrdseg <subcommand>`` (or ``python -m xrdseg``).

Relative artifact paths (datasets, stores, checkpoints, images, masks,
reports) resolve against ``$XRDSEG_ROOT`` when it is set; ``--config``
files resolve against the working directory.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import pipeline
from .errors import ConfigError, XRDSegError
from .integration import integrate, write_pattern_csv
from .io import dump_json, load_checkpoint, load_json, read_image, read_mask, save_checkpoint, write_mask
from .masking import threshold_mask
from .synth import DetectorGeometry, make_scenes, render, two_theta_map
from .unet import count_parameters

ROOT_ENV = "XRDSEG_ROOT"


def _path(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(ROOT_ENV)
    return p if p.is_absolute() or not root else Path(root) / p


def _train_config(args) -> pipeline.TrainConfig:
    base = {}
    if getattr(args, "config", None):
        base = load_json(args.config)
        if not isinstance(base, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
    for f in fields(pipeline.TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    return pipeline.TrainConfig.from_dict(base)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with TrainConfig fields; flags override it")
    p.add_argument("--window", type=int)
    p.add_argument("--step", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--growth-rate", dest="growth_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--split-fraction", dest="split_fraction", type=float)
    p.add_argument("--augment", action="store_const", const=True, default=None)
    p.add_argument("--max-tiles", dest="max_tiles", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--strict", action="store_true",
                   help="serialize all reductions (the numpy backend always does)")


def _geometry(args, header: dict) -> DetectorGeometry:
    if getattr(args, "geometry", None):
        return DetectorGeometry.from_dict(load_json(_path(args.geometry)))
    if "geometry" in header:
        return DetectorGeometry.from_dict(header["geometry"])
    raise ConfigError("no detector geometry: pass --geometry or use an image whose header carries one")


# -- subcommands ------------------------------------------------------------------


def cmd_synth(args) -> None:
    scenes = make_scenes(args.n, args.archetype, args.size, args.seed)
    items = []
    for i, s in enumerate(scenes):
        image, mask = render(s)
        items.append(pipeline.DatasetItem(f"{args.prefix or args.archetype}-{i:03d}", image, mask,
                                          args.archetype, s.geometry))
    path = pipeline.write_dataset(_path(args.out), items, scenes)
    print(path)


def cmd_prepare(args) -> None:
    cfg = _train_config(args)
    items = pipeline.load_manifest(_path(args.manifest))
    store = pipeline.prepare(items, cfg)
    store.save(_path(args.out))
    print(f"{len(store)} tiles, {len(store.train_index)} selected for training -> {_path(args.out)}")


def cmd_train(args) -> None:
    cfg = _train_config(args)
    store = pipeline.TileStore.load(_path(args.store))
    out = _path(args.out)
    extra = {"window": cfg.window, "train_step": cfg.step, "preprocess": pipeline.PREPROCESS}

    def on_epoch(epoch, model, loss):
        if args.checkpoint_every and epoch % args.checkpoint_every == 0 and epoch != cfg.epochs:
            save_checkpoint(out / f"epoch-{epoch:04d}", model, epoch=epoch, metrics={"loss": loss}, extra=extra)

    model, record = pipeline.train(cfg, store, on_epoch=on_epoch)
    metrics = {"loss": record.epoch_loss[-1] if record.epoch_loss else None, **record.train_metrics}
    save_checkpoint(out, model, epoch=cfg.epochs, metrics=metrics, extra=extra)
    record.checkpoints.append(str(out))
    dump_json(record.to_dict(), out / "run.json")
    print(f"trained {record.parameter_count} parameters for {cfg.epochs} epochs -> {out}")


def cmd_sweep(args) -> None:
    cfg = _train_config(args)
    items = pipeline.load_manifest(_path(args.manifest))
    test = pipeline.load_manifest(_path(args.test_manifest)) if args.test_manifest else None
    cells = pipeline.sweep(cfg, items, windows=args.windows or (), depths=args.depths or (),
                           epochs=args.epoch_list or (), repeats=args.repeats,
                           n_train_images=args.n_train, mode=args.mode, test_items=test)
    for d in sorted({c.depth for c in cells}):
        n = next(c.parameter_count for c in cells if c.depth == d)
        print(f"depth {d}: {n} parameters")
    out = _path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header, body = pipeline.sweep_table(cells)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
    header, body = pipeline.sweep_long_rows(cells)
    with open(out.with_name(out.stem + "_long.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
    print(out)


def cmd_predict(args) -> None:
    model, manifest = load_checkpoint(_path(args.checkpoint))
    window = args.window or manifest.get("window")
    if window is None:
        raise ConfigError("checkpoint does not record a window; pass --window")
    image, header = read_image(_path(args.image))
    t0 = time.perf_counter()
    mask = pipeline.predict(model, image, window, args.step,
                            source=header.get("source", Path(args.image).name))
    dt = time.perf_counter() - t0
    write_mask(_path(args.out), mask)
    print(f"{mask.count()} pixels masked in {dt:.2f} s -> {_path(args.out)}")


def cmd_mask_baseline(args) -> None:
    image, header = read_image(_path(args.image))
    geo = _geometry(args, header)
    mask = threshold_mask(image, two_theta_map(geo), n_bins=args.bins, k=args.k,
                          source=header.get("source", Path(args.image).name))
    write_mask(_path(args.out), mask)
    print(f"{mask.count()} pixels masked -> {_path(args.out)}")


def cmd_evaluate(args) -> None:
    items = pipeline.load_manifest(_path(args.manifest))
    if args.checkpoint:
        model, manifest = load_checkpoint(_path(args.checkpoint))
        window = args.window or manifest["window"]
        method = pipeline.unet_method(model, window, args.step)
        name = f"unet:{args.checkpoint}"
    elif args.baseline:
        method, name = pipeline.baseline_method(args.k, args.bins), f"threshold:k={args.k}"
    else:
        method, name = pipeline.truth_method(), "truth"
    report = pipeline.evaluate(method, items, name)
    dump_json(report.to_dict(), _path(args.out))
    a = report.aggregate
    print(f"recall {a['recall']:.4f} specificity {a['specificity']:.5f} "
          f"mean fp/image {a['mean_fp_per_image']:.1f} -> {_path(args.out)}")


def cmd_compare(args) -> None:
    a = pipeline.EvalReport.from_dict(load_json(_path(args.a)))
    b = pipeline.EvalReport.from_dict(load_json(_path(args.b)))
    result = pipeline.compare(a, b)
    if args.out:
        dump_json(result, _path(args.out))
    print(f"fp reduction of {a.method} vs {b.method}: {result['fp_reduction_percent']:.1f}%")


def cmd_integrate(args) -> None:
    image, header = read_image(_path(args.image))
    geo = _geometry(args, header)
    mask = read_mask(_path(args.mask)) if args.mask else None
    pattern = integrate(image, geo, mask, n_bins=args.bins,
                        two_theta_range=tuple(args.range) if args.range else None)
    out = _path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pattern_csv(pattern, out)
    print(f"{int((~pattern.empty).sum())}/{len(pattern)} non-empty bins -> {out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xrdseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic dataset and manifest")
    p.add_argument("--archetype", choices=("nickel", "battery", "perfect"), default="battery")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prefix")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="crop, sort and split a manifest into a tile store")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a U-Net on a tile store")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--checkpoint-every", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="repeated training over window/depth/epoch grids")
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-manifest")
    p.add_argument("--windows", type=int, nargs="+")
    p.add_argument("--depths", type=int, nargs="+")
    p.add_argument("--epoch-list", type=int, nargs="+")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--n-train", type=int)
    p.add_argument("--mode", choices=("split", "images"), default="split")
    p.add_argument("--out", required=True, help="CSV path")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("predict", help="segment a full image with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--window", type=int)
    p.add_argument("--step", type=int)
    p.add_argument("--out", required=True, help="mask stem")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("mask-baseline", help="intensity-threshold mask")
    p.add_argument("--image", required=True)
    p.add_argument("--geometry")
    p.add_argument("--bins", type=int)
    p.add_argument("--k", type=float, default=3.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask_baseline)

    p = sub.add_parser("evaluate", help="score a method against truth masks")
    p.add_argument("--manifest", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--checkpoint")
    g.add_argument("--baseline", action="store_true")
    g.add_argument("--truth", action="store_true", help="score the truth masks themselves")
    p.add_argument("--window", type=int)
    p.add_argument("--step", type=int)
    p.add_argument("--k", type=float, default=3.0)
    p.add_argument("--bins", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="false-positive reduction between two evaluation reports")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("integrate", help="masked azimuthal integration to CSV")
    p.add_argument("--image", required=True)
    p.add_argument("--mask")
    p.add_argument("--geometry")
    p.add_argument("--bins", type=int, default=2000)
    p.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_integrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except XRDSegError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (TypeError, json.JSONDecodeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
