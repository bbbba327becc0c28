"""Dataset preparation, training, prediction, evaluation and sweeps.

The workflow mirrors a typical beamline study: a handful of annotated
detector images is cropped into overlapping tiles, tiles are sorted so the
ones containing artifacts come first, a seeded random fraction is kept for
training, and the trained network is applied to held-out full images
through the same tiling followed by overlap-ignoring reassembly.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import ops
from .errors import ConfigError, DataError, ShapeError
from .io import dump_json, load_json, read_image, read_mask, write_image, write_mask
from .masking import ConfusionCounts, MaskImage, confusion, fp_per_image, recall, specificity, threshold_mask
from .optim import Adam
from .synth import DetectorGeometry, SceneSpec, make_scenes, render, two_theta_map
from .tiling import AUGMENTATIONS, crop, crop_labeled, make_grid, stitch, transform
from .unet import UNet, UNetConfig, build, count_parameters

log = logging.getLogger(__name__)

PREPROCESS = "log1p_over_median"


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Scale-free network input: ``log1p(image / median(image))``.

    Detector images differ in overall intensity by orders of magnitude, so
    each full image is divided by its median before cropping.
    """
    image = np.asarray(image, dtype=np.float64)
    scale = float(np.median(image))
    if not scale > 0:
        scale = float(image.mean())
    if not scale > 0:
        scale = 1.0
    return np.log1p(np.clip(image, 0.0, None) / scale).astype(np.float32)


# -- datasets ---------------------------------------------------------------------


@dataclass
class DatasetItem:
    id: str
    image: np.ndarray
    mask: np.ndarray | None = None
    dataset: str = ""
    geometry: DetectorGeometry | None = None


def synth_items(n_images: int, archetype: str, size: int = 512, seed: int = 0,
                prefix: str | None = None) -> list[DatasetItem]:
    """Render synthetic images directly into memory."""
    prefix = prefix or archetype
    items = []
    for i, scene in enumerate(make_scenes(n_images, archetype, size, seed)):
        image, mask = render(scene)
        items.append(DatasetItem(f"{prefix}-{i:03d}", image, mask, archetype, scene.geometry))
    return items


def write_dataset(directory, items: Sequence[DatasetItem], scenes: Sequence[SceneSpec] | None = None) -> Path:
    """Write image/mask containers and ``manifest.json``; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, it in enumerate(items):
        extra = {"source": it.id}
        if it.geometry is not None:
            extra["geometry"] = it.geometry.to_dict()
        write_image(d / f"{it.id}.image", it.image, "image", extra)
        entry = {"id": it.id, "dataset": it.dataset, "image": f"{it.id}.image.json"}
        if it.mask is not None:
            write_mask(d / f"{it.id}.mask", MaskImage(it.mask, "manual", it.id))
            entry["mask"] = f"{it.id}.mask.json"
        if it.geometry is not None:
            entry["geometry"] = it.geometry.to_dict()
        if scenes is not None:
            entry["scene"] = scenes[k].to_dict()
        entries.append(entry)
    path = d / "manifest.json"
    dump_json({"version": 1, "images": entries}, path)
    return path


def load_manifest(path) -> list[DatasetItem]:
    path = Path(path)
    doc = load_json(path)
    if "images" not in doc:
        raise DataError(f"{path}: manifest has no 'images' list")
    base = path.parent
    items = []
    for e in doc["images"]:
        image, header = read_image(base / e["image"])
        mask = read_mask(base / e["mask"]).grid.astype(np.uint8) if e.get("mask") else None
        if mask is not None and mask.shape != image.shape:
            raise ShapeError(f"manifest pair {e['id']!r}: image {image.shape} vs mask {mask.shape}",
                             dim="shape", expected=image.shape, got=mask.shape)
        geo = e.get("geometry") or header.get("geometry")
        items.append(DatasetItem(e["id"], image, mask, e.get("dataset", ""),
                                 DetectorGeometry.from_dict(geo) if geo else None))
    return items


# -- configuration ----------------------------------------------------------------


@dataclass
class TrainConfig:
    window: int = 128
    step: int | None = None  # default window // 2
    depth: int = 4
    base_channels: int = 8
    growth_rate: float = 2.0
    epochs: int = 100
    batch_size: int = 50
    lr: float = 1e-2
    split_fraction: float = 0.8
    augment: bool = False
    max_tiles: int | None = None  # keep only the highest-labeled tiles of the training split
    seed: int = 0
    manifest: str | None = None

    def __post_init__(self):
        if self.window < 2 or self.window & (self.window - 1):
            raise ConfigError(f"window must be a power of two, got {self.window}")
        if self.step is None:
            self.step = self.window // 2
        if not 1 <= self.step <= self.window:
            raise ConfigError(f"step must lie in [1, window], got {self.step}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.max_tiles is not None and self.max_tiles < 1:
            raise ConfigError("max_tiles must be >= 1")
        self.unet_config.check_tile(self.window)

    @property
    def unet_config(self) -> UNetConfig:
        return UNetConfig(depth=self.depth, base_channels=self.base_channels,
                          growth_rate=self.growth_rate, seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# -- tile store -------------------------------------------------------------------


@dataclass
class TileStore:
    pixels: np.ndarray  # (K, S, S) float32, normalized
    labels: np.ndarray  # (K, S, S) uint8
    sources: list[str]
    origins: list[tuple[int, int]]
    train_index: np.ndarray  # indices into the sorted tiles used for training
    config: dict = field(default_factory=dict)

    @property
    def labeled_fraction(self) -> np.ndarray:
        return self.labels.reshape(len(self.labels), -1).mean(axis=1)

    def __len__(self) -> int:
        return len(self.pixels)

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "pixels.f32").write_bytes(np.ascontiguousarray(self.pixels, dtype="<f4").tobytes())
        (d / "labels.u8").write_bytes(np.ascontiguousarray(self.labels, dtype=np.uint8).tobytes())
        dump_json({
            "shape": list(self.pixels.shape),
            "sources": self.sources,
            "origins": [list(o) for o in self.origins],
            "labeled_fraction": [float(f) for f in self.labeled_fraction],
            "train_index": [int(i) for i in self.train_index],
            "config": self.config,
            "preprocess": PREPROCESS,
        }, d / "store.json")
        return d

    @classmethod
    def load(cls, directory) -> "TileStore":
        d = Path(directory)
        meta = load_json(d / "store.json")
        shape = tuple(meta["shape"])
        try:
            pixels = np.frombuffer((d / "pixels.f32").read_bytes(), dtype="<f4").reshape(shape)
            labels = np.frombuffer((d / "labels.u8").read_bytes(), dtype=np.uint8).reshape(shape)
        except (FileNotFoundError, ValueError) as e:
            raise DataError(f"{d}: tile store blobs missing or inconsistent ({e})") from e
        return cls(pixels.astype(np.float32), labels.copy(), meta["sources"],
                   [tuple(o) for o in meta["origins"]], np.asarray(meta["train_index"], dtype=np.int64),
                   meta.get("config", {}))


def split_indices(n_tiles: int, split_fraction: float, seed: int) -> np.ndarray:
    """Seeded random choice of ``round(split_fraction * n_tiles)`` positions, kept in input order."""
    k = int(round(split_fraction * n_tiles))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_tiles, size=k, replace=False))


def prepare(items: Sequence[DatasetItem], config: TrainConfig) -> TileStore:
    """Crop (and optionally augment) labeled images into a sorted, split tile store.

    Tiles are sorted by labeled fraction, descending (stable), then a seeded
    random ``split_fraction`` of the sorted pool is selected for training.
    With ``max_tiles`` only the first, most-labeled, selected tiles are kept.
    """
    pixels, labels, sources, origins = [], [], [], []
    for it in items:
        if it.mask is None:
            raise DataError(f"image {it.id!r} has no mask")
        if it.mask.shape != it.image.shape:
            raise ShapeError(f"image/mask pair {it.id!r} differs: {it.image.shape} vs {it.mask.shape}",
                             dim="shape", expected=it.image.shape, got=it.mask.shape)
        norm = normalize_image(it.image)
        variants = AUGMENTATIONS if config.augment else ("identity",)
        for name in variants:
            img, lab = transform(norm, name), transform(np.asarray(it.mask, dtype=np.uint8), name)
            grid = make_grid(img.shape, config.window, config.step)
            tag = it.id if name == "identity" else f"{it.id}:{name}"
            for t in crop_labeled(img, lab, grid, tag):
                pixels.append(t.pixels)
                labels.append(t.labels)
                sources.append(t.source)
                origins.append(t.origin)
    if not pixels:
        raise DataError("no tiles produced; empty manifest?")
    pixels_a = np.stack(pixels).astype(np.float32)
    labels_a = np.stack(labels).astype(np.uint8)
    frac = labels_a.reshape(len(labels_a), -1).mean(axis=1)
    order = np.argsort(-frac, kind="stable")
    train = split_indices(len(order), config.split_fraction, config.seed)
    if config.max_tiles is not None:
        train = train[:config.max_tiles]
    return TileStore(pixels_a[order], labels_a[order], [sources[i] for i in order],
                     [origins[i] for i in order], train, config.to_dict())


# -- training ---------------------------------------------------------------------


@dataclass
class RunRecord:
    config: dict
    parameter_count: int
    epoch_loss: list[float] = field(default_factory=list)
    train_metrics: dict = field(default_factory=dict)
    eval_metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    checkpoints: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _shuffle_seed(seed: int) -> np.random.Generator:
    # separate stream from weight init (which uses the raw seed)
    return np.random.default_rng(np.random.SeedSequence([seed, 1]))


def train(config: TrainConfig, store: TileStore,
          on_epoch: Callable[[int, UNet, float], None] | None = None) -> tuple[UNet, RunRecord]:
    """Train a fresh U-Net on the store's training tiles.

    One seeded shuffle per epoch, mini-batches of ``batch_size``, softmax
    cross-entropy, ADAM at a fixed learning rate.  ``on_epoch(epoch, model,
    mean_loss)`` is called after every epoch (e.g. to write checkpoints).
    """
    model = build(config.unet_config, tile_size=config.window)
    if store.pixels.shape[1:] != (config.window, config.window):
        raise ShapeError(f"store tiles are {store.pixels.shape[1:]}, config window is {config.window}",
                         dim="S", expected=config.window, got=store.pixels.shape[1])
    x = store.pixels[store.train_index][:, None]
    y = store.labels[store.train_index].astype(np.intp)
    if len(x) == 0:
        raise DataError("training split is empty")
    opt = Adam(model.parameters(), lr=config.lr)
    rng = _shuffle_seed(config.seed)
    record = RunRecord(config.to_dict(), count_parameters(model))
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        perm = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(x), config.batch_size):
            idx = perm[s:s + config.batch_size]
            opt.zero_grad()
            loss = ops.softmax_cross_entropy(model(x[idx], training=True), y[idx])
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
        mean = total / len(x)
        record.epoch_loss.append(mean)
        log.info("epoch %d/%d loss %.6f", epoch + 1, config.epochs, mean)
        if on_epoch is not None:
            on_epoch(epoch + 1, model, mean)
    record.timings["train_seconds"] = time.perf_counter() - t0

    c = ConfusionCounts(0, 0, 0, 0)
    pred = ops.argmax_classes(model.predict_logits(x)).astype(bool)
    for p, t in zip(pred, y.astype(bool)):
        c = c + confusion(p, t)
    record.train_metrics = {"recall": recall(c), "specificity": specificity(c), "fp": c.fp}
    return model, record


# -- prediction & evaluation ------------------------------------------------------


def predict(model: UNet, image: np.ndarray, window: int, step: int | None = None,
            source: str = "", batch_size: int = 32) -> MaskImage:
    """Segment a full image: crop, eval-mode forward, per-tile argmax, stitch."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {image.shape}", dim="ndim", expected=2, got=image.ndim)
    model.config.check_tile(window)
    norm = normalize_image(image)
    h, w = norm.shape
    ph, pw = max(0, window - h), max(0, window - w)
    if ph or pw:
        norm = np.pad(norm, ((0, ph), (0, pw)))
    grid = make_grid(norm.shape, window, step if step is not None else window // 2)
    tiles = crop(norm, grid)[:, None]
    labels = ops.argmax_classes(model.predict_logits(tiles, batch_size=batch_size)).astype(np.uint8)
    full = stitch(labels, grid)[:h, :w]
    return MaskImage(full.astype(bool), provenance="unet", source=source)


def unet_method(model: UNet, window: int, step: int | None = None) -> Callable[[DatasetItem], MaskImage]:
    return lambda it: predict(model, it.image, window, step, source=it.id)


def baseline_method(k: float = 3.0, n_bins: int | None = None) -> Callable[[DatasetItem], MaskImage]:
    def run(it: DatasetItem) -> MaskImage:
        if it.geometry is None:
            raise DataError(f"image {it.id!r} has no detector geometry; the baseline needs a 2theta map")
        return threshold_mask(it.image, two_theta_map(it.geometry), n_bins=n_bins, k=k, source=it.id)
    return run


def truth_method() -> Callable[[DatasetItem], MaskImage]:
    return lambda it: MaskImage(it.mask, provenance="truth", source=it.id)


@dataclass
class EvalReport:
    method: str
    rows: list[dict]  # per image: id, dataset, tp, fp, tn, fn, recall, specificity, fp_per_image, seconds
    aggregate: dict

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["method"], d["rows"], d["aggregate"])


def evaluate(method: Callable[[DatasetItem], MaskImage], items: Sequence[DatasetItem],
             name: str = "method") -> EvalReport:
    """Per-image and pooled recall / specificity / false positives against truth masks."""
    rows = []
    total = ConfusionCounts(0, 0, 0, 0)
    for it in items:
        if it.mask is None:
            raise DataError(f"image {it.id!r} has no truth mask")
        t0 = time.perf_counter()
        pred = method(it)
        dt = time.perf_counter() - t0
        c = confusion(pred, it.mask)
        total = total + c
        rows.append({"id": it.id, "dataset": it.dataset, **asdict(c), "recall": recall(c),
                     "specificity": specificity(c), "fp_per_image": fp_per_image(c), "seconds": dt})
    n = max(len(rows), 1)
    agg = {"images": len(rows), **asdict(total), "recall": recall(total), "specificity": specificity(total),
           "mean_recall": float(np.mean([r["recall"] for r in rows])) if rows else 1.0,
           "mean_fp_per_image": sum(r["fp_per_image"] for r in rows) / n,
           "mean_seconds": sum(r["seconds"] for r in rows) / n}
    return EvalReport(name, rows, agg)


def fp_reduction(a: EvalReport, b: EvalReport) -> float:
    """Percent reduction of ``a``'s mean false positives relative to ``b``."""
    fa, fb = a.aggregate["mean_fp_per_image"], b.aggregate["mean_fp_per_image"]
    if fb == 0:
        return 0.0 if fa == 0 else -math.inf
    return 100.0 * (fb - fa) / fb


def compare(a: EvalReport, b: EvalReport) -> dict:
    """Per-image metric deltas (a - b) and the FP reduction of ``a`` versus ``b``."""
    by_id = {r["id"]: r for r in b.rows}
    deltas = []
    for r in a.rows:
        o = by_id.get(r["id"])
        if o is None:
            continue
        deltas.append({"id": r["id"], "d_recall": r["recall"] - o["recall"],
                       "d_specificity": r["specificity"] - o["specificity"],
                       "d_fp": r["fp_per_image"] - o["fp_per_image"]})
    return {"a": a.method, "b": b.method, "fp_reduction_percent": fp_reduction(a, b), "per_image": deltas}


# -- sweeps -----------------------------------------------------------------------


@dataclass
class SweepCell:
    window: int
    dataset: str
    depth: int
    epochs: int
    parameter_count: int
    recalls: list[float]
    specificities: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.recalls))

    @property
    def std(self) -> float:
        return float(np.std(self.recalls))


def sweep(base: TrainConfig, items: Sequence[DatasetItem], *, windows: Sequence[int] = (),
          depths: Sequence[int] = (), epochs: Sequence[int] = (), repeats: int = 5,
          n_train_images: int | None = None, mode: str = "split",
          test_items: Sequence[DatasetItem] | None = None) -> list[SweepCell]:
    """Repeat training over a grid of window x depth x epochs; collect held-out recall.

    ``mode="split"`` keeps the training images fixed and varies only the
    seed (tile split, shuffling, init).  ``mode="images"`` additionally
    redraws ``n_train_images`` training images per dataset for every repeat;
    the rest of each dataset becomes the test set.
    """
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    if mode not in ("split", "images"):
        raise ConfigError(f"unknown repeat mode {mode!r}")
    windows = list(windows) or [base.window]
    depths = list(depths) or [base.depth]
    epochs = list(epochs) or [base.epochs]
    groups: dict[str, list[DatasetItem]] = {}
    for it in items:
        groups.setdefault(it.dataset, []).append(it)

    cells: dict[tuple, SweepCell] = {}
    for w in windows:
        for d in depths:
            for e in epochs:
                cfg = replace(base, window=w, depth=d, epochs=e, step=None if w != base.window else base.step)
                for rep in range(repeats):
                    seed = int(np.random.SeedSequence([base.seed, rep]).generate_state(1)[0])
                    train_items, test_by_ds = _split_images(groups, n_train_images, mode, seed, test_items)
                    run_cfg = replace(cfg, seed=seed)
                    model, rec = train(run_cfg, prepare(train_items, run_cfg))
                    log.info("sweep window=%d depth=%d epochs=%d repeat=%d params=%d",
                             w, d, e, rep, rec.parameter_count)
                    for ds, test in sorted(test_by_ds.items()):
                        rep_ = evaluate(unet_method(model, w), test)
                        key = (w, ds, d, e)
                        cell = cells.setdefault(key, SweepCell(w, ds, d, e, rec.parameter_count, [], []))
                        cell.recalls.append(rep_.aggregate["recall"])
                        cell.specificities.append(rep_.aggregate["specificity"])
    return list(cells.values())


def _split_images(groups, n_train, mode, seed, test_items):
    rng = np.random.default_rng(seed)
    train_items, test_by_ds = [], {}
    for ds, its in sorted(groups.items()):
        if mode == "images" and n_train is not None:
            pick = set(rng.choice(len(its), size=min(n_train, len(its)), replace=False).tolist())
        else:
            pick = set(range(min(n_train, len(its)) if n_train is not None else len(its)))
        train_items += [it for i, it in enumerate(its) if i in pick]
        rest = [it for i, it in enumerate(its) if i not in pick]
        if rest:
            test_by_ds[ds] = rest
    if test_items is not None:
        test_by_ds = {}
        for it in test_items:
            test_by_ds.setdefault(it.dataset, []).append(it)
    return train_items, test_by_ds


def sweep_table(cells: Sequence[SweepCell]) -> tuple[list[str], list[list[str]]]:
    """Table-shaped view: rows window x dataset, columns epochs (or depth), ``mean ± std`` in percent."""
    depths = sorted({c.depth for c in cells})
    epochs = sorted({c.epochs for c in cells})

    def col(c: SweepCell) -> str:
        if len(depths) == 1:
            return f"epochs={c.epochs}"
        if len(epochs) == 1:
            return f"depth={c.depth}"
        return f"depth={c.depth};epochs={c.epochs}"

    columns = []
    for d in depths:
        for e in epochs:
            name = col(SweepCell(0, "", d, e, 0, [], []))
            if name not in columns:
                columns.append(name)
    rows: dict[tuple[int, str], dict[str, str]] = {}
    for c in cells:
        rows.setdefault((c.window, c.dataset), {})[col(c)] = f"{100 * c.mean:.1f} ± {100 * c.std:.1f}"
    header = ["window", "dataset", *columns]
    body = [[str(w), ds, *[rows[(w, ds)].get(k, "") for k in columns]] for (w, ds) in sorted(rows)]
    return header, body


def sweep_long_rows(cells: Sequence[SweepCell]) -> tuple[list[str], list[list]]:
    header = ["window", "dataset", "depth", "epochs", "parameters", "repeats",
              "mean_recall", "std_recall", "mean_specificity", "std_specificity"]
    body = [[c.window, c.dataset, c.depth, c.epochs, c.parameter_count, len(c.recalls), c.mean, c.std,
             float(np.mean(c.specificities)), float(np.std(c.specificities))] for c in cells]
    return header, body
