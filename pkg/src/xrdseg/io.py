"""On-disk formats: raw little-endian blobs with JSON headers.

* image:  ``<stem>.json`` header ``{shape, dtype: "f32le", endianness, semantic}``
  plus ``<stem>.f32`` holding the row-major float32 data.
* mask:   ``<stem>.json`` sidecar ``{shape, provenance, source}`` plus
  ``<stem>.u8`` with one 0/1 byte per pixel.
* checkpoint: a directory with ``manifest.json`` and one ``.f32`` blob per
  tensor, in manifest order.

JSON is always written with sorted keys and a fixed layout so identical
content gives identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataError
from .masking import MaskImage
from .unet import INIT_SCHEME, UNet, UNetConfig

CHECKPOINT_FORMAT = "xrdseg-checkpoint/1"


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise DataError(f"missing file {path}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from e


def _stem(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".json", ".f32", ".u8") else p


def _sibling(stem: Path, suffix: str) -> Path:
    # append rather than replace: "x.image" -> "x.image.json"
    return stem.with_name(stem.name + suffix)


def write_image(path, image: np.ndarray, semantic: str = "image", extra: dict | None = None) -> Path:
    """Write an image container; returns the header path."""
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(image, dtype="<f4")
    header = {"shape": list(data.shape), "dtype": "f32le", "endianness": "little",
              "semantic": semantic, "blob": stem.name + ".f32"}
    if extra:
        header.update(extra)
    _sibling(stem, ".f32").write_bytes(data.tobytes())
    dump_json(header, _sibling(stem, ".json"))
    return _sibling(stem, ".json")


def read_image(path) -> tuple[np.ndarray, dict]:
    stem = _stem(path)
    header = load_json(_sibling(stem, ".json"))
    if header.get("dtype") != "f32le":
        raise DataError(f"{stem}: unsupported dtype {header.get('dtype')!r}")
    blob = stem.parent / header.get("blob", stem.name + ".f32")
    raw = blob.read_bytes() if blob.exists() else None
    shape = tuple(header["shape"])
    if raw is None or len(raw) != 4 * int(np.prod(shape)):
        raise DataError(f"{blob}: blob missing or wrong size for shape {shape}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32), header


def write_mask(path, mask: MaskImage) -> Path:
    stem = _stem(path)
    stem.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(mask.grid, dtype=np.uint8)
    _sibling(stem, ".u8").write_bytes(data.tobytes())
    dump_json({"shape": list(data.shape), "provenance": mask.provenance, "source": mask.source,
               "semantic": "mask", "dtype": "u8", "blob": stem.name + ".u8"},
              _sibling(stem, ".json"))
    return _sibling(stem, ".json")


def read_mask(path) -> MaskImage:
    stem = _stem(path)
    side = load_json(_sibling(stem, ".json"))
    blob = stem.parent / side.get("blob", stem.name + ".u8")
    shape = tuple(side["shape"])
    raw = blob.read_bytes() if blob.exists() else b""
    if len(raw) != int(np.prod(shape)):
        raise DataError(f"{blob}: blob missing or wrong size for shape {shape}")
    grid = np.frombuffer(raw, dtype=np.uint8).reshape(shape)
    if grid.size and grid.max() > 1:
        raise DataError(f"{blob}: mask values must be 0 or 1")
    return MaskImage(grid.astype(bool), provenance=side.get("provenance", "manual"),
                     source=side.get("source", ""))


def _blob_name(i: int, name: str) -> str:
    return f"{i:03d}_{name}.f32"


def save_checkpoint(directory, model: UNet, *, epoch: int = 0, metrics: dict | None = None,
                    extra: dict | None = None) -> Path:
    """Write ``manifest.json`` plus one float32 blob per parameter and buffer."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tensors = []
    for i, (name, arr) in enumerate(model.state_arrays().items()):
        fname = _blob_name(i, name)
        (d / fname).write_bytes(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        tensors.append({"name": name, "shape": list(arr.shape), "file": fname,
                        "learnable": name in model.params})
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "init": INIT_SCHEME,
        "dtype": "f32le",
        "epoch": int(epoch),
        "metrics": metrics or {},
        "tensors": tensors,
    }
    if extra:
        manifest.update(extra)
    dump_json(manifest, d / "manifest.json")
    return d


def load_checkpoint(directory) -> tuple[UNet, dict]:
    d = Path(directory)
    manifest = load_json(d / "manifest.json")
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{d}: not a checkpoint (format {manifest.get('format')!r})")
    model = UNet(UNetConfig.from_dict(manifest["config"]))
    arrays = {}
    for t in manifest["tensors"]:
        raw = (d / t["file"]).read_bytes()
        shape = tuple(t["shape"])
        if len(raw) != 4 * int(np.prod(shape)):
            raise DataError(f"{d / t['file']}: wrong size for shape {shape}")
        arrays[t["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape)
    model.load_state_arrays(arrays)
    return model, manifest
