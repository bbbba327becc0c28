"""Overlapping square tiles: cropping, overlap-ignoring reassembly, augmentation.

Tile origins along an axis of length ``L`` are ``0, step, 2*step, ...``;
the last window is shifted back to ``L - window`` when it would overrun, so
every pixel is covered.  On reassembly each pixel is taken from the single
tile whose center is nearest to it (first tile on ties), so overlap zones
are never averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError


def axis_origins(length: int, window: int, step: int) -> list[int]:
    if window > length:
        raise ShapeError(f"window {window} exceeds image extent {length}", dim="window",
                         expected=f"<= {length}", got=window)
    if step < 1:
        raise ConfigError(f"step must be >= 1, got {step}")
    last = length - window
    n = math.ceil(last / step) + 1 if last > 0 else 1
    origins: list[int] = []
    for k in range(n):
        o = min(k * step, last)
        if not origins or origins[-1] != o:
            origins.append(o)
    return origins


def _owners(length: int, window: int, origins: list[int]) -> np.ndarray:
    """Index of the owning tile for every position along one axis."""
    centers = np.asarray(origins, dtype=np.float64) + window / 2.0
    pos = np.arange(length, dtype=np.float64) + 0.5
    # argmin returns the first minimum, i.e. the earlier tile on ties
    return np.abs(pos[:, None] - centers[None, :]).argmin(axis=1)


@dataclass(frozen=True)
class TileGrid:
    image_size: tuple[int, int]
    window: int
    step: int
    row_origins: tuple[int, ...] = field(repr=False)
    col_origins: tuple[int, ...] = field(repr=False)

    @property
    def tile_origins(self) -> list[tuple[int, int]]:
        return [(r, c) for r in self.row_origins for c in self.col_origins]

    def __len__(self) -> int:
        return len(self.row_origins) * len(self.col_origins)

    def to_dict(self) -> dict:
        return {"image_size": list(self.image_size), "window": self.window, "step": self.step,
                "tile_origins": [list(o) for o in self.tile_origins]}

    @classmethod
    def from_dict(cls, d: dict) -> "TileGrid":
        return make_grid(tuple(d["image_size"]), d["window"], d["step"])


def make_grid(image_size, window: int, step: int | None = None) -> TileGrid:
    """Deterministic tiling of an ``(H, W)`` image; ``step`` defaults to ``window // 2``."""
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    h, w = (int(s) for s in image_size)
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    if step is None:
        step = max(1, window // 2)
    if window > min(h, w):
        raise ShapeError(f"window {window} exceeds image size {h}x{w}", dim="window",
                         expected=f"<= {min(h, w)}", got=window)
    return TileGrid((h, w), int(window), int(step),
                    tuple(axis_origins(h, window, step)), tuple(axis_origins(w, window, step)))


def crop(image: np.ndarray, grid: TileGrid) -> np.ndarray:
    """Tiles as a ``(K, S, S)`` array (a copy), in grid order."""
    image = np.asarray(image)
    if image.shape[:2] != grid.image_size:
        raise ShapeError(f"image shape {image.shape[:2]} != grid image size {grid.image_size}",
                         dim="image_size", expected=grid.image_size, got=image.shape[:2])
    s = grid.window
    return np.stack([image[r:r + s, c:c + s] for r, c in grid.tile_origins]).copy()


@dataclass
class LabeledTile:
    pixels: np.ndarray
    labels: np.ndarray
    source: str
    origin: tuple[int, int]

    @property
    def labeled_fraction(self) -> float:
        return float(self.labels.mean())


def crop_labeled(image: np.ndarray, labels: np.ndarray, grid: TileGrid, source: str = "") -> list[LabeledTile]:
    image, labels = np.asarray(image), np.asarray(labels)
    if image.shape != labels.shape:
        raise ShapeError(f"image {image.shape} and labels {labels.shape} differ", dim="shape",
                         expected=image.shape, got=labels.shape)
    px, lb = crop(image, grid), crop(labels, grid)
    return [LabeledTile(p, l, source, o) for p, l, o in zip(px, lb, grid.tile_origins)]


def stitch(tile_maps, grid: TileGrid) -> np.ndarray:
    """Reassemble per-tile maps into the full image, ignoring overlaps."""
    tiles = np.asarray(tile_maps)
    if tiles.ndim != 3 or tiles.shape[0] != len(grid):
        raise ShapeError(f"expected {len(grid)} tiles of shape ({grid.window}, {grid.window}), "
                         f"got array of shape {tiles.shape}", dim="tiles",
                         expected=len(grid), got=tiles.shape[0] if tiles.ndim else 0)
    if tiles.shape[1:] != (grid.window, grid.window):
        raise ShapeError(f"tile shape {tiles.shape[1:]} != window {grid.window}", dim="S",
                         expected=grid.window, got=tiles.shape[1:])
    h, w = grid.image_size
    s = grid.window
    row_own = _owners(h, s, list(grid.row_origins))
    col_own = _owners(w, s, list(grid.col_origins))
    ncol = len(grid.col_origins)
    out = np.empty((h, w), dtype=tiles.dtype)
    ro = np.asarray(grid.row_origins)
    co = np.asarray(grid.col_origins)
    # group contiguous runs of identical owners so each block is a single slice copy
    for i in np.unique(row_own):
        rows = np.flatnonzero(row_own == i)
        r0, r1 = rows[0], rows[-1] + 1
        for j in np.unique(col_own):
            cols = np.flatnonzero(col_own == j)
            c0, c1 = cols[0], cols[-1] + 1
            out[r0:r1, c0:c1] = tiles[i * ncol + j, r0 - ro[i]:r1 - ro[i], c0 - co[j]:c1 - co[j]]
    return out


AUGMENTATIONS = ("identity", "rot90", "rot180", "rot270", "flip0", "flip1")


def transform(a: np.ndarray, name: str) -> np.ndarray:
    """Apply one named augmentation.

    ``rot90`` sends pixel ``(r, c)`` to ``(c, H-1-r)``: a counter-clockwise
    quarter turn when rows are drawn increasing upward (``origin='lower'``).
    ``flip0`` reverses axis 0, ``flip1`` reverses axis 1.
    """
    if name == "identity":
        return a.copy()
    if name in ("rot90", "rot180", "rot270"):
        return np.ascontiguousarray(np.rot90(a, k=-{"rot90": 1, "rot180": 2, "rot270": 3}[name]))
    if name == "flip0":
        return np.ascontiguousarray(a[::-1])
    if name == "flip1":
        return np.ascontiguousarray(a[:, ::-1])
    raise ConfigError(f"unknown augmentation {name!r}")


def augment(image: np.ndarray, labels: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """The six variants (identity, three rotations, two flips), labels transformed alike."""
    image, labels = np.asarray(image), np.asarray(labels)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ShapeError(f"augmentation needs a square 2-D image, got {image.shape}", dim="W",
                         expected=image.shape[0], got=image.shape[-1])
    if labels.shape != image.shape:
        raise ShapeError(f"labels {labels.shape} != image {image.shape}", dim="shape")
    return [(transform(image, n), transform(labels, n)) for n in AUGMENTATIONS]
