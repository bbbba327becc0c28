"""Masked azimuthal integration into an intensity-vs-2theta pattern.

Each pixel center is assigned to the nearest of ``n_bins`` uniform 2-theta
bins; a bin's intensity is the arithmetic mean of its unmasked pixels.
Masked pixels contribute to neither the sum nor the count.  Bins with no
contributing pixel hold ``NaN`` intensity and a zero count.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .synth import DetectorGeometry, two_theta_map

CSV_HEADER = ("two_theta_deg", "intensity", "count")


@dataclass
class Pattern1D:
    bin_centers: np.ndarray
    intensity: np.ndarray
    counts: np.ndarray
    fingerprint: str = ""

    def __post_init__(self):
        n = len(self.bin_centers)
        if len(self.intensity) != n or len(self.counts) != n:
            raise ShapeError("bin_centers, intensity and counts must have equal length", dim="bins")

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0

    def __len__(self) -> int:
        return len(self.bin_centers)


def integrate(image: np.ndarray, geometry: DetectorGeometry, mask=None, n_bins: int = 2000,
              two_theta_range: tuple[float, float] | None = None) -> Pattern1D:
    """Azimuthally average ``image`` into ``n_bins`` 2-theta bins.

    ``two_theta_range`` defaults to ``(0, max 2theta on the detector)``.
    ``mask`` (boolean array or :class:`MaskImage`, True = excluded) is optional.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.shape != geometry.size:
        raise ShapeError(f"image {image.shape} does not match detector {geometry.size}",
                         dim="shape", expected=geometry.size, got=image.shape)
    if n_bins < 1:
        raise ConfigError(f"n_bins must be >= 1, got {n_bins}")
    tth = two_theta_map(geometry)
    lo, hi = (0.0, float(tth.max())) if two_theta_range is None else map(float, two_theta_range)
    if not hi > lo:
        raise ConfigError(f"2theta range must be increasing, got ({lo}, {hi})")

    keep = np.ones(image.shape, dtype=bool)
    if mask is not None:
        grid = getattr(mask, "grid", mask)
        grid = np.asarray(grid).astype(bool)
        if grid.shape != image.shape:
            raise ShapeError(f"mask {grid.shape} does not match image {image.shape}", dim="shape",
                             expected=image.shape, got=grid.shape)
        keep &= ~grid
    width = (hi - lo) / n_bins
    idx = np.floor((tth - lo) / width).astype(np.int64)
    # the upper edge belongs to the last bin
    idx[tth == hi] = n_bins - 1
    keep &= (idx >= 0) & (idx < n_bins)

    counts = np.bincount(idx[keep], minlength=n_bins)
    sums = np.bincount(idx[keep], weights=image[keep], minlength=n_bins)
    intensity = np.full(n_bins, np.nan)
    nz = counts > 0
    intensity[nz] = sums[nz] / counts[nz]
    centers = lo + (np.arange(n_bins) + 0.5) * width
    return Pattern1D(centers, intensity, counts.astype(np.int64), geometry.fingerprint())


@dataclass
class PatternDelta:
    bin_centers: np.ndarray
    delta: np.ndarray  # b - a; NaN where either bin is empty
    max_abs: float
    l2: float
    argmax: int  # bin index of the largest |delta|, -1 if none comparable


def pattern_delta(a: Pattern1D, b: Pattern1D) -> PatternDelta:
    """Per-bin ``b - a`` over bins non-empty in both patterns."""
    if len(a) != len(b) or not np.array_equal(a.bin_centers, b.bin_centers):
        raise DataError("patterns use different binning")
    both = ~a.empty & ~b.empty
    delta = np.full(len(a), np.nan)
    delta[both] = b.intensity[both] - a.intensity[both]
    if not both.any():
        return PatternDelta(a.bin_centers.copy(), delta, 0.0, 0.0, -1)
    absd = np.where(both, np.abs(delta), -1.0)
    i = int(absd.argmax())
    return PatternDelta(a.bin_centers.copy(), delta, float(absd[i]),
                        float(np.sqrt(np.nansum(delta ** 2))), i)


def write_pattern_csv(pattern: Pattern1D, path) -> None:
    """``two_theta_deg,intensity,count``; empty bins leave the intensity field blank."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for t, v, c in zip(pattern.bin_centers, pattern.intensity, pattern.counts):
        w.writerow([repr(float(t)), "" if c == 0 else repr(float(v)), int(c)])
    Path(path).write_text(buf.getvalue())


def read_pattern_csv(path, fingerprint: str = "") -> Pattern1D:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise DataError(f"{path}: expected header {','.join(CSV_HEADER)}")
    body = rows[1:]
    centers = np.array([float(r[0]) for r in body])
    intensity = np.array([float(r[1]) if r[1] != "" else np.nan for r in body])
    counts = np.array([int(r[2]) for r in body], dtype=np.int64)
    return Pattern1D(centers, intensity, counts, fingerprint)
