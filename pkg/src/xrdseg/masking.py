"""Intensity-threshold baseline spot finder and pixel-level confusion metrics.

The baseline bins pixels into 2-theta annuli and flags pixels brighter than
``median + k * 1.4826 * MAD`` of their annulus.  It stands in for the
intensity-based auto-masking found in general diffraction packages: robust
statistics are used because the spots themselves are the outliers that
would inflate a mean/standard-deviation rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

MAD_TO_SIGMA = 1.4826
PROVENANCES = ("manual", "unet", "threshold", "truth")


@dataclass
class MaskImage:
    grid: np.ndarray
    provenance: str = "manual"
    source: str = ""

    def __post_init__(self):
        self.grid = np.asarray(self.grid).astype(bool)
        if self.grid.ndim != 2:
            raise ShapeError(f"mask must be 2-D, got shape {self.grid.shape}", dim="ndim",
                             expected=2, got=self.grid.ndim)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def count(self) -> int:
        return int(self.grid.sum())


def _as_grid(m) -> np.ndarray:
    return m.grid if isinstance(m, MaskImage) else np.asarray(m).astype(bool)


def group_medians(groups: np.ndarray, values: np.ndarray, n_groups: int) -> np.ndarray:
    """Median of ``values`` within each group id in ``[0, n_groups)``; NaN for empty groups."""
    order = np.lexsort((values, groups))
    g, v = groups[order], values[order]
    counts = np.bincount(g, minlength=n_groups)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    out = np.full(n_groups, np.nan)
    nz = counts > 0
    lo = starts[nz] + (counts[nz] - 1) // 2
    hi = starts[nz] + counts[nz] // 2
    out[nz] = 0.5 * (v[lo] + v[hi])
    return out


def annulus_index(two_theta: np.ndarray, n_bins: int) -> np.ndarray:
    lo, hi = float(two_theta.min()), float(two_theta.max())
    if hi <= lo:
        return np.zeros(two_theta.shape, dtype=np.intp)
    idx = np.floor((two_theta - lo) / (hi - lo) * n_bins).astype(np.intp)
    return np.clip(idx, 0, n_bins - 1)


def threshold_mask(image: np.ndarray, two_theta: np.ndarray, n_bins: int | None = None,
                   k: float = 3.0, source: str = "") -> MaskImage:
    """Flag pixels above ``median + k * 1.4826 * MAD`` of their 2-theta annulus.

    ``n_bins`` defaults to ``H // 2`` annuli spread uniformly over the
    2-theta range of the image.
    """
    image = np.asarray(image, dtype=np.float64)
    two_theta = np.asarray(two_theta, dtype=np.float64)
    if image.shape != two_theta.shape:
        raise ShapeError(f"image {image.shape} and 2theta map {two_theta.shape} differ",
                         dim="shape", expected=image.shape, got=two_theta.shape)
    if n_bins is None:
        n_bins = max(1, image.shape[0] // 2)
    if n_bins < 1:
        raise ConfigError(f"n_bins must be >= 1, got {n_bins}")
    if not k > 0:
        raise ConfigError(f"k must be > 0, got {k}")

    groups = annulus_index(two_theta, n_bins).ravel()
    values = image.ravel()
    med = group_medians(groups, values, n_bins)
    mad = group_medians(groups, np.abs(values - med[groups]), n_bins)
    limit = med + k * MAD_TO_SIGMA * mad
    grid = (values > limit[groups]).reshape(image.shape)
    return MaskImage(grid, provenance="threshold", source=source)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)


def confusion(predicted, truth) -> ConfusionCounts:
    p, t = _as_grid(predicted), _as_grid(truth)
    if p.shape != t.shape:
        raise ShapeError(f"predicted mask {p.shape} and truth {t.shape} differ", dim="shape",
                         expected=t.shape, got=p.shape)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp=tp, fp=fp, tn=int(p.size - tp - fp - fn), fn=fn)


def recall(c: ConfusionCounts) -> float:
    """True positive rate; 1.0 when there are no positives to find."""
    d = c.tp + c.fn
    return 1.0 if d == 0 else c.tp / d


def specificity(c: ConfusionCounts) -> float:
    """True negative rate; 1.0 when there are no negatives."""
    d = c.tn + c.fp
    return 1.0 if d == 0 else c.tn / d


def fp_per_image(c: ConfusionCounts) -> int:
    return c.fp
