"""Artifact segmentation for 2-D powder X-ray diffraction images.

Subpackages by role: :mod:`xrdseg.tensor`/:mod:`xrdseg.ops`/:mod:`xrdseg.optim`
(autodiff engine), :mod:`xrdseg.unet`, :mod:`xrdseg.tiling`,
:mod:`xrdseg.synth`, :mod:`xrdseg.masking`, :mod:`xrdseg.integration`,
:mod:`xrdseg.pipeline` and :mod:`xrdseg.cli`.
"""

from .errors import ConfigError, DataError, NumericError, ShapeError, XRDSegError
from .integration import Pattern1D, integrate, pattern_delta
from .masking import ConfusionCounts, MaskImage, confusion, recall, specificity, threshold_mask
from .synth import DetectorGeometry, SceneSpec, make_dataset, render, two_theta_map
from .tensor import Tensor, no_grad
from .tiling import TileGrid, augment, crop, make_grid, stitch
from .unet import UNet, UNetConfig, build, count_parameters, predict_mask

__version__ = "0.1.0"
