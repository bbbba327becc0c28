"""Tunable U-Net parameterized by depth, base channels and growth rate.

Per level: two ``3x3 conv (pad 1, bias) -> batchnorm -> ReLU`` blocks.
Levels are joined by 2x2 max pooling on the way down and by biased 2x2
stride-2 transposed convolutions on the way up; each decoder level first
concatenates the skip connection from its mirror encoder level.  A biased
1x1 convolution maps the top decoder level to ``out_classes`` logits.

With ``base_channels=8, growth_rate=2`` this gives 6,562 / 29,650 /
121,394 / 487,154 learnable parameters for depths 2 / 3 / 4 / 5.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .tensor import Tensor, no_grad

INIT_SCHEME = "kaiming_uniform_fan_in"


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 4
    base_channels: int = 8
    growth_rate: float = 2.0
    in_channels: int = 1
    out_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.depth < 2:
            raise ConfigError(f"depth must be >= 2, got {self.depth}")
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if not self.growth_rate > 1:
            raise ConfigError(f"growth_rate must be > 1, got {self.growth_rate}")
        if self.in_channels < 1 or self.out_classes < 2:
            raise ConfigError("need in_channels >= 1 and out_classes >= 2")
        ch = self.channels
        if any(b <= a for a, b in zip(ch, ch[1:])):
            raise ConfigError(f"channel counts {ch} are not strictly increasing; "
                              f"raise base_channels or growth_rate")

    @property
    def channels(self) -> list[int]:
        """Feature channels at each encoder level, top (0) to bottom."""
        return [round_half_up(self.base_channels * self.growth_rate ** i) for i in range(self.depth)]

    @property
    def tile_multiple(self) -> int:
        return 2 ** (self.depth - 1)

    def check_tile(self, size: int) -> None:
        if size < 1 or size % self.tile_multiple:
            raise ShapeError(f"tile side {size} is not a multiple of 2^(depth-1) = {self.tile_multiple}",
                             dim="S", expected=f"multiple of {self.tile_multiple}", got=size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class UNet:
    """Parameters, running statistics and the forward pass.

    ``params`` and ``buffers`` are insertion-ordered dicts; the order is the
    checkpoint order.
    """

    def __init__(self, config: UNetConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._rng = np.random.default_rng(config.seed)
        ch = config.channels
        prev = config.in_channels
        for i, c in enumerate(ch):
            self._double_conv(f"enc{i}", prev, c)
            prev = c
        for i in reversed(range(config.depth - 1)):
            self._upconv(f"up{i}", ch[i + 1], ch[i])
            self._double_conv(f"dec{i}", 2 * ch[i], ch[i])
        self._conv("head", ch[0], config.out_classes, 1, gain=1.0)
        del self._rng

    # -- construction ------------------------------------------------------

    def _uniform(self, shape, fan_in: int, gain: float) -> np.ndarray:
        bound = gain * math.sqrt(3.0 / fan_in)
        return self._rng.uniform(-bound, bound, size=shape).astype(self.dtype)

    def _conv(self, name: str, cin: int, cout: int, k: int, gain: float = math.sqrt(2.0)) -> None:
        self.params[f"{name}.weight"] = Tensor(self._uniform((cout, cin, k, k), cin * k * k, gain),
                                               requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(cout, self.dtype), requires_grad=True)

    def _bn(self, name: str, c: int) -> None:
        self.params[f"{name}.gamma"] = Tensor(np.ones(c, self.dtype), requires_grad=True)
        self.params[f"{name}.beta"] = Tensor(np.zeros(c, self.dtype), requires_grad=True)
        self.buffers[f"{name}.running_mean"] = np.zeros(c, self.dtype)
        self.buffers[f"{name}.running_var"] = np.ones(c, self.dtype)

    def _double_conv(self, name: str, cin: int, cout: int) -> None:
        self._conv(f"{name}.conv1", cin, cout, 3)
        self._bn(f"{name}.bn1", cout)
        self._conv(f"{name}.conv2", cout, cout, 3)
        self._bn(f"{name}.bn2", cout)

    def _upconv(self, name: str, cin: int, cout: int) -> None:
        # every output pixel of a 2x2/stride-2 transposed conv sees one tap per input channel
        self.params[f"{name}.weight"] = Tensor(self._uniform((cin, cout, 2, 2), cin, 1.0), requires_grad=True)
        self.params[f"{name}.bias"] = Tensor(np.zeros(cout, self.dtype), requires_grad=True)

    # -- forward -----------------------------------------------------------

    def _block(self, name: str, x: Tensor, training: bool) -> Tensor:
        p, b = self.params, self.buffers
        for k in ("1", "2"):
            x = ops.conv2d(x, p[f"{name}.conv{k}.weight"], p[f"{name}.conv{k}.bias"], padding=1)
            x = ops.batchnorm2d(x, p[f"{name}.bn{k}.gamma"], p[f"{name}.bn{k}.beta"],
                                b[f"{name}.bn{k}.running_mean"], b[f"{name}.bn{k}.running_var"],
                                training=training)
            x = ops.relu(x)
        return x

    def forward(self, x, training: bool = False) -> Tensor:
        """Logits of shape ``(N, out_classes, S, S)`` for input ``(N, in_channels, S, S)``."""
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 4:
            raise ShapeError(f"input must be (N, C, H, W), got {x.shape}", dim="ndim", expected=4, got=x.ndim)
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(f"input has {x.shape[1]} channels, model expects {self.config.in_channels}",
                             dim="C", expected=self.config.in_channels, got=x.shape[1])
        for dim, size in zip("HW", x.shape[2:]):
            if size % self.config.tile_multiple:
                raise ShapeError(f"input {dim}={size} is not a multiple of {self.config.tile_multiple} "
                                 f"(2^(depth-1) for depth {self.config.depth})",
                                 dim=dim, expected=f"multiple of {self.config.tile_multiple}", got=size)
        d = self.config.depth
        skips = []
        for i in range(d):
            if i:
                x = ops.maxpool2(x)
            x = self._block(f"enc{i}", x, training)
            skips.append(x)
        x = skips.pop()
        for i in reversed(range(d - 1)):
            x = ops.conv2d_transposed(x, self.params[f"up{i}.weight"], self.params[f"up{i}.bias"])
            x = ops.concat([skips.pop(), x], axis=1)
            x = self._block(f"dec{i}", x, training)
        return ops.conv2d(x, self.params["head.weight"], self.params["head.bias"])

    __call__ = forward

    def predict_logits(self, x, batch_size: int = 32) -> np.ndarray:
        """Eval-mode logits without recording a graph, in chunks of ``batch_size``."""
        x = np.asarray(x, dtype=self.dtype)
        out = []
        with no_grad():
            for s in range(0, x.shape[0], batch_size):
                out.append(self.forward(x[s:s + batch_size], training=False).data)
        return np.concatenate(out, axis=0)

    # -- bookkeeping -------------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def astype(self, dtype) -> "UNet":
        """Cast parameters and buffers in place (float64 for gradient checks)."""
        self.dtype = np.dtype(dtype)
        for t in self.params.values():
            t.data = t.data.astype(dtype)
            t.grad = None
        for k, v in self.buffers.items():
            self.buffers[k] = v.astype(dtype)
        return self

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every array that defines the model: learnable params then buffers."""
        out = {k: t.data for k, t in self.params.items()}
        out.update(self.buffers)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        expected = set(self.params) | set(self.buffers)
        missing = expected - set(arrays)
        if missing:
            raise ShapeError(f"state is missing arrays: {sorted(missing)[:5]}", dim="names")
        for k, t in self.params.items():
            a = np.asarray(arrays[k])
            if a.shape != t.shape:
                raise ShapeError(f"{k}: shape {a.shape} != model shape {t.shape}", dim=k,
                                 expected=t.shape, got=a.shape)
            t.data = a.astype(self.dtype, copy=True)
        for k, v in self.buffers.items():
            a = np.asarray(arrays[k])
            if a.shape != v.shape:
                raise ShapeError(f"{k}: shape {a.shape} != model shape {v.shape}", dim=k,
                                 expected=v.shape, got=a.shape)
            self.buffers[k] = a.astype(self.dtype, copy=True)


def build(config: UNetConfig, tile_size: int | None = None, dtype=np.float32) -> UNet:
    """Build a freshly initialized model; optionally validate an intended tile size."""
    if tile_size is not None:
        config.check_tile(tile_size)
    return UNet(config, dtype=dtype)


def count_parameters(model: UNet) -> int:
    """Learnable scalars: conv/transposed-conv kernels and biases, batchnorm gamma/beta."""
    return int(sum(t.data.size for t in model.params.values()))


def predict_mask(model: UNet, tile) -> np.ndarray:
    """Binary artifact map (1 = artifact) for one ``(1, 1, S, S)`` tile or an ``(S, S)`` array.

    Argmax over class logits; equal logits resolve to class 0.
    """
    arr = tile.data if isinstance(tile, Tensor) else np.asarray(tile)
    if arr.ndim == 2:
        arr = arr[None, None]
    logits = model.predict_logits(arr)
    return ops.argmax_classes(logits)[0].astype(np.uint8)
