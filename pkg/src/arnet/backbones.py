"""Resolution ladder, frame resizing and the compound-scaled backbone family."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import costs
from .tensor import DTYPE, ShapeError, Tensor, avg_pool2d, conv2d, global_avg_pool, linear

DEFAULT_LADDER = (32, 24, 16, 8)


@dataclass(frozen=True)
class ResolutionLadder:
    """Square resolutions, highest first; level 0 is the raw frame size."""

    sizes: tuple[int, ...] = DEFAULT_LADDER

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2:
            raise ValueError("a ladder needs at least two resolutions")
        if any(s <= 0 for s in sizes) or any(a <= b for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"resolutions must be positive and strictly descending: {sizes}")
        object.__setattr__(self, "sizes", sizes)

    def __len__(self) -> int:
        return len(self.sizes)

    def __getitem__(self, level: int) -> int:
        return self.sizes[level]

    @property
    def base(self) -> int:
        return self.sizes[0]

    @property
    def lowest(self) -> int:
        return self.sizes[-1]


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    # Row i averages the input interval [i*n_in/n_out, (i+1)*n_in/n_out), weighted by overlap.
    m = np.zeros((n_out, n_in), dtype=DTYPE)
    step = n_in / n_out
    for i in range(n_out):
        lo, hi = i * step, (i + 1) * step
        for j in range(int(np.floor(lo)), min(n_in, int(np.ceil(hi)))):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    return m / step


def resize(frames: np.ndarray, size: int) -> np.ndarray:
    """Area-average the last two axes down to ``size`` x ``size``.

    Integer factors are block means (identical to :func:`avg_pool2d`);
    other ratios use overlap-weighted area resampling.
    """
    frames = np.asarray(frames, dtype=DTYPE)
    h, w = frames.shape[-2:]
    if h != w:
        raise ShapeError(f"frames must be square, got {h}x{w}")
    if size > h:
        raise ShapeError(f"cannot upsample {h} -> {size}")
    if size == h:
        return frames
    if h % size == 0:
        return avg_pool2d(Tensor(frames), h // size).data
    m = _area_matrix(h, size)
    return m @ frames @ m.T


def resize_frame(frame: np.ndarray, level: int, ladder: ResolutionLadder = ResolutionLadder()) -> np.ndarray:
    if not 0 <= level < len(ladder):
        raise ValueError(f"level {level} outside ladder of {len(ladder)} resolutions")
    if frame.shape[-1] != ladder.base:
        raise ShapeError(f"expected a {ladder.base}px frame, got {frame.shape[-2:]}")
    return resize(frame, ladder[level])


@dataclass(frozen=True)
class BackboneSpec:
    """Stack of 3x3 stride-2 conv+ReLU blocks, global average pool, linear classifier."""

    id: str
    input_resolution: int
    widths: tuple[int, ...]
    num_classes: int
    in_channels: int = 1
    kernel: int = 3
    stride: int = 2

    @property
    def padding(self) -> int:
        return self.kernel // 2

    def spatial_sizes(self) -> list[int]:
        sizes, s = [], self.input_resolution
        for _ in self.widths:
            s = (s + 2 * self.padding - self.kernel) // self.stride + 1
            sizes.append(s)
        return sizes

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    def layers(self) -> list[costs.Layer]:
        out, c_in = [], self.in_channels
        for width, s in zip(self.widths, self.spatial_sizes()):
            out.append(costs.conv(self.kernel, c_in, width, s, s))
            out.append(costs.pointwise(width * s * s))
            c_in = width
        out.append(costs.pointwise(self.feature_dim))
        out.append(costs.linear(self.feature_dim, self.num_classes))
        return out


def default_specs(num_classes: int, ladder: ResolutionLadder = ResolutionLadder()) -> list[BackboneSpec]:
    """Backbones for every level except the lowest, which is served by the policy network."""
    widths = [(32, 32, 32), (24, 24, 24), (16, 16)]
    if len(ladder) - 1 > len(widths):
        raise ValueError(f"no default backbone widths for a {len(ladder)}-level ladder")
    return [
        BackboneSpec(f"psi{level}", ladder[level], widths[level], num_classes)
        for level in range(len(ladder) - 1)
    ]


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int) -> Tensor:
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=True)


class Backbone:
    def __init__(self, spec: BackboneSpec, rng: np.random.Generator | None = None):
        self.spec = spec
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[str, Tensor] = {}
        c_in, k = spec.in_channels, spec.kernel
        for i, width in enumerate(spec.widths):
            self.params[f"conv{i}.w"] = he_normal(rng, (width, c_in, k, k), c_in * k * k)
            self.params[f"conv{i}.b"] = zeros(width)
            c_in = width
        fc = rng.normal(0.0, 1.0 / np.sqrt(spec.feature_dim), size=(spec.feature_dim, spec.num_classes))
        self.params["fc.w"] = Tensor(fc, requires_grad=True)
        self.params["fc.b"] = zeros(spec.num_classes)

    def features(self, frames) -> Tensor:
        x = frames if isinstance(frames, Tensor) else Tensor(frames)
        if x.ndim == 3:
            x = x.reshape(x.shape[0], 1, *x.shape[1:])
        if x.ndim != 4 or x.shape[-1] != self.spec.input_resolution or x.shape[-2] != self.spec.input_resolution:
            raise ShapeError(
                f"{self.spec.id} expects {self.spec.input_resolution}px frames, got shape {x.shape}"
            )
        for i in range(len(self.spec.widths)):
            x = conv2d(
                x,
                self.params[f"conv{i}.w"],
                self.params[f"conv{i}.b"],
                stride=self.spec.stride,
                padding=self.spec.padding,
            ).relu()
        return global_avg_pool(x)

    def predict(self, frames) -> Tensor:
        """Class logits, (N, C), for a batch of frames at this backbone's resolution."""
        return linear(self.features(frames), self.params["fc.w"], self.params["fc.b"])


def backbone_predict(frames, level: int, backbones: list[Backbone]) -> Tensor:
    if not 0 <= level < len(backbones):
        raise ValueError(
            f"level {level} has no dedicated backbone; the lowest level uses the policy network head"
        )
    return backbones[level].predict(frames)
