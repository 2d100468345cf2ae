"""The lightweight decision pathway: feature extractor, LSTM and policy logits.

The same feature extractor, followed by its own linear head, is the classifier
for the lowest resolution level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import costs, gumbel
from .backbones import he_normal, resize, zeros
from .gumbel import GumbelSample
from .tensor import DTYPE, LSTMParams, ShapeError, Tensor, conv2d, global_avg_pool, linear, lstm_step


@dataclass(frozen=True)
class TrainMode:
    """Sample actions with Gumbel noise at temperature ``tau``."""

    tau: float
    rng: np.random.Generator


@dataclass(frozen=True)
class InferMode:
    """Take the most probable action, no noise."""


INFER = InferMode()


@dataclass(frozen=True)
class PolicySpec:
    num_actions: int
    num_classes: int
    input_resolution: int = 8
    conv_widths: tuple[int, ...] = (16, 32)
    hidden: int = 64
    in_channels: int = 1

    @property
    def feature_dim(self) -> int:
        return self.conv_widths[-1]

    def feature_layers(self) -> list[costs.Layer]:
        out, c_in, s = [], self.in_channels, self.input_resolution
        for width in self.conv_widths:
            s = (s + 2 - 3) // 2 + 1
            out += [costs.conv(3, c_in, width, s, s), costs.pointwise(width * s * s)]
            c_in = width
        return out + [costs.pointwise(self.feature_dim)]

    def layers(self) -> list[costs.Layer]:
        """One policy step: features, LSTM update and action logits."""
        k = self.hidden
        return self.feature_layers() + [
            costs.linear(self.feature_dim, 4 * k),
            costs.linear(k, 4 * k),
            costs.pointwise(6 * k),
            costs.linear(k, self.num_actions),
        ]

    def head_layers(self) -> list[costs.Layer]:
        return [costs.linear(self.feature_dim, self.num_classes)]


@dataclass
class PolicyState:
    h: Tensor
    c: Tensor
    pending_skips: int = 0


POLICY_GROUPS = ("phi.", "lstm.", "policy.")


class PolicyNet:
    def __init__(self, spec: PolicySpec, rng: np.random.Generator | None = None):
        self.spec = spec
        rng = rng if rng is not None else np.random.default_rng(0)
        p: dict[str, Tensor] = {}
        c_in = spec.in_channels
        for i, width in enumerate(spec.conv_widths):
            p[f"phi.conv{i}.w"] = he_normal(rng, (width, c_in, 3, 3), c_in * 9)
            p[f"phi.conv{i}.b"] = zeros(width)
            c_in = width
        d, k = spec.feature_dim, spec.hidden
        bound = 1.0 / np.sqrt(k)
        p["lstm.w_input"] = Tensor(rng.uniform(-bound, bound, (d, 4 * k)), requires_grad=True)
        p["lstm.w_hidden"] = Tensor(rng.uniform(-bound, bound, (k, 4 * k)), requires_grad=True)
        p["lstm.bias"] = zeros(4 * k)
        p["policy.w"] = Tensor(rng.normal(0.0, bound, (k, spec.num_actions)), requires_grad=True)
        p["policy.b"] = zeros(spec.num_actions)
        p["head.w"] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), (d, spec.num_classes)), requires_grad=True)
        p["head.b"] = zeros(spec.num_classes)
        self.params = p

    @property
    def lstm(self) -> LSTMParams:
        p = self.params
        return LSTMParams(p["lstm.w_input"], p["lstm.w_hidden"], p["lstm.bias"])

    def policy_params(self) -> dict[str, Tensor]:
        """Feature extractor, LSTM and action head; frozen outside joint training."""
        return {k: v for k, v in self.params.items() if k.startswith(POLICY_GROUPS)}

    def head_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.startswith("head.")}

    def initial_state(self) -> PolicyState:
        k = self.spec.hidden
        return PolicyState(Tensor(np.zeros(k, dtype=DTYPE)), Tensor(np.zeros(k, dtype=DTYPE)))

    def extract_features(self, frames) -> Tensor:
        """Feature vectors for lowest-resolution frames: (s, s) -> (d,), (N, s, s) -> (N, d)."""
        x = frames if isinstance(frames, Tensor) else Tensor(frames)
        single = x.ndim == 2
        if x.shape[-2:] != (self.spec.input_resolution,) * 2:
            raise ShapeError(
                f"policy features need {self.spec.input_resolution}px frames, got {x.shape[-2:]}"
            )
        x = x.reshape(-1, self.spec.in_channels, *x.shape[-2:])
        for i in range(len(self.spec.conv_widths)):
            x = conv2d(x, self.params[f"phi.conv{i}.w"], self.params[f"phi.conv{i}.b"], stride=2, padding=1).relu()
        f = global_avg_pool(x)
        return f.reshape(self.spec.feature_dim) if single else f

    def policy_logits(self, h: Tensor) -> Tensor:
        return linear(h, self.params["policy.w"], self.params["policy.b"])

    def lowest_res_predict(self, f: Tensor) -> Tensor:
        """Class logits from policy features (the lowest-level classifier)."""
        return linear(f, self.params["head.w"], self.params["head.b"])

    def policy_step(self, frame, state: PolicyState, mode=INFER):
        """Observe one base-resolution frame and emit a decision.

        Returns ``(decision, new_state, features)`` where the decision is a
        :class:`GumbelSample` in train mode and an action index in infer mode.
        """
        if state.pending_skips:
            raise ValueError(f"policy_step called with {state.pending_skips} frames still to skip")
        lowres = resize(frame, self.spec.input_resolution)
        f = self.extract_features(lowres.reshape(lowres.shape[-2:]))
        h, c = lstm_step(f, state.h, state.c, self.lstm)
        z = self.policy_logits(h)
        if not np.all(np.isfinite(z.data)):
            raise FloatingPointError(
                f"non-finite policy logits {z.data}; |h|max={np.abs(h.data).max():.3g}, |f|max={np.abs(f.data).max():.3g}"
            )
        if isinstance(mode, TrainMode):
            decision: GumbelSample | int = gumbel.sample_logits(z, mode.rng, mode.tau)
        else:
            decision = int(np.argmax(z.data))
        return decision, PolicyState(h, c, 0), f
