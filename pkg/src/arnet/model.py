"""The full adaptive-resolution model and its checkpoint format.

Checkpoints are UTF-8 JSON::

    {"format": "arnet-checkpoint", "version": 1,
     "config": {...model hyperparameters...}, "meta": {...},
     "params": {"policy.phi.conv0.w": {"shape": [16, 1, 3, 3], "data": [...]}, ...}}

Parameter data is flattened in C order; floats round-trip exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import costs
from .actions import DEFAULT_SKIPS, action_names
from .backbones import Backbone, ResolutionLadder, default_specs, zeros
from .policy import PolicyNet, PolicySpec
from .tensor import DTYPE, LSTMParams, Tensor, linear, lstm_step, stack

CHECKPOINT_FORMAT = "arnet-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class Aggregator:
    """Recurrent head for the LSTM baseline: level-0 features -> LSTM -> class logits per frame."""

    def __init__(self, feature_dim: int, hidden: int, num_classes: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(hidden)
        self.hidden = hidden
        self.params = {
            "lstm.w_input": Tensor(rng.uniform(-bound, bound, (feature_dim, 4 * hidden)), requires_grad=True),
            "lstm.w_hidden": Tensor(rng.uniform(-bound, bound, (hidden, 4 * hidden)), requires_grad=True),
            "lstm.bias": zeros(4 * hidden),
            "fc.w": Tensor(rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, num_classes)), requires_grad=True),
            "fc.b": zeros(num_classes),
        }

    def __call__(self, features: Tensor) -> Tensor:
        p = self.params
        lstm = LSTMParams(p["lstm.w_input"], p["lstm.w_hidden"], p["lstm.bias"])
        h = Tensor(np.zeros(self.hidden, dtype=DTYPE))
        c = Tensor(np.zeros(self.hidden, dtype=DTYPE))
        hs = []
        for t in range(features.shape[0]):
            h, c = lstm_step(features[t], h, c, lstm)
            hs.append(h)
        return linear(stack(hs), p["fc.w"], p["fc.b"])


@dataclass
class ARNet:
    policy: PolicyNet
    backbones: list[Backbone]
    ladder: ResolutionLadder = ResolutionLadder()
    skips: tuple[int, ...] = DEFAULT_SKIPS
    aggregator: Aggregator | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        num_classes: int,
        seed: int = 0,
        ladder: ResolutionLadder = ResolutionLadder(),
        skips: tuple[int, ...] = DEFAULT_SKIPS,
        hidden: int = 64,
        with_aggregator: bool = False,
    ) -> "ARNet":
        rng = np.random.default_rng(seed)
        policy = PolicyNet(
            PolicySpec(len(ladder) + len(skips), num_classes, input_resolution=ladder.lowest, hidden=hidden), rng
        )
        backbones = [Backbone(spec, rng) for spec in default_specs(num_classes, ladder)]
        model = cls(policy, backbones, ladder, tuple(skips))
        if with_aggregator:
            model.aggregator = Aggregator(backbones[0].spec.feature_dim, hidden, num_classes, rng)
        return model

    @property
    def num_levels(self) -> int:
        return len(self.ladder)

    @property
    def num_actions(self) -> int:
        return len(self.ladder) + len(self.skips)

    @property
    def num_classes(self) -> int:
        return self.policy.spec.num_classes

    def action_names(self) -> list[str]:
        return action_names(self.num_levels, self.skips)

    def analytic_table(self) -> costs.CostTable:
        return costs.analytic_table(self.policy.spec, [b.spec for b in self.backbones])

    def named_params(self) -> dict[str, Tensor]:
        out = {f"policy.{k}": v for k, v in self.policy.params.items()}
        for level, b in enumerate(self.backbones):
            out.update({f"backbone{level}.{k}": v for k, v in b.params.items()})
        if self.aggregator is not None:
            out.update({f"aggregator.{k}": v for k, v in self.aggregator.params.items()})
        return out

    def policy_params(self) -> dict[str, Tensor]:
        return {f"policy.{k}": v for k, v in self.policy.policy_params().items()}

    def classifier_params(self) -> dict[str, Tensor]:
        """Everything trained while the policy is frozen: backbones, lowest-level head, aggregator."""
        frozen = set(self.policy_params())
        return {k: v for k, v in self.named_params().items() if k not in frozen}

    def config(self) -> dict:
        spec = self.policy.spec
        return {
            "num_classes": spec.num_classes,
            "ladder": list(self.ladder.sizes),
            "skips": list(self.skips),
            "hidden": spec.hidden,
            "with_aggregator": self.aggregator is not None,
        }

    # -- persistence --------------------------------------------------------

    def to_json(self) -> str:
        params = {
            name: {"shape": list(t.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in self.named_params().items()
        }
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.config(),
            "meta": self.meta,
            "params": params,
        }
        return json.dumps(doc, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> "ARNet":
        doc = json.loads(text)
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"not an arnet checkpoint (format={doc.get('format')!r})")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"checkpoint version {doc.get('version')} != supported {CHECKPOINT_VERSION}")
        cfg = doc["config"]
        model = cls.build(
            cfg["num_classes"],
            ladder=ResolutionLadder(tuple(cfg["ladder"])),
            skips=tuple(cfg["skips"]),
            hidden=cfg["hidden"],
            with_aggregator=cfg["with_aggregator"],
        )
        named = model.named_params()
        if set(named) != set(doc["params"]):
            missing = sorted(set(named) ^ set(doc["params"]))
            raise CheckpointError(f"checkpoint parameters do not match the model: {missing[:5]}")
        for name, t in named.items():
            entry = doc["params"][name]
            if tuple(entry["shape"]) != t.shape:
                raise CheckpointError(f"{name}: shape {entry['shape']} != {list(t.shape)}")
            t.data = np.asarray(entry["data"], dtype=DTYPE).reshape(t.shape)
        model.meta = doc.get("meta", {})
        return model

    @classmethod
    def load(cls, path) -> "ARNet":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))
