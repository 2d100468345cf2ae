"""FLOPs accounting: analytic layer counts, cost lookup tables and per-video reports.

Tables store GFLOPs per frame.  Analytic counts charge 2 FLOPs per
multiply-accumulate for conv/linear layers and 1 FLOP per output element for
activations and pooling.  The bundled paper table is kept verbatim and is never
mixed with analytic values.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .actions import AllResolutions, ChooseResolution, PolicyAction, Skip
from .tensor import Tensor, stack

TABLE_VERSION = 1
_HEADER = f"# arnet cost table v{TABLE_VERSION}"

PAPER_FAMILIES = {
    "resnet": (("ResNet-50", 224), ("ResNet-34", 168), ("ResNet-18", 112), ("MobileNet-v2", 84)),
    "efficientnet": (
        ("EfficientNet-b3", 224),
        ("EfficientNet-b1", 168),
        ("EfficientNet-b0", 112),
        ("MobileNet-v2", 84),
    ),
}
# LSTM cost is approximated by the square of its input feature dimension (1280 for MobileNet-v2).
PAPER_LSTM_GFLOPS = 1280**2 * 1e-9


class Layer(NamedTuple):
    kind: str
    kernel: int = 0
    c_in: int = 0
    c_out: int = 0
    h_out: int = 0
    w_out: int = 0
    count: int = 0


def conv(kernel: int, c_in: int, c_out: int, h_out: int, w_out: int) -> Layer:
    return Layer("conv", kernel, c_in, c_out, h_out, w_out)


def linear(d_in: int, d_out: int) -> Layer:
    return Layer("linear", c_in=d_in, c_out=d_out)


def pointwise(count: int) -> Layer:
    return Layer("pointwise", count=count)


def layer_flops(layer: Layer) -> int:
    if layer.kind == "conv":
        return 2 * layer.kernel**2 * layer.c_in * layer.c_out * layer.h_out * layer.w_out
    if layer.kind == "linear":
        return 2 * layer.c_in * layer.c_out
    if layer.kind == "pointwise":
        return layer.count
    raise ValueError(f"unknown layer kind {layer.kind!r}")


def analytic_flops(spec) -> int:
    """Total FLOPs of a network spec (anything with ``layers()``) or a layer list."""
    layers: Iterable[Layer] = spec.layers() if hasattr(spec, "layers") else spec
    return sum(layer_flops(layer) for layer in layers)


@dataclass(frozen=True)
class CostTable:
    """GFLOPs per frame for each (network, resolution) pair.

    ``levels`` names the table entry serving each resolution level, highest first.
    ``policy_gflops`` is one policy-network step (feature extractor + LSTM) and
    ``head_gflops`` the extra cost of the lowest-level prediction once the policy
    features exist; both are only charged under full accounting.
    """

    entries: Mapping[tuple[str, int], float]
    levels: tuple[tuple[str, int], ...]
    provenance: str
    policy_gflops: float = 0.0
    head_gflops: float = 0.0

    def __post_init__(self):
        if self.provenance not in ("analytic", "paper"):
            raise ValueError(f"provenance must be 'analytic' or 'paper', got {self.provenance!r}")
        bad = {k: v for k, v in self.entries.items() if not v > 0}
        if bad:
            raise ValueError(f"cost table entries must be positive: {bad}")
        for key in self.levels:
            if key not in self.entries:
                raise KeyError(f"cost table has no entry for {key}")

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def level_cost(self, level: int) -> float:
        if not 0 <= level < len(self.levels):
            raise KeyError(f"no cost entry for resolution level {level}")
        return float(self.entries[self.levels[level]])

    def action_costs(self, num_actions: int) -> np.ndarray:
        """Cost of every action index: level costs followed by zero-cost skips."""
        costs = np.zeros(num_actions)
        costs[: self.num_levels] = [self.level_cost(l) for l in range(self.num_levels)]
        return costs

    def scaled(self, factor: float) -> "CostTable":
        return CostTable(
            {k: v * factor for k, v in self.entries.items()},
            self.levels,
            self.provenance,
            self.policy_gflops * factor,
            self.head_gflops * factor,
        )


def flops_of_action(action: PolicyAction, table: CostTable) -> float:
    if isinstance(action, Skip):
        return 0.0
    if isinstance(action, ChooseResolution):
        return table.level_cost(action.level)
    if isinstance(action, AllResolutions):
        return sum(table.level_cost(l) for l in range(table.num_levels))
    raise TypeError(f"not a policy action: {action!r}")


# -- persistence ------------------------------------------------------------


def parse_table_csv(text: str, levels: Sequence[tuple[str, int]], provenance: str, **extra) -> CostTable:
    """Parse cost-table CSV text: a version header line, then ``network,resolution,gflops``."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# arnet cost table v"):
        raise ValueError("missing cost table version header")
    version = int(lines[0][len("# arnet cost table v") :].split(";")[0])
    if version != TABLE_VERSION:
        raise ValueError(f"unsupported cost table version {version}")
    rows = csv.DictReader(line for line in lines if not line.startswith("#"))
    if rows.fieldnames != ["network", "resolution", "gflops"]:
        raise ValueError(f"unexpected cost table columns {rows.fieldnames}")
    entries = {(r["network"], int(r["resolution"])): float(r["gflops"]) for r in rows}
    return CostTable(entries, tuple(tuple(k) for k in levels), provenance, **extra)


def load_table_csv(path, levels: Sequence[tuple[str, int]], provenance: str, **extra) -> CostTable:
    return parse_table_csv(Path(path).read_text(encoding="utf-8"), levels, provenance, **extra)


def write_table_csv(table: CostTable) -> str:
    buf = io.StringIO()
    buf.write(f"{_HEADER}; provenance={table.provenance}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["network", "resolution", "gflops"])
    for (network, res), value in table.entries.items():
        writer.writerow([network, res, repr(float(value))])
    return buf.getvalue()


def paper_table(family: str = "resnet") -> CostTable:
    """The published per-backbone GFLOPS table, with levels for one backbone family.

    The lowest-level network doubles as the policy feature extractor, so a
    policy step costs that entry plus the LSTM.
    """
    text = resources.files("arnet").joinpath("assets/paper_gflops.csv").read_text(encoding="utf-8")
    levels = PAPER_FAMILIES[family]
    table = parse_table_csv(text, levels, "paper")
    return CostTable(
        table.entries, table.levels, "paper", policy_gflops=table.level_cost(len(levels) - 1) + PAPER_LSTM_GFLOPS
    )


def analytic_table(policy_spec, backbone_specs) -> CostTable:
    """Analytic GFLOPs for a model's own networks.

    The lowest level is charged feature extractor plus classification head.
    """
    entries, levels = {}, []
    for spec in backbone_specs:
        key = (spec.id, spec.input_resolution)
        entries[key] = analytic_flops(spec) * 1e-9
        levels.append(key)
    lowest = ("shared-head", policy_spec.input_resolution)
    entries[lowest] = (analytic_flops(policy_spec.feature_layers()) + analytic_flops(policy_spec.head_layers())) * 1e-9
    levels.append(lowest)
    return CostTable(
        entries,
        tuple(levels),
        "analytic",
        policy_gflops=analytic_flops(policy_spec.layers()) * 1e-9,
        head_gflops=analytic_flops(policy_spec.head_layers()) * 1e-9,
    )


# -- aggregation ------------------------------------------------------------


@dataclass
class CostReport:
    gflops_per_frame: float
    gflops_per_video: float
    usage: np.ndarray = field(repr=False)
    num_frames: int = 0


def frame_cost(record, table: CostTable, accounting: str = "paper") -> float:
    """Cost charged for one trace entry (skip-covered frames cost nothing)."""
    if accounting not in ("paper", "full"):
        raise ValueError(f"accounting must be 'paper' or 'full', got {accounting!r}")
    if not record.observed:
        return 0.0
    action = record.action
    if accounting == "paper" or isinstance(action, AllResolutions):
        return flops_of_action(action, table)
    cost = table.policy_gflops if record.policy_evaluated else 0.0
    if isinstance(action, ChooseResolution):
        lowest = action.level == table.num_levels - 1
        if lowest and record.policy_evaluated:
            cost += table.head_gflops
        else:
            cost += table.level_cost(action.level)
    return cost


def video_cost(trace, table: CostTable, accounting: str = "paper") -> CostReport:
    total = sum(frame_cost(r, table, accounting) for r in trace.frames)
    n = len(trace.frames)
    return CostReport(total / n if n else 0.0, total, hard_usage([trace], trace.num_actions), n)


def hard_usage(traces, num_actions: int) -> np.ndarray:
    """Per-action frame frequencies; a skip is credited with every frame it covers."""
    counts = np.zeros(num_actions)
    for trace in traces:
        for r in trace.frames:
            owner = r if r.observed else trace.frames[r.skipped_by]
            if owner.action_index is not None:
                counts[owner.action_index] += 1
    total = counts.sum()
    return counts / total if total else counts


def expected_flops(policies: Sequence[Tensor], table: CostTable, num_frames: int | None = None) -> Tensor:
    """Differentiable per-frame expected cost ``sum_t pi_t . cost / T``."""
    if not policies:
        return Tensor(0.0)
    probs = stack(policies)
    cost = table.action_costs(probs.shape[-1])
    n = num_frames if num_frames is not None else len(policies)
    return (probs @ cost).sum() * (1.0 / n)
