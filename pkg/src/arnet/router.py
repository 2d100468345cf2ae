"""Per-video decision loop: observe, decide, skip or dispatch, then average.

Frames covered by a skip never reach the policy network.  Backbone calls are
batched per resolution level after the decision pass; policy decisions never
depend on backbone outputs, so the result equals frame-by-frame dispatch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import costs
from .actions import ChooseResolution, PolicyAction, Skip, decode_action
from .backbones import resize
from .gumbel import straight_through
from .model import ARNet
from .policy import INFER, TrainMode
from .tensor import Tensor, concat, stack

TRACE_SCHEMA_VERSION = 1


@dataclass
class FrameRecord:
    t: int
    observed: bool
    action: PolicyAction | None = None
    action_index: int | None = None
    skipped_by: int | None = None
    policy: np.ndarray | None = None
    logits: np.ndarray | None = None
    cost: float = 0.0
    policy_evaluated: bool = False

    @property
    def predicted(self) -> bool:
        return self.logits is not None


@dataclass
class PolicyTrace:
    frames: list[FrameRecord]
    y: Tensor
    num_actions: int
    fallback: bool = False
    # differentiable per-decision policy distributions and log pi(a_t), train mode only
    policies: list[Tensor] = field(default_factory=list, repr=False)
    chosen_log_probs: list[Tensor] = field(default_factory=list, repr=False)
    label: int | None = None
    informative: tuple[int, ...] = ()

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def total_cost(self) -> float:
        return sum(r.cost for r in self.frames)

    @property
    def decisions(self) -> list[FrameRecord]:
        return [r for r in self.frames if r.observed]

    def predicted_frames(self) -> list[int]:
        return [r.t for r in self.frames if r.predicted]


ESTIMATORS = ("executed", "all-branches", "none")

ActionSource = Sequence[int | None] | Callable[[int], int] | None


def _frames_of(video) -> np.ndarray:
    return np.asarray(video.frames if hasattr(video, "frames") else video)


def run_video(
    video,
    model: ARNet,
    mode=INFER,
    *,
    table: costs.CostTable | None = None,
    actions: ActionSource = None,
    estimator: str = "executed",
) -> tuple[Tensor, PolicyTrace]:
    """Route every frame of ``video`` and return the video logits and the trace.

    ``actions`` forces the routing instead of the policy network: either a
    per-frame sequence of action indices (entries for skip-covered frames are
    ignored) or a callable ``t -> index``.

    ``estimator`` picks how gradients reach the learned policy in train mode:

    - ``"executed"``: only the chosen branch runs and is scaled by its
      straight-through weight, so only the chosen action gets a gradient.
    - ``"all-branches"``: every resolution branch runs on each observed frame
      and the frame prediction is the one-hot-weighted sum of the branch
      outputs, divided by the (straight-through) count of predicted frames.
      The forward value is unchanged, but every action receives a gradient.
    - ``"none"``: no path from the loss to the policy (score-function training).
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"estimator must be one of {ESTIMATORS}, got {estimator!r}")
    frames = _frames_of(video)
    table = table if table is not None else costs.paper_table()
    policy = model.policy
    num_levels, lowest = model.num_levels, model.num_levels - 1
    training = isinstance(mode, TrainMode)

    records: list[FrameRecord] = []
    dispatch: list[list[int]] = [[] for _ in range(num_levels)]
    weights: dict[int, Tensor] = {}
    onehots: dict[int, Tensor] = {}
    features: dict[int, Tensor] = {}
    policies: list[Tensor] = []
    chosen: list[Tensor] = []
    state = policy.initial_state()
    pending, skipper = 0, None

    for t in range(len(frames)):
        if pending:
            records.append(FrameRecord(t, False, skipped_by=skipper))
            pending -= 1
            continue
        probs = None
        if actions is None:
            decision, state, features[t] = policy.policy_step(frames[t], state, mode)
            if training:
                index = decision.hard_index
                pi = decision.log_probs.exp()
                policies.append(pi)
                chosen.append(decision.log_probs[index])
                probs = pi.data
                if estimator == "executed":
                    weights[t] = straight_through(decision)[index]
                elif estimator == "all-branches":
                    onehots[t] = straight_through(decision)
            else:
                index = decision
        else:
            index = actions(t) if callable(actions) else actions[t]
        action = decode_action(index, num_levels, model.skips)
        record = FrameRecord(
            t,
            True,
            action,
            int(index),
            policy=probs,
            cost=costs.flops_of_action(action, table),
            policy_evaluated=actions is None,
        )
        records.append(record)
        if isinstance(action, Skip):
            pending, skipper = action.count - 1, t
        else:
            dispatch[action.level].append(t)

    def lowres_features(t: int) -> Tensor:
        if t not in features:
            features[t] = policy.extract_features(resize(frames[t], policy.spec.input_resolution))
        return features[t]

    if onehots and any(dispatch):
        y = _mix_all_branches(frames, model, onehots, lowres_features, records)
        return y, PolicyTrace(records, y, model.num_actions, False, policies, chosen)

    blocks, order = [], []
    for level in range(num_levels - 1):
        ts = dispatch[level]
        if ts:
            blocks.append(model.backbones[level].predict(resize(frames[ts], model.ladder[level])))
            order += ts
    if dispatch[lowest]:
        ts = dispatch[lowest]
        blocks.append(policy.lowest_res_predict(stack([lowres_features(t) for t in ts])))
        order += ts

    fallback = not order
    if fallback:
        y = policy.lowest_res_predict(lowres_features(0))
    else:
        preds = concat(blocks) if len(blocks) > 1 else blocks[0]
        for row, t in enumerate(order):
            records[t].logits = preds.data[row]
        if weights:
            w = stack([weights.get(t, Tensor(1.0)) for t in order])
            preds = preds * w.reshape(len(order), 1)
        y = preds.mean(axis=0)

    trace = PolicyTrace(records, y, model.num_actions, fallback, policies, chosen)
    return y, trace


def _mix_all_branches(frames, model: ARNet, onehots: dict[int, Tensor], lowres_features, records) -> Tensor:
    """Straight-through mixture over every resolution branch for the observed frames."""
    ts = sorted(onehots)
    num_levels = model.num_levels
    outs = [model.backbones[l].predict(resize(frames[ts], model.ladder[l])) for l in range(num_levels - 1)]
    outs.append(model.policy.lowest_res_predict(stack([lowres_features(t) for t in ts])))
    w = stack([onehots[t] for t in ts])[:, :num_levels]  # (N, L); exact 0/1 values
    mixed = outs[0] * w[:, 0:1]
    for level in range(1, num_levels):
        mixed = mixed + outs[level] * w[:, level : level + 1]
    for row, t in enumerate(ts):
        action = records[t].action
        if isinstance(action, ChooseResolution):
            records[t].logits = outs[action.level].data[row]
    return mixed.sum(axis=0) / w.sum()


def average_predictions(trace: PolicyTrace) -> Tensor:
    """Mean of the recorded frame logits (raw, before any softmax)."""
    rows = [r.logits for r in trace.frames if r.predicted]
    if not rows:
        return trace.y
    return Tensor(np.mean(np.stack(rows), axis=0))


# -- trace files --------------------------------------------------------------


def trace_records(trace: PolicyTrace, video: int = 0) -> list[dict]:
    informative = set(trace.informative)
    out = []
    for r in trace.frames:
        out.append(
            {
                "schema": TRACE_SCHEMA_VERSION,
                "video": video,
                "label": trace.label,
                "t": r.t,
                "observed": r.observed,
                "action": None if r.action is None else str(r.action),
                "action_index": r.action_index,
                "skipped_by": r.skipped_by,
                "cost_flops": r.cost * 1e9,
                "predicted": r.predicted,
                "informative": r.t in informative,
            }
        )
    return out


def write_traces(traces: Iterable[PolicyTrace], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, trace in enumerate(traces):
            for rec in trace_records(trace, i):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_traces(path, num_levels: int = 4, skips: tuple[int, ...] = (1, 2, 4)) -> list[PolicyTrace]:
    """Rebuild traces (without tensors) from a trace file, for reporting."""
    by_video: dict[int, list[dict]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("schema") != TRACE_SCHEMA_VERSION:
                raise ValueError(f"unsupported trace schema {rec.get('schema')!r}")
            by_video.setdefault(rec["video"], []).append(rec)
    traces = []
    for vid in sorted(by_video):
        recs = sorted(by_video[vid], key=lambda r: r["t"])
        frames = []
        for r in recs:
            idx = r["action_index"]
            action = None if idx is None else decode_action(idx, num_levels, skips)
            frames.append(
                FrameRecord(
                    r["t"],
                    r["observed"],
                    action,
                    idx,
                    r["skipped_by"],
                    logits=np.zeros(0) if r["predicted"] else None,
                    cost=r["cost_flops"] * 1e-9,
                )
            )
        informative = tuple(r["t"] for r in recs if r["informative"])
        traces.append(
            PolicyTrace(frames, Tensor(0.0), num_levels + len(skips), label=recs[0]["label"], informative=informative)
        )
    return traces
