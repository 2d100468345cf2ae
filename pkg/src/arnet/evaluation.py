"""Metrics, baseline routings, policy-usage reports and curve export."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from . import costs
from .actions import AllResolutions, ChooseResolution, Skip
from .backbones import resize
from .model import ARNet, CheckpointError
from .policy import INFER
from .router import FrameRecord, PolicyTrace, run_video
from .tensor import Tensor, softmax, stack


class BaselineKind(str, enum.Enum):
    UNIFORM = "uniform"
    LSTM = "lstm"
    RANDOM = "random"
    MULTISCALE = "multiscale"
    ARNET = "arnet"
    REINFORCE = "reinforce"


# how each kind routes frames at evaluation time
_ROUTING = {
    BaselineKind.UNIFORM: "uniform",
    BaselineKind.LSTM: "lstm",
    BaselineKind.RANDOM: "random",
    BaselineKind.MULTISCALE: "multiscale",
    BaselineKind.ARNET: "policy",
    BaselineKind.REINFORCE: "policy",
}


@dataclass
class Metrics:
    top1: float
    mAP: float
    gflops_f: float
    gflops_v: float
    gflops_f_full: float
    gflops_v_full: float
    videos: int
    usage: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# -- routing ----------------------------------------------------------------------


def run_lstm_video(video, model: ARNet, table: costs.CostTable) -> tuple[Tensor, PolicyTrace]:
    """LSTM baseline: every frame at level 0, predictions refined by a recurrent head, then averaged."""
    if model.aggregator is None:
        raise ValueError("model has no LSTM aggregator; train it with method 'lstm'")
    frames = np.asarray(video.frames)
    feats = model.backbones[0].features(resize(frames, model.ladder[0]))
    preds = model.aggregator(feats)
    action = ChooseResolution(0)
    cost = costs.flops_of_action(action, table)
    records = [
        FrameRecord(t, True, action, 0, logits=preds.data[t], cost=cost) for t in range(len(frames))
    ]
    y = preds.mean(axis=0)
    return y, PolicyTrace(records, y, model.num_actions)


def run_multiscale(video, model: ARNet, table: costs.CostTable) -> tuple[Tensor, PolicyTrace]:
    """Every frame through every resolution level; all predictions averaged."""
    frames = np.asarray(video.frames)
    blocks = [model.backbones[l].predict(resize(frames, model.ladder[l])) for l in range(model.num_levels - 1)]
    lowres = resize(frames, model.policy.spec.input_resolution)
    blocks.append(model.policy.lowest_res_predict(model.policy.extract_features(lowres)))
    preds = stack(blocks)  # (L, T, C)
    action = AllResolutions()
    cost = costs.flops_of_action(action, table)
    per_frame = preds.data.mean(axis=0)
    records = [
        FrameRecord(t, True, action, None, logits=per_frame[t], cost=cost) for t in range(len(frames))
    ]
    y = preds.mean(axis=(0, 1))
    return y, PolicyTrace(records, y, model.num_actions)


def routing_for(model: ARNet, video, routing, table: costs.CostTable, rng: np.random.Generator | None = None):
    """Route one video by name ('policy', 'uniform', 'random', 'multiscale', 'lstm') or forced actions."""
    if routing == "policy":
        return run_video(video, model, INFER, table=table)
    if routing == "uniform":
        return run_video(video, model, INFER, table=table, actions=lambda t: 0)
    if routing == "random":
        if rng is None:
            raise ValueError("random routing needs an rng")
        k = model.num_actions
        return run_video(video, model, INFER, table=table, actions=lambda t: int(rng.integers(k)))
    if routing == "multiscale":
        return run_multiscale(video, model, table)
    if routing == "lstm":
        return run_lstm_video(video, model, table)
    return run_video(video, model, INFER, table=table, actions=routing)


def routing_of(kind) -> str:
    if kind in ("arnet", "reinforce", "uniform", "lstm", "random", "multiscale"):
        kind = BaselineKind(kind)
    return _ROUTING[kind]


# -- metrics --------------------------------------------------------------------


def average_precision(scores, positives) -> float:
    """All-points interpolated AP of a ranking; tied scores share one threshold."""
    scores = np.asarray(scores, dtype=float)
    positives = np.asarray(positives, dtype=bool)
    n_pos = positives.sum()
    if n_pos == 0:
        return float("nan")
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], positives[order]
    tp = np.cumsum(p)
    # evaluate only at the last index of each run of tied scores
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp, seen = tp[last], last + 1
    precision = tp / seen
    recall = tp / n_pos
    prev_recall = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev_recall) * precision))


def mean_average_precision(score_matrix, labels) -> float:
    """Mean over classes of one-vs-rest AP; classes without positives are left out."""
    score_matrix = np.asarray(score_matrix, dtype=float)
    labels = np.asarray(labels)
    aps = [
        average_precision(score_matrix[:, c], labels == c)
        for c in range(score_matrix.shape[1])
        if np.any(labels == c)
    ]
    return float(np.mean(aps)) if aps else float("nan")


def metrics_from(scores, labels, traces, table: costs.CostTable) -> Metrics:
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    n = len(labels)
    top1 = float(np.mean(np.argmax(scores, axis=1) == labels)) if n else float("nan")
    paper = [costs.video_cost(tr, table, "paper") for tr in traces]
    full = [costs.video_cost(tr, table, "full") for tr in traces]
    usage = costs.hard_usage(traces, traces[0].num_actions) if traces else np.zeros(0)
    return Metrics(
        top1=top1,
        mAP=mean_average_precision(scores, labels) if n else float("nan"),
        gflops_f=float(np.mean([r.gflops_per_frame for r in paper])) if n else 0.0,
        gflops_v=float(np.mean([r.gflops_per_video for r in paper])) if n else 0.0,
        gflops_f_full=float(np.mean([r.gflops_per_frame for r in full])) if n else 0.0,
        gflops_v_full=float(np.mean([r.gflops_per_video for r in full])) if n else 0.0,
        videos=n,
        usage=[float(u) for u in usage],
    )


def evaluate_model(
    model: ARNet,
    videos,
    kind="arnet",
    table: costs.CostTable | None = None,
    rng: np.random.Generator | None = None,
    return_traces: bool = False,
):
    """Infer-mode run over ``videos`` with the routing of ``kind``."""
    table = table if table is not None else costs.paper_table()
    routing = routing_of(kind)
    if routing == "random" and rng is None:
        rng = np.random.default_rng(0)
    scores, labels, traces = [], [], []
    for v in videos:
        y, trace = routing_for(model, v, routing, table, rng)
        trace.label, trace.informative = v.label, tuple(v.informative)
        scores.append(softmax(y.detach()).data)
        labels.append(v.label)
        traces.append(trace)
    metrics = metrics_from(np.array(scores).reshape(len(labels), -1), labels, traces, table)
    return (metrics, traces) if return_traces else metrics


def check_compatible(model: ARNet, dataset) -> None:
    spec = dataset.spec
    if model.num_classes != spec.num_classes:
        raise CheckpointError(f"checkpoint has {model.num_classes} classes, dataset has {spec.num_classes}")
    if model.ladder.base != spec.resolution:
        raise CheckpointError(f"checkpoint expects {model.ladder.base}px frames, dataset has {spec.resolution}px")
    trained_on = model.meta.get("dataset", {}).get("spec")
    if trained_on is not None and trained_on.get("frames") != spec.frames:
        raise CheckpointError(f"checkpoint trained on T={trained_on.get('frames')}, dataset has T={spec.frames}")


def evaluate(checkpoint, dataset, accounting: str = "paper", table: costs.CostTable | None = None, split: str = "test"):
    """Evaluate a checkpoint (path or model) on a dataset split; returns ``(metrics, traces)``.

    Both accountings are always reported; ``accounting`` picks which one fills
    ``gflops_f``/``gflops_v``.
    """
    model = checkpoint if isinstance(checkpoint, ARNet) else ARNet.load(checkpoint)
    check_compatible(model, dataset)
    kind = model.meta.get("method", "arnet")
    metrics, traces = evaluate_model(model, getattr(dataset, split), kind, table, return_traces=True)
    if accounting == "full":
        metrics.gflops_f, metrics.gflops_v = metrics.gflops_f_full, metrics.gflops_v_full
    elif accounting != "paper":
        raise ValueError(f"accounting must be 'paper' or 'full', got {accounting!r}")
    return metrics, traces


def run_baseline(kind, model: ARNet, dataset, table: costs.CostTable | None = None, seed: int = 0, split: str = "test") -> Metrics:
    kind = BaselineKind(kind)
    return evaluate_model(model, getattr(dataset, split), kind, table, rng=np.random.default_rng(seed))


# -- policy usage reports -------------------------------------------------------


def policy_histogram(traces, group_by: str = "dataset", action_names=None) -> list[dict]:
    """Per-group decision frequencies plus the two usage ratios.

    ``relative_high_res`` is the share of level 0 among resolution choices;
    ``resolution_ratio`` is resolution choices over all decisions.
    """
    if group_by not in ("dataset", "class"):
        raise ValueError(f"group_by must be 'dataset' or 'class', got {group_by!r}")
    groups: dict = {}
    for tr in traces:
        key = "all" if group_by == "dataset" else tr.label
        groups.setdefault(key, []).append(tr)
    rows = []
    for key in sorted(groups, key=str):
        trs = groups[key]
        k = trs[0].num_actions
        counts = np.zeros(k)
        for tr in trs:
            for r in tr.frames:
                if r.observed and r.action_index is not None:
                    counts[r.action_index] += 1
        decisions = counts.sum()
        freqs = counts / decisions if decisions else counts
        levels = [i for i in range(k) if _is_resolution(trs, i)]
        res_total = counts[levels].sum() if levels else 0.0
        level0 = counts[0] if levels else 0.0
        names = action_names or [f"a{i}" for i in range(k)]
        row = {"group": key, "decisions": int(decisions)}
        row.update({names[i]: float(freqs[i]) for i in range(k)})
        row["relative_high_res"] = float(level0 / res_total) if res_total else 0.0
        row["resolution_ratio"] = float(res_total / decisions) if decisions else 0.0
        rows.append(row)
    return rows


def _is_resolution(traces, index: int) -> bool:
    for tr in traces:
        for r in tr.frames:
            if r.observed and r.action_index == index:
                return isinstance(r.action, ChooseResolution)
    return index < traces[0].num_actions - 3


def rows_to_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in row.items()})
    return buf.getvalue()


def informative_hit_rate(traces, level: int = 0) -> tuple[float, float]:
    """Share of ``level`` choices that land on informative frames, and the informative base rate."""
    chosen = hits = frames = informative = 0
    for tr in traces:
        marked = set(tr.informative)
        frames += tr.num_frames
        informative += len(marked)
        for r in tr.frames:
            if r.observed and isinstance(r.action, ChooseResolution) and r.action.level == level:
                chosen += 1
                hits += r.t in marked
    hit_rate = hits / chosen if chosen else 0.0
    base_rate = informative / frames if frames else 0.0
    return hit_rate, base_rate


def curve_export(runs) -> str:
    """CSV of (GFLOPS/V, accuracy, mAP, label), one row per run, cheapest first.

    ``runs`` is a list of ``(label, Metrics)`` pairs.
    """
    rows = sorted(runs, key=lambda r: (r[1].gflops_v, str(r[0])))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["gflops_v", "accuracy", "mAP", "label"])
    for label, m in rows:
        writer.writerow([repr(m.gflops_v), repr(m.top1), repr(m.mAP), label])
    return buf.getvalue()
