"""Losses, SGD with momentum, the three-stage schedule and the REINFORCE variant."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import costs
from .evaluation import evaluate_model, routing_for
from .gumbel import TemperatureSchedule
from .model import ARNet
from .policy import INFER, TrainMode
from .router import ESTIMATORS, run_video
from .tensor import Tensor, softmax_cross_entropy, stack

log = logging.getLogger(__name__)

STAGES = ("warmup", "joint", "finetune")
METHODS = ("arnet", "reinforce", "uniform", "lstm")
LOG_COLUMNS = ("epoch", "stage", "loss_acc", "loss_flops", "loss_uni", "total", "acc", "gflops_f", "gflops_v", "tau")


class DivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    beta: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


# -- loss terms ---------------------------------------------------------------


def loss_acc(y: Tensor, label: int) -> Tensor:
    return softmax_cross_entropy(y, label)


def loss_flops(traces, table: costs.CostTable) -> Tensor:
    """Batch mean of each video's expected per-frame cost under its policies."""
    if not traces:
        return Tensor(0.0)
    terms = [costs.expected_flops(tr.policies, table, tr.num_frames) for tr in traces]
    return stack(terms).mean()


def soft_usage(traces) -> Tensor:
    """Mean policy distribution over every decision in the batch."""
    policies = [p for tr in traces for p in tr.policies]
    return stack(policies).mean(axis=0)


def loss_uni(freq) -> Tensor:
    """Squared distance of action frequencies from the uniform distribution."""
    freq = freq if isinstance(freq, Tensor) else Tensor(freq)
    k = freq.shape[-1]
    diff = freq - 1.0 / k
    return (diff * diff).sum()


def total_loss(acc, flops, uni, weights: LossWeights = LossWeights()) -> Tensor:
    acc = acc if isinstance(acc, Tensor) else Tensor(acc)
    return acc * (1.0 - weights.alpha) + flops * weights.alpha + uni * weights.beta


def reinforce_surrogate(chosen_log_probs: Sequence[Tensor], advantage: float) -> Tensor:
    """Score-function surrogate; its gradient is ``-(R - b) * grad sum_t log pi(a_t)``."""
    if not chosen_log_probs:
        return Tensor(0.0)
    return stack(chosen_log_probs).sum() * (-float(advantage))


# -- optimiser ------------------------------------------------------------------


def sgd_momentum_step(params, grads, lr: float, momentum: float = 0.9, velocity: list | None = None) -> list:
    """Classical momentum in place: ``v <- m v + g``, ``p <- p - lr v``.

    Returns the velocity buffers for the next call.
    """
    params, grads = list(params), list(grads)
    if velocity is None:
        velocity = [np.zeros_like(p.data) for p in params]
    for g in grads:
        if g is not None and not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        velocity[i] = momentum * velocity[i] + g
        p.data = p.data - lr * velocity[i]
    return velocity


class SGD:
    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.9):
        self.names = sorted(params)
        self.params = [params[n] for n in self.names]
        self.lr = lr
        self.momentum = momentum
        self.velocity = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.velocity = sgd_momentum_step(
            self.params, [p.grad for p in self.params], self.lr, self.momentum, self.velocity
        )


# -- configuration --------------------------------------------------------------


@dataclass(frozen=True)
class StageConfig:
    epochs: int
    lr: float


def paper_stages() -> dict:
    return {
        "warmup": StageConfig(10, 0.02),
        "joint": StageConfig(50, 0.001),
        "finetune": StageConfig(50, 0.0005),
    }


def _default_stages() -> dict:
    # desk runs see 5x fewer epochs on a far smaller dataset, so the joint
    # stage (the only one that trains the policy) runs at 5x the full-length rate
    stages = paper_stages()
    stages["joint"] = StageConfig(50, 0.005)
    return stages


@dataclass(frozen=True)
class TrainConfig:
    """All training hyperparameters; stage epochs are the full-length values scaled by ``epoch_scale``."""

    method: str = "arnet"
    seed: int = 0
    alpha: float = 0.1
    beta: float = 0.3
    tau0: float = 5.0
    tau_decay: float = -0.045
    tau_floor: float = 0.1
    momentum: float = 0.9
    batch_size: int = 1
    epoch_scale: float = 0.2
    stages: dict = field(default_factory=_default_stages)
    reinforce_lr: dict = field(default_factory=lambda: {"joint": 0.01, "finetune": 0.001})
    baseline_momentum: float = 0.9
    cost_table: str = "paper"
    hidden: int = 64
    estimator: str = "all-branches"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        stages = {k: v if isinstance(v, StageConfig) else StageConfig(**v) for k, v in self.stages.items()}
        if set(stages) != set(STAGES):
            raise ValueError(f"stages must be exactly {STAGES}")
        object.__setattr__(self, "stages", stages)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta)

    @property
    def schedule(self) -> TemperatureSchedule:
        return TemperatureSchedule(self.tau0, self.tau_decay, self.tau_floor)

    def stage_epochs(self, stage: str) -> int:
        full = self.stages[stage].epochs
        if full <= 0 or self.epoch_scale <= 0:
            return 0
        return max(1, int(round(full * self.epoch_scale)))

    def stage_lr(self, stage: str) -> float:
        if self.method == "reinforce" and stage in self.reinforce_lr:
            return float(self.reinforce_lr[stage])
        return self.stages[stage].lr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stages"] = {k: asdict(v) for k, v in self.stages.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def paper(cls, **changes) -> "TrainConfig":
        """Full-length schedule with the published learning rates."""
        base = cls(
            epoch_scale=1.0,
            stages=paper_stages(),
            reinforce_lr={"joint": 0.002, "finetune": 0.001},
        )
        return replace(base, **changes)

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


def cost_table_for(name: str, model: ARNet) -> costs.CostTable:
    if name == "paper":
        return costs.paper_table()
    if name == "analytic":
        return model.analytic_table()
    raise ValueError(f"cost table must be 'paper' or 'analytic', got {name!r}")


# -- training loop ----------------------------------------------------------------


def _video_loss_terms(trace, table: costs.CostTable) -> tuple[float, float]:
    """Hard per-frame cost and hard balance term for one routed video."""
    flops = trace.total_cost / trace.num_frames
    return flops, float(loss_uni(costs.hard_usage([trace], trace.num_actions)).data)


def train_three_stage(dataset, config: TrainConfig = TrainConfig(), progress=None) -> tuple[ARNet, list[dict]]:
    """Warm-up, joint and finetune stages; returns the model and one log row per epoch.

    ``dataset`` needs ``train`` and ``val`` lists of videos.
    """
    num_classes = dataset.spec.num_classes
    model = ARNet.build(num_classes, seed=config.seed, hidden=config.hidden, with_aggregator=config.method == "lstm")
    model.meta = {"method": config.method, "seed": config.seed, "dataset": _dataset_fingerprint(dataset)}
    table = cost_table_for(config.cost_table, model)
    weights = config.weights
    rng = np.random.default_rng([config.seed, 1])
    eval_rng_seed = config.seed
    rows: list[dict] = []
    baseline: float | None = None
    epoch_index = 0

    for stage in STAGES:
        epochs = config.stage_epochs(stage)
        if not epochs:
            continue
        trainable = model.named_params() if stage == "joint" else model.classifier_params()
        opt = SGD(trainable, config.stage_lr(stage), config.momentum)
        log.info("stage %s: %d epochs, lr=%g", stage, epochs, opt.lr)
        for e in range(epochs):
            tau = config.schedule(e) if stage == "joint" else float("nan")
            sums = np.zeros(4)
            batches = 0
            order = rng.permutation(len(dataset.train))
            for start in range(0, len(order), config.batch_size):
                batch = [dataset.train[i] for i in order[start : start + config.batch_size]]
                terms, baseline = _train_step(model, batch, stage, config, table, weights, tau, rng, opt, baseline)
                sums += terms
                batches += 1
            metrics = evaluate_model(model, dataset.val, config.method, table, rng=np.random.default_rng(eval_rng_seed))
            mean = sums / max(batches, 1)
            row = {
                "epoch": epoch_index,
                "stage": stage,
                "loss_acc": mean[0],
                "loss_flops": mean[1],
                "loss_uni": mean[2],
                "total": mean[3],
                "acc": metrics.top1,
                "gflops_f": metrics.gflops_f,
                "gflops_v": metrics.gflops_v,
                "tau": tau,
            }
            if not all(math.isfinite(row[k]) for k in ("loss_acc", "loss_flops", "loss_uni", "total")):
                raise DivergenceError(f"non-finite loss at epoch {epoch_index} ({stage}): {row}")
            rows.append(row)
            log.info("%s", format_row(row))
            if progress is not None:
                progress(row)
            epoch_index += 1
    return model, rows


def reinforce_train(dataset, config: TrainConfig = TrainConfig(method="reinforce"), progress=None):
    """Same pipeline, with the joint stage driven by the score-function estimator."""
    return train_three_stage(dataset, config.with_(method="reinforce"), progress)


def _train_step(model, batch, stage, config, table, weights, tau, rng, opt, baseline):
    method = config.method
    learned = method in ("arnet", "reinforce") and stage == "joint"
    if learned:
        mode = TrainMode(tau if method == "arnet" else 1.0, rng)
        routed = [
            _route_train(model, v, mode, table, config.estimator if method == "arnet" else "none")
            for v in batch
        ]
    else:
        actions = _fixed_routing(model, method, stage, rng)
        routed = [routing_for(model, v, actions, table) for v in batch]

    accs = [loss_acc(y, v.label) for (y, _), v in zip(routed, batch)]
    acc = stack(accs).mean()
    traces = [tr for _, tr in routed]
    hard = [_video_loss_terms(tr, table) for tr in traces]

    if method == "arnet" and learned:
        flops = loss_flops(traces, table)
        uni = loss_uni(soft_usage(traces))
        objective = total_loss(acc, flops, uni, weights)
        flops_v, uni_v = flops.item(), uni.item()
    else:
        flops_v = float(np.mean([h[0] for h in hard]))
        uni_v = float(loss_uni(costs.hard_usage(traces, model.num_actions)).data)
        objective = total_loss(acc, flops_v, uni_v, weights)
        if method == "reinforce" and learned:
            rewards = np.array(
                [
                    -float(total_loss(a.item(), f, u, weights).data)
                    for a, (f, u) in zip(accs, hard)
                ]
            )
            if baseline is None:
                baseline = float(rewards.mean())
            surrogate = stack(
                [reinforce_surrogate(tr.chosen_log_probs, r - baseline) for tr, r in zip(traces, rewards)]
            ).mean()
            objective = objective + surrogate
            baseline = config.baseline_momentum * baseline + (1 - config.baseline_momentum) * float(rewards.mean())

    opt.zero_grad()
    objective.backward()
    opt.step()
    total_v = float(total_loss(acc.item(), flops_v, uni_v, weights).data)
    return np.array([acc.item(), flops_v, uni_v, total_v]), baseline


def _route_train(model, video, mode, table, estimator):
    return run_video(video, model, mode, table=table, estimator=estimator)


def _fixed_routing(model, method, stage, rng):
    """Action source for stages where the policy is not being learned."""
    if method == "uniform":
        return "uniform"
    if method == "lstm":
        return "lstm"
    if stage == "warmup":
        levels = model.num_levels
        return lambda t: int(rng.integers(levels))
    return "policy"


def split_digest(videos) -> str:
    """SHA-256 over labels, informative frames and pixels of a split."""
    h = hashlib.sha256()
    for v in videos:
        h.update(repr((v.label, tuple(v.informative))).encode("utf-8"))
        h.update(np.ascontiguousarray(v.frames, dtype="<f8").tobytes())
    return h.hexdigest()


def _dataset_fingerprint(dataset) -> dict:
    spec = dataset.spec
    out = {"spec": spec.to_dict()}
    for name in ("train", "val", "test"):
        videos = getattr(dataset, name)
        out[name] = len(videos)
        out[f"{name}_sha256"] = split_digest(videos)
    return out


# -- log output -------------------------------------------------------------------


def format_row(row: dict) -> str:
    return " ".join(f"{k}={_fmt(row[k])}" for k in LOG_COLUMNS)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def log_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[k]) for k in LOG_COLUMNS])
    return buf.getvalue()
