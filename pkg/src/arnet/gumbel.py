"""Gumbel-Max sampling, the Gumbel-Softmax relaxation and straight-through gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import DTYPE, Tensor, log_softmax, softmax

_EPS = np.finfo(DTYPE).eps


def sample_gumbel(rng: np.random.Generator, k: int) -> np.ndarray:
    """Draw ``k`` standard Gumbel variates as ``-log(-log U)``."""
    if k < 1:
        raise ValueError(f"need k >= 1, got {k}")
    u = np.clip(rng.random(k), _EPS, 1.0 - _EPS)
    return gumbel_transform(u)


def gumbel_transform(u):
    return -np.log(-np.log(u))


def gumbel_max(log_probs, noise) -> int:
    """Index of the largest perturbed log-probability; ties go to the lowest index."""
    lp = np.asarray(log_probs.data if isinstance(log_probs, Tensor) else log_probs, dtype=DTYPE)
    if not np.any(np.isfinite(lp)):
        raise ValueError("gumbel_max: every log-probability is -inf")
    return int(np.argmax(lp + np.asarray(noise, dtype=DTYPE)))


def gumbel_softmax(log_probs: Tensor, noise, tau: float) -> Tensor:
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return softmax((log_probs + np.asarray(noise, dtype=DTYPE)) * (1.0 / tau))


@dataclass
class GumbelSample:
    hard_index: int
    hard_onehot: np.ndarray
    soft: Tensor
    tau: float
    log_probs: Tensor | None = None


def sample(log_probs: Tensor, rng: np.random.Generator, tau: float) -> GumbelSample:
    """Hard index and relaxed vector drawn from one shared noise vector."""
    noise = sample_gumbel(rng, log_probs.shape[-1])
    index = gumbel_max(log_probs, noise)
    onehot = np.zeros(log_probs.shape[-1], dtype=DTYPE)
    onehot[index] = 1.0
    return GumbelSample(index, onehot, gumbel_softmax(log_probs, noise, tau), tau, log_probs)


def sample_logits(logits: Tensor, rng: np.random.Generator, tau: float) -> GumbelSample:
    return sample(log_softmax(logits), rng, tau)


def straight_through(s: GumbelSample) -> Tensor:
    """Forward value is the exact one-hot; the backward pass flows through ``s.soft``."""
    return Tensor._make(s.hard_onehot.copy(), (s.soft,), lambda g: (g,))


@dataclass(frozen=True)
class TemperatureSchedule:
    tau0: float = 5.0
    decay: float = -0.045
    floor: float = 0.1

    def __call__(self, epoch: int) -> float:
        return temperature(self, epoch)


def temperature(schedule: TemperatureSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return max(schedule.floor, schedule.tau0 * math.exp(schedule.decay * epoch))
