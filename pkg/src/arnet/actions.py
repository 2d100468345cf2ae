"""Per-frame policy actions: pick a resolution level or skip ahead."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

DEFAULT_SKIPS = (1, 2, 4)


@dataclass(frozen=True)
class ChooseResolution:
    level: int

    def __str__(self) -> str:
        return f"res{self.level}"


@dataclass(frozen=True)
class Skip:
    count: int

    def __str__(self) -> str:
        return f"skip{self.count}"


@dataclass(frozen=True)
class AllResolutions:
    """Not a policy action: the Multi-Scale baseline runs every level on a frame."""

    def __str__(self) -> str:
        return "all"


PolicyAction = Union[ChooseResolution, Skip]


def decode_action(index: int, num_levels: int = 4, skips: tuple[int, ...] = DEFAULT_SKIPS) -> PolicyAction:
    """Map a raw action index to its meaning: ``index < L`` is a resolution level."""
    index = int(index)
    if not 0 <= index < num_levels + len(skips):
        raise ValueError(f"action index {index} outside [0, {num_levels + len(skips)})")
    if index < num_levels:
        return ChooseResolution(index)
    return Skip(skips[index - num_levels])


def encode_action(action: PolicyAction, num_levels: int = 4, skips: tuple[int, ...] = DEFAULT_SKIPS) -> int:
    if isinstance(action, ChooseResolution):
        if not 0 <= action.level < num_levels:
            raise ValueError(f"level {action.level} outside [0, {num_levels})")
        return action.level
    try:
        return num_levels + skips.index(action.count)
    except ValueError:
        raise ValueError(f"skip count {action.count} not in {skips}") from None


def action_names(num_levels: int = 4, skips: tuple[int, ...] = DEFAULT_SKIPS) -> list[str]:
    return [str(decode_action(i, num_levels, skips)) for i in range(num_levels + len(skips))]
