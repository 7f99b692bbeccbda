"""Common environment protocol for the bundled finite MDPs.

Environments here are small enough to enumerate, and everything downstream
leans on that: abstraction validation, exact planning baselines, and the
distribution tests all use ``enumerate_step``; training uses ``sample_step``
with an explicit :class:`random.Random` so runs replay bit-for-bit.

Raw environments permit violations — a crash, an overstayed bomb, a dry tank
all simply end the episode with a penalty.  Keeping the MDP permissive is
the point: the shield is what removes the violations, and the unshielded
baseline needs them observable.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Any, Protocol, runtime_checkable

from ..automata import Alphabet

__all__ = ["StepOutcome", "Environment", "sample_from_enumeration"]


@dataclass(frozen=True)
class StepOutcome:
    """One resolved transition: successor, reward, and how it ended.

    ``violation`` names the broken rule (``"crash"``, ``"bomb"``,
    ``"dry"``, ``"overflow"``, ``"hold"``) or is None.  Most violations
    terminate the episode; valve wear (``"hold"``) only costs its penalty
    and lets the run continue.  ``events`` carries reward-relevant
    happenings like ``"target"`` or ``"complete"`` for logs and tests.
    """

    state: Any
    reward: float
    terminated: bool
    violation: str | None = None
    events: tuple[str, ...] = ()


@runtime_checkable
class Environment(Protocol):
    label_alphabet: Alphabet
    action_alphabet: Alphabet
    reward_bounds: tuple[float, float]

    def initial_state(self) -> Any: ...
    def actions(self, state: Any) -> tuple[int, ...]: ...
    def label_of(self, state: Any) -> int: ...
    def is_terminal(self, state: Any) -> bool: ...
    def sample_step(self, state: Any, action: int, rng: random.Random) -> StepOutcome: ...
    def enumerate_step(self, state: Any, action: int) -> list[tuple[float, StepOutcome]]: ...


def sample_from_enumeration(
    outcomes: list[tuple[float, StepOutcome]], rng: random.Random
) -> StepOutcome:
    """Draw one outcome using a single uniform variate.

    Deterministic environments skip the draw entirely so their rng
    consumption is exactly zero, keeping seeded runs comparable across
    shielded and unshielded setups.
    """
    if len(outcomes) == 1:
        return outcomes[0][1]
    u = rng.random()
    acc = 0.0
    for prob, outcome in outcomes:
        acc += prob
        if u < acc:
            return outcome
    return outcomes[-1][1]
