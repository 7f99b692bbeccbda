"""Water tank with a sticky valve.

A 100-liter tank drains into a consumer and refills through a valve that
is supposed to stay in position for a minimum number of steps once
switched.  While the valve is open, inflow is 1 or 2 liters per step
(uniform); outflow is independently 0 or 1 liters.  Closed means no
inflow.  Running dry (level 0) and overflowing (level 100 or more) end the
episode with a penalty.

The valve itself does not enforce its hold time: switching against a
pending hold goes through, costs a fixed wear penalty for that step, and
flags the step as a violation — the episode continues.  Wear protection
as a hard rule is the specification's business, so an unshielded learner
is free to chatter the valve (and pay for it) while a shielded one never
gets the chance.

Rewards follow the negated energy table shipped with the package (see
``data/watertank_energy.csv``): holding the level near 20 pays best, a
second shallower optimum sits near 70 with a narrow sweet spot on top of
a broad approach slope, so a learner has something to seek while the
shield worries about the boundaries.  The wear penalty is small enough
that learning stays well-conditioned but large enough that no policy
profits from breaking holds; the best hold-respecting return and the
unconstrained optimum coincide.

The safety side is assembled from the generic builders: a label invariance
against ``lvl0``/``lvl100+`` conjoined with two minimum-hold automata, which
collapses to the familiar six-state machine (stable-closed, three opening
steps, stable-open, three closing steps).  The abstraction tracks the level
plus the valve position that produced it, one state per (level, mode) pair,
annotated with its level class.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass
from importlib import resources
from typing import Iterable

from ..automata import (
    Alphabet,
    Role,
    SafetyAutomaton,
    build_invariance,
    build_min_hold,
    conjoin,
)
from ..errors import ValidationError
from .base import StepOutcome, sample_from_enumeration

__all__ = [
    "CLOSE",
    "OPEN",
    "TankState",
    "WaterTank",
    "watertank_labels",
    "watertank_actions",
    "watertank_spec",
    "watertank_abstraction",
    "load_energy_table",
]

CLOSE, OPEN = 0, 1
_CAPACITY = 100
_OVERFLOW_LABEL = "lvl100+"


def watertank_labels() -> Alphabet:
    """One label per integer level 0..99 plus a single overflow class."""
    return Alphabet(tuple(f"lvl{v}" for v in range(_CAPACITY)) + (_OVERFLOW_LABEL,))


def watertank_actions() -> Alphabet:
    return Alphabet(("close", "open"))


def load_energy_table(path: str | None = None) -> tuple[float, ...]:
    """Energy by level, 100 entries.  Reward per step is the negation."""
    if path is None:
        ref = resources.files("shieldsynth.envs").joinpath("data/watertank_energy.csv")
        text = ref.read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    rows = list(csv.DictReader(text.splitlines()))
    try:
        by_level = {int(r["level"]): float(r["energy"]) for r in rows}
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(f"energy table: bad row ({e})") from e
    missing = [v for v in range(_CAPACITY) if v not in by_level]
    if missing:
        raise ValidationError(f"energy table: missing levels {missing[:5]}...")
    return tuple(by_level[v] for v in range(_CAPACITY))


@dataclass(frozen=True)
class TankState:
    level: int        # raw liters; >= 100 means overflowed, 0 means dry
    mode: int         # last applied valve action (CLOSE/OPEN)
    hold: int         # remaining steps the current mode is locked


class WaterTank:
    """The tank MDP.  States are (level, valve mode, remaining hold)."""

    def __init__(
        self,
        initial_level: int = 50,
        hold_steps: int = 3,
        violation_penalty: float = -10.0,
        wear_penalty: float = -3.0,
        energy_path: str | None = None,
    ):
        if not (0 < initial_level < _CAPACITY):
            raise ValidationError("initial level must be inside (0, 100)")
        if hold_steps < 1:
            raise ValidationError("hold_steps must be >= 1")
        self.initial_level = initial_level
        self.hold_steps = hold_steps
        self.violation_penalty = violation_penalty
        self.wear_penalty = wear_penalty
        self.energy = load_energy_table(energy_path)
        self.label_alphabet = watertank_labels()
        self.action_alphabet = watertank_actions()
        worst = min(-e for e in self.energy)
        best = max(-e for e in self.energy)
        self.reward_bounds = (min(violation_penalty, wear_penalty, worst), best)

    def initial_state(self) -> TankState:
        return TankState(self.initial_level, CLOSE, 0)

    def actions(self, state: TankState) -> tuple[int, ...]:
        return (CLOSE, OPEN)

    def label_of(self, state: TankState) -> int:
        return min(state.level, _CAPACITY)

    def is_terminal(self, state: TankState) -> bool:
        return state.level <= 0 or state.level >= _CAPACITY

    def enumerate_step(self, state: TankState, action: int) -> list[tuple[float, StepOutcome]]:
        switches = action != state.mode
        hold_broken = switches and state.hold > 0
        if switches:
            new_hold = self.hold_steps - 1
        else:
            new_hold = max(state.hold - 1, 0)
        if action == OPEN:
            deltas = [(0.25, 0), (0.50, 1), (0.25, 2)]  # inflow {1,2} minus outflow {0,1}
        else:
            deltas = [(0.50, -1), (0.50, 0)]
        outcomes: list[tuple[float, StepOutcome]] = []
        for prob, delta in deltas:
            level = state.level + delta
            nxt = TankState(level, action, new_hold)
            if level <= 0:
                outcomes.append(
                    (prob, StepOutcome(nxt, self.violation_penalty, True, "dry"))
                )
            elif level >= _CAPACITY:
                outcomes.append(
                    (prob, StepOutcome(nxt, self.violation_penalty, True, "overflow"))
                )
            elif hold_broken:
                outcomes.append(
                    (prob, StepOutcome(nxt, self.wear_penalty, False, "hold"))
                )
            else:
                outcomes.append(
                    (prob, StepOutcome(nxt, -self.energy[level], False))
                )
        return outcomes

    def sample_step(self, state: TankState, action: int, rng: random.Random) -> StepOutcome:
        return sample_from_enumeration(self.enumerate_step(state, action), rng)


def watertank_spec(hold_steps: int = 3) -> SafetyAutomaton:
    """Never dry, never overflow, respect the valve hold in both directions."""
    labels, actions = watertank_labels(), watertank_actions()
    return conjoin(
        build_invariance(labels, actions, {"lvl0", _OVERFLOW_LABEL}),
        build_min_hold(labels, actions, "open", hold_steps, initial_mode="close"),
        build_min_hold(labels, actions, "close", hold_steps, initial_mode="close"),
    )


def _effect(level: int, mode: int) -> Iterable[int]:
    """Label classes one step of physics can produce from (level, mode)."""
    if mode == OPEN:
        raw = (level, level + 1, level + 2)
    else:
        raw = (max(level - 1, 0), level)
    return {min(v, _CAPACITY) for v in raw}


def watertank_abstraction(
    initial_level: int = 50, initial_mode: int = CLOSE
) -> SafetyAutomaton:
    """Level dynamics as a safety automaton over (label, action) pairs.

    State (v, m) asserts: the current level class is v and the valve has
    been in position m since the previous step.  Reading (l, a) is valid
    exactly when l is a level the physics allows from (v, m); the successor
    re-anchors at l's level with mode a.  Dry and overflow announcements are
    physics like any other — the specification is what rejects them — and
    intern their register at the boundary levels.  States are grouped by
    level class, so class-counting reports see 100 classes regardless of
    the mode register.
    """
    labels, actions = watertank_labels(), watertank_actions()
    n_l, n_a = len(labels), len(actions)

    def sid(level: int, mode: int) -> int:
        return level * 2 + mode

    n_safe = _CAPACITY * 2
    fail = n_safe
    rows: list[list[list[int]]] = []
    for s in range(n_safe):
        level, mode = divmod(s, 2)
        allowed = set(_effect(level, mode))
        row = []
        for l in range(n_l):
            if l in allowed:
                register = min(l, _CAPACITY - 1)
                row.append([sid(register, a) for a in range(n_a)])
            else:
                row.append([fail] * n_a)
        rows.append(row)
    rows.append([[fail] * n_a for _ in range(n_l)])

    tags = tuple(
        f"lvl{level}:{'open' if mode else 'close'}"
        for level in range(_CAPACITY)
        for mode in (CLOSE, OPEN)
    ) + ("fail",)
    groups = tuple(level for level in range(_CAPACITY) for _ in (CLOSE, OPEN)) + (
        _CAPACITY,
    )
    delta = tuple(tuple(tuple(e) for e in row) for row in rows)
    return SafetyAutomaton(
        labels=labels,
        actions=actions,
        initial=sid(initial_level, initial_mode),
        safe=frozenset(range(n_safe)),
        delta=delta,
        state_tags=tags,
        role=Role.ABSTRACTION,
        groups=groups,
    )
