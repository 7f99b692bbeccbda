"""Shared test utilities: straight-line oracles and random arenas.

The oracles deliberately avoid the automaton machinery: each one is a
direct scan over a trace, so agreement with the builders is meaningful.
"""
from __future__ import annotations

import itertools
import random
from typing import Iterable, Iterator, Mapping

from shieldsynth.automata import Alphabet, Role, SafetyAutomaton
from shieldsynth.game import SafetyGame

Pair = tuple[int, int]  # (label id, action id)


def all_pair_traces(
    n_labels: int, n_actions: int, max_len: int
) -> Iterator[tuple[Pair, ...]]:
    """Every (label, action) trace of length 0..max_len, shortest first."""
    pairs = [(l, a) for l in range(n_labels) for a in range(n_actions)]
    for k in range(max_len + 1):
        yield from itertools.product(pairs, repeat=k)


# ---------------------------------------------------------------- oracles


def invariance_ok(trace: Iterable[Pair], bad_labels: set[int]) -> bool:
    return all(l not in bad_labels for l, _ in trace)


def hold_ok(
    trace: Iterable[Pair],
    target: int,
    hold: int,
    initially_engaged: bool | None,
) -> bool:
    """Straight-line re-statement of the minimum-hold rule.

    ``initially_engaged=None`` models a fresh start: the first action sets
    the mode without obligation.  Engaging (switching to the target from
    the other mode) forces ``hold`` consecutive target actions, the switch
    step included.
    """
    if initially_engaged is None:
        mode = "start"
        remaining = 0
    else:
        mode = "in" if initially_engaged else "out"
        remaining = 0
    for _label, action in trace:
        took_target = action == target
        if mode == "start":
            mode = "in" if took_target else "out"
            remaining = 0
        elif mode == "out":
            if took_target:
                mode, remaining = "in", hold - 1
        else:
            if took_target:
                remaining = max(remaining - 1, 0)
            elif remaining > 0:
                return False
            else:
                mode = "out"
    return True


def bounded_stay_ok(
    trace: Iterable[Pair], sticky: set[int], max_consecutive: int
) -> bool:
    """Run-length scan: never more than max_consecutive sticky labels in a row."""
    run = 0
    for label, _action in trace:
        run = run + 1 if label in sticky else 0
        if run > max_consecutive:
            return False
    return True


def collision_ok(trace: Iterable[Pair], blocked: Mapping[int, set[int]]) -> bool:
    return all(a not in blocked.get(l, set()) for l, a in trace)


# ---------------------------------------------------------- random arenas


def _alphabet(prefix: str, n: int) -> Alphabet:
    return Alphabet(tuple(f"{prefix}{i}" for i in range(n)))


def make_random_game(rng: random.Random, max_states: int = 200) -> SafetyGame:
    """A random arena with absorbing unsafe states.

    Unsafe states (about a quarter of them, sometimes none) are wired only
    among themselves so absorption holds by construction; safe states go
    anywhere.
    """
    n = rng.randint(2, max_states)
    n_l = rng.randint(1, 4)
    n_a = rng.randint(1, 3)
    n_unsafe = rng.choice([0, 1, max(1, n // 4)])
    unsafe = set(range(n - n_unsafe, n))
    delta = []
    for g in range(n):
        targets = sorted(unsafe) if g in unsafe else range(n)
        delta.append(
            tuple(
                tuple(rng.choice(targets) for _ in range(n_a))
                for _ in range(n_l)
            )
        )
    return SafetyGame(
        labels=_alphabet("l", n_l),
        actions=_alphabet("a", n_a),
        state_tags=tuple(f"s{g}" for g in range(n)),
        initial=rng.randrange(n),
        safe=frozenset(range(n - n_unsafe)),
        delta=tuple(delta),
    )


def make_sink_pool_arena(
    rng: random.Random, n_interior: int, n_sinks: int, n_l: int, n_a: int
) -> tuple[Alphabet, Alphabet, tuple[str, ...], tuple, int]:
    """Arena whose last ``n_sinks`` states are pure self-loopers.

    Any subset of the sink pool can be declared unsafe without breaking
    absorption, which gives nested-unsafe-set game pairs on one arena.
    """
    n = n_interior + n_sinks
    delta = []
    for g in range(n):
        if g >= n_interior:
            row = tuple(tuple(g for _ in range(n_a)) for _ in range(n_l))
        else:
            row = tuple(
                tuple(rng.randrange(n) for _ in range(n_a)) for _ in range(n_l)
            )
        delta.append(row)
    tags = tuple(f"s{g}" for g in range(n))
    return _alphabet("l", n_l), _alphabet("a", n_a), tags, tuple(delta), n_interior


def spec_like(aut: SafetyAutomaton) -> SafetyAutomaton:
    """Copy of an automaton re-stamped with the specification role."""
    import dataclasses

    return dataclasses.replace(aut, role=Role.SPECIFICATION)
