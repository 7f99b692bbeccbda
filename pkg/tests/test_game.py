from __future__ import annotations

import random

import pytest

from helpers import make_random_game, make_sink_pool_arena
from shieldsynth.automata import Alphabet, build_invariance
from shieldsynth.envs import watertank_abstraction
from shieldsynth.errors import UnrealizableError, ValidationError
from shieldsynth.game import (
    SafetyGame,
    build_safety_game,
    forcing_trace,
    require_realizable,
    solve,
    solve_reference,
    to_dot,
)


def closure_holds(game: SafetyGame, winning: frozenset[int]) -> bool:
    """For every winning state and every label, some action stays winning."""
    for g in winning:
        for row in game.delta[g]:
            if not any(t in winning for t in row):
                return False
    return True


def maximality_holds(game: SafetyGame, winning: frozenset[int]) -> bool:
    """No safe state outside W has an always-available reply into W."""
    for g in game.safe - winning:
        if all(any(t in winning for t in row) for row in game.delta[g]):
            return False
    return True


def hand_game() -> SafetyGame:
    # s0 can always loop on itself via a0; s1 dies on label l0; s2 is the pit.
    delta = (
        ((0, 2), (0, 1)),   # s0: l0 -> (a0: s0, a1: s2); l1 -> (s0, s1)
        ((2, 2), (1, 1)),   # s1: l0 loses outright
        ((2, 2), (2, 2)),   # s2: pit
    )
    return SafetyGame(
        labels=Alphabet(("l0", "l1")),
        actions=Alphabet(("a0", "a1")),
        state_tags=("s0", "s1", "s2"),
        initial=0,
        safe=frozenset({0, 1}),
        delta=delta,
    )


def test_hand_enumerable_game_solves_to_known_region():
    game = hand_game()
    region = solve(game)
    assert region.states() == {0}
    assert region.realizable
    assert region.member == (True, False, False)
    # s1's defeat: environment announces l0 and every reply falls into the pit
    assert game.labels.name(region.witness_label[1]) == "l0"
    assert region.force_bound[1] == 1
    assert region.force_bound[2] == 0
    assert region.witness_label[0] == -1 and region.force_bound[0] == -1


def test_all_safe_arena_wins_everywhere():
    rng = random.Random(11)
    hits = 0
    for _ in range(12):
        game = make_random_game(rng, max_states=60)
        if game.safe != frozenset(range(game.n_states)):
            continue
        hits += 1
        region = solve(game)
        assert region.states() == game.safe
        assert region.removals == 0
    assert hits >= 2


def test_solver_matches_reference_on_random_games():
    rng = random.Random(23)
    for _ in range(60):
        game = make_random_game(rng, max_states=120)
        region = solve(game)
        reference = solve_reference(game)
        assert region.states() == reference
        assert closure_holds(game, region.states())
        assert maximality_holds(game, region.states())
        assert region.realizable == (game.initial in reference)


def test_solving_is_deterministic():
    rng = random.Random(5)
    game = make_random_game(rng, max_states=150)
    first = solve(game)
    second = solve(game)
    assert first.member == second.member
    assert first.witness_label == second.witness_label
    assert first.force_bound == second.force_bound


def test_weakening_the_spec_never_shrinks_the_region():
    rng = random.Random(42)
    for _ in range(20):
        labels, actions, tags, delta, n_interior = make_sink_pool_arena(
            rng, n_interior=rng.randint(5, 40), n_sinks=6, n_l=2, n_a=2
        )
        n = len(tags)
        pool = list(range(n_interior, n))
        small = set(rng.sample(pool, 2))
        large = small | set(rng.sample(pool, 4))

        def arena(unsafe: set[int]) -> SafetyGame:
            return SafetyGame(
                labels, actions, tags, 0, frozenset(range(n)) - unsafe, delta
            )

        strict = solve(arena(large))
        lax = solve(arena(small))
        assert strict.states() <= lax.states()


def test_unrealizable_game_yields_forcing_trace_of_exact_bound_length():
    # One state, one action, and a label that leads straight to the pit:
    # the environment wins immediately.
    game = SafetyGame(
        labels=Alphabet(("ok", "kill")),
        actions=Alphabet(("a",)),
        state_tags=("s", "pit"),
        initial=0,
        safe=frozenset({0}),
        delta=(((0,), (1,)), ((1,), (1,))),
    )
    region = solve(game)
    assert not region.realizable
    trace = forcing_trace(game, region)
    assert len(trace) == region.force_bound[game.initial] == 1
    assert trace == [("kill", "a")]
    with pytest.raises(UnrealizableError):
        require_realizable(game, region)
    # and for winning starts there is no forcing trace
    winning_game = hand_game()
    winning_region = solve(winning_game)
    with pytest.raises(ValidationError):
        forcing_trace(winning_game, winning_region, start=0)


def test_forcing_trace_replays_into_the_unsafe_set():
    rng = random.Random(77)
    seen_losing = 0
    for _ in range(40):
        game = make_random_game(rng, max_states=80)
        region = solve(game)
        losing_safe = [g for g in game.safe if not region.member[g]]
        if not losing_safe:
            continue
        seen_losing += 1
        g = losing_safe[0]
        trace = forcing_trace(game, region, start=g)
        assert len(trace) == region.force_bound[g]
        for label_name, action_name in trace:
            g = game.delta[g][game.labels.id(label_name)][game.actions.id(action_name)]
        assert g not in game.safe
    assert seen_losing >= 5  # the generator must actually exercise this


def test_product_report_arithmetic(tank):
    report = tank.game.report
    assert report is not None
    assert (
        report.states_product_convention
        == report.spec_safe_states * report.abstraction_safe_classes + 2
    )
    assert report.states_reachable <= report.states_premerge
    assert report.build_seconds >= 0.0


def test_product_against_accept_all_spec_wins_everywhere():
    abstraction = watertank_abstraction()
    spec = build_invariance(abstraction.labels, abstraction.actions, [])
    game = build_safety_game(spec, abstraction)
    region = solve(game)
    # nothing can be violated, so every reachable state is winning
    assert region.states() == frozenset(range(game.n_states)) - {game.fail_state}
    assert not game.report.fail_reachable


def test_product_rejects_mismatched_alphabets():
    abstraction = watertank_abstraction()
    spec = build_invariance(Alphabet(("x",)), abstraction.actions, [])
    with pytest.raises(ValidationError):
        build_safety_game(spec, abstraction)


def test_to_dot_renders_and_refuses_oversized_arenas(tank):
    small = hand_game()
    dot = to_dot(small, solve(small))
    assert dot.startswith("digraph")
    assert "s0" in dot and "s1" in dot
    with pytest.raises(ValidationError):
        to_dot(tank.game, max_states=100)
    # an explicit subset is always allowed
    subset = to_dot(tank.game, states=range(10))
    assert subset.startswith("digraph")
