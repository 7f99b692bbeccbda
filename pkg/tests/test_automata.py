from __future__ import annotations

import dataclasses
import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import (
    all_pair_traces,
    bounded_stay_ok,
    collision_ok,
    hold_ok,
    invariance_ok,
)
from shieldsynth.automata import (
    Alphabet,
    Role,
    SafetyAutomaton,
    automaton_from_json,
    automaton_to_json,
    build_bounded_stay,
    build_collision,
    build_invariance,
    build_min_hold,
    conjoin,
    load_automaton,
    save_automaton,
    validate_abstraction,
)
from shieldsynth.envs import StepOutcome, watertank_abstraction, watertank_spec
from shieldsynth.errors import FormatError, ValidationError

L3 = Alphabet(("a", "b", "c"))
L2 = Alphabet(("lo", "hi"))
A2 = Alphabet(("x", "y"))
A1 = Alphabet(("x",))


def sample_automata() -> list[SafetyAutomaton]:
    return [
        build_invariance(L3, A2, ["b"]),
        build_invariance(L3, A2, []),
        build_min_hold(L2, A2, "y", 3),
        build_min_hold(L2, A2, "y", 1, initial_mode="x"),
        build_bounded_stay(L3, A1, ["a", "c"], 2),
        build_collision(L2, A2, {"lo": {"x"}, "hi": set()}),
        watertank_spec(),
        watertank_abstraction(),
        conjoin(build_invariance(L2, A2, ["hi"]), build_min_hold(L2, A2, "y", 2)),
    ]


def test_every_builder_output_is_total_and_absorbing():
    for aut in sample_automata():
        n = aut.n_states
        for g in range(n):
            for l in range(len(aut.labels.names)):
                for a in range(len(aut.actions.names)):
                    t = aut.step(g, l, a)
                    assert 0 <= t < n
                    if not aut.is_safe(g):
                        assert not aut.is_safe(t), (
                            f"unsafe state {g} escaped to safe {t}"
                        )


def test_builders_reject_bad_arguments():
    with pytest.raises(ValidationError):
        build_invariance(L3, A2, ["nope"])
    with pytest.raises(ValidationError):
        build_min_hold(L2, A2, "y", 0)
    with pytest.raises(ValidationError):
        build_min_hold(L2, A2, "z", 2)
    with pytest.raises(ValidationError):
        build_bounded_stay(L3, A1, ["d"], 1)
    with pytest.raises(ValidationError):
        # every label must get an entry, even an empty one
        build_collision(L2, A2, {"lo": {"x"}})
    with pytest.raises(ValidationError):
        Alphabet(("x", "x"))
    with pytest.raises(ValidationError):
        Alphabet(())


# ------------------------------------------------- oracle equivalences


def test_invariance_matches_scan_oracle():
    bad = {L3.id("b")}
    aut = build_invariance(L3, A2, ["b"])
    for w in all_pair_traces(3, 2, 4):
        assert aut.accepts(w) == invariance_ok(w, bad), w


def test_invariance_with_empty_bad_set_accepts_everything():
    aut = build_invariance(L3, A2, [])
    assert aut.n_states == 1
    for w in all_pair_traces(3, 2, 3):
        assert aut.accepts(w)


@pytest.mark.parametrize("hold", [1, 2, 3])
@pytest.mark.parametrize("initial_mode", [None, "x", "y"])
def test_min_hold_matches_counter_oracle(hold, initial_mode):
    aut = build_min_hold(L2, A2, "y", hold, initial_mode=initial_mode)
    engaged = None if initial_mode is None else (initial_mode == "y")
    target = A2.id("y")
    for w in all_pair_traces(2, 2, 5):
        assert aut.accepts(w) == hold_ok(w, target, hold, engaged), (
            hold,
            initial_mode,
            w,
        )


def test_bounded_stay_matches_run_length_oracle():
    sticky = {L3.id("a"), L3.id("c")}
    aut = build_bounded_stay(L3, A1, ["a", "c"], 2)
    for w in all_pair_traces(3, 1, 5):
        assert aut.accepts(w) == bounded_stay_ok(w, sticky, 2), w


def test_collision_matches_lookup_oracle():
    blocked = {L2.id("lo"): {A2.id("x")}}
    aut = build_collision(L2, A2, {"lo": {"x"}, "hi": set()})
    for w in all_pair_traces(2, 2, 4):
        assert aut.accepts(w) == collision_ok(w, blocked), w


@settings(max_examples=300, deadline=None)
@given(
    actions=st.lists(st.sampled_from(["x", "y"]), max_size=12),
    hold=st.integers(min_value=1, max_value=4),
    initial_mode=st.sampled_from([None, "x", "y"]),
)
def test_min_hold_matches_oracle_on_generated_sequences(actions, hold, initial_mode):
    aut = build_min_hold(L2, A2, "y", hold, initial_mode=initial_mode)
    engaged = None if initial_mode is None else (initial_mode == "y")
    w = [(0, A2.id(a)) for a in actions]
    assert aut.accepts(w) == hold_ok(w, A2.id("y"), hold, engaged)


def test_min_hold_calibration_three_step_switch():
    """A 3-hold means the switch step plus two more repeats.

    These exact traces pin the counting convention: ``close`` shorthand is
    action x, ``open`` is action y, the rule is on y.
    """
    aut = build_min_hold(L2, A2, "y", 3, initial_mode="x")
    x, y = A2.id("x"), A2.id("y")
    lo = L2.id("lo")

    def acts(*seq):
        return [(lo, a) for a in seq]

    assert aut.accepts(acts(x, x, x))
    assert aut.accepts(acts(y, y, y))              # held exactly long enough
    assert aut.accepts(acts(y, y, y, x))           # release after 3 is fine
    assert aut.accepts(acts(y, y, y, y, x))        # longer is fine too
    assert not aut.accepts(acts(y, x))             # released after 1
    assert not aut.accepts(acts(y, y, x))          # released after 2
    assert not aut.accepts(acts(x, y, y, x))       # re-switch, then too short
    # Fresh start: the first action sets a mode without any obligation.
    fresh = build_min_hold(L2, A2, "y", 3)
    assert fresh.accepts(acts(y, x))
    assert not fresh.accepts(acts(x, y, x))


# ------------------------------------------------------------- products


def test_conjoin_accepts_iff_both_accept_exhaustively():
    a = build_invariance(L2, A2, ["hi"])
    b = build_min_hold(L2, A2, "y", 2)
    both = conjoin(a, b)
    for w in all_pair_traces(2, 2, 5):
        assert both.accepts(w) == (a.accepts(w) and b.accepts(w)), w


def test_conjoin_three_way_matches_pairwise():
    a = build_invariance(L2, A2, ["hi"])
    b = build_min_hold(L2, A2, "y", 2, initial_mode="x")
    c = build_min_hold(L2, A2, "x", 2, initial_mode="x")
    abc = conjoin(a, b, c)
    for w in all_pair_traces(2, 2, 4):
        assert abc.accepts(w) == (a.accepts(w) and b.accepts(w) and c.accepts(w))


def test_conjoin_merges_to_a_single_fail_state():
    a = build_invariance(L2, A2, ["hi"])
    b = build_bounded_stay(L2, A2, ["lo"], 1)
    both = conjoin(a, b)
    unsafe = [g for g in range(both.n_states) if not both.is_safe(g)]
    assert len(unsafe) == 1
    # and the merged fail state self-loops everywhere
    (f,) = unsafe
    for l in range(2):
        for a_ in range(2):
            assert both.step(f, l, a_) == f


def test_conjoin_rejects_mixed_roles_and_alphabets():
    spec = watertank_spec()
    abstraction = watertank_abstraction()
    with pytest.raises(ValidationError):
        conjoin(spec, abstraction)
    with pytest.raises(ValidationError):
        conjoin(build_invariance(L2, A2, []), build_invariance(L3, A2, []))
    with pytest.raises(ValidationError):
        conjoin(build_invariance(L2, A2, []), build_invariance(L2, A1, []))
    with pytest.raises(ValidationError):
        conjoin()


# -------------------------------------------------------- serialization


def test_json_round_trip_is_identity():
    for aut in sample_automata():
        assert automaton_from_json(automaton_to_json(aut)) == aut


def test_save_load_round_trip(tmp_path):
    aut = watertank_spec()
    path = tmp_path / "spec.json"
    save_automaton(aut, path)
    assert load_automaton(path) == aut
    # saved form is plain JSON, inspectable with standard tooling
    doc = json.loads(path.read_text())
    assert doc["format"] == "safety-automaton/1"


def test_loader_rejects_malformed_documents(tmp_path):
    aut = build_invariance(L2, A2, ["hi"])
    base = automaton_to_json(aut)

    def rejects(mutate):
        doc = json.loads(json.dumps(base))
        mutate(doc)
        with pytest.raises(FormatError):
            automaton_from_json(doc)

    rejects(lambda d: d.update(format="safety-automaton/99"))
    rejects(lambda d: d.pop("transitions"))
    rejects(lambda d: d["transitions"].pop())                      # not total
    rejects(lambda d: d["transitions"].append(d["transitions"][0]))  # duplicate
    rejects(lambda d: d["transitions"].append([99, 0, 0, 0]))      # out of range
    rejects(lambda d: d.update(role="referee"))
    # a file that is not even JSON
    path = tmp_path / "bad.json"
    path.write_text("{truncated")
    with pytest.raises(FormatError):
        load_automaton(path)


def test_automata_are_immutable():
    aut = build_invariance(L2, A2, ["hi"])
    with pytest.raises(dataclasses.FrozenInstanceError):
        aut.initial = 1  # type: ignore[misc]


# -------------------------------------------------- abstraction checking


class TwoPhaseMdp:
    """Tiny deterministic MDP: label 'a' then 'b' forever, one action."""

    def __init__(self):
        self.label_alphabet = L3
        self.action_alphabet = A1

    def initial_state(self):
        return 0

    def actions(self, state):
        return (0,)

    def label_of(self, state):
        return L3.id("a") if state == 0 else L3.id("b")

    def is_terminal(self, state):
        return False

    def enumerate_step(self, state, action):
        return [(1.0, StepOutcome(1, 0.0, False))]


def _single_label_abstraction(allowed: str) -> SafetyAutomaton:
    ok_id = L3.id(allowed)
    delta = tuple(
        tuple(tuple(0 if l == ok_id else 1 for _ in range(1)) for l in range(3))
        for _ in range(1)
    ) + ((tuple((1,) for _ in range(3))),)
    return SafetyAutomaton(
        L3, A1, 0, frozenset({0}), delta, ("ok", "fail"), Role.ABSTRACTION
    )


def test_validate_abstraction_reports_offender_with_witness_trace():
    mdp = TwoPhaseMdp()
    abstraction = _single_label_abstraction("a")
    offenders = validate_abstraction(abstraction, mdp)
    assert offenders, "the 'b' phase should be rejected"
    first = offenders[0]
    assert first.label == L3.id("b")
    # the witness ends with the rejected pair and replays to a violation:
    # every proper prefix stays safe, the full trace does not
    assert first.trace[-1] == (first.label, first.action)
    assert abstraction.accepts(first.trace[:-1])
    assert not abstraction.accepts(first.trace)


def test_validate_abstraction_empty_when_everything_is_allowed():
    full = build_invariance(L3, A1, [])
    everything = dataclasses.replace(full, role=Role.ABSTRACTION)
    assert validate_abstraction(everything, TwoPhaseMdp()) == []


def test_run_reports_visited_states():
    aut = build_min_hold(L2, A2, "y", 2, initial_mode="x")
    y = A2.id("y")
    states = aut.run([(0, y), (0, y)])
    assert len(states) == 3
    assert states[0] == aut.initial
    assert all(aut.is_safe(g) for g in states)
