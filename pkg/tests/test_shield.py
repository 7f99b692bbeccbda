from __future__ import annotations

import dataclasses
import json
import random

import pytest

from shieldsynth.automata import build_invariance
from shieldsynth.envs import CLOSE, OPEN, bundle, watertank_abstraction
from shieldsynth.errors import ContractError, FormatError
from shieldsynth.game import build_safety_game, solve
from shieldsynth.shield import (
    PostposedShield,
    PreemptiveShield,
    extract_postposed,
    extract_preemptive,
    load_shield,
    save_shield,
    verify_shield,
)


def all_menus(shield):
    for g in range(shield.n_states):
        for l in range(len(shield.labels.names)):
            yield g, l, shield.menus[g][l]


def test_menus_are_nonempty_sorted_and_duplicate_free(synthesized):
    for name in ("watertank", "grid9x9", "grid15x9"):
        s = synthesized(name)
        for which in (s.preemptive, s.postposed):
            for g, l, menu in all_menus(which):
                assert menu, f"{name}: empty menu at state {g}, label {l}"
                assert list(menu) == sorted(set(menu))


def test_preemptive_and_postposed_agree_menu_for_menu(synthesized):
    for name in ("watertank", "grid9x9", "grid15x9"):
        s = synthesized(name)
        pre, post = s.preemptive, s.postposed
        assert pre.state_tags == post.state_tags
        assert pre.initial == post.initial
        assert pre.menus == post.menus
        assert pre.succs == post.succs
        for g in range(post.n_states):
            for l in range(len(post.labels.names)):
                assert post.substitutes[g][l] in pre.menus[g][l]


def _tank_state_for(tank, tag_prefix: str):
    hits = [g for g, t in enumerate(tank.preemptive.state_tags) if t.startswith(tag_prefix)]
    assert hits, f"no shield state tagged {tag_prefix}*"
    return hits[0]


def test_postposed_step_passes_safe_first_choice_through(tank):
    post = tank.postposed
    g = post.initial
    label = tank.bundle.env.label_alphabet.id("lvl50")
    menu = post.menu(g, label)
    decision = post.step(g, label, (menu[0],))
    assert decision.output == menu[0]
    assert not decision.overridden
    assert decision.unsafe_prefix == ()
    assert decision.next_state == post.advance(g, label, menu[0])


def test_postposed_step_skips_unsafe_prefix_and_flags_override(tank):
    post = tank.postposed
    labels = tank.bundle.env.label_alphabet
    # A stable-closed state at level 95: opening would risk overflow, so the
    # menu is {close} and a ranking preferring open gets repaired.
    g = post.initial
    label = labels.id("lvl95")
    assert post.menu(g, label) == (CLOSE,)
    decision = post.step(g, label, (OPEN, CLOSE))
    assert decision.output == CLOSE
    assert decision.overridden
    assert decision.unsafe_prefix == (OPEN,)

    # When nothing in the ranking is safe, the frozen substitute fires.
    decision = post.step(g, label, (OPEN,))
    assert decision.output == post.substitutes[g][label]
    assert decision.overridden
    assert decision.unsafe_prefix == (OPEN,)


def test_postposed_step_rejects_malformed_rankings(tank):
    post = tank.postposed
    label = tank.bundle.env.label_alphabet.id("lvl50")
    with pytest.raises(ContractError):
        post.step(post.initial, label, ())
    with pytest.raises(ContractError):
        post.step(post.initial, label, (OPEN, OPEN))


def test_advance_outside_menu_is_a_contract_violation(tank):
    pre = tank.preemptive
    labels = tank.bundle.env.label_alphabet
    g = pre.initial
    label = labels.id("lvl95")
    assert pre.menu(g, label) == (CLOSE,)
    with pytest.raises(ContractError):
        pre.advance(g, label, OPEN)


def test_shields_do_not_distinguish_states_by_accident(synthesized):
    # The tank shield genuinely needs its states; a shield for an
    # unfalsifiable rule collapses to one state and says so.
    tank = synthesized("watertank")
    assert not tank.preemptive.single_state_certifiable()
    abstraction = watertank_abstraction()
    spec = build_invariance(abstraction.labels, abstraction.actions, [])
    game = build_safety_game(spec, abstraction)
    trivial = extract_preemptive(game, solve(game))
    assert trivial.single_state_certifiable()
    full = tuple(range(len(abstraction.actions.names)))
    for g, l, menu in all_menus(trivial):
        assert menu == full


# ------------------------------------------------------------ persistence


def test_save_load_round_trip_both_kinds(tank, tmp_path):
    p1 = tmp_path / "pre.json"
    p2 = tmp_path / "post.json"
    save_shield(tank.preemptive, p1)
    save_shield(tank.postposed, p2)
    pre = load_shield(p1)
    post = load_shield(p2)
    assert isinstance(pre, PreemptiveShield)
    assert isinstance(post, PostposedShield)
    assert pre == tank.preemptive
    assert post == tank.postposed


def test_load_rejects_tampered_documents(tank, tmp_path):
    path = tmp_path / "shield.json"
    save_shield(tank.preemptive, path)
    doc = json.loads(path.read_text())

    def rejects(mutate):
        bad = json.loads(json.dumps(doc))
        mutate(bad)
        path.write_text(json.dumps(bad))
        with pytest.raises(FormatError):
            load_shield(path)

    rejects(lambda d: d.update(format="shield/9"))
    rejects(lambda d: d.pop("menus"))
    rejects(lambda d: d.update(kind="sideways"))
    path.write_text("not json at all")
    with pytest.raises(FormatError):
        load_shield(path)


# ----------------------------------------------------------- verification


def test_exhaustive_verification_is_clean_on_shipped_environments(synthesized):
    s = synthesized("grid9x9")
    for shield in (s.preemptive, s.postposed):
        report = verify_shield(shield, s.bundle.spec, s.bundle.abstraction)
        assert report.ok
        assert not report.sampled
        assert report.over_restrictions == ()
        assert report.counterexamples == ()
        assert report.exclusions_certified == len(report.certificates)
        assert report.exclusions_certified > 0
        # every honest exclusion carries a concrete forcing bound
        assert all(c.force_bound >= 1 for c in report.certificates)


def test_randomized_verification_samples_cleanly(tank):
    report = verify_shield(
        tank.preemptive,
        tank.bundle.spec,
        tank.bundle.abstraction,
        mode="randomized",
        walks=60,
        walk_len=120,
        rng=random.Random(3),
    )
    assert report.ok
    assert report.sampled
    assert report.states_checked > 0


def _tamper(shield, g, l, menu, succ_row):
    menus = list(map(list, shield.menus))
    succs = list(map(list, shield.succs))
    menus[g][l] = menu
    succs[g][l] = succ_row
    return dataclasses.replace(
        shield,
        menus=tuple(tuple(row) for row in menus),
        succs=tuple(tuple(row) for row in succs),
    )


def test_verifier_catches_a_planted_over_restriction(synthesized):
    s = synthesized("grid9x9")
    pre = s.preemptive
    g, l = next(
        (g, l) for g, l, menu in all_menus(pre) if len(menu) >= 2
    )
    menu = pre.menus[g][l]
    tampered = _tamper(pre, g, l, menu[1:], pre.succs[g][l][1:])
    report = verify_shield(tampered, s.bundle.spec, s.bundle.abstraction)
    assert not report.ok
    dropped = pre.actions.name(menu[0])
    assert any(
        dropped in msg and "interference" in msg for msg in report.over_restrictions
    )


def test_verifier_catches_a_planted_counterexample(synthesized):
    s = synthesized("grid9x9")
    pre = s.preemptive
    n_a = len(pre.actions.names)
    g, l, menu = next(
        (g, l, menu) for g, l, menu in all_menus(pre) if len(menu) < n_a
    )
    extra = next(a for a in range(n_a) if a not in menu)
    new_menu = tuple(sorted(menu + (extra,)))
    i = new_menu.index(extra)
    # reuse a neighbour's successor; the dynamics lie, the verifier notices
    succ_row = list(pre.succs[g][l])
    succ_row.insert(i, succ_row[0])
    tampered = _tamper(pre, g, l, new_menu, tuple(succ_row))
    report = verify_shield(tampered, s.bundle.spec, s.bundle.abstraction)
    assert not report.ok
    added = pre.actions.name(extra)
    assert any(added in msg and "admits" in msg for msg in report.counterexamples)


def test_shielded_walks_never_violate_the_specification(synthesized):
    """Conforming-environment correctness, asserted on literal traces."""
    for name in ("watertank", "grid9x9"):
        s = synthesized(name)
        env, spec = s.bundle.env, s.bundle.spec
        rng = random.Random(17)
        for _walk in range(40):
            state = env.initial_state()
            g = s.preemptive.initial
            qs = spec.initial
            for _ in range(80):
                if env.is_terminal(state):
                    break
                label = env.label_of(state)
                menu = s.preemptive.menu(g, label)
                action = rng.choice(menu)
                qs = spec.step(qs, label, action)
                assert spec.is_safe(qs), f"{name}: spec left its safe set"
                g = s.preemptive.advance(g, label, action)
                state = env.sample_step(state, action, rng).state
