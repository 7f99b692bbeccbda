"""Runtime shields extracted from solved safety games.

A shield tracks the game state alongside the running system.  Each round it
reads the environment's current label and either hands the agent the menu of
actions that stay inside the winning region (*preemptive* placement, applied
before the agent picks) or repairs the agent's ranked action list after the
fact (*postposed* placement: the first safe entry of the ranking is executed,
falling back to a precomputed substitute when the whole ranking is unsafe).

Announcements the abstraction rules out send the shield to its paradise
state, where every action is allowed: a mismatch between model and world
voids the shield's obligations, and the event is logged so it can be
investigated rather than silently absorbed.

``verify_shield`` re-derives the product and its winning region from the raw
automata with a deliberately naive full-sweep fixpoint — sharing no code
with the game module's solver — and walks the shield in lockstep against it,
certifying both correctness (no admitted action can be forced into a
violation) and minimal interference (every excluded action comes with a
bound on how fast the environment could force a violation through it).
"""

from __future__ import annotations

import json
import logging
import os
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Literal

from .automata import Alphabet, SafetyAutomaton
from .errors import ContractError, FormatError, ValidationError
from .game import SafetyGame, WinningRegion, require_realizable

__all__ = [
    "PreemptiveShield",
    "PostposedShield",
    "PostposedDecision",
    "VerificationReport",
    "extract_preemptive",
    "extract_postposed",
    "verify_shield",
    "save_shield",
    "load_shield",
]

log = logging.getLogger("shieldsynth.shield")

Menus = tuple[tuple[tuple[int, ...], ...], ...]  # [state][label] -> actions
Succs = tuple[tuple[tuple[int, ...], ...], ...]  # [state][label] -> next states


@dataclass(frozen=True)
class _ShieldCore:
    labels: Alphabet
    actions: Alphabet
    state_tags: tuple[str, ...]
    initial: int
    menus: Menus
    succs: Succs  # aligned with menus: succs[g][l][i] follows menus[g][l][i]
    paradise: int | None

    def __post_init__(self) -> None:
        n, n_l, n_a = len(self.state_tags), len(self.labels), len(self.actions)
        if n == 0 or not (0 <= self.initial < n):
            raise ValidationError("shield initial state out of range")
        if len(self.menus) != n or len(self.succs) != n:
            raise ValidationError("shield tables must cover every state")
        for g in range(n):
            if len(self.menus[g]) != n_l or len(self.succs[g]) != n_l:
                raise ValidationError(f"shield state {g}: tables must cover every label")
            for l in range(n_l):
                menu, nxt = self.menus[g][l], self.succs[g][l]
                if not menu:
                    raise ValidationError(
                        f"empty menu at state {self.state_tags[g]!r}, "
                        f"label {self.labels.name(l)!r}"
                    )
                if len(menu) != len(nxt):
                    raise ValidationError(f"state {g}: menu/successor tables misaligned")
                if list(menu) != sorted(set(menu)):
                    raise ValidationError(f"state {g}: menu must be sorted and duplicate-free")
                for a in menu:
                    if not (0 <= a < n_a):
                        raise ValidationError(f"state {g}: menu action {a} out of range")
                for t in nxt:
                    if not (0 <= t < n):
                        raise ValidationError(f"state {g}: successor {t} out of range")

    @property
    def n_states(self) -> int:
        return len(self.state_tags)

    def menu(self, state: int, label: int) -> tuple[int, ...]:
        """Actions guaranteed to keep every future play safe."""
        return self.menus[state][label]

    def advance(self, state: int, label: int, action: int) -> int:
        """Shield state after the system, at ``state``, saw ``label`` and
        executed ``action``.  The action must come from the menu."""
        menu = self.menus[state][label]
        try:
            i = menu.index(action)
        except ValueError:
            raise ContractError(
                f"action {self.actions.name(action)!r} is outside the menu "
                f"{[self.actions.name(a) for a in menu]} at state "
                f"{self.state_tags[state]!r}, label {self.labels.name(label)!r}"
            ) from None
        nxt = self.succs[state][label][i]
        if nxt == self.paradise and state != self.paradise:
            log.warning(
                "shield entered paradise: label %r is impossible per the "
                "abstraction at state %r — model/world mismatch",
                self.labels.name(label),
                self.state_tags[state],
            )
        return nxt

    def single_state_certifiable(self) -> bool:
        """True when every state offers identical menus, i.e. the menu is a
        function of the label alone and the shield state adds nothing an
        observer could use."""
        first = self.menus[0]
        return all(self.menus[g] == first for g in range(1, self.n_states))


@dataclass(frozen=True)
class PreemptiveShield(_ShieldCore):
    """Menu-handing shield: query :meth:`menu` before acting, then
    :meth:`advance` with the executed choice."""


@dataclass(frozen=True)
class PostposedDecision:
    """Outcome of one postposed-shield round."""

    output: int
    overridden: bool
    next_state: int
    unsafe_prefix: tuple[int, ...]


@dataclass(frozen=True)
class PostposedShield(_ShieldCore):
    """Ranking-repairing shield with a frozen substitute table.

    ``substitutes[g][l]`` is executed when the agent's entire ranking is
    unsafe; it is fixed at synthesis time and serialized with the shield.
    """

    substitutes: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self) -> None:
        super().__post_init__()
        n, n_l = self.n_states, len(self.labels)
        if len(self.substitutes) != n or any(
            len(row) != n_l for row in self.substitutes
        ):
            raise ValidationError("substitute table must cover every state and label")
        for g in range(n):
            for l in range(n_l):
                if self.substitutes[g][l] not in self.menus[g][l]:
                    raise ValidationError(
                        f"substitute at state {g}, label {l} is not in the menu"
                    )

    def step(self, state: int, label: int, ranking: tuple[int, ...]) -> PostposedDecision:
        """Execute the first safe entry of ``ranking`` (or the substitute).

        ``overridden`` is True whenever the executed action differs from the
        agent's top choice.  ``unsafe_prefix`` lists the ranked actions that
        were rejected, in ranking order — learners feed punishment updates
        from it.
        """
        if not ranking:
            raise ContractError("postposed shield needs a non-empty ranking")
        n_a = len(self.actions)
        for a in ranking:
            if not (0 <= a < n_a):
                raise ContractError(f"ranking contains unknown action id {a}")
        menu = set(self.menus[state][label])
        for i, a in enumerate(ranking):
            if a in menu:
                return PostposedDecision(
                    output=a,
                    overridden=a != ranking[0],
                    next_state=self.advance(state, label, a),
                    unsafe_prefix=tuple(ranking[:i]),
                )
        sub = self.substitutes[state][label]
        return PostposedDecision(
            output=sub,
            overridden=True,
            next_state=self.advance(state, label, sub),
            unsafe_prefix=tuple(ranking),
        )


FallbackPolicy = Literal["lowest-index"] | Callable[[int, int, tuple[int, ...]], int]


def _winning_tables(
    game: SafetyGame, region: WinningRegion
) -> tuple[list[int], dict[int, int], list[list[tuple[int, ...]]], list[list[tuple[int, ...]]]]:
    """Reachable-through-menus slice of the winning region, reindexed."""
    require_realizable(game, region)
    n_l, n_a = len(game.labels), len(game.actions)
    keep: list[int] = [game.initial]
    remap: dict[int, int] = {game.initial: 0}
    queue: deque[int] = deque(keep)
    menus: list[list[tuple[int, ...]]] = []
    succs_raw: list[list[tuple[int, ...]]] = []
    while queue:
        g = queue.popleft()
        row = game.delta[g]
        menu_row: list[tuple[int, ...]] = []
        succ_row: list[tuple[int, ...]] = []
        for l in range(n_l):
            menu = tuple(a for a in range(n_a) if region.member[row[l][a]])
            if not menu:
                # solve() guarantees closure on winning states; reaching this
                # means the region and arena disagree.
                raise ValidationError(
                    f"winning state {game.state_tags[g]!r} has an empty menu "
                    f"for label {game.labels.name(l)!r}"
                )
            for a in menu:
                t = row[l][a]
                if t not in remap:
                    remap[t] = len(keep)
                    keep.append(t)
                    queue.append(t)
            menu_row.append(menu)
            succ_row.append(tuple(row[l][a] for a in menu))
        menus.append(menu_row)
        succs_raw.append(succ_row)
    return keep, remap, menus, succs_raw


def extract_preemptive(game: SafetyGame, region: WinningRegion) -> PreemptiveShield:
    """Shield handing out full menus, defined on every state reachable while
    respecting them."""
    keep, remap, menus, succs_raw = _winning_tables(game, region)
    succs = tuple(
        tuple(tuple(remap[t] for t in row) for row in succ_row)
        for succ_row in succs_raw
    )
    paradise = (
        remap.get(game.paradise_state) if game.paradise_state is not None else None
    )
    return PreemptiveShield(
        labels=game.labels,
        actions=game.actions,
        state_tags=tuple(game.state_tags[g] for g in keep),
        initial=0,
        menus=tuple(tuple(row) for row in menus),
        succs=succs,
        paradise=paradise,
    )


def extract_postposed(
    game: SafetyGame,
    region: WinningRegion,
    fallback: FallbackPolicy = "lowest-index",
) -> PostposedShield:
    """Shield repairing rankings; the substitute per (state, label) is frozen
    here, either the lowest-index safe action or whatever ``fallback``
    returns (it must pick from the menu)."""
    keep, remap, menus, succs_raw = _winning_tables(game, region)
    succs = tuple(
        tuple(tuple(remap[t] for t in row) for row in succ_row)
        for succ_row in succs_raw
    )
    subs: list[tuple[int, ...]] = []
    for g, menu_row in enumerate(menus):
        row: list[int] = []
        for l, menu in enumerate(menu_row):
            if fallback == "lowest-index":
                row.append(menu[0])
            else:
                choice = fallback(g, l, menu)
                if choice not in menu:
                    raise ValidationError(
                        f"fallback policy returned {choice} outside the menu "
                        f"at state {g}, label {l}"
                    )
                row.append(choice)
        subs.append(tuple(row))
    paradise = (
        remap.get(game.paradise_state) if game.paradise_state is not None else None
    )
    return PostposedShield(
        labels=game.labels,
        actions=game.actions,
        state_tags=tuple(game.state_tags[g] for g in keep),
        initial=0,
        menus=tuple(tuple(row) for row in menus),
        succs=succs,
        paradise=paradise,
        substitutes=tuple(subs),
    )


@dataclass(frozen=True)
class ExcludedAction:
    """An excluded action together with its justification: the environment
    could force a violation within ``force_bound`` rounds if it were taken."""

    state_tag: str
    label: str
    action: str
    force_bound: int


@dataclass(frozen=True)
class VerificationReport:
    mode: str
    states_checked: int
    menus_checked: int
    exclusions_certified: int
    over_restrictions: tuple[str, ...] = ()
    counterexamples: tuple[str, ...] = ()
    sampled: bool = False
    certificates: tuple[ExcludedAction, ...] = field(default=(), repr=False)

    @property
    def ok(self) -> bool:
        return not self.over_restrictions and not self.counterexamples


_FAIL = ("fail",)
_PARADISE = ("paradise",)


def _reference_region(
    spec: SafetyAutomaton, abstraction: SafetyAutomaton
) -> tuple[dict[tuple, dict[tuple[int, int], tuple]], dict[tuple, int]]:
    """Product graph and losing ranks, recomputed the slow way.

    Nodes are raw (spec state, abstraction state) tuples plus the two sink
    markers.  Returns the successor map and, for every node *not* in the
    winning region, the sweep index at which it was peeled (a bound on the
    rounds the environment needs to force a violation from it); winning
    nodes are absent from the rank map.
    """
    n_l, n_a = len(spec.labels), len(spec.actions)
    succ: dict[tuple, dict[tuple[int, int], tuple]] = {}
    start = (spec.initial, abstraction.initial)
    seen = {start}
    frontier = [start]
    succ[_FAIL] = {(l, a): _FAIL for l in range(n_l) for a in range(n_a)}
    succ[_PARADISE] = {(l, a): _PARADISE for l in range(n_l) for a in range(n_a)}
    while frontier:
        node = frontier.pop()
        qs, qm = node
        table: dict[tuple[int, int], tuple] = {}
        for l in range(n_l):
            for a in range(n_a):
                qm2 = abstraction.step(qm, l, a)
                qs2 = spec.step(qs, l, a)
                if not abstraction.is_safe(qm2):
                    table[(l, a)] = _PARADISE
                elif not spec.is_safe(qs2):
                    table[(l, a)] = _FAIL
                else:
                    nxt = (qs2, qm2)
                    table[(l, a)] = nxt
                    if nxt not in seen:
                        seen.add(nxt)
                        frontier.append(nxt)
        succ[node] = table

    winning = {node for node in succ if node != _FAIL}
    rank: dict[tuple, int] = {_FAIL: 0}
    sweep = 0
    changed = True
    while changed:
        changed = False
        sweep += 1
        for node in sorted(winning, key=repr):
            table = succ[node]
            for l in range(n_l):
                if not any(table[(l, a)] in winning for a in range(n_a)):
                    winning.discard(node)
                    rank[node] = sweep
                    changed = True
                    break
    return succ, rank


def verify_shield(
    shield: _ShieldCore,
    spec: SafetyAutomaton,
    abstraction: SafetyAutomaton,
    mode: str = "exhaustive",
    max_product_states: int = 10_000,
    walks: int = 500,
    walk_len: int = 300,
    rng: random.Random | None = None,
) -> VerificationReport:
    """Check a shield against the raw automata it was synthesized from.

    Exhaustive mode recomputes the winning region independently and demands
    menu-for-menu agreement at every reachable (shield state, product node,
    label): an admitted action the reference calls losing is a
    counterexample, a rejected action the reference calls winning is an
    over-restriction, and every honest rejection is certified with the
    reference's forcing bound.  Randomized mode plays ``walks`` random
    menu-respecting episodes and asserts the specification component never
    leaves its safe set; it samples, so its report is marked partial.
    """
    if spec.labels.names != shield.labels.names or (
        spec.actions.names != shield.actions.names
    ):
        raise ValidationError("shield and spec alphabets differ")
    if mode == "exhaustive":
        return _verify_exhaustive(shield, spec, abstraction, max_product_states)
    if mode == "randomized":
        return _verify_randomized(
            shield, spec, abstraction, walks, walk_len, rng or random.Random(0)
        )
    raise ValidationError(f"unknown verification mode {mode!r}")


def _verify_exhaustive(
    shield: _ShieldCore,
    spec: SafetyAutomaton,
    abstraction: SafetyAutomaton,
    max_product_states: int,
) -> VerificationReport:
    succ, rank = _reference_region(spec, abstraction)
    if len(succ) > max_product_states:
        raise ValidationError(
            f"product has {len(succ)} states, above the exhaustive limit "
            f"{max_product_states}"
        )
    n_l, n_a = len(spec.labels), len(spec.actions)
    over: list[str] = []
    bad: list[str] = []
    certs: list[ExcludedAction] = []
    start = (shield.initial, (spec.initial, abstraction.initial))
    if (spec.initial, abstraction.initial) in rank:
        bad.append(
            "initial product state is losing for the system; "
            "no shield should exist here"
        )
    seen = {start}
    queue: deque[tuple[int, tuple]] = deque([start])
    menus_checked = 0
    while queue:
        sh, node = queue.popleft()
        table = succ[node]
        for l in range(n_l):
            menu = set(shield.menus[sh][l])
            menus_checked += 1
            for a in range(n_a):
                target = table[(l, a)]
                ref_safe = target not in rank
                if a in menu:
                    if not ref_safe:
                        bad.append(
                            f"state {shield.state_tags[sh]!r} admits "
                            f"{shield.actions.name(a)!r} under "
                            f"{shield.labels.name(l)!r}, but the environment "
                            f"can then force a violation within "
                            f"{rank[target]} round(s)"
                        )
                else:
                    if ref_safe:
                        over.append(
                            f"state {shield.state_tags[sh]!r} rejects "
                            f"{shield.actions.name(a)!r} under "
                            f"{shield.labels.name(l)!r} although it is "
                            f"winning — needless interference"
                        )
                    else:
                        certs.append(
                            ExcludedAction(
                                shield.state_tags[sh],
                                shield.labels.name(l),
                                shield.actions.name(a),
                                rank[target],
                            )
                        )
            for i, a in enumerate(shield.menus[sh][l]):
                target = table[(l, a)]
                if target in (_FAIL,):
                    continue  # already reported above
                nxt = (shield.succs[sh][l][i], target)
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
    return VerificationReport(
        mode="exhaustive",
        states_checked=len(seen),
        menus_checked=menus_checked,
        exclusions_certified=len(certs),
        over_restrictions=tuple(over),
        counterexamples=tuple(bad),
        sampled=False,
        certificates=tuple(certs),
    )


def _verify_randomized(
    shield: _ShieldCore,
    spec: SafetyAutomaton,
    abstraction: SafetyAutomaton,
    walks: int,
    walk_len: int,
    rng: random.Random,
) -> VerificationReport:
    n_l = len(spec.labels)
    bad: list[str] = []
    states_seen: set[tuple[int, int, int]] = set()
    menus_checked = 0
    for _ in range(walks):
        sh, qs, qm = shield.initial, spec.initial, abstraction.initial
        for _step in range(walk_len):
            states_seen.add((sh, qs, qm))
            honest = [
                l
                for l in range(n_l)
                if any(
                    abstraction.is_safe(abstraction.step(qm, l, a))
                    for a in shield.menus[sh][l]
                )
            ]
            if not honest:
                break
            l = rng.choice(honest)
            menu = shield.menus[sh][l]
            menus_checked += 1
            a = rng.choice(menu)
            qs = spec.step(qs, l, a)
            qm = abstraction.step(qm, l, a)
            sh = shield.advance(sh, l, a)
            if not spec.is_safe(qs):
                bad.append(
                    f"randomized walk violated the specification via label "
                    f"{spec.labels.name(l)!r}, action {spec.actions.name(a)!r}"
                )
                break
    return VerificationReport(
        mode="randomized",
        states_checked=len(states_seen),
        menus_checked=menus_checked,
        exclusions_certified=0,
        over_restrictions=(),
        counterexamples=tuple(bad),
        sampled=True,
    )


_FORMAT = "shield/1"


def save_shield(shield: _ShieldCore, path: str | os.PathLike[str]) -> None:
    doc = {
        "format": _FORMAT,
        "kind": "postposed" if isinstance(shield, PostposedShield) else "preemptive",
        "labels": list(shield.labels.names),
        "actions": list(shield.actions.names),
        "states": list(shield.state_tags),
        "initial": shield.initial,
        "paradise": shield.paradise,
        "menus": [[list(m) for m in row] for row in shield.menus],
        "succs": [[list(s) for s in row] for row in shield.succs],
    }
    if isinstance(shield, PostposedShield):
        doc["substitutes"] = [list(row) for row in shield.substitutes]
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_shield(path: str | os.PathLike[str]) -> PreemptiveShield | PostposedShield:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: not valid JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != _FORMAT:
        raise FormatError(f"{path}: unsupported shield format {doc.get('format')!r}")
    kind = doc.get("kind")
    try:
        common = dict(
            labels=Alphabet(tuple(doc["labels"])),
            actions=Alphabet(tuple(doc["actions"])),
            state_tags=tuple(str(t) for t in doc["states"]),
            initial=int(doc["initial"]),
            paradise=None if doc["paradise"] is None else int(doc["paradise"]),
            menus=tuple(
                tuple(tuple(int(a) for a in m) for m in row) for row in doc["menus"]
            ),
            succs=tuple(
                tuple(tuple(int(s) for s in row_l) for row_l in row)
                for row in doc["succs"]
            ),
        )
        if kind == "preemptive":
            return PreemptiveShield(**common)
        if kind == "postposed":
            return PostposedShield(
                **common,
                substitutes=tuple(
                    tuple(int(a) for a in row) for row in doc["substitutes"]
                ),
            )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: malformed shield document: {e}") from e
    except ValidationError as e:
        raise FormatError(f"{path}: {e}") from e
    raise FormatError(f"{path}: unknown shield kind {kind!r}")
