"""Deterministic safety automata over (label, action) pairs.

Every behavioural object in this toolkit — safety specifications and MDP
abstractions alike — is a total, deterministic automaton reading the
synchronized pair stream of a run: at step t it consumes ``(l_t, a_t)``
where ``l_t`` is the label of the state the system currently occupies and
``a_t`` is the action chosen there.  A run is safe as long as it never
leaves the safe set; unsafe states are absorbing, so safety is violation of
nothing more than a reachability condition.

The module ships the four specification builders used by the bundled
environments (label invariance, minimum hold time, bounded stay, collision
avoidance), a synchronous-product conjoiner, an abstraction validator that
exhaustively checks an automaton against an enumerable MDP, and a JSON
serialization with totality checks on load.
"""

from __future__ import annotations

import json
import os
from collections import deque
from collections.abc import Collection, Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

from .errors import FormatError, ValidationError

__all__ = [
    "Alphabet",
    "Role",
    "SafetyAutomaton",
    "AbstractionOffender",
    "build_invariance",
    "build_min_hold",
    "build_bounded_stay",
    "build_collision",
    "conjoin",
    "validate_abstraction",
    "automaton_to_json",
    "automaton_from_json",
    "save_automaton",
    "load_automaton",
]


@dataclass(frozen=True)
class Alphabet:
    """An ordered, immutable set of symbol names.

    Symbols are addressed by dense integer ids (their position); the names
    exist for serialization and error messages.
    """

    names: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        index = {name: i for i, name in enumerate(names)}
        if len(index) != len(names):
            raise ValidationError("alphabet contains duplicate symbol names")
        if not names:
            raise ValidationError("alphabet must contain at least one symbol")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.names)

    def id(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ValidationError(f"unknown symbol {name!r}") from None

    def name(self, symbol_id: int) -> str:
        return self.names[symbol_id]

    def ids(self) -> range:
        return range(len(self.names))


class Role(str, Enum):
    """What an automaton talks about: desired behaviour vs. possible behaviour."""

    SPECIFICATION = "specification"
    ABSTRACTION = "abstraction"


Delta = tuple[tuple[tuple[int, ...], ...], ...]


@dataclass(frozen=True)
class SafetyAutomaton:
    """A total deterministic safety automaton over (label, action) pairs.

    ``delta[state][label][action]`` gives the successor state.  ``safe`` is
    the set of non-violating states; it must be closed under leaving, i.e.
    every successor of an unsafe state is unsafe.  ``groups`` optionally
    assigns each state to an aggregation class (used for reporting product
    sizes in the class-count convention); ``None`` means every state is its
    own class.
    """

    labels: Alphabet
    actions: Alphabet
    initial: int
    safe: frozenset[int]
    delta: Delta
    state_tags: tuple[str, ...]
    role: Role
    groups: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        n = len(self.state_tags)
        if n == 0:
            raise ValidationError("automaton needs at least one state")
        if not (0 <= self.initial < n):
            raise ValidationError(f"initial state {self.initial} out of range")
        if len(self.delta) != n:
            raise ValidationError("transition table row count != state count")
        n_l, n_a = len(self.labels), len(self.actions)
        for s, row in enumerate(self.delta):
            if len(row) != n_l:
                raise ValidationError(f"state {s}: expected {n_l} label rows")
            for by_action in row:
                if len(by_action) != n_a:
                    raise ValidationError(f"state {s}: expected {n_a} action entries")
                for t in by_action:
                    if not (0 <= t < n):
                        raise ValidationError(f"state {s}: successor {t} out of range")
        for s in self.safe:
            if not (0 <= s < n):
                raise ValidationError(f"safe state {s} out of range")
        for s in range(n):
            if s in self.safe:
                continue
            for row in self.delta[s]:
                for t in row:
                    if t in self.safe:
                        raise ValidationError(
                            f"unsafe state {s} has a safe successor {t}; "
                            "unsafe states must be absorbing"
                        )
        if self.groups is not None and len(self.groups) != n:
            raise ValidationError("groups annotation must cover every state")

    @property
    def n_states(self) -> int:
        return len(self.state_tags)

    def is_safe(self, state: int) -> bool:
        return state in self.safe

    def step(self, state: int, label: int, action: int) -> int:
        return self.delta[state][label][action]

    def run(self, pairs: Iterable[tuple[int, int]]) -> list[int]:
        """States visited while reading ``pairs``, starting from (and
        including) the initial state."""
        states = [self.initial]
        for label, action in pairs:
            states.append(self.delta[states[-1]][label][action])
        return states

    def accepts(self, pairs: Iterable[tuple[int, int]]) -> bool:
        """True iff the pair trace never leaves the safe set."""
        state = self.initial
        if state not in self.safe:
            return False
        for label, action in pairs:
            state = self.delta[state][label][action]
            if state not in self.safe:
                return False
        return True

    def safe_group_count(self) -> int:
        """Number of distinct aggregation classes among safe states."""
        if self.groups is None:
            return len(self.safe)
        return len({self.groups[s] for s in self.safe})


def _freeze(table: list[list[list[int]]]) -> Delta:
    return tuple(tuple(tuple(row) for row in state_rows) for state_rows in table)


def _label_ids(labels: Alphabet, names: Collection[str]) -> set[int]:
    return {labels.id(name) for name in names}


def build_invariance(
    labels: Alphabet, actions: Alphabet, bad: Collection[str]
) -> SafetyAutomaton:
    """Specification: no label in ``bad`` is ever observed.

    One safe state plus (if ``bad`` is non-empty) one absorbing fail state.
    """
    bad_ids = _label_ids(labels, bad)
    n_l, n_a = len(labels), len(actions)
    if not bad_ids:
        delta = [[[0] * n_a for _ in range(n_l)]]
        return SafetyAutomaton(
            labels, actions, 0, frozenset({0}), _freeze(delta), ("ok",),
            Role.SPECIFICATION,
        )
    ok, fail = 0, 1
    delta = [
        [[fail if l in bad_ids else ok] * n_a for l in range(n_l)],
        [[fail] * n_a for _ in range(n_l)],
    ]
    return SafetyAutomaton(
        labels, actions, ok, frozenset({ok}), _freeze(delta), ("ok", "fail"),
        Role.SPECIFICATION,
    )


def build_min_hold(
    labels: Alphabet,
    actions: Alphabet,
    action: str,
    hold: int,
    initial_mode: str | None = None,
) -> SafetyAutomaton:
    """Specification: once ``action`` is newly engaged it must be repeated
    for at least ``hold`` consecutive steps (the engaging step counts).

    The very first action of a run engages with no residual obligation, so
    e.g. with ``hold=3`` the trace ``open, close`` is fine but
    ``open, close, open, close`` violates a 3-hold on ``close`` at the last
    step.  ``initial_mode`` pins the mode the system is assumed to start in
    (as if it had already been held long enough); without it a dedicated
    fresh start state is used.
    """
    if hold < 1:
        raise ValidationError("hold must be >= 1")
    a_star = actions.id(action)
    n_l, n_a = len(labels), len(actions)
    # States: out (last action != target), in_r for r in hold-1..0 (r =
    # remaining forced repeats), fail, plus optionally a fresh start state.
    tags = ["out"] + [f"held:{r}" for r in range(hold)] + ["fail"]
    out = 0

    def held(rem: int) -> int:
        return 1 + rem  # held:0 is state 1, held:hold-1 is state hold

    fail = 1 + hold
    rows: list[list[list[int]]] = []
    for s in range(len(tags)):
        rows.append([[0] * n_a for _ in range(n_l)])

    def set_all_labels(src: int, a: int, dst: int) -> None:
        for l in range(n_l):
            rows[src][l][a] = dst

    for a in range(n_a):
        set_all_labels(out, a, held(hold - 1) if a == a_star else out)
        set_all_labels(fail, a, fail)
        for r in range(hold):
            if a == a_star:
                set_all_labels(held(r), a, held(max(r - 1, 0)))
            else:
                set_all_labels(held(r), a, out if r == 0 else fail)

    if initial_mode is None:
        start = len(tags)
        tags.append("start")
        rows.append([[0] * n_a for _ in range(n_l)])
        for a in range(n_a):
            # The first action ever taken sets the mode without obligation.
            set_all_labels(start, a, held(0) if a == a_star else out)
        initial = start
    else:
        initial = held(0) if actions.id(initial_mode) == a_star else out

    safe = frozenset(s for s in range(len(tags)) if s != fail)
    return SafetyAutomaton(
        labels, actions, initial, safe, _freeze(rows), tuple(tags),
        Role.SPECIFICATION,
    )


def build_bounded_stay(
    labels: Alphabet,
    actions: Alphabet,
    sticky: Collection[str],
    max_consecutive: int,
) -> SafetyAutomaton:
    """Specification: labels from ``sticky`` never occur more than
    ``max_consecutive`` times in a row.

    A counter chain ``seen:0 .. seen:max`` plus an absorbing fail state; a
    non-sticky label resets the counter.
    """
    if max_consecutive < 1:
        raise ValidationError("max_consecutive must be >= 1")
    sticky_ids = _label_ids(labels, sticky)
    if not sticky_ids:
        raise ValidationError("bounded_stay needs at least one sticky label")
    n_l, n_a = len(labels), len(actions)
    n = max_consecutive + 2  # seen:0..seen:max, fail
    fail = n - 1
    rows: list[list[list[int]]] = []
    for c in range(max_consecutive + 1):
        row = []
        for l in range(n_l):
            if l in sticky_ids:
                nxt = c + 1 if c < max_consecutive else fail
            else:
                nxt = 0
            row.append([nxt] * n_a)
        rows.append(row)
    rows.append([[fail] * n_a for _ in range(n_l)])
    tags = tuple(f"seen:{c}" for c in range(max_consecutive + 1)) + ("fail",)
    return SafetyAutomaton(
        labels, actions, 0, frozenset(range(n - 1)), _freeze(rows), tags,
        Role.SPECIFICATION,
    )


def build_collision(
    labels: Alphabet,
    actions: Alphabet,
    blocked: Mapping[str, Collection[str]],
) -> SafetyAutomaton:
    """Specification: never take an action the current label marks blocked.

    ``blocked`` must name every label of the alphabet explicitly (an empty
    collection for labels with no blocked actions); a missing entry is a
    construction error rather than a silent "nothing blocked".
    """
    missing = [name for name in labels.names if name not in blocked]
    if missing:
        raise ValidationError(
            f"blocked-action map is missing labels: {', '.join(missing)}"
        )
    blocked_ids: dict[int, set[int]] = {
        labels.id(l): {actions.id(a) for a in acts} for l, acts in blocked.items()
    }
    n_l, n_a = len(labels), len(actions)
    ok, fail = 0, 1
    rows = [
        [
            [fail if a in blocked_ids[l] else ok for a in range(n_a)]
            for l in range(n_l)
        ],
        [[fail] * n_a for _ in range(n_l)],
    ]
    return SafetyAutomaton(
        labels, actions, ok, frozenset({ok}), _freeze(rows), ("ok", "fail"),
        Role.SPECIFICATION,
    )


def conjoin(*automata: SafetyAutomaton) -> SafetyAutomaton:
    """Synchronous product of safety automata sharing one alphabet.

    Only the reachable part is kept, and every state with any unsafe
    component is merged into a single absorbing fail state, so the result
    stays small: the safe states are exactly the reachable tuples of safe
    component states.
    """
    if not automata:
        raise ValidationError("conjoin needs at least one automaton")
    first = automata[0]
    for aut in automata[1:]:
        if aut.labels.names != first.labels.names:
            raise ValidationError("conjoin: label alphabets differ")
        if aut.actions.names != first.actions.names:
            raise ValidationError("conjoin: action alphabets differ")
        if aut.role != first.role:
            raise ValidationError("conjoin: mixed roles")
    if len(automata) == 1:
        return first

    n_l, n_a = len(first.labels), len(first.actions)
    start = tuple(a.initial for a in automata)
    if any(not a.is_safe(s) for a, s in zip(automata, start)):
        raise ValidationError("conjoin: an initial state is already unsafe")

    index: dict[tuple[int, ...], int] = {start: 0}
    tags: list[str] = ["&".join(a.state_tags[s] for a, s in zip(automata, start))]
    rows: list[list[list[int]]] = []
    fail: int | None = None
    queue: deque[tuple[int, ...]] = deque([start])
    order: list[tuple[int, ...]] = [start]

    def intern(joint: tuple[int, ...]) -> int:
        nonlocal fail
        if any(not a.is_safe(s) for a, s in zip(automata, joint)):
            if fail is None:
                fail = -1  # placeholder id, fixed after BFS
            return -1
        got = index.get(joint)
        if got is None:
            got = len(order)
            index[joint] = got
            order.append(joint)
            tags.append("&".join(a.state_tags[s] for a, s in zip(automata, joint)))
            queue.append(joint)
        return got

    transitions: list[list[list[int]]] = []
    while queue:
        joint = queue.popleft()
        row = []
        for l in range(n_l):
            by_a = []
            for a in range(n_a):
                succ = tuple(
                    aut.delta[s][l][a] for aut, s in zip(automata, joint)
                )
                by_a.append(intern(succ))
            row.append(by_a)
        transitions.append(row)

    n_safe = len(order)
    if fail is not None:
        fail_id = n_safe
        tags.append("fail")
        for row in transitions:
            for by_a in row:
                for a in range(n_a):
                    if by_a[a] == -1:
                        by_a[a] = fail_id
        transitions.append([[fail_id] * n_a for _ in range(n_l)])
    return SafetyAutomaton(
        first.labels,
        first.actions,
        0,
        frozenset(range(n_safe)),
        _freeze(transitions),
        tuple(tags),
        first.role,
    )


class _HasState(Protocol):
    @property
    def state(self) -> object: ...


class EnumerableMdp(Protocol):
    """The slice of the environment protocol the validator needs."""

    def initial_state(self) -> object: ...
    def actions(self, state: object) -> tuple[int, ...]: ...
    def enumerate_step(
        self, state: object, action: int
    ) -> list[tuple[float, _HasState]]: ...
    def is_terminal(self, state: object) -> bool: ...
    def label_of(self, state: object) -> int: ...


@dataclass(frozen=True)
class AbstractionOffender:
    """A reachable situation the abstraction wrongly rejects."""

    mdp_state: object
    abs_state: int
    label: int
    action: int
    trace: tuple[tuple[int, int], ...]  # (label, action) pairs from the start


def validate_abstraction(
    abstraction: SafetyAutomaton, mdp: EnumerableMdp
) -> list[AbstractionOffender]:
    """Exhaustively check that ``abstraction`` accepts everything ``mdp``
    can do.

    Walks the synchronous product of the MDP's enumerable dynamics and the
    automaton.  At every reachable (mdp state, automaton state) pair, every
    available action must keep the automaton safe when read together with
    the current label; otherwise the abstraction would reject a physically
    possible trace.  Returns the (finitely many) offending situations, each
    with a witness pair trace from the initial state; an empty list means
    the abstraction is sound.
    """
    offenders: list[AbstractionOffender] = []
    s0 = mdp.initial_state()
    q0 = abstraction.initial
    if not abstraction.is_safe(q0):
        raise ValidationError("abstraction initial state is unsafe")
    seen: set[tuple[object, int]] = {(s0, q0)}
    parent: dict[tuple[object, int], tuple[tuple[object, int], int, int] | None] = {
        (s0, q0): None
    }
    queue: deque[tuple[object, int]] = deque([(s0, q0)])

    def trace_to(node: tuple[object, int]) -> tuple[tuple[int, int], ...]:
        pairs: list[tuple[int, int]] = []
        cur = node
        while parent[cur] is not None:
            prev, label, action = parent[cur]  # type: ignore[misc]
            pairs.append((label, action))
            cur = prev
        pairs.reverse()
        return tuple(pairs)

    checked_final: set[tuple[object, int]] = set()

    def check_final(s_end: object, q_end: int, via: tuple[object, int], pl: int, pa: int) -> None:
        # An episode that ends at s_end still has its last label announced;
        # the abstraction must accept that announcement with any action,
        # otherwise a genuine violation would be misread as a model error.
        if (s_end, q_end) in checked_final:
            return
        checked_final.add((s_end, q_end))
        label_end = mdp.label_of(s_end)
        for action in mdp.actions(s_end):
            if not abstraction.is_safe(abstraction.step(q_end, label_end, action)):
                offenders.append(
                    AbstractionOffender(
                        s_end,
                        q_end,
                        label_end,
                        action,
                        trace_to(via) + ((pl, pa), (label_end, action)),
                    )
                )

    while queue:
        s, q = queue.popleft()
        label = mdp.label_of(s)
        terminal = mdp.is_terminal(s)
        for action in mdp.actions(s):
            q_next = abstraction.step(q, label, action)
            if not abstraction.is_safe(q_next):
                offenders.append(
                    AbstractionOffender(
                        s, q, label, action, trace_to((s, q)) + ((label, action),)
                    )
                )
                continue
            if terminal:
                continue
            for _prob, outcome in mdp.enumerate_step(s, action):
                if outcome.terminated:
                    # The episode produces no further pairs, but its final
                    # state's label is still announced once.
                    check_final(outcome.state, q_next, (s, q), label, action)
                    continue
                node = (outcome.state, q_next)
                if node not in seen:
                    seen.add(node)
                    parent[node] = ((s, q), label, action)
                    queue.append(node)
    return offenders


_FORMAT = "safety-automaton/1"


def automaton_to_json(aut: SafetyAutomaton) -> dict:
    transitions = []
    for s in range(aut.n_states):
        for l in range(len(aut.labels)):
            for a in range(len(aut.actions)):
                transitions.append([s, l, a, aut.delta[s][l][a]])
    doc = {
        "format": _FORMAT,
        "labels": list(aut.labels.names),
        "actions": list(aut.actions.names),
        "states": list(aut.state_tags),
        "initial": aut.initial,
        "safe": sorted(aut.safe),
        "transitions": transitions,
        "role": aut.role.value,
    }
    if aut.groups is not None:
        doc["groups"] = list(aut.groups)
    return doc


def automaton_from_json(doc: Mapping) -> SafetyAutomaton:
    if not isinstance(doc, Mapping):
        raise FormatError("automaton document must be a JSON object")
    if doc.get("format") != _FORMAT:
        raise FormatError(f"unsupported automaton format {doc.get('format')!r}")
    try:
        labels = Alphabet(tuple(doc["labels"]))
        actions = Alphabet(tuple(doc["actions"]))
        tags = tuple(str(t) for t in doc["states"])
        initial = int(doc["initial"])
        safe = frozenset(int(s) for s in doc["safe"])
        role = Role(doc["role"])
        raw = doc["transitions"]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed automaton document: {e}") from e
    n, n_l, n_a = len(tags), len(labels), len(actions)
    table: list[list[list[int | None]]] = [
        [[None] * n_a for _ in range(n_l)] for _ in range(n)
    ]
    for entry in raw:
        try:
            s, l, a, t = (int(x) for x in entry)
        except (TypeError, ValueError) as e:
            raise FormatError(f"bad transition entry {entry!r}") from e
        if not (0 <= s < n and 0 <= l < n_l and 0 <= a < n_a and 0 <= t < n):
            raise FormatError(f"transition {entry!r} out of range")
        if table[s][l][a] is not None:
            raise FormatError(f"duplicate transition for state {s}, label {l}, action {a}")
        table[s][l][a] = t
    for s in range(n):
        for l in range(n_l):
            for a in range(n_a):
                if table[s][l][a] is None:
                    raise FormatError(
                        f"transition table not total: state {s} "
                        f"({tags[s]!r}) missing label {labels.name(l)!r} / "
                        f"action {actions.name(a)!r}"
                    )
    groups = None
    if "groups" in doc:
        groups = tuple(int(g) for g in doc["groups"])
    try:
        return SafetyAutomaton(
            labels, actions, initial, safe, _freeze(table), tags, role, groups
        )
    except ValidationError as e:
        raise FormatError(str(e)) from e


def save_automaton(aut: SafetyAutomaton, path: str | os.PathLike[str]) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(automaton_to_json(aut), fh)
        fh.write("\n")
    os.replace(tmp, path)


def load_automaton(path: str | os.PathLike[str]) -> SafetyAutomaton:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: not valid JSON: {e}") from e
    return automaton_from_json(doc)
