"""Two-player safety games and their solver.

A safety game is played in rounds on a finite arena: the environment first
announces a label (resolving whatever randomness the previous action had),
then the system picks an action; the joint pair drives a deterministic
transition.  The system wins by keeping the play inside the safe states
forever.

``build_safety_game`` composes a specification automaton with an MDP
abstraction sharing the same (label, action) alphabet.  Product states whose
specification component is unsafe are merged into a single absorbing *fail*
state; pairs whose abstraction component is unsafe — announcements the
abstraction deems impossible — are merged into a single absorbing *paradise*
state, which is safe: an environment that steps outside its own model loses
all power over the system, so such plays count for the system.  When a pair
is rejected by both components paradise wins, which is sound because against
honest announcements the abstraction never rejects.

``solve`` computes the greatest set W of safe states such that for every
state in W and every label some action stays in W (the classic safety
fixpoint), using a counter-based worklist over reverse edges.
``solve_reference`` is a deliberately naive full-sweep implementation of the
same fixpoint kept as a correctness oracle.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass
from typing import Iterable

from .automata import Alphabet, Delta, SafetyAutomaton
from .errors import UnrealizableError, ValidationError

__all__ = [
    "SafetyGame",
    "GameBuildReport",
    "WinningRegion",
    "build_safety_game",
    "solve",
    "solve_reference",
    "forcing_trace",
    "require_realizable",
    "to_dot",
]


@dataclass(frozen=True)
class GameBuildReport:
    """Size accounting for a product game.

    ``states_product_convention`` is the headline count: specification safe
    states times abstraction state classes, plus the fail and paradise
    sinks.  Class counting quotients out bookkeeping registers the
    abstraction may carry (and deliberately includes class pairs that are
    unreachable in the merged arena), which keeps the number comparable
    across abstraction encodings.  ``states_reachable`` counts the states
    the merged arena actually has; ``states_premerge`` counts the distinct
    raw (spec, abstraction) pairs touched before merging.
    """

    states_reachable: int
    states_premerge: int
    states_product_convention: int
    spec_safe_states: int
    abstraction_safe_classes: int
    fail_reachable: bool
    paradise_reachable: bool
    build_seconds: float


@dataclass(frozen=True)
class SafetyGame:
    """A finite safety game arena with a total transition table.

    ``delta[state][label][action]`` is the successor.  ``safe`` must be
    absorbing-complement: successors of unsafe states are unsafe.  Product
    games built by :func:`build_safety_game` carry their provenance in
    ``state_tags`` and a :class:`GameBuildReport`; hand-built or generated
    arenas may leave ``fail_state``/``paradise_state``/``report`` unset.
    """

    labels: Alphabet
    actions: Alphabet
    state_tags: tuple[str, ...]
    initial: int
    safe: frozenset[int]
    delta: Delta
    fail_state: int | None = None
    paradise_state: int | None = None
    report: GameBuildReport | None = None

    def __post_init__(self) -> None:
        n = len(self.state_tags)
        if not (0 <= self.initial < n):
            raise ValidationError(f"initial state {self.initial} out of range")
        if len(self.delta) != n:
            raise ValidationError("transition table row count != state count")
        n_l, n_a = len(self.labels), len(self.actions)
        for g, row in enumerate(self.delta):
            if len(row) != n_l or any(len(by_a) != n_a for by_a in row):
                raise ValidationError(f"state {g}: transition table not total")
            for by_a in row:
                for t in by_a:
                    if not (0 <= t < n):
                        raise ValidationError(f"state {g}: successor {t} out of range")
        for g in range(n):
            if g in self.safe:
                continue
            for row in self.delta[g]:
                for t in row:
                    if t in self.safe:
                        raise ValidationError(
                            f"unsafe state {g} reaches safe state {t}; "
                            "unsafe states must be absorbing"
                        )

    @property
    def n_states(self) -> int:
        return len(self.state_tags)


def build_safety_game(
    spec: SafetyAutomaton, abstraction: SafetyAutomaton
) -> SafetyGame:
    """Product of a specification and an abstraction over one alphabet.

    Only states reachable from the joint initial pair are materialized.
    The fail sink always exists (it may be unreachable for specifications
    that cannot be violated); the paradise sink exists only when some
    reachable pair actually falls outside the abstraction.
    """
    if spec.labels.names != abstraction.labels.names:
        raise ValidationError("spec and abstraction label alphabets differ")
    if spec.actions.names != abstraction.actions.names:
        raise ValidationError("spec and abstraction action alphabets differ")
    if not spec.is_safe(spec.initial):
        raise ValidationError("specification initial state is unsafe")
    if not abstraction.is_safe(abstraction.initial):
        raise ValidationError("abstraction initial state is unsafe")

    t0 = time.perf_counter()
    n_l, n_a = len(spec.labels), len(spec.actions)
    start = (spec.initial, abstraction.initial)
    index: dict[tuple[int, int], int] = {start: 0}
    tags = [f"{spec.state_tags[start[0]]}|{abstraction.state_tags[start[1]]}"]
    queue: deque[tuple[int, int]] = deque([start])
    order: list[tuple[int, int]] = [start]
    transitions: list[list[list[int]]] = []
    premerge: set[tuple[int, int]] = {start}
    fail_hit = False
    paradise_hit = False

    FAIL, PARADISE = -1, -2

    def intern(qs: int, qm: int) -> int:
        nonlocal fail_hit, paradise_hit
        premerge.add((qs, qm))
        if not abstraction.is_safe(qm):
            paradise_hit = True
            return PARADISE
        if not spec.is_safe(qs):
            fail_hit = True
            return FAIL
        got = index.get((qs, qm))
        if got is None:
            got = len(order)
            index[(qs, qm)] = got
            order.append((qs, qm))
            tags.append(f"{spec.state_tags[qs]}|{abstraction.state_tags[qm]}")
            queue.append((qs, qm))
        return got

    while queue:
        qs, qm = queue.popleft()
        srow = spec.delta[qs]
        mrow = abstraction.delta[qm]
        row = []
        for l in range(n_l):
            s_by_a = srow[l]
            m_by_a = mrow[l]
            row.append([intern(s_by_a[a], m_by_a[a]) for a in range(n_a)])
        transitions.append(row)

    n_pairs = len(order)
    fail_id = n_pairs
    tags.append("fail")
    paradise_id = None
    if paradise_hit:
        paradise_id = n_pairs + 1
        tags.append("paradise")
    for row in transitions:
        for by_a in row:
            for a in range(n_a):
                if by_a[a] == FAIL:
                    by_a[a] = fail_id
                elif by_a[a] == PARADISE:
                    assert paradise_id is not None
                    by_a[a] = paradise_id
    transitions.append([[fail_id] * n_a for _ in range(n_l)])
    if paradise_id is not None:
        transitions.append([[paradise_id] * n_a for _ in range(n_l)])

    safe = set(range(n_pairs))
    if paradise_id is not None:
        safe.add(paradise_id)
    report = GameBuildReport(
        states_reachable=len(tags),
        states_premerge=len(premerge),
        states_product_convention=len(spec.safe) * abstraction.safe_group_count() + 2,
        spec_safe_states=len(spec.safe),
        abstraction_safe_classes=abstraction.safe_group_count(),
        fail_reachable=fail_hit,
        paradise_reachable=paradise_hit,
        build_seconds=time.perf_counter() - t0,
    )
    delta = tuple(tuple(tuple(by_a) for by_a in row) for row in transitions)
    return SafetyGame(
        labels=spec.labels,
        actions=spec.actions,
        state_tags=tuple(tags),
        initial=0,
        safe=frozenset(safe),
        delta=delta,
        fail_state=fail_id,
        paradise_state=paradise_id,
        report=report,
    )


@dataclass(frozen=True)
class WinningRegion:
    """Result of solving a safety game.

    ``member[g]`` says whether the system wins from ``g``.  For losing
    states, ``witness_label[g]`` is a label with which the environment
    defeats every action (``-1`` for states that are unsafe outright) and
    ``force_bound[g]`` bounds the number of rounds within which the
    environment can force the play out of the safe set (0 for unsafe
    states).  Winning states carry ``-1`` in both.
    """

    member: tuple[bool, ...]
    realizable: bool
    witness_label: tuple[int, ...]
    force_bound: tuple[int, ...]
    removals: int
    solve_seconds: float

    def states(self) -> frozenset[int]:
        return frozenset(g for g, m in enumerate(self.member) if m)


def solve(game: SafetyGame) -> WinningRegion:
    """Greatest fixpoint of X ↦ {g ∈ safe ∩ X | ∀label ∃action: δ ∈ X}.

    Counter-based worklist: for every (state, label) we track how many
    actions still lead inside the candidate region; when a counter hits
    zero the environment has a winning label there and the state is
    removed, propagating along reverse edges.  Runs in time linear in the
    number of edges.
    """
    t0 = time.perf_counter()
    n = game.n_states
    n_l, n_a = len(game.labels), len(game.actions)
    alive = [g in game.safe for g in range(n)]
    witness = [-1] * n
    bound = [-1] * n
    # count[g][l]: actions from g under l whose successor has not been
    # removed yet.  Start at n_a and let the unsafe states propagate like
    # any other removal, so every reverse edge decrements exactly once.
    count = [[n_a] * n_l for _ in range(n)]
    rev: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for g in range(n):
        if not alive[g]:
            continue
        row = game.delta[g]
        for l in range(n_l):
            for a in range(n_a):
                rev[row[l][a]].append((g, l))

    queue: deque[int] = deque()
    for g in range(n):
        if not alive[g]:
            bound[g] = 0
            queue.append(g)

    removals = 0
    while queue:
        dead = queue.popleft()
        for g, l in rev[dead]:
            if not alive[g]:
                continue
            count[g][l] -= 1
            if count[g][l] == 0:
                alive[g] = False
                witness[g] = l
                row = game.delta[g][l]
                bound[g] = 1 + max(bound[row[a]] for a in range(n_a))
                removals += 1
                queue.append(g)

    member = tuple(alive)
    return WinningRegion(
        member=member,
        realizable=member[game.initial],
        witness_label=tuple(witness),
        force_bound=tuple(bound),
        removals=removals,
        solve_seconds=time.perf_counter() - t0,
    )


def solve_reference(game: SafetyGame) -> frozenset[int]:
    """Naive full-sweep fixpoint; the oracle the worklist solver is tested
    against."""
    n_l, n_a = len(game.labels), len(game.actions)
    region = set(game.safe)
    changed = True
    while changed:
        changed = False
        for g in sorted(region):
            row = game.delta[g]
            ok = all(
                any(row[l][a] in region for a in range(n_a)) for l in range(n_l)
            )
            if not ok:
                region.discard(g)
                changed = True
    return frozenset(region)


def forcing_trace(
    game: SafetyGame, region: WinningRegion, start: int | None = None
) -> list[tuple[str, str]]:
    """A play showing how the environment forces a violation from a losing
    state.

    At each round the environment announces its witness label; the trace
    follows the system's most delaying reply, so its length is exactly the
    state's force bound.  Empty for states that are already unsafe.
    """
    g = game.initial if start is None else start
    if region.member[g]:
        raise ValidationError(f"state {g} is winning; no forcing trace exists")
    trace: list[tuple[str, str]] = []
    while g in game.safe:
        l = region.witness_label[g]
        row = game.delta[g][l]
        a = max(range(len(game.actions)), key=lambda a: region.force_bound[row[a]])
        trace.append((game.labels.name(l), game.actions.name(a)))
        g = row[a]
    return trace


def require_realizable(game: SafetyGame, region: WinningRegion) -> None:
    """Raise :class:`UnrealizableError` with a forcing trace when the
    initial state is losing."""
    if not region.realizable:
        raise UnrealizableError(
            "specification is unrealizable against this abstraction",
            forcing_trace(game, region),
        )


_DOT_EDGE_SAMPLES = 3


def to_dot(
    game: SafetyGame,
    region: WinningRegion | None = None,
    max_states: int = 1000,
    states: Iterable[int] | None = None,
) -> str:
    """Graphviz rendering of (a subset of) the arena.

    Parallel (label, action) edges between the same pair of states are
    collapsed into one arrow annotated with a few samples.  Refuses arenas
    beyond ``max_states`` — pass an explicit ``states`` subset instead.
    """
    chosen = sorted(set(states)) if states is not None else list(range(game.n_states))
    if len(chosen) > max_states:
        raise ValidationError(
            f"arena has {len(chosen)} states, above the DOT limit of "
            f"{max_states}; pass a subset via states="
        )
    keep = set(chosen)
    out = ["digraph arena {", "  rankdir=LR;"]
    for g in chosen:
        shape = "doublecircle" if g == game.initial else "circle"
        style = []
        if g not in game.safe:
            style.append("fillcolor=\"#f4cccc\" style=filled")
        elif region is not None and not region.member[g]:
            style.append("fillcolor=\"#fff2cc\" style=filled")
        label = game.state_tags[g].replace('"', "'")
        out.append(
            f'  n{g} [shape={shape} label="{label}" {" ".join(style)}];'
        )
    n_l, n_a = len(game.labels), len(game.actions)
    for g in chosen:
        grouped: dict[int, list[str]] = {}
        for l in range(n_l):
            for a in range(n_a):
                t = game.delta[g][l][a]
                if t in keep:
                    grouped.setdefault(t, []).append(
                        f"{game.labels.name(l)}/{game.actions.name(a)}"
                    )
        for t, pairs in grouped.items():
            shown = pairs[:_DOT_EDGE_SAMPLES]
            extra = len(pairs) - len(shown)
            text = ", ".join(shown) + (f", +{extra}" if extra > 0 else "")
            out.append(f'  n{g} -> n{t} [label="{text}"];')
    out.append("}")
    return "\n".join(out)
