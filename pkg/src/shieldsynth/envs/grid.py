"""Grid worlds with walls, bombs, ordered targets, and a patrolling opponent.

Maps are plain ASCII: ``#`` wall, ``.`` free, ``B`` bomb, digits mark target
regions in visiting order, ``R`` the robot start, ``O`` the opponent anchor.
An optional cycle file (one ``x,y`` per line) gives the opponent's patrol
route, one cell per step, starting at the anchor; the robot and opponent
move simultaneously.

The robot observes five bits: whether each compass neighbour is currently an
obstacle (wall, boundary, or a cell the opponent occupies or is about to
enter) and whether it is standing on a bomb.  Moving into a flagged
direction is a crash; standing on bombs more than a configured number of
consecutive steps sets one off.  Both end the episode with a penalty, as
does completing all targets end it with a bonus.

Two bundled levels ship in ``data/``: a 9x9 static level (bombs, walls,
three targets) and a 15x9 patrol level (central block, opponent circling
it, two targets).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from importlib import resources
from typing import Mapping

from ..automata import Alphabet, Role, SafetyAutomaton, build_collision
from ..errors import FormatError, ValidationError
from .base import StepOutcome

__all__ = [
    "GridMap",
    "GridState",
    "GridWorld",
    "grid_labels",
    "grid_actions",
    "grid_collision_blocked_map",
    "grid_collision_spec",
    "grid_abstraction",
    "parse_map",
    "parse_cycle",
    "load_bundled_map",
]

# Action order fixes lowest-index fallbacks: N, S, E, W.
_MOVES = (("N", (0, -1)), ("S", (0, 1)), ("E", (1, 0)), ("W", (-1, 0)))


def grid_actions() -> Alphabet:
    return Alphabet(tuple(name for name, _ in _MOVES))


def grid_labels() -> Alphabet:
    """32 labels: one per combination of the five observation bits.

    Names spell the bits positionally, uppercase when set: ``nsewb`` is all
    clear, ``NsewB`` means the north neighbour is an obstacle and the robot
    stands on a bomb.
    """
    names = []
    for bits in range(32):
        name = "".join(
            ch.upper() if bits & (1 << i) else ch
            for i, ch in enumerate("nsewb")
        )
        names.append(name)
    return Alphabet(tuple(names))


def _label_id(flags: tuple[bool, bool, bool, bool], on_bomb: bool) -> int:
    bits = 0
    for i, f in enumerate(flags):
        if f:
            bits |= 1 << i
    if on_bomb:
        bits |= 1 << 4
    return bits


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    walls: frozenset[tuple[int, int]]
    bombs: frozenset[tuple[int, int]]
    targets: tuple[frozenset[tuple[int, int]], ...]
    robot_start: tuple[int, int]
    cycle: tuple[tuple[int, int], ...]  # empty when there is no opponent

    def blocked_cell(self, x: int, y: int) -> bool:
        return not (0 <= x < self.width and 0 <= y < self.height) or (
            (x, y) in self.walls
        )

    @property
    def free_cells(self) -> list[tuple[int, int]]:
        return [
            (x, y)
            for y in range(self.height)
            for x in range(self.width)
            if not self.blocked_cell(x, y)
        ]


def parse_map(text: str, cycle: tuple[tuple[int, int], ...] = ()) -> GridMap:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise FormatError("empty map")
    width = len(lines[0])
    if any(len(line) != width for line in lines):
        raise FormatError("map is not rectangular")
    walls: set[tuple[int, int]] = set()
    bombs: set[tuple[int, int]] = set()
    regions: dict[int, set[tuple[int, int]]] = {}
    robot: tuple[int, int] | None = None
    anchor: tuple[int, int] | None = None
    for y, line in enumerate(lines):
        for x, ch in enumerate(line):
            if ch == "#":
                walls.add((x, y))
            elif ch == "B":
                bombs.add((x, y))
            elif ch.isdigit() and ch != "0":
                regions.setdefault(int(ch), set()).add((x, y))
            elif ch == "R":
                if robot is not None:
                    raise FormatError("map has more than one robot start")
                robot = (x, y)
            elif ch == "O":
                if anchor is not None:
                    raise FormatError("map has more than one opponent anchor")
                anchor = (x, y)
            elif ch != ".":
                raise FormatError(f"unknown map character {ch!r} at {(x, y)}")
    if robot is None:
        raise FormatError("map has no robot start (R)")
    if sorted(regions) != list(range(1, len(regions) + 1)):
        raise FormatError("target regions must be numbered 1..n without gaps")
    targets = tuple(frozenset(regions[i]) for i in sorted(regions))
    if anchor is not None and not cycle:
        raise FormatError("map has an opponent anchor but no cycle was given")
    if cycle:
        if anchor is None:
            raise FormatError("cycle given but map has no opponent anchor (O)")
        if cycle[0] != anchor:
            raise FormatError(
                f"cycle must start at the anchor {anchor}, got {cycle[0]}"
            )
        for i, (x, y) in enumerate(cycle):
            if (x, y) in walls or not (0 <= x < width and 0 <= y < len(lines)):
                raise FormatError(f"cycle cell {(x, y)} is not free")
            nx, ny = cycle[(i + 1) % len(cycle)]
            if abs(nx - x) + abs(ny - y) != 1:
                raise FormatError(
                    f"cycle cells {(x, y)} and {(nx, ny)} are not adjacent"
                )
    return GridMap(
        width=width,
        height=len(lines),
        walls=frozenset(walls),
        bombs=frozenset(bombs),
        targets=targets,
        robot_start=robot,
        cycle=tuple(cycle),
    )


def parse_cycle(text: str) -> tuple[tuple[int, int], ...]:
    cells = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            x, y = (int(part) for part in line.split(","))
        except ValueError as e:
            raise FormatError(f"cycle line {lineno}: expected 'x,y', got {line!r}") from e
        cells.append((x, y))
    if not cells:
        raise FormatError("cycle file lists no cells")
    return tuple(cells)


def load_bundled_map(name: str) -> GridMap:
    """Load one of the maps shipped in ``data/`` (``grid9x9``, ``grid15x9``)."""
    pkg = resources.files("shieldsynth.envs")
    map_ref = pkg.joinpath(f"data/{name}.map")
    try:
        text = map_ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ValidationError(f"no bundled map named {name!r}") from None
    cycle_ref = pkg.joinpath(f"data/{name}.cycle")
    cycle: tuple[tuple[int, int], ...] = ()
    try:
        cycle = parse_cycle(cycle_ref.read_text(encoding="utf-8"))
    except FileNotFoundError:
        pass
    return parse_map(text, cycle)


@dataclass(frozen=True)
class GridState:
    x: int
    y: int
    phase: int          # opponent position index in the cycle (0 if none)
    targets_done: int
    bomb_run: int       # consecutive steps spent on bombs, this one included


class GridWorld:
    """Deterministic grid MDP; all randomness comes from the policy."""

    def __init__(
        self,
        grid: GridMap,
        max_bomb_stay: int = 2,
        target_bonus: float = 1.0,
        completion_bonus: float = 10.0,
        violation_penalty: float = -10.0,
        step_reward: float = 0.0,
    ):
        self.grid = grid
        self.max_bomb_stay = max_bomb_stay
        self.target_bonus = target_bonus
        self.completion_bonus = completion_bonus
        self.violation_penalty = violation_penalty
        self.step_reward = step_reward
        self.label_alphabet = grid_labels()
        self.action_alphabet = grid_actions()
        self.reward_bounds = (
            violation_penalty,
            target_bonus + completion_bonus,
        )
        if grid.blocked_cell(*grid.robot_start):
            raise ValidationError("robot start is not a free cell")

    def _opponent_cells(self, phase: int) -> tuple[tuple[int, int] | None, tuple[int, int] | None]:
        cycle = self.grid.cycle
        if not cycle:
            return None, None
        return cycle[phase], cycle[(phase + 1) % len(cycle)]

    def _flags(self, x: int, y: int, phase: int) -> tuple[bool, bool, bool, bool]:
        now, nxt = self._opponent_cells(phase)
        out = []
        for _name, (dx, dy) in _MOVES:
            cell = (x + dx, y + dy)
            out.append(
                self.grid.blocked_cell(*cell) or cell == now or cell == nxt
            )
        return tuple(out)  # type: ignore[return-value]

    def initial_state(self) -> GridState:
        x, y = self.grid.robot_start
        run = 1 if (x, y) in self.grid.bombs else 0
        return GridState(x, y, 0, 0, run)

    def actions(self, state: GridState) -> tuple[int, ...]:
        return tuple(range(len(_MOVES)))

    def label_of(self, state: GridState) -> int:
        return _label_id(
            self._flags(state.x, state.y, state.phase),
            (state.x, state.y) in self.grid.bombs,
        )

    def is_terminal(self, state: GridState) -> bool:
        return state.targets_done >= len(self.grid.targets)

    def enumerate_step(self, state: GridState, action: int) -> list[tuple[float, StepOutcome]]:
        return [(1.0, self._step(state, action))]

    def sample_step(self, state: GridState, action: int, rng: random.Random) -> StepOutcome:
        return self._step(state, action)

    def _step(self, state: GridState, action: int) -> StepOutcome:
        flags = self._flags(state.x, state.y, state.phase)
        phase = (state.phase + 1) % len(self.grid.cycle) if self.grid.cycle else 0
        if flags[action]:
            nxt = GridState(state.x, state.y, phase, state.targets_done, state.bomb_run)
            return StepOutcome(nxt, self.violation_penalty, True, "crash")
        dx, dy = _MOVES[action][1]
        x, y = state.x + dx, state.y + dy
        # The run counter saturates one past the limit: beyond that the
        # episode is over anyway, and a bounded counter keeps the state
        # space finite for enumeration.
        run = min(state.bomb_run + 1, self.max_bomb_stay + 1) if (x, y) in self.grid.bombs else 0
        done = state.targets_done
        reward = self.step_reward
        events: list[str] = []
        if run > self.max_bomb_stay:
            nxt = GridState(x, y, phase, done, run)
            return StepOutcome(nxt, self.violation_penalty, True, "bomb")
        if done < len(self.grid.targets) and (x, y) in self.grid.targets[done]:
            done += 1
            reward += self.target_bonus
            events.append("target")
        terminated = done >= len(self.grid.targets)
        if terminated:
            reward += self.completion_bonus
            events.append("complete")
        nxt = GridState(x, y, phase, done, run)
        return StepOutcome(nxt, reward, terminated, None, tuple(events))


def grid_collision_blocked_map(labels: Alphabet) -> Mapping[str, set[str]]:
    """Blocked actions per label, decoded straight from the label bits."""
    blocked: dict[str, set[str]] = {}
    for bits in range(32):
        name = labels.name(bits)
        blocked[name] = {
            _MOVES[i][0] for i in range(4) if bits & (1 << i)
        }
    return blocked


def grid_collision_spec() -> SafetyAutomaton:
    """Never move into a currently flagged direction."""
    labels, actions = grid_labels(), grid_actions()
    return build_collision(labels, actions, grid_collision_blocked_map(labels))


def grid_abstraction(grid: GridMap) -> SafetyAutomaton:
    """Exact (robot cell, opponent phase) dynamics as a safety automaton.

    Precise and deterministic: each state admits exactly one label (the one
    the world will actually show there), and each action leads to the cell
    it deterministically reaches — crashing moves keep the robot in place,
    which only matters for plays the specification has already rejected.
    """
    labels, actions = grid_labels(), grid_actions()
    cells = grid.free_cells
    phases = max(len(grid.cycle), 1)
    world = GridWorld(grid)  # reuse the flag computation

    index: dict[tuple[tuple[int, int], int], int] = {}
    tags: list[str] = []
    for cell in cells:
        for phase in range(phases):
            index[(cell, phase)] = len(tags)
            tags.append(f"{cell[0]},{cell[1]}@{phase}")
    fail = len(tags)
    tags.append("fail")

    n_l, n_a = len(labels), len(actions)
    rows: list[list[list[int]]] = []
    for cell in cells:
        for phase in range(phases):
            x, y = cell
            flags = world._flags(x, y, phase)
            expected = _label_id(flags, cell in grid.bombs)
            nphase = (phase + 1) % phases
            by_label = [[fail] * n_a for _ in range(n_l)]
            entry = []
            for a in range(n_a):
                if flags[a]:
                    entry.append(index[(cell, nphase)])
                else:
                    dx, dy = _MOVES[a][1]
                    entry.append(index[((x + dx, y + dy), nphase)])
            by_label[expected] = entry
            rows.append(by_label)
    rows.append([[fail] * n_a for _ in range(n_l)])

    if grid.robot_start not in [c for c in cells]:
        raise ValidationError("robot start is not a free cell")
    delta = tuple(tuple(tuple(e) for e in row) for row in rows)
    return SafetyAutomaton(
        labels=labels,
        actions=actions,
        initial=index[(grid.robot_start, 0)],
        safe=frozenset(range(fail)),
        delta=delta,
        state_tags=tuple(tags),
        role=Role.ABSTRACTION,
    )
