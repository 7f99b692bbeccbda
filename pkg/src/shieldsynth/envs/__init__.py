"""Bundled benchmark environments and their safety contracts.

Each bundle ties together three things that must share one (label, action)
alphabet: the concrete MDP, the safety specification, and the abstraction
the shield is synthesized against.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..automata import SafetyAutomaton, build_bounded_stay, conjoin
from ..errors import ValidationError
from .base import Environment, StepOutcome, sample_from_enumeration
from .grid import (
    GridMap,
    GridState,
    GridWorld,
    grid_abstraction,
    grid_actions,
    grid_collision_spec,
    grid_labels,
    load_bundled_map,
    parse_cycle,
    parse_map,
)
from .watertank import (
    CLOSE,
    OPEN,
    TankState,
    WaterTank,
    watertank_abstraction,
    watertank_actions,
    watertank_labels,
    watertank_spec,
)

__all__ = [
    "Environment",
    "StepOutcome",
    "sample_from_enumeration",
    "EnvBundle",
    "bundle",
    "bundle_from_grid",
    "BUNDLED_ENVIRONMENTS",
    "GridMap",
    "GridState",
    "GridWorld",
    "grid_abstraction",
    "grid_actions",
    "grid_collision_spec",
    "grid_labels",
    "load_bundled_map",
    "parse_cycle",
    "parse_map",
    "CLOSE",
    "OPEN",
    "TankState",
    "WaterTank",
    "watertank_abstraction",
    "watertank_actions",
    "watertank_labels",
    "watertank_spec",
]


@dataclass(frozen=True)
class EnvBundle:
    name: str
    env: Environment
    spec: SafetyAutomaton
    abstraction: SafetyAutomaton
    horizon: int


def _bomb_label_names() -> set[str]:
    labels = grid_labels()
    return {name for name in labels.names if "B" in name}


def bundle_from_grid(
    name: str, grid: GridMap, max_bomb_stay: int = 2, horizon: int = 200
) -> EnvBundle:
    """Bundle for an arbitrary parsed map.

    The specification always forbids collisions; when the map has bombs it
    additionally bounds consecutive bomb occupancy by ``max_bomb_stay``.
    """
    env = GridWorld(grid, max_bomb_stay=max_bomb_stay)
    spec = grid_collision_spec()
    if grid.bombs:
        stay = build_bounded_stay(
            grid_labels(), grid_actions(), _bomb_label_names(), max_bomb_stay
        )
        spec = conjoin(spec, stay)
    return EnvBundle(name, env, spec, grid_abstraction(grid), horizon)


def bundle(name: str, energy_path: str | None = None) -> EnvBundle:
    """One of the shipped benchmarks: ``watertank``, ``grid9x9``, ``grid15x9``."""
    if name == "watertank":
        env = WaterTank(energy_path=energy_path)
        return EnvBundle(
            name,
            env,
            watertank_spec(env.hold_steps),
            watertank_abstraction(env.initial_level, CLOSE),
            horizon=60,
        )
    if name in ("grid9x9", "grid15x9"):
        return bundle_from_grid(name, load_bundled_map(name))
    raise ValidationError(
        f"unknown environment {name!r}; expected watertank, grid9x9, or grid15x9"
    )


BUNDLED_ENVIRONMENTS = ("watertank", "grid9x9", "grid15x9")
