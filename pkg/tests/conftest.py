"""Session-wide fixtures.

Synthesis (build product game, solve, extract both shields) is the
expensive step shared by most test files, so it is done once per
environment and cached for the whole session.
"""
from __future__ import annotations

from dataclasses import dataclass

import pytest

from shieldsynth.envs import EnvBundle, bundle
from shieldsynth.game import SafetyGame, WinningRegion, build_safety_game, solve
from shieldsynth.shield import (
    PostposedShield,
    PreemptiveShield,
    extract_postposed,
    extract_preemptive,
)


@dataclass(frozen=True)
class Synthesized:
    bundle: EnvBundle
    game: SafetyGame
    region: WinningRegion
    preemptive: PreemptiveShield
    postposed: PostposedShield


_CACHE: dict[str, Synthesized] = {}


def _synthesize(name: str) -> Synthesized:
    if name not in _CACHE:
        b = bundle(name)
        game = build_safety_game(b.spec, b.abstraction)
        region = solve(game)
        _CACHE[name] = Synthesized(
            b,
            game,
            region,
            extract_preemptive(game, region),
            extract_postposed(game, region),
        )
    return _CACHE[name]


@pytest.fixture(scope="session")
def synthesized():
    """Factory: synthesized("watertank") -> cached Synthesized record."""
    return _synthesize


@pytest.fixture(scope="session")
def tank(synthesized) -> Synthesized:
    return synthesized("watertank")
