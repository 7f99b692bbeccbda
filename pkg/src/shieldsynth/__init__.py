"""Shield synthesis for safe reinforcement learning on finite abstractions.

Compose a safety specification with an MDP abstraction into a two-player
safety game, solve it, and extract a runtime shield that either hands the
learner menus of safe actions (preemptive) or repairs its ranked choices
(postposed).  Tabular Q/SARSA training loops, bundled benchmarks, exact
planning baselines, and a command line front end round out the toolkit.
"""

from __future__ import annotations

from .automata import (
    Alphabet,
    Role,
    SafetyAutomaton,
    build_bounded_stay,
    build_collision,
    build_invariance,
    build_min_hold,
    conjoin,
    load_automaton,
    save_automaton,
    validate_abstraction,
)
from .errors import (
    ContractError,
    FormatError,
    ShieldsynthError,
    UnrealizableError,
    ValidationError,
)
from .game import SafetyGame, WinningRegion, build_safety_game, solve, to_dot
from .shield import (
    PostposedShield,
    PreemptiveShield,
    VerificationReport,
    extract_postposed,
    extract_preemptive,
    load_shield,
    save_shield,
    verify_shield,
)

__version__ = "0.1.0"

__all__ = [
    "Alphabet",
    "Role",
    "SafetyAutomaton",
    "build_bounded_stay",
    "build_collision",
    "build_invariance",
    "build_min_hold",
    "conjoin",
    "load_automaton",
    "save_automaton",
    "validate_abstraction",
    "ContractError",
    "FormatError",
    "ShieldsynthError",
    "UnrealizableError",
    "ValidationError",
    "SafetyGame",
    "WinningRegion",
    "build_safety_game",
    "solve",
    "to_dot",
    "PostposedShield",
    "PreemptiveShield",
    "VerificationReport",
    "extract_postposed",
    "extract_preemptive",
    "load_shield",
    "save_shield",
    "verify_shield",
    "__version__",
]
