"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: bad inputs exit 1, unrealizable
specifications and failed verifications exit 2, I/O problems exit 3.
"""

from __future__ import annotations


class ShieldsynthError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ShieldsynthError):
    """Invalid inputs: mismatched alphabets, malformed configs, bad flags.

    ``problems`` collects every offending field so a config with three
    mistakes reports all three at once.
    """

    def __init__(self, message: str, problems: list[str] | None = None):
        super().__init__(message)
        self.problems = list(problems or [])

    def __str__(self) -> str:  # pragma: no cover - trivial
        base = super().__str__()
        if self.problems:
            return base + "\n  - " + "\n  - ".join(self.problems)
        return base


class FormatError(ShieldsynthError):
    """Malformed or non-total serialized artifact (automaton, shield, map)."""


class UnrealizableError(ShieldsynthError):
    """No winning strategy exists from the initial game state.

    Carries a diagnostic environment strategy: a finite label/action trace
    the environment can force into a violation no matter what the system
    plays.
    """

    def __init__(self, message: str, trace: list[tuple[str, str]] | None = None):
        super().__init__(message)
        self.trace = list(trace or [])

    def __str__(self) -> str:
        base = super().__str__()
        if self.trace:
            steps = " ; ".join(f"env:{l} sys:{a}" for l, a in self.trace)
            return f"{base}\n  forcing trace: {steps}"
        return base


class ContractError(ShieldsynthError):
    """A runtime caller broke an API contract (e.g. executed an action
    outside the shield's menu)."""
