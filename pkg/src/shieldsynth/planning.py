"""Exact planning over enumerable (optionally shielded) MDPs.

The bundled environments are small enough to enumerate completely, which
buys two things learning experiments otherwise lack: a ground-truth optimal
policy (discounted value iteration over the shielded product) and exact
finite-horizon evaluation of any policy, with no Monte-Carlo noise.  Both
treat a shield, when given, as part of the dynamics: states become
(environment state, shield state) pairs and the action set shrinks to the
menu.
"""

from __future__ import annotations

import sys
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable, Hashable

from .envs.base import Environment
from .errors import ValidationError
from .shield import _ShieldCore

__all__ = ["ProductMdp", "value_iteration", "evaluate_policy_exact"]

State = Hashable


@dataclass(frozen=True)
class _Node:
    env_state: Any
    shield_state: int | None


class ProductMdp:
    """Environment composed with an optional shield, enumerated lazily.

    Nodes are (env state, shield state) pairs; available actions come from
    the shield menu when one is present.  Terminated outcomes are absorbing
    for planning purposes: their reward is collected, nothing follows.
    """

    def __init__(self, env: Environment, shield: _ShieldCore | None = None):
        self.env = env
        self.shield = shield

    def initial(self) -> _Node:
        return _Node(
            self.env.initial_state(),
            None if self.shield is None else self.shield.initial,
        )

    def actions(self, node: _Node) -> tuple[int, ...]:
        if self.shield is None:
            return self.env.actions(node.env_state)
        label = self.env.label_of(node.env_state)
        return self.shield.menu(node.shield_state, label)

    def is_terminal(self, node: _Node) -> bool:
        return self.env.is_terminal(node.env_state)

    def transitions(
        self, node: _Node, action: int
    ) -> list[tuple[float, float, bool, _Node]]:
        """(probability, reward, ends, successor) tuples for one action."""
        if self.shield is None:
            g_next = None
        else:
            label = self.env.label_of(node.env_state)
            g_next = self.shield.advance(node.shield_state, label, action)
        out = []
        for prob, outcome in self.env.enumerate_step(node.env_state, action):
            nxt = _Node(outcome.state, g_next)
            ends = outcome.terminated or self.env.is_terminal(outcome.state)
            out.append((prob, outcome.reward, ends, nxt))
        return out

    def enumerate_states(self, max_states: int = 1_000_000) -> list[_Node]:
        start = self.initial()
        seen = {start}
        queue = deque([start])
        order = [start]
        while queue:
            node = queue.popleft()
            if self.is_terminal(node):
                continue
            for action in self.actions(node):
                for _p, _r, ends, nxt in self.transitions(node, action):
                    if ends or nxt in seen:
                        continue
                    seen.add(nxt)
                    order.append(nxt)
                    queue.append(nxt)
                    if len(order) > max_states:
                        raise ValidationError(
                            f"state space exceeds {max_states} states; "
                            "planning here is not practical"
                        )
        return order


def value_iteration(
    product: ProductMdp,
    gamma: float,
    tol: float = 1e-10,
    max_sweeps: int = 100_000,
) -> tuple[dict[_Node, float], dict[_Node, int]]:
    """Discounted optimal values and a greedy policy (ties: lowest action).

    Terminated transitions contribute their reward and nothing beyond, so
    penalties and completion bonuses are represented exactly.
    """
    if not (0.0 <= gamma < 1.0):
        raise ValidationError("value iteration needs gamma in [0, 1)")
    states = product.enumerate_states()
    cache: dict[_Node, list[tuple[int, list[tuple[float, float, bool, _Node]]]]] = {}
    for node in states:
        if product.is_terminal(node):
            cache[node] = []
        else:
            cache[node] = [
                (a, product.transitions(node, a)) for a in product.actions(node)
            ]
    values: dict[_Node, float] = {node: 0.0 for node in states}
    for _ in range(max_sweeps):
        delta = 0.0
        for node in states:
            options = cache[node]
            if not options:
                continue
            best = max(
                sum(
                    p * (r + (0.0 if ends else gamma * values[nxt]))
                    for p, r, ends, nxt in trans
                )
                for _a, trans in options
            )
            delta = max(delta, abs(best - values[node]))
            values[node] = best
        if delta <= tol:
            break
    else:
        raise ValidationError("value iteration did not converge")
    policy: dict[_Node, int] = {}
    for node in states:
        options = cache[node]
        if not options:
            continue
        best_a, best_v = None, None
        for a, trans in options:
            v = sum(
                p * (r + (0.0 if ends else gamma * values[nxt]))
                for p, r, ends, nxt in trans
            )
            if best_v is None or v > best_v + 1e-12:
                best_a, best_v = a, v
        policy[node] = best_a  # type: ignore[assignment]
    return values, policy


def evaluate_policy_exact(
    product: ProductMdp,
    policy: Callable[[_Node, tuple[int, ...]], int],
    horizon: int,
) -> float:
    """Exact expected undiscounted return of ``policy`` over ``horizon`` steps.

    ``policy`` receives the node and its available actions and must return
    one of them.  Dynamic programming over (node, steps left); episodes cut
    short by termination simply stop accumulating.
    """
    memo: dict[tuple[_Node, int], float] = {}

    def value(node: _Node, left: int) -> float:
        if left == 0 or product.is_terminal(node):
            return 0.0
        key = (node, left)
        got = memo.get(key)
        if got is not None:
            return got
        actions = product.actions(node)
        action = policy(node, actions)
        if action not in actions:
            raise ValidationError(
                f"policy returned unavailable action {action} at {node}"
            )
        total = 0.0
        for p, r, ends, nxt in product.transitions(node, action):
            total += p * (r if ends else r + value(nxt, left - 1))
        memo[key] = total
        return total

    # Recursion depth is bounded by the horizon; give it headroom.
    start = product.initial()
    old_limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old_limit, horizon * 8 + 1000))
    try:
        return value(start, horizon)
    finally:
        sys.setrecursionlimit(old_limit)
