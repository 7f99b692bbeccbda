"""Tabular Q-learning and SARSA with optional shielding.

Three training loops share one skeleton:

* ``train_preemptive`` — the agent only ever ranks actions from the
  shield's menu, so nothing unsafe is even proposed and no episode can end
  in a violation.
* ``train_postposed`` — the agent ranks whatever it likes; the shield
  executes the first safe entry (or its substitute).  The rejected prefix
  still gets value updates, either punished with a configured reward or fed
  the actual reward, so the learner migrates away from proposing unsafe
  actions instead of proposing them forever.
* ``train_unshielded`` — the raw environment; whatever penalties and
  violation flags it produces land in the log.

Every run owns a single ``random.Random(seed)`` driving both exploration
and environment sampling, so a (config, seed) pair replays bit-for-bit.
The selection helper consumes randomness in the same pattern whether or not
a menu restricts it, keeping shielded and unshielded runs comparable draw
by draw.
"""

from __future__ import annotations

import csv
import os
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Literal

from .envs.base import Environment
from .errors import ContractError, ValidationError
from .shield import PostposedShield, PreemptiveShield

__all__ = [
    "LearnerConfig",
    "ValueTable",
    "EpisodeRecord",
    "StepRecord",
    "RunLog",
    "TrainResult",
    "select_ranking",
    "q_update",
    "sarsa_update",
    "greedy_action",
    "train_preemptive",
    "train_postposed",
    "train_unshielded",
]


@dataclass(frozen=True)
class LearnerConfig:
    algorithm: Literal["q", "sarsa"] = "q"
    alpha: float = 0.2
    alpha_final: float | None = None  # None: constant alpha
    alpha_decay_until: float = 0.8  # fraction of episodes over which to decay
    alpha_visit_c: float | None = None  # per-pair Robbins-Monro cap c/(c+n)
    initial_value: float = 0.0  # optimistic when above the best return
    gamma: float = 0.97
    epsilon_start: float = 0.1
    epsilon_final: float | None = None  # None: constant epsilon_start
    epsilon_decay_until: float = 0.8  # fraction of episodes over which to decay
    # Per-observation exploration tail: with c set, the epsilon actually used
    # at an observation seen n times before is min(schedule, c / (c + n)).
    # The 1/n tail keeps every action tried forever while the on-policy
    # exploration bias vanishes — without it SARSA can persistently rank two
    # near-tied actions the wrong way round.
    epsilon_visit_c: float | None = None
    rank_width: int = 1
    tie_break: Literal["lowest", "random"] = "lowest"
    reward_variant: Literal["punish", "passthrough"] = "punish"
    punish_reward: float = -10.0
    episodes: int = 2000
    max_steps: int = 200
    seed: int = 0
    single_state_view: bool = False
    record_steps: bool = False  # keep per-step telemetry (memory-hungry)

    def validate(self) -> None:
        problems = []
        if self.algorithm not in ("q", "sarsa"):
            problems.append(f"algorithm must be 'q' or 'sarsa', got {self.algorithm!r}")
        if not (0.0 < self.alpha <= 1.0):
            problems.append(f"alpha must be in (0, 1], got {self.alpha}")
        if self.alpha_final is not None and not (0.0 < self.alpha_final <= 1.0):
            problems.append(f"alpha_final must be in (0, 1], got {self.alpha_final}")
        if not (0.0 < self.alpha_decay_until <= 1.0):
            problems.append(
                f"alpha_decay_until must be in (0, 1], got {self.alpha_decay_until}"
            )
        if self.alpha_visit_c is not None and self.alpha_visit_c <= 0.0:
            problems.append(f"alpha_visit_c must be positive, got {self.alpha_visit_c}")
        if not (0.0 <= self.gamma <= 1.0):
            problems.append(f"gamma must be in [0, 1], got {self.gamma}")
        if not (0.0 <= self.epsilon_start <= 1.0):
            problems.append(f"epsilon_start must be in [0, 1], got {self.epsilon_start}")
        if self.epsilon_final is not None and not (0.0 <= self.epsilon_final <= 1.0):
            problems.append(f"epsilon_final must be in [0, 1], got {self.epsilon_final}")
        if not (0.0 < self.epsilon_decay_until <= 1.0):
            problems.append(
                f"epsilon_decay_until must be in (0, 1], got {self.epsilon_decay_until}"
            )
        if self.epsilon_visit_c is not None and self.epsilon_visit_c <= 0.0:
            problems.append(
                f"epsilon_visit_c must be positive, got {self.epsilon_visit_c}"
            )
        if self.rank_width < 1:
            problems.append(f"rank_width must be >= 1, got {self.rank_width}")
        if self.tie_break not in ("lowest", "random"):
            problems.append(
                f"tie_break must be 'lowest' or 'random', got {self.tie_break!r}"
            )
        if self.reward_variant not in ("punish", "passthrough"):
            problems.append(
                f"reward_variant must be 'punish' or 'passthrough', got {self.reward_variant!r}"
            )
        if self.episodes < 0:
            problems.append(f"episodes must be >= 0, got {self.episodes}")
        if self.max_steps < 1:
            problems.append(f"max_steps must be >= 1, got {self.max_steps}")
        if problems:
            raise ValidationError("invalid learner configuration", problems)

    @staticmethod
    def _linear(episode: int, episodes: int, start: float, final: float | None,
                decay_until: float) -> float:
        if final is None or episodes <= 1:
            return start
        span = max(int(episodes * decay_until), 1)
        frac = min(episode / span, 1.0)
        return start + (final - start) * frac

    def epsilon_at(self, episode: int) -> float:
        return self._linear(
            episode, self.episodes, self.epsilon_start, self.epsilon_final,
            self.epsilon_decay_until,
        )

    def alpha_at(self, episode: int) -> float:
        return self._linear(
            episode, self.episodes, self.alpha, self.alpha_final, self.alpha_decay_until
        )


class ValueTable:
    """State-action values, default ``initial_value`` for unwritten entries.

    With ``alpha_visit_c`` set, every update shrinks its own step size to
    min(alpha, c / (c + n)) where n counts prior updates of that exact
    (observation, action) pair — the Robbins-Monro tail that lets values
    settle instead of rattling around their fixed point forever.

    An ``initial_value`` above the best achievable return makes untried
    actions look better than tried ones, so the greedy policy itself sweeps
    the alternatives — the optimism an on-policy learner needs to escape a
    self-confirming orbit.
    """

    def __init__(
        self, alpha_visit_c: float | None = None, initial_value: float = 0.0
    ) -> None:
        self._q: dict[tuple[Any, int], float] = {}
        self._updates: dict[tuple[Any, int], int] = {}
        self._alpha_visit_c = alpha_visit_c
        self._initial = initial_value
        self.writes = 0

    def step_alpha(self, obs: Any, action: int, alpha: float) -> float:
        """Effective step size for one update of (obs, action); counts it."""
        c = self._alpha_visit_c
        if c is None:
            return alpha
        n = self._updates.get((obs, action), 0)
        self._updates[(obs, action)] = n + 1
        return min(alpha, c / (c + n))

    def get(self, obs: Any, action: int) -> float:
        return self._q.get((obs, action), self._initial)

    def set(self, obs: Any, action: int, value: float) -> None:
        self._q[(obs, action)] = value
        self.writes += 1

    def best_value(self, obs: Any, actions: tuple[int, ...]) -> float:
        return max(self.get(obs, a) for a in actions)

    def __len__(self) -> int:
        return len(self._q)


def greedy_action(table: ValueTable, obs: Any, actions: tuple[int, ...]) -> int:
    """Highest-value action; ties break to the lowest action id."""
    return max(actions, key=lambda a: (table.get(obs, a), -a))


def select_ranking(
    table: ValueTable,
    obs: Any,
    available: tuple[int, ...],
    k: int,
    epsilon: float,
    rng: random.Random,
    tie_break: str = "lowest",
) -> tuple[int, ...]:
    """Epsilon-greedy ranking of length min(k, len(available)).

    With probability epsilon the ranking is a uniformly random k-prefix of a
    permutation of the available actions; otherwise the top-k by value, ties
    to lower action ids.  Exactly one ``rng.random()`` call plus, when
    exploring, one ``rng.sample`` — the consumption pattern does not depend
    on which actions are available.

    ``tie_break="random"`` resolves value ties uniformly instead, at the cost
    of one extra ``rng.sample`` on every exploiting step (again independent of
    the action set, so runs stay reproducible under a fixed seed).
    """
    if not available:
        raise ContractError("no actions available to rank")
    k = min(k, len(available))
    if rng.random() < epsilon:
        return tuple(rng.sample(available, k))
    if tie_break == "random":
        shuffled = rng.sample(available, len(available))
        rank = {a: i for i, a in enumerate(shuffled)}
        ordered = sorted(available, key=lambda a: (-table.get(obs, a), rank[a]))
    else:
        ordered = sorted(available, key=lambda a: (-table.get(obs, a), a))
    return tuple(ordered[:k])


def q_update(
    table: ValueTable,
    obs: Any,
    action: int,
    reward: float,
    next_obs: Any,
    next_actions: tuple[int, ...],
    alpha: float,
    gamma: float,
    terminal: bool,
) -> None:
    bootstrap = 0.0 if terminal else table.best_value(next_obs, next_actions)
    old = table.get(obs, action)
    alpha = table.step_alpha(obs, action, alpha)
    table.set(obs, action, old + alpha * (reward + gamma * bootstrap - old))


def sarsa_update(
    table: ValueTable,
    obs: Any,
    action: int,
    reward: float,
    next_obs: Any,
    next_action: int | None,
    alpha: float,
    gamma: float,
) -> None:
    """On-policy update; ``next_action=None`` marks a terminal transition."""
    bootstrap = 0.0 if next_action is None else table.get(next_obs, next_action)
    old = table.get(obs, action)
    alpha = table.step_alpha(obs, action, alpha)
    table.set(obs, action, old + alpha * (reward + gamma * bootstrap - old))


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    accumulated_reward: float
    violations: int
    interventions: int
    steps: int


@dataclass(frozen=True)
class StepRecord:
    """One executed step, kept only under ``record_steps``.

    ``interventions`` is the running per-episode interference count with
    this step included; ``ranking`` is what the agent asked for,
    ``executed`` what actually ran.
    """

    time: int
    observation: Any
    ranking: tuple[int, ...]
    executed: int
    overridden: bool
    reward: float
    interventions: int
    violation: bool


@dataclass
class RunLog:
    records: list[EpisodeRecord] = field(default_factory=list)

    def append(self, record: EpisodeRecord) -> None:
        self.records.append(record)

    def total_violations(self) -> int:
        return sum(r.violations for r in self.records)

    def to_csv(self, path: str | os.PathLike[str]) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["episode", "accumulated_reward", "violations", "interventions", "steps"]
            )
            for r in self.records:
                writer.writerow(
                    [r.episode, repr(r.accumulated_reward), r.violations, r.interventions, r.steps]
                )
        os.replace(tmp, path)

    @staticmethod
    def from_csv(path: str | os.PathLike[str]) -> "RunLog":
        log = RunLog()
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                log.append(
                    EpisodeRecord(
                        int(row["episode"]),
                        float(row["accumulated_reward"]),
                        int(row["violations"]),
                        int(row["interventions"]),
                        int(row["steps"]),
                    )
                )
        return log


@dataclass
class TrainResult:
    table: ValueTable
    log: RunLog
    config: LearnerConfig
    max_updates_in_step: int
    observe: Callable[[Any, int | None], Any]
    steps: list[StepRecord] = field(default_factory=list)

    def greedy_policy(self) -> Callable[[Any, tuple[int, ...]], int]:
        """Greedy policy over observations (shield state already folded in)."""
        table = self.table

        def policy(obs: Any, actions: tuple[int, ...]) -> int:
            return greedy_action(table, obs, actions)

        return policy


def _make_observe(single_state_view: bool) -> Callable[[Any, int | None], Any]:
    if single_state_view:
        return lambda env_state, shield_state: env_state
    return lambda env_state, shield_state: (
        env_state if shield_state is None else (env_state, shield_state)
    )


def _check_single_state_view(cfg: LearnerConfig, shield) -> None:
    if cfg.single_state_view and not shield.single_state_certifiable():
        raise ValidationError(
            "single_state_view requires a shield whose menus depend on the "
            "label alone; this one distinguishes its states"
        )


Probe = Callable[[int, ValueTable], None]


def _step_epsilon(
    cfg: LearnerConfig, eps: float, visits: dict[Any, int], obs: Any
) -> float:
    """Episode-schedule epsilon, capped by the per-observation visit tail."""
    if cfg.epsilon_visit_c is None:
        return eps
    n = visits.get(obs, 0)
    visits[obs] = n + 1
    return min(eps, cfg.epsilon_visit_c / (cfg.epsilon_visit_c + n))


def train_preemptive(
    env: Environment,
    shield: PreemptiveShield,
    cfg: LearnerConfig,
    probe: Probe | None = None,
) -> TrainResult:
    """Menu-restricted training; by construction no violation can occur.

    ``probe`` (if given) is called after every episode with the episode
    index and the live table — checkpoint evaluation, early plotting, etc.
    It must not touch the RNG stream; reads of the table are fine.
    """
    cfg.validate()
    _check_single_state_view(cfg, shield)
    observe = _make_observe(cfg.single_state_view)
    rng = random.Random(cfg.seed)
    table = ValueTable(cfg.alpha_visit_c, cfg.initial_value)
    log = RunLog()
    n_actions = len(env.action_alphabet)
    sarsa = cfg.algorithm == "sarsa"
    max_updates = 0
    visits: dict[Any, int] = {}
    step_log: list[StepRecord] = []

    for episode in range(cfg.episodes):
        eps = cfg.epsilon_at(episode)
        alpha = cfg.alpha_at(episode)
        state = env.initial_state()
        g = shield.initial
        total = 0.0
        violations = 0
        interventions = 0
        steps = 0
        pending: tuple[Any, int, float] | None = None  # sarsa carry-over
        for _ in range(cfg.max_steps):
            if env.is_terminal(state):
                break
            label = env.label_of(state)
            menu = shield.menu(g, label)
            obs = observe(state, g)
            ranking = select_ranking(
                table, obs, menu, 1, _step_epsilon(cfg, eps, visits, obs), rng,
                cfg.tie_break,
            )
            action = ranking[0]
            if len(menu) < n_actions:
                interventions += 1
            outcome = env.sample_step(state, action, rng)
            steps += 1
            total += outcome.reward
            if outcome.violation is not None:
                violations += 1
            if cfg.record_steps:
                step_log.append(StepRecord(
                    len(step_log), obs, ranking, action, False,
                    outcome.reward, interventions, outcome.violation is not None,
                ))
            writes_before = table.writes
            g_next = shield.advance(g, label, action)
            next_state = outcome.state
            done = outcome.terminated or env.is_terminal(next_state)
            if sarsa:
                if pending is not None:
                    p_obs, p_action, p_reward = pending
                    sarsa_update(
                        table, p_obs, p_action, p_reward, obs, action, alpha, cfg.gamma
                    )
                if done:
                    sarsa_update(
                        table, obs, action, outcome.reward, None, None, alpha, cfg.gamma
                    )
                    pending = None
                else:
                    pending = (obs, action, outcome.reward)
            else:
                if done:
                    q_update(
                        table, obs, action, outcome.reward, None, (0,), alpha,
                        cfg.gamma, True,
                    )
                else:
                    next_label = env.label_of(next_state)
                    next_menu = shield.menu(g_next, next_label)
                    next_obs = observe(next_state, g_next)
                    q_update(
                        table, obs, action, outcome.reward, next_obs, next_menu,
                        alpha, cfg.gamma, False,
                    )
            max_updates = max(max_updates, table.writes - writes_before)
            state, g = next_state, g_next
            if done:
                break
        log.append(EpisodeRecord(episode, total, violations, interventions, steps))
        if probe is not None:
            probe(episode, table)
    return TrainResult(table, log, cfg, max_updates, observe, step_log)


def train_postposed(
    env: Environment,
    shield: PostposedShield,
    cfg: LearnerConfig,
    probe: Probe | None = None,
) -> TrainResult:
    """Ranking-repair training with punished or passed-through prefixes.

    Every step updates the executed action with the observed reward; the
    rejected prefix is updated too (punish: configured reward; passthrough:
    the observed reward), all bootstrapping on the executed successor.  At
    most len(ranking)+1 updates happen per step.
    """
    cfg.validate()
    _check_single_state_view(cfg, shield)
    observe = _make_observe(cfg.single_state_view)
    rng = random.Random(cfg.seed)
    table = ValueTable(cfg.alpha_visit_c, cfg.initial_value)
    log = RunLog()
    all_actions = tuple(range(len(env.action_alphabet)))
    sarsa = cfg.algorithm == "sarsa"
    punish = cfg.reward_variant == "punish"
    max_updates = 0
    visits: dict[Any, int] = {}
    step_log: list[StepRecord] = []

    for episode in range(cfg.episodes):
        eps = cfg.epsilon_at(episode)
        alpha = cfg.alpha_at(episode)
        state = env.initial_state()
        g = shield.initial
        total = 0.0
        violations = 0
        interventions = 0
        steps = 0
        # sarsa: updates for step t wait for the executed action at t+1
        pending: list[tuple[Any, int, float]] = []
        for _ in range(cfg.max_steps):
            if env.is_terminal(state):
                break
            label = env.label_of(state)
            obs = observe(state, g)
            ranking = select_ranking(
                table, obs, all_actions, cfg.rank_width,
                _step_epsilon(cfg, eps, visits, obs), rng, cfg.tie_break,
            )
            decision = shield.step(g, label, ranking)
            action = decision.output
            if decision.overridden:
                interventions += 1
            outcome = env.sample_step(state, action, rng)
            steps += 1
            total += outcome.reward
            if outcome.violation is not None:
                violations += 1
            if cfg.record_steps:
                step_log.append(StepRecord(
                    len(step_log), obs, ranking, action, decision.overridden,
                    outcome.reward, interventions, outcome.violation is not None,
                ))
            next_state = outcome.state
            g_next = decision.next_state
            done = outcome.terminated or env.is_terminal(next_state)
            writes_before = table.writes
            step_updates = [
                (obs, u, cfg.punish_reward if punish else outcome.reward)
                for u in decision.unsafe_prefix
            ]
            step_updates.append((obs, action, outcome.reward))
            if sarsa:
                for p_obs, p_action, p_reward in pending:
                    sarsa_update(
                        table, p_obs, p_action, p_reward, obs, action, alpha, cfg.gamma
                    )
                pending = step_updates
                if done:
                    for p_obs, p_action, p_reward in pending:
                        sarsa_update(
                            table, p_obs, p_action, p_reward, None, None,
                            alpha, cfg.gamma,
                        )
                    pending = []
            else:
                if done:
                    for u_obs, u_action, u_reward in step_updates:
                        q_update(
                            table, u_obs, u_action, u_reward, None, (0,),
                            alpha, cfg.gamma, True,
                        )
                else:
                    next_obs = observe(next_state, g_next)
                    for u_obs, u_action, u_reward in step_updates:
                        q_update(
                            table, u_obs, u_action, u_reward, next_obs, all_actions,
                            alpha, cfg.gamma, False,
                        )
            max_updates = max(max_updates, table.writes - writes_before)
            state, g = next_state, g_next
            if done:
                break
        log.append(EpisodeRecord(episode, total, violations, interventions, steps))
        if probe is not None:
            probe(episode, table)
    return TrainResult(table, log, cfg, max_updates, observe, step_log)


def train_unshielded(
    env: Environment, cfg: LearnerConfig, probe: Probe | None = None
) -> TrainResult:
    """Raw training; nothing intercepts the learner's choices, so violation
    flags (and their penalties) land in the log."""
    cfg.validate()
    observe = _make_observe(True)
    rng = random.Random(cfg.seed)
    table = ValueTable(cfg.alpha_visit_c, cfg.initial_value)
    log = RunLog()
    all_actions = tuple(range(len(env.action_alphabet)))
    sarsa = cfg.algorithm == "sarsa"
    max_updates = 0
    visits: dict[Any, int] = {}
    step_log: list[StepRecord] = []

    for episode in range(cfg.episodes):
        eps = cfg.epsilon_at(episode)
        alpha = cfg.alpha_at(episode)
        state = env.initial_state()
        total = 0.0
        violations = 0
        steps = 0
        pending: tuple[Any, int, float] | None = None
        for _ in range(cfg.max_steps):
            if env.is_terminal(state):
                break
            obs = observe(state, None)
            ranking = select_ranking(
                table, obs, all_actions, 1, _step_epsilon(cfg, eps, visits, obs), rng,
                cfg.tie_break,
            )
            action = ranking[0]
            outcome = env.sample_step(state, action, rng)
            steps += 1
            total += outcome.reward
            if outcome.violation is not None:
                violations += 1
            if cfg.record_steps:
                step_log.append(StepRecord(
                    len(step_log), obs, ranking, action, False,
                    outcome.reward, 0, outcome.violation is not None,
                ))
            next_state = outcome.state
            done = outcome.terminated or env.is_terminal(next_state)
            writes_before = table.writes
            if sarsa:
                if pending is not None:
                    p_obs, p_action, p_reward = pending
                    sarsa_update(
                        table, p_obs, p_action, p_reward, obs, action, alpha, cfg.gamma
                    )
                if done:
                    sarsa_update(
                        table, obs, action, outcome.reward, None, None, alpha, cfg.gamma
                    )
                    pending = None
                else:
                    pending = (obs, action, outcome.reward)
            else:
                if done:
                    q_update(
                        table, obs, action, outcome.reward, None, (0,), alpha,
                        cfg.gamma, True,
                    )
                else:
                    next_obs = observe(next_state, None)
                    q_update(
                        table, obs, action, outcome.reward, next_obs, all_actions,
                        alpha, cfg.gamma, False,
                    )
            max_updates = max(max_updates, table.writes - writes_before)
            state = next_state
            if done:
                break
        log.append(EpisodeRecord(episode, total, violations, 0, steps))
        if probe is not None:
            probe(episode, table)
    return TrainResult(table, log, cfg, max_updates, observe, step_log)
