"""Command-line front end: synthesis, training, verification, reporting.

Four subcommands tie the library into reproducible pipelines:

  shieldsynth synth   --env watertank --placement preemptive --out DIR
  shieldsynth train   --config exp.json --seeds 1,2,3,4,5 --out DIR
  shieldsynth verify  --shield DIR/shield.json --env watertank
  shieldsynth report  --runs DIR

Every command is deterministic given identical inputs and seeds; file
writes go to a temporary sibling first and are renamed into place, so a
crashed run never leaves a half-written artifact.  Set SHIELD_LOG=info
(or debug) to watch the phases.

Exit codes: 0 success, 1 bad inputs, 2 unrealizable specification or
failed verification, 3 I/O trouble.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from .automata import SafetyAutomaton, load_automaton
from .envs import (
    BUNDLED_ENVIRONMENTS,
    EnvBundle,
    bundle,
    bundle_from_grid,
    parse_cycle,
    parse_map,
)
from .errors import (
    ShieldsynthError,
    UnrealizableError,
    ValidationError,
)
from .game import build_safety_game, forcing_trace, solve
from .learn import (
    LearnerConfig,
    RunLog,
    train_postposed,
    train_preemptive,
    train_unshielded,
)
from .shield import (
    extract_postposed,
    extract_preemptive,
    load_shield,
    save_shield,
    verify_shield,
)

__all__ = ["ExperimentConfig", "main"]

log = logging.getLogger("shieldsynth")

_PLACEMENTS = ("none", "preemptive", "postposed")

# LearnerConfig fields the config file / CLI may set directly.
_LEARNER_KEYS = (
    "algorithm",
    "alpha",
    "alpha_final",
    "alpha_decay_until",
    "alpha_visit_c",
    "initial_value",
    "gamma",
    "epsilon_start",
    "epsilon_final",
    "epsilon_decay_until",
    "epsilon_visit_c",
    "rank_width",
    "tie_break",
    "reward_variant",
    "punish_reward",
    "max_steps",
    "single_state_view",
)
# ... of which these only make sense when a shield is in the loop.
_SHIELD_ONLY_KEYS = ("rank_width", "reward_variant", "punish_reward", "single_state_view")


@dataclass(frozen=True)
class ExperimentConfig:
    """One training experiment: an environment, a placement, a learner.

    Built from a flat JSON file plus command-line overrides; ``validate``
    reports every problem at once rather than the first one found.
    """

    environment: str = "watertank"
    map_path: str | None = None
    energy_path: str | None = None
    spec_path: str | None = None
    abstraction_path: str | None = None
    placement: str = "preemptive"
    episodes: int = 2000
    seeds: tuple[int, ...] = (0,)
    out: str = "runs"
    learner: LearnerConfig = dataclasses.field(default_factory=LearnerConfig)
    explicit_shield_keys: tuple[str, ...] = ()

    def validate(self) -> None:
        problems = []
        if self.environment not in BUNDLED_ENVIRONMENTS and self.map_path is None:
            problems.append(
                f"environment must be one of {BUNDLED_ENVIRONMENTS} or come with "
                f"--map, got {self.environment!r}"
            )
        if self.placement not in _PLACEMENTS:
            problems.append(
                f"placement must be one of {_PLACEMENTS}, got {self.placement!r}"
            )
        if self.placement == "none":
            for key in self.explicit_shield_keys:
                problems.append(
                    f"{key} was set but placement=none runs without a shield"
                )
        if self.placement != "postposed":
            for key in self.explicit_shield_keys:
                if key in ("reward_variant", "punish_reward"):
                    problems.append(
                        f"{key} only applies to the postposed placement"
                    )
        if self.episodes < 0:
            problems.append(f"episodes must be >= 0, got {self.episodes}")
        if not self.seeds:
            problems.append("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            problems.append(f"duplicate seeds: {sorted(self.seeds)}")
        for name in ("map_path", "energy_path", "spec_path", "abstraction_path"):
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                problems.append(f"{name}: no such file: {path}")
        if (self.spec_path is None) != (self.abstraction_path is None):
            problems.append("--spec and --abstraction must be given together")
        if problems:
            raise ValidationError("invalid experiment configuration", problems)
        try:
            self.learner.validate()
        except ValidationError as e:
            raise ValidationError("invalid experiment configuration", e.problems) from e


def _write_json(path: Path, doc: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _load_bundle(args: argparse.Namespace) -> EnvBundle:
    """Environment plus its automata, from a bundled name or a map file."""
    energy = getattr(args, "energy", None)
    map_path = getattr(args, "map", None)
    if map_path is not None:
        cycle_path = Path(map_path).with_suffix(".cycle")
        cycle = parse_cycle(cycle_path.read_text()) if cycle_path.exists() else ()
        grid = parse_map(Path(map_path).read_text(), cycle)
        return bundle_from_grid(Path(map_path).stem, grid)
    return bundle(args.env, energy_path=energy)


def _load_automata(
    args: argparse.Namespace, bundled: EnvBundle
) -> tuple[SafetyAutomaton, SafetyAutomaton]:
    if getattr(args, "spec", None) is not None:
        return load_automaton(args.spec), load_automaton(args.abstraction)
    return bundled.spec, bundled.abstraction


def _is_trivial(shield) -> bool:
    """True when every reachable menu admits every action."""
    n_actions = len(shield.actions)
    return all(
        len(menu) == n_actions
        for row in shield.menus
        for menu in row
        if menu  # unreachable (state, label) pairs carry empty menus
    )


def cmd_synth(args: argparse.Namespace) -> int:
    bundled = _load_bundle(args)
    spec, abstraction = _load_automata(args, bundled)
    if args.placement == "none":
        raise ValidationError("synth needs --placement preemptive or postposed")

    log.info("building product game (%s)", bundled.name)
    game = build_safety_game(spec, abstraction)
    region = solve(game)
    if not region.realizable:
        trace = forcing_trace(game, region)
        raise UnrealizableError(
            f"{bundled.name}: the environment can force a violation from the start",
            trace,
        )
    if args.placement == "preemptive":
        shield = extract_preemptive(game, region)
    else:
        shield = extract_postposed(game, region)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    shield_path = out / "shield.json"
    save_shield(shield, shield_path)

    rep = game.report
    trivial = _is_trivial(shield)
    doc = {
        "environment": bundled.name,
        "placement": args.placement,
        "game": {
            "states_reachable": rep.states_reachable,
            "states_premerge": rep.states_premerge,
            "states_product_convention": rep.states_product_convention,
            "spec_safe_states": rep.spec_safe_states,
            "abstraction_safe_classes": rep.abstraction_safe_classes,
            "fail_reachable": rep.fail_reachable,
            "paradise_reachable": rep.paradise_reachable,
            "build_seconds": rep.build_seconds,
        },
        "winning": {
            "realizable": region.realizable,
            "states": len(region.states()),
            "removals": region.removals,
            "solve_seconds": region.solve_seconds,
        },
        "shield": {
            "kind": args.placement,
            "states": len(shield.state_tags),
            "trivial": trivial,
            "path": str(shield_path),
        },
    }
    _write_json(out / "synthesis.json", doc)
    print(json.dumps(doc, indent=2, sort_keys=True))
    if trivial:
        print("note: shield is trivial (no action is ever blocked)", file=sys.stderr)
    return 0


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge defaults, the --config file, and explicit CLI flags."""
    doc: dict[str, Any] = {}
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValidationError(f"{args.config}: config must be a JSON object")
        unknown = set(doc) - set(_LEARNER_KEYS) - {
            "environment", "map", "energy", "spec", "abstraction",
            "placement", "episodes", "seeds", "out",
        }
        if unknown:
            raise ValidationError(
                f"{args.config}: unknown config keys", sorted(unknown)
            )

    def pick(cli_value, key, default):
        if cli_value is not None:
            return cli_value
        return doc.get(key, default)

    seeds = pick(args.seeds, "seeds", None)
    if args.seed is not None:
        if args.seeds is not None:
            raise ValidationError("--seed and --seeds are mutually exclusive")
        seeds = [args.seed]
    if seeds is None:
        seeds = [0]
    if isinstance(seeds, str):
        seeds = [int(s) for s in seeds.split(",") if s.strip()]

    learner_kwargs: dict[str, Any] = {}
    explicit_shield: list[str] = []
    for key in _LEARNER_KEYS:
        cli_value = getattr(args, key, None)
        value = cli_value if cli_value is not None else doc.get(key)
        if value is not None:
            learner_kwargs[key] = value
            if key in _SHIELD_ONLY_KEYS:
                explicit_shield.append(key)

    environment = pick(args.env, "environment", "watertank")
    map_path = pick(args.map, "map", None)
    # Learner horizon defaults to the bundle's if not set anywhere.
    if "max_steps" not in learner_kwargs:
        learner_kwargs["max_steps"] = (
            200 if map_path is not None else bundle(environment).horizon
            if environment in BUNDLED_ENVIRONMENTS
            else 200
        )
    cfg = ExperimentConfig(
        environment=environment,
        map_path=map_path,
        energy_path=pick(args.energy, "energy", None),
        spec_path=pick(args.spec, "spec", None),
        abstraction_path=pick(args.abstraction, "abstraction", None),
        placement=pick(args.placement, "placement", "preemptive"),
        episodes=pick(args.episodes, "episodes", 2000),
        seeds=tuple(int(s) for s in seeds),
        out=pick(args.out, "out", "runs"),
        learner=LearnerConfig(**learner_kwargs),
        explicit_shield_keys=tuple(explicit_shield),
    )
    cfg.validate()
    return cfg


def _train_one_seed(cfg: ExperimentConfig, seed: int) -> tuple[int, str, int]:
    """Worker: train one seed, write its CSV, return (seed, path, violations).

    Rebuilds environment and shield from the config so the call is
    process-pool friendly; synthesis on these models is cheap next to
    training.
    """
    args = argparse.Namespace(
        env=cfg.environment, map=cfg.map_path, energy=cfg.energy_path,
        spec=cfg.spec_path, abstraction=cfg.abstraction_path,
    )
    bundled = _load_bundle(args)
    learner = dataclasses.replace(cfg.learner, seed=seed, episodes=cfg.episodes)
    if cfg.placement == "none":
        result = train_unshielded(bundled.env, learner)
    else:
        spec, abstraction = _load_automata(args, bundled)
        game = build_safety_game(spec, abstraction)
        region = solve(game)
        if not region.realizable:
            raise UnrealizableError(
                f"{bundled.name}: specification unrealizable; nothing to train behind"
            )
        if cfg.placement == "preemptive":
            result = train_preemptive(bundled.env, extract_preemptive(game, region), learner)
        else:
            result = train_postposed(bundled.env, extract_postposed(game, region), learner)
    path = Path(cfg.out) / f"seed_{seed}.csv"
    result.log.to_csv(path)
    return seed, str(path), result.log.total_violations()


def _aggregate(cfg: ExperimentConfig, paths: Sequence[str]) -> None:
    """mean ± standard error of accumulated reward, per episode."""
    logs = [RunLog.from_csv(p) for p in paths]
    out = Path(cfg.out) / "aggregate.csv"
    tmp = out.with_suffix(".csv.tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write("episode,mean_reward,stderr_reward\n")
        for episode in range(cfg.episodes):
            values = [lg.records[episode].accumulated_reward for lg in logs]
            mean = statistics.fmean(values)
            err = (
                statistics.stdev(values) / len(values) ** 0.5
                if len(values) > 1
                else 0.0
            )
            fh.write(f"{episode},{mean!r},{err!r}\n")
    os.replace(tmp, out)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    resolved = {
        "environment": cfg.environment,
        "map": cfg.map_path,
        "energy": cfg.energy_path,
        "spec": cfg.spec_path,
        "abstraction": cfg.abstraction_path,
        "placement": cfg.placement,
        "episodes": cfg.episodes,
        "seeds": list(cfg.seeds),
        "out": cfg.out,
        **{
            key: getattr(cfg.learner, key)
            for key in _LEARNER_KEYS
        },
    }
    _write_json(out / "config.json", resolved)

    workers = min(args.workers, len(cfg.seeds))
    log.info(
        "training %s/%s: %d episodes x seeds %s (%d worker%s)",
        cfg.environment, cfg.placement, cfg.episodes, list(cfg.seeds),
        workers, "" if workers == 1 else "s",
    )
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_train_one_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        rows = [_train_one_seed(cfg, seed) for seed in cfg.seeds]
    rows.sort()
    _aggregate(cfg, [p for _s, p, _v in rows])

    for seed, path, violations in rows:
        print(f"seed {seed}: {path} ({violations} violations)")
    print(f"aggregate: {out / 'aggregate.csv'}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    bundled = _load_bundle(args)
    spec, abstraction = _load_automata(args, bundled)
    shield = load_shield(args.shield)
    import random

    report = verify_shield(
        shield,
        spec,
        abstraction,
        mode=args.mode,
        walks=args.walks,
        walk_len=args.walk_len,
        rng=random.Random(args.seed if args.seed is not None else 0),
    )
    doc = {
        "mode": report.mode,
        "sampled": report.sampled,
        "states_checked": report.states_checked,
        "menus_checked": report.menus_checked,
        "exclusions_certified": report.exclusions_certified,
        "over_restrictions": list(report.over_restrictions),
        "counterexamples": list(report.counterexamples),
        "ok": report.ok,
    }
    if args.out is not None:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        _write_json(outdir / "verification.json", doc)
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0 if report.ok else 2


def cmd_report(args: argparse.Namespace) -> int:
    runs = Path(args.runs)
    paths = sorted(runs.glob("seed_*.csv"))
    if not paths:
        raise ValidationError(f"{runs}: no seed_*.csv files to report on")
    window = args.window
    summary = []
    for path in paths:
        lg = RunLog.from_csv(path)
        rewards = [r.accumulated_reward for r in lg.records]
        tail = rewards[-window:] if rewards else []
        summary.append({
            "seed": int(path.stem.split("_")[1]),
            "episodes": len(rewards),
            "final_mean": statistics.fmean(tail) if tail else None,
            "best_episode": max(rewards) if rewards else None,
            "violations": lg.total_violations(),
        })
    finals = [row["final_mean"] for row in summary if row["final_mean"] is not None]
    doc = {
        "runs": str(runs),
        "window": window,
        "seeds": summary,
        "median_final_mean": statistics.median(finals) if finals else None,
        "total_violations": sum(row["violations"] for row in summary),
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def _add_bundle_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", default=None,
                   help=f"bundled environment: {', '.join(BUNDLED_ENVIRONMENTS)}")
    p.add_argument("--map", default=None,
                   help="grid map file (a sibling .cycle file is picked up if present)")
    p.add_argument("--energy", default=None, help="water-tank energy CSV override")
    p.add_argument("--spec", default=None, help="specification automaton JSON")
    p.add_argument("--abstraction", default=None, help="abstraction automaton JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shieldsynth",
        description="Synthesize, verify, and train behind safety shields.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a shield and report game sizes")
    _add_bundle_flags(p)
    p.add_argument("--placement", default="preemptive", choices=("preemptive", "postposed"))
    p.add_argument("--out", default="synth", help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run a training experiment, one CSV per seed")
    _add_bundle_flags(p)
    p.add_argument("--config", default=None, help="flat JSON experiment config")
    p.add_argument("--placement", default=None, choices=_PLACEMENTS)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help="single seed")
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel seed workers (default 1, fully sequential)")
    p.add_argument("--algorithm", default=None, choices=("q", "sarsa"))
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--alpha-final", dest="alpha_final", type=float, default=None)
    p.add_argument("--alpha-decay-until", dest="alpha_decay_until", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--epsilon-start", dest="epsilon_start", type=float, default=None)
    p.add_argument("--epsilon-final", dest="epsilon_final", type=float, default=None)
    p.add_argument("--epsilon-decay-until", dest="epsilon_decay_until", type=float, default=None)
    p.add_argument("--rank-width", dest="rank_width", type=int, default=None)
    p.add_argument("--tie-break", dest="tie_break", default=None,
                   choices=("lowest", "random"))
    p.add_argument("--reward-variant", dest="reward_variant", default=None,
                   choices=("punish", "passthrough"))
    p.add_argument("--punish-reward", dest="punish_reward", type=float, default=None)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="check a shield against its automata")
    _add_bundle_flags(p)
    p.add_argument("--shield", required=True, help="shield JSON to verify")
    p.add_argument("--mode", default="exhaustive", choices=("exhaustive", "randomized"))
    p.add_argument("--walks", type=int, default=500)
    p.add_argument("--walk-len", dest="walk_len", type=int, default=300)
    p.add_argument("--seed", type=int, default=None, help="randomized-mode RNG seed")
    p.add_argument("--out", default=None, help="directory for verification.json")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="summarize a directory of training runs")
    p.add_argument("--runs", required=True, help="directory holding seed_*.csv")
    p.add_argument("--window", type=int, default=100,
                   help="tail window for the final-mean column")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    level = os.environ.get("SHIELD_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UnrealizableError as e:
        print(f"unrealizable: {e}", file=sys.stderr)
        return 2
    except ShieldsynthError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
