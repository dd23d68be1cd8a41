"""Command-line surface: train, eval, sweep, report, validate-config."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .agent import AGENT_NAMES, DdpgAgent, build_agent, evaluate, train
from .autonet import param_count
from .config import (ConfigError, load_scenario, load_training, read_config_file,
                     scenario_from_dict, training_from_dict)
from .environment import SliceEnv
from .harness import (SCENARIOS, SCHEMA_VERSION, EvalReport, Experiment,
                      ExperimentError, apply_scenario, check_scenario_structure,
                      collect_reports, run_experiment, summarize, user_detail_line,
                      _seed, _write_csv, _AGENT, _EVAL_ENV, _LAYOUT, _TRAIN_ENV)
from .topology import build_graph, build_layout

log = logging.getLogger("mecslice")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="TOML/JSON config file")
    p.add_argument("--seed", type=int, default=None,
                   help="root seed (default: the config's seed, else 0)")
    p.add_argument("--out", type=Path, default=Path("runs"))
    p.add_argument("--quiet", action="store_true", help="suppress progress logs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mecslice",
        description="Sliced multi-node edge-computing simulator and RL harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate-config", help="check a config file (or the defaults)")
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="train one agent on one scenario")
    _add_common(p)
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--agent", choices=AGENT_NAMES, required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate an agent (loads a checkpoint if present)")
    _add_common(p)
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--agent", choices=AGENT_NAMES, required=True)
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="checkpoint stem; defaults to the train output location")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--detail", action="store_true",
                   help="also write per-user detail.jsonl")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="train+evaluate a roster over a parameter grid")
    _add_common(p)
    p.add_argument("--scenario", choices=SCENARIOS, default=None,
                   help="override the config file's scenario")
    p.add_argument("--agent", action="append", default=None,
                   help="override the roster (repeatable)")
    p.add_argument("--workers", type=int, default=1,
                   help="parallel processes across sweep points")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize report.json files under --out")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def _load_doc(path: Path | None) -> dict:
    return read_config_file(path) if path is not None else {}


def cmd_validate(args) -> int:
    doc = _load_doc(args.config)
    scenario_from_dict(doc)
    training_from_dict(doc)
    _experiment_sections(doc)
    print("config ok")
    return 0


def _experiment_sections(doc: dict) -> dict:
    sec = dict(doc.get("experiment", {}))
    allowed = {"scenario", "agents", "eval_episodes", "eval_steps", "seed",
               "out_dir", "sweep", "workers", "write_user_detail"}
    for key in sec:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in [experiment]")
    if "scenario" in sec and sec["scenario"] not in SCENARIOS:
        raise ConfigError(f"experiment.scenario must be one of {SCENARIOS}")
    for key in ("eval_episodes", "eval_steps", "seed", "workers"):
        if key in sec and not isinstance(sec[key], int):
            raise ConfigError(f"experiment.{key} must be an integer")
    for agent in sec.get("agents", []):
        if agent not in AGENT_NAMES:
            raise ConfigError(f"experiment.agents contains unknown agent '{agent}'")
    for axis, values in sec.get("sweep", {}).items():
        if axis not in ("n_nodes", "n_users", "compute_hz", "rb_count"):
            raise ConfigError(f"unknown sweep axis '{axis}'")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep axis '{axis}' needs a non-empty list")
    return sec


def _root_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    doc = _load_doc(args.config)
    return int(doc.get("experiment", {}).get("seed", 0))


def _build_single(args, seed: int):
    """Environment + agent for the train/eval subcommands (no sweep)."""
    cfg = apply_scenario(load_scenario(args.config), args.scenario).validate()
    training = load_training(args.config)
    layout = build_layout(cfg, _seed(seed, _LAYOUT, 0))
    graph = build_graph(layout, cfg.max_neighbors, cfg.coop_penalty)
    check_scenario_structure(args.scenario, graph)
    train_env = SliceEnv(cfg, _seed(seed, _TRAIN_ENV, 0, 0),
                         layout=layout, graph=graph)
    agent = build_agent(args.agent, train_env, training,
                        _seed(seed, _AGENT, 0, 0),
                        self_compute_only=args.scenario == "noncoop-multi")
    return cfg, training, layout, graph, train_env, agent


def cmd_train(args) -> int:
    if args.agent == "random":
        raise ExperimentError("the random agent is training-free; use 'eval' directly")
    cfg, training, layout, graph, env, agent = _build_single(args, _root_seed(args))
    log.info("training %s on %s (%d episodes x %d steps)", args.agent,
             args.scenario, training.episodes, training.steps_per_episode)
    records = train(env, agent, training)
    agent_dir = Path(args.out) / args.scenario / "base" / args.agent
    agent_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(agent_dir / "training_log.csv",
               ["episode", "mean_reward", "critic_loss", "actor_objective", "sigma"],
               [[r["episode"], r["mean_reward"], r["critic_loss"],
                 r["actor_objective"], r["sigma"]] for r in records])
    agent.save(agent_dir / "checkpoint")
    log.info("wrote %s", agent_dir / "checkpoint.bin")
    return 0


def cmd_eval(args) -> int:
    seed = _root_seed(args)
    cfg, training, layout, graph, structure_env, agent = _build_single(args, seed)
    agent_dir = Path(args.out) / args.scenario / "base" / args.agent
    if isinstance(agent, DdpgAgent):
        stem = args.checkpoint or agent_dir / "checkpoint"
        if Path(stem).with_suffix(".json").exists():
            agent.load(stem)
            log.info("loaded checkpoint %s", stem)
        else:
            log.warning("no checkpoint at %s; evaluating the untrained policy", stem)
    eval_env = SliceEnv(cfg, _seed(seed, _EVAL_ENV, 0), layout=layout,
                        graph=graph, table=structure_env.table)
    episodes = args.episodes or 100
    trajectory: list[list] = []
    detail_rows: list[str] = []

    def on_step(episode, t, result):
        trajectory.append([episode, t, result.reward, result.satisfied_count,
                           result.generated_count])
        if args.detail:
            detail_rows.append(user_detail_line(episode, t, result))
    ssr = evaluate(eval_env, agent, episodes, training.steps_per_episode, on_step)
    agent_dir.mkdir(parents=True, exist_ok=True)
    if args.detail:
        (agent_dir / "detail.jsonl").write_text("\n".join(detail_rows) + "\n")
    _write_csv(agent_dir / "trajectory.csv",
               ["episode", "t", "reward", "satisfied", "generated"], trajectory)
    _write_csv(agent_dir / "eval.csv", ["episode", "ssr"],
               [[i, v] for i, v in enumerate(ssr)])
    report = EvalReport.from_ssr(args.agent, ssr, param_count(agent))
    payload = {"schema_version": SCHEMA_VERSION, "scenario": args.scenario,
               "point": {}, "eval_episodes": episodes,
               "agents": {args.agent: report.to_dict()}}
    (agent_dir.parent / "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True))
    print(f"{args.agent} mean SSR over {episodes} episodes: {report.mean:.4f}")
    return 0


def cmd_sweep(args) -> int:
    doc = _load_doc(args.config)
    sec = _experiment_sections(doc)
    scenario = args.scenario or sec.get("scenario", "coop-multi")
    agents = args.agent or list(sec.get("agents", ["rgrl", "random"]))
    exp = Experiment(
        scenario=scenario,
        agents=agents,
        base=apply_scenario(scenario_from_dict(doc), scenario),
        training=training_from_dict(doc),
        eval_episodes=int(sec.get("eval_episodes", 100)),
        eval_steps=int(sec["eval_steps"]) if "eval_steps" in sec else None,
        sweep={k: list(v) for k, v in sec.get("sweep", {}).items()},
        seed=_root_seed(args),
        out_dir=args.out,
        workers=max(args.workers, int(sec.get("workers", 1))),
        write_user_detail=bool(sec.get("write_user_detail", False)),
    )
    reports = run_experiment(exp)
    print(f"wrote {len(reports)} report(s) under {args.out}")
    return 0


def cmd_report(args) -> int:
    reports = collect_reports(args.out)
    if not reports:
        raise ExperimentError(f"no report.json found under {args.out}")
    rows = summarize(reports, args.out)
    widths = ("scenario", "point", "agent", "mean_ssr", "variance", "param_count")
    print("  ".join(widths))
    for row in rows:
        print("  ".join(str(row[k]) if not isinstance(row[k], float)
                        else f"{row[k]:.4f}" for k in widths))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(message)s",
                        level=logging.WARNING if getattr(args, "quiet", False)
                        else logging.INFO)
    try:
        return args.func(args)
    except (ConfigError, ExperimentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
