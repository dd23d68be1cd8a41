"""Scenario orchestration: build, train, evaluate, persist.

Three scenarios are supported: the cooperative multi-node deployment, the
single-node degenerate case, and the non-cooperative multi-node case (no
compute sharing; every node keeps its own budget).  A sweep runs a roster of
agents over a grid of scenario parameters, sharing the node layout and the
evaluation world per grid point so comparisons are like-for-like.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agent import AGENT_NAMES, DdpgAgent, build_agent, evaluate, train
from .autonet import param_count
from .config import ScenarioConfig, TrainingConfig
from .environment import DimensionCaps, SliceEnv
from .topology import build_graph, build_layout, graph_to_json

log = logging.getLogger("mecslice")

SCENARIOS = ("coop-multi", "single-node", "noncoop-multi")
SWEEP_AXES = ("n_nodes", "n_users", "compute_hz", "rb_count")
SCHEMA_VERSION = 1

# namespacing tags for derived seed streams
_LAYOUT, _TRAIN_ENV, _EVAL_ENV, _AGENT = 11, 21, 41, 31


class ExperimentError(ValueError):
    """The experiment description violates a scenario constraint."""


@dataclass
class Experiment:
    scenario: str = "coop-multi"
    agents: list[str] = field(default_factory=lambda: ["rgrl", "random"])
    base: ScenarioConfig = field(default_factory=ScenarioConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    eval_episodes: int = 100
    eval_steps: int | None = None
    sweep: dict[str, list] = field(default_factory=dict)
    seed: int = 0
    out_dir: str | Path = "runs"
    caps: DimensionCaps | None = None
    workers: int = 1
    write_user_detail: bool = False

    def __post_init__(self):
        self.base = apply_scenario(self.base, self.scenario)


def apply_scenario(config: ScenarioConfig, scenario: str) -> ScenarioConfig:
    """Force the structural fields the scenario dictates."""
    if scenario == "single-node":
        return replace(config, n_nodes=1, max_neighbors=0)
    if scenario == "noncoop-multi":
        return replace(config, max_neighbors=0)
    if scenario == "coop-multi":
        return config
    raise ExperimentError(f"unknown scenario '{scenario}' (choose from {SCENARIOS})")


def check_experiment(exp: Experiment) -> None:
    """Reject constraint violations before any run starts."""
    if exp.scenario not in SCENARIOS:
        raise ExperimentError(f"unknown scenario '{exp.scenario}'")
    for agent in exp.agents:
        if agent not in AGENT_NAMES:
            raise ExperimentError(f"unknown agent '{agent}'")
    for axis in exp.sweep:
        if axis not in SWEEP_AXES:
            raise ExperimentError(f"unknown sweep axis '{axis}'")
        if not exp.sweep[axis]:
            raise ExperimentError(f"sweep axis '{axis}' has no values")
    if exp.scenario == "single-node":
        if exp.base.n_nodes != 1:
            raise ExperimentError("single-node scenario requires n_nodes = 1")
        if "n_nodes" in exp.sweep and any(v != 1 for v in exp.sweep["n_nodes"]):
            raise ExperimentError("single-node scenario cannot sweep n_nodes")
    if exp.scenario == "noncoop-multi" and exp.base.max_neighbors != 0:
        raise ExperimentError("noncoop-multi scenario requires max_neighbors = 0")
    if exp.eval_episodes < 1:
        raise ExperimentError("eval_episodes must be >= 1")
    if exp.workers < 1:
        raise ExperimentError("workers must be >= 1")
    exp.base.validate()
    exp.training.validate()


def check_scenario_structure(scenario: str, graph) -> None:
    """The degenerate scenarios must instantiate their exact graph."""
    wa = graph.weighted_adjacency
    if scenario == "single-node":
        if wa.shape != (1, 1) or wa[0, 0] != 1.0:
            raise ExperimentError("single-node scenario must yield the trivial graph")
    elif scenario == "noncoop-multi":
        if not np.array_equal(wa, np.eye(wa.shape[0])):
            raise ExperimentError("noncoop-multi scenario must yield an identity graph")


def sweep_points(exp: Experiment) -> list[dict]:
    axes = [a for a in SWEEP_AXES if a in exp.sweep]
    if not axes:
        return [{}]
    grids = [exp.sweep[a] for a in axes]
    return [dict(zip(axes, combo)) for combo in itertools.product(*grids)]


def point_label(point: dict) -> str:
    if not point:
        return "base"
    return "-".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                    for k, v in sorted(point.items()))


@dataclass
class EvalReport:
    agent: str
    ssr: list[float]
    mean: float
    variance: float
    quartiles: tuple[float, float, float, float, float]
    param_count: int

    @staticmethod
    def from_ssr(agent: str, ssr: list[float], n_params: int) -> "EvalReport":
        arr = np.asarray(ssr)
        q = np.percentile(arr, [0, 25, 50, 75, 100])
        return EvalReport(agent, [float(v) for v in ssr], float(arr.mean()),
                          float(arr.var()), tuple(float(v) for v in q), n_params)

    def to_dict(self) -> dict:
        return {"agent": self.agent, "ssr": self.ssr, "mean": self.mean,
                "variance": self.variance, "quartiles": list(self.quartiles),
                "param_count": self.param_count}


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else (f"{v:.12g}" if isinstance(v, float) else v)
                             for v in row])


def _seed(exp_seed: int, *tags: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(exp_seed), *map(int, tags)])


def _run_point(exp: Experiment, pi: int, point: dict) -> dict:
    """Train and evaluate the whole roster at one sweep point."""
    cfg = replace(exp.base, **point)
    cfg = apply_scenario(cfg, exp.scenario).validate()
    layout = build_layout(cfg, _seed(exp.seed, _LAYOUT, pi))
    graph = build_graph(layout, cfg.max_neighbors, cfg.coop_penalty)
    check_scenario_structure(exp.scenario, graph)
    point_dir = Path(exp.out_dir) / exp.scenario / point_label(point)
    point_dir.mkdir(parents=True, exist_ok=True)
    (point_dir / "graph.json").write_text(graph_to_json(layout, graph))

    # one shared evaluation world per point: same env seed, same table
    # structure, so every agent faces identical task/channel draws
    structure_env = SliceEnv(cfg, _seed(exp.seed, _EVAL_ENV, pi),
                             layout=layout, graph=graph, caps=exp.caps)
    agent_reports = {}
    for ai, name in enumerate(exp.agents):
        agent_dir = point_dir / name
        agent_dir.mkdir(parents=True, exist_ok=True)
        train_env = SliceEnv(cfg, _seed(exp.seed, _TRAIN_ENV, pi, ai),
                             layout=layout, graph=graph, caps=exp.caps,
                             table=structure_env.table)
        agent = build_agent(name, train_env, exp.training,
                            _seed(exp.seed, _AGENT, pi, ai),
                            self_compute_only=exp.scenario == "noncoop-multi")
        if isinstance(agent, DdpgAgent):
            log.info("training %s at %s", name, point_label(point))
            records = train(train_env, agent, exp.training)
            _write_csv(agent_dir / "training_log.csv",
                       ["episode", "mean_reward", "critic_loss",
                        "actor_objective", "sigma"],
                       [[r["episode"], r["mean_reward"], r["critic_loss"],
                         r["actor_objective"], r["sigma"]] for r in records])
            agent.save(agent_dir / "checkpoint")
        eval_env = SliceEnv(cfg, _seed(exp.seed, _EVAL_ENV, pi),
                            layout=layout, graph=graph, caps=exp.caps,
                            table=structure_env.table)
        steps = exp.eval_steps or exp.training.steps_per_episode
        trajectory: list[list] = []
        detail_rows: list[str] = []

        def on_step(episode, t, result):
            trajectory.append([episode, t, result.reward,
                               result.satisfied_count, result.generated_count])
            if exp.write_user_detail:
                detail_rows.append(user_detail_line(episode, t, result))
        log.info("evaluating %s at %s", name, point_label(point))
        ssr = evaluate(eval_env, agent, exp.eval_episodes, steps, on_step)
        _write_csv(agent_dir / "trajectory.csv",
                   ["episode", "t", "reward", "satisfied", "generated"],
                   trajectory)
        _write_csv(agent_dir / "eval.csv", ["episode", "ssr"],
                   [[i, v] for i, v in enumerate(ssr)])
        if exp.write_user_detail:
            (agent_dir / "detail.jsonl").write_text("\n".join(detail_rows) + "\n")
        agent_reports[name] = EvalReport.from_ssr(name, ssr, param_count(agent))
    payload = {
        "schema_version": SCHEMA_VERSION,
        "scenario": exp.scenario,
        "point": point,
        "eval_episodes": exp.eval_episodes,
        "agents": {name: rep.to_dict() for name, rep in agent_reports.items()},
    }
    (point_dir / "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True))
    return payload


def user_detail_line(episode: int, t: int, result) -> str:
    """One JSON-lines record of the per-user outcome of a step.

    Non-finite entries (a starved queue's latency) serialize as null so the
    lines stay strict JSON.
    """
    def clean(values):
        return [float(v) if np.isfinite(v) else None for v in values]
    return json.dumps({
        "episode": episode, "t": t, "reward": result.reward,
        "arrivals": [int(v) for v in result.arrivals],
        "task_bits": clean(result.task_bits),
        "latency_s": clean(result.latency_s),
        "compute_rate": clean(result.compute_rate),
        "transmit_rate": clean(result.transmit_rate),
    }, sort_keys=True, allow_nan=False)


def run_experiment(exp: Experiment) -> list[dict]:
    """Train and evaluate the roster over every sweep point; returns the
    per-point report payloads (also written under the output directory).

    Points are independent (own seeds, own output directories), so with
    `workers > 1` they run as parallel processes and the reports are reduced
    after the gather."""
    check_experiment(exp)
    points = sweep_points(exp)
    if exp.workers > 1 and len(points) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=exp.workers) as pool:
            reports = list(pool.map(_run_point, [exp] * len(points),
                                    range(len(points)), points))
    else:
        reports = [_run_point(exp, pi, point) for pi, point in enumerate(points)]
    summarize(reports, Path(exp.out_dir))
    return reports


def summarize(reports: list[dict], out_dir: str | Path | None = None) -> list[dict]:
    """Flatten report payloads into comparison rows (box-plot statistics plus
    parameter counts); optionally write summary.csv / summary.json."""
    if not reports:
        raise ValueError("summarize needs at least one report")
    rows = []
    for payload in reports:
        label = point_label(payload.get("point", {}))
        for name in sorted(payload["agents"]):
            rep = payload["agents"][name]
            rows.append({
                "scenario": payload["scenario"],
                "point": label,
                "agent": name,
                "episodes": len(rep["ssr"]),
                "mean_ssr": rep["mean"],
                "variance": rep["variance"],
                "q_min": rep["quartiles"][0],
                "q1": rep["quartiles"][1],
                "median": rep["quartiles"][2],
                "q3": rep["quartiles"][3],
                "q_max": rep["quartiles"][4],
                "param_count": rep["param_count"],
            })
    rows.sort(key=lambda r: (r["scenario"], r["point"], r["agent"]))
    if out_dir is not None:
        out_dir = Path(out_dir)
        header = list(rows[0].keys())
        _write_csv(out_dir / "summary.csv", header,
                   [[row[k] for k in header] for row in rows])
        (out_dir / "summary.json").write_text(
            json.dumps({"schema_version": SCHEMA_VERSION, "rows": rows},
                       indent=2, sort_keys=True))
    return rows


def collect_reports(out_dir: str | Path) -> list[dict]:
    """Load every per-point report.json beneath a run directory."""
    paths = sorted(Path(out_dir).glob("*/*/report.json"))
    return [json.loads(p.read_text()) for p in paths]
