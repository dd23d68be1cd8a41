"""Cooperative multi-node edge-computing RAN slicing simulator and RL agents."""

from .config import (ConfigError, ScenarioConfig, ServiceSpec, TrainingConfig,
                     dbm_to_watts, desk_config)
from .environment import (Action, DimensionCaps, SliceEnv, StepResult, UserTable,
                          build_users)
from .topology import (Graph, NodeLayout, PropagationOperator, build_graph,
                       build_layout, propagation_operator)
from .agent import (AGENT_NAMES, ActionCodec, DdpgAgent, RandomAgent,
                    build_agent, evaluate, train)
from .harness import EvalReport, Experiment, run_experiment, summarize

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ScenarioConfig", "ServiceSpec", "TrainingConfig",
    "dbm_to_watts", "desk_config",
    "Action", "DimensionCaps", "SliceEnv", "StepResult", "UserTable", "build_users",
    "Graph", "NodeLayout", "PropagationOperator", "build_graph", "build_layout",
    "propagation_operator",
    "AGENT_NAMES", "ActionCodec", "DdpgAgent", "RandomAgent", "build_agent",
    "evaluate", "train",
    "EvalReport", "Experiment", "run_experiment", "summarize",
    "__version__",
]
