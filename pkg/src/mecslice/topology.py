"""Weighted undirected graph abstraction of the multi-node edge deployment."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ScenarioConfig


@dataclass(frozen=True)
class NodeLayout:
    """Node coordinates inside the square deployment area plus user geometry."""

    positions: np.ndarray           # (N, 2) meters
    area_side_m: float
    coverage_radius_m: float
    user_ring_m: tuple[float, float]

    @property
    def n_nodes(self) -> int:
        return int(self.positions.shape[0])


@dataclass(frozen=True)
class Graph:
    """Adjacency with self-connections and cooperation-cost edge weights."""

    adjacency: np.ndarray           # (N, N) binary, unit diagonal, symmetric
    edge_weights: np.ndarray        # (N, N), 1 on the diagonal, 0 for absent edges
    weighted_adjacency: np.ndarray  # adjacency * edge_weights
    max_neighbors: int

    @property
    def n_nodes(self) -> int:
        return int(self.adjacency.shape[0])


@dataclass(frozen=True)
class PropagationOperator:
    """Symmetrically normalized adjacency used by graph-convolution layers."""

    matrix: np.ndarray              # D^{-1/2} A D^{-1/2}
    degree: np.ndarray              # diagonal of D


def build_layout(config: ScenarioConfig, seed) -> NodeLayout:
    """Place the nodes uniformly at random in the deployment square."""
    if config.n_nodes < 1:
        raise ConfigError("n_nodes must be >= 1")
    d_lo, d_hi = config.user_ring_m
    if not 0 <= d_lo < d_hi <= config.coverage_radius_m:
        raise ConfigError("user_ring_m must satisfy 0 <= lo < hi <= coverage_radius_m")
    rng = np.random.default_rng(seed)
    positions = rng.uniform(0.0, config.area_side_m, size=(config.n_nodes, 2))
    return NodeLayout(positions, config.area_side_m, config.coverage_radius_m,
                      (d_lo, d_hi))


def build_graph(layout: NodeLayout, max_neighbors: int, coop_penalty: float) -> Graph:
    """Link every node to its `max_neighbors` nearest peers, then symmetrize.

    Symmetrization is by union, so a node can end up with more than
    `max_neighbors` links (at most twice as many).  Edge weights fall off as
    shortest-present-edge / edge-length, scaled by the cooperation penalty;
    self-weights are 1 and absent pairs get weight 0.
    """
    n = layout.n_nodes
    if not 0 <= max_neighbors <= n:
        raise ConfigError("max_neighbors must be in [0, n_nodes]")
    if not 0.0 < coop_penalty <= 1.0:
        raise ConfigError("coop_penalty must be in (0, 1]")

    adjacency = np.eye(n)
    k = min(max_neighbors, n - 1)
    if k > 0:
        diff = layout.positions[:, None, :] - layout.positions[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=2))
        for i in range(n):
            order = np.argsort(dist[i])          # self first (distance 0)
            for j in order[1:k + 1]:
                adjacency[i, j] = 1.0
                adjacency[j, i] = 1.0

    weights = np.eye(n)
    off = (adjacency > 0) & ~np.eye(n, dtype=bool)
    if off.any():
        d_min_edge = dist[off].min()
        weights[off] = (d_min_edge / dist[off]) * coop_penalty
    return Graph(adjacency, weights, adjacency * weights, max_neighbors)


def propagation_operator(graph: Graph, weighted: bool = False) -> PropagationOperator:
    """Normalize the adjacency (or its weighted variant) for layer propagation."""
    mat = graph.weighted_adjacency if weighted else graph.adjacency
    degree = mat.sum(axis=1)
    if (degree <= 0).any():
        raise ValueError("every node needs positive degree (self-connections missing?)")
    inv_sqrt = 1.0 / np.sqrt(degree)
    return PropagationOperator(mat * inv_sqrt[:, None] * inv_sqrt[None, :], degree)


def graph_to_json(layout: NodeLayout, graph: Graph) -> str:
    """Dense row-major serialization for harness logs."""
    payload = {
        "n_nodes": layout.n_nodes,
        "positions": [list(map(float, p)) for p in layout.positions],
        "adjacency": [list(map(float, row)) for row in graph.adjacency],
        "edge_weights": [list(map(float, row)) for row in graph.edge_weights],
        "max_neighbors": graph.max_neighbors,
    }
    return json.dumps(payload, sort_keys=True)
