"""Discrete-time MDP of the sliced multi-node edge system.

One `step` applies a hybrid allocation action: masked cross-node compute
sharing, per-slice and per-user compute splits, per-slice and per-user
resource-block splits.  Queues evolve as fluid backlogs in bits; the reward is
the fraction of this slot's task requests whose drain-time latency meets the
slice's bound.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ScenarioConfig
from .topology import Graph, NodeLayout, build_graph, build_layout


@dataclass
class Action:
    """Stacked simplex-constrained allocation fractions.

    node_compute row n is node n's compute split across all nodes; the
    slice/user lists are indexed [node][slice].
    """

    node_compute: np.ndarray              # (N, N)
    slice_compute: list[np.ndarray]       # [n] -> (S_n,)
    user_compute: list[list[np.ndarray]]  # [n][s] -> (|U_s^n|,)
    slice_rb: list[np.ndarray]            # [n] -> (S_n,)
    user_rb: list[list[np.ndarray]]       # [n][s] -> (|U_s^n|,)

    def validate(self, atol: float = 1e-6) -> "Action":
        def check(vec, label):
            if (np.asarray(vec) < 0).any():
                raise ValueError(f"negative allocation in {label}")
            s = float(np.sum(vec))
            if abs(s - 1.0) > atol:
                raise ValueError(f"{label} sums to {s}, expected 1")
        for n, row in enumerate(self.node_compute):
            check(row, f"node_compute[{n}]")
        for n in range(len(self.slice_compute)):
            check(self.slice_compute[n], f"slice_compute[{n}]")
            check(self.slice_rb[n], f"slice_rb[{n}]")
            for s in range(len(self.slice_compute[n])):
                check(self.user_compute[n][s], f"user_compute[{n}][{s}]")
                check(self.user_rb[n][s], f"user_rb[{n}][{s}]")
        return self


@dataclass
class UserTable:
    """Structure-of-arrays over all users plus the slice layout.

    The slice layout (counts and service types) is fixed when the table is
    built; per-user attributes are resampled between episodes.
    """

    node: np.ndarray          # (U,) owning node index
    slice_idx: np.ndarray     # (U,) slice index within the node
    service: np.ndarray       # (U,) index into config.services
    distance_m: np.ndarray    # (U,)
    arrival_rate: np.ndarray  # (U,)
    pareto_shape: np.ndarray  # (U,)
    threshold_bits: np.ndarray  # (U,)
    latency_bound_s: np.ndarray  # (U,)
    slice_services: list[list[int]]          # [n] -> service index per slice
    slice_users: list[list[np.ndarray]]      # [n][s] -> global user indices

    @property
    def n_users(self) -> int:
        return int(self.node.shape[0])

    @property
    def n_nodes(self) -> int:
        return len(self.slice_services)

    def slices_per_node(self) -> list[int]:
        return [len(s) for s in self.slice_services]

    def users_per_node(self) -> list[int]:
        return [sum(len(u) for u in node_slices) for node_slices in self.slice_users]

    def node_user_order(self, n: int) -> np.ndarray:
        """Global indices of node n's users, slice-major."""
        groups = self.slice_users[n]
        if not groups:
            return np.empty(0, dtype=int)
        return np.concatenate(groups)


def sample_slice_layout(config: ScenarioConfig, rng: np.random.Generator
                        ) -> list[list[int]]:
    """Draw each node's slice count and service types.

    The first slices cover the service classes in order (all of them whenever
    the count allows); extra slices draw a random class whose per-slice
    minimum still fits the remaining user budget.
    """
    n_services = len(config.services)
    minimums = [svc.min_users_per_slice for svc in config.services]
    lo, hi = config.slice_count_range
    counts = [int(rng.integers(lo, hi + 1)) for _ in range(config.n_nodes)]
    layout = [list(range(min(c, n_services))) for c in counts]
    budget = config.n_users - sum(minimums[t] for types in layout for t in types)
    if budget < 0:
        raise ConfigError(
            "n_users cannot cover the mandatory per-slice minimum users")
    for n, count in enumerate(counts):
        while len(layout[n]) < count:
            feasible = [t for t in range(n_services) if minimums[t] <= budget]
            if not feasible:
                break
            t = int(rng.choice(feasible))
            layout[n].append(t)
            budget -= minimums[t]
    return layout


def build_users(config: ScenarioConfig, rng: np.random.Generator,
                slice_services: list[list[int]] | None = None,
                slice_sizes: list[list[int]] | None = None) -> UserTable:
    """Assign users to slices (minimums first, remainder at random) and draw
    their per-user service parameters.

    Passing `slice_services`/`slice_sizes` pins the structure so only the
    user attributes are redrawn; learned network shapes rely on this.
    """
    if slice_services is None:
        slice_services = sample_slice_layout(config, rng)
    slots = [(n, s) for n, types in enumerate(slice_services)
             for s in range(len(types))]
    if slice_sizes is None:
        minimums = [svc.min_users_per_slice for svc in config.services]
        counts = {slot: minimums[slice_services[slot[0]][slot[1]]] for slot in slots}
        assigned = sum(counts.values())
        if assigned > config.n_users:
            raise ConfigError("n_users cannot cover the mandatory per-slice minimum users")
        extra = config.n_users - assigned
        if extra:
            picks = rng.integers(0, len(slots), size=extra)
            for p in picks:
                counts[slots[int(p)]] += 1
    else:
        counts = {(n, s): slice_sizes[n][s] for (n, s) in slots}
        if sum(counts.values()) != config.n_users:
            raise ConfigError("pinned slice sizes do not add up to n_users")

    node_idx, slice_idx, service = [], [], []
    slice_users: list[list[np.ndarray]] = [[] for _ in slice_services]
    next_uid = 0
    for (n, s) in slots:
        size = counts[(n, s)]
        ids = np.arange(next_uid, next_uid + size)
        next_uid += size
        slice_users[n].append(ids)
        node_idx.extend([n] * size)
        slice_idx.extend([s] * size)
        service.extend([slice_services[n][s]] * size)

    u = config.n_users
    service = np.asarray(service)
    d_lo, d_hi = config.user_ring_m
    # uniform over the annulus area, so radii are area-weighted
    radii = np.sqrt(d_lo ** 2 + rng.random(u) * (d_hi ** 2 - d_lo ** 2))
    kappa = np.empty(u)
    zeta = np.empty(u)
    threshold = np.empty(u)
    bound = np.empty(u)
    for t, svc in enumerate(config.services):
        mask = service == t
        m = int(mask.sum())
        kappa[mask] = rng.uniform(*svc.arrival_rate, size=m)
        zeta[mask] = rng.uniform(*svc.pareto_shape, size=m)
        threshold[mask] = rng.uniform(*svc.task_threshold_bits, size=m)
        bound[mask] = svc.latency_bound_s
    return UserTable(np.asarray(node_idx), np.asarray(slice_idx), service, radii,
                     kappa, zeta, threshold, bound, slice_services, slice_users)


@dataclass(frozen=True)
class DimensionCaps:
    """Declared padded widths so network shapes stay fixed across a sweep."""

    max_nodes: int
    max_slices: int
    max_users_per_slice: int
    max_users_per_node: int

    @staticmethod
    def for_table(table: UserTable) -> "DimensionCaps":
        max_slices = max(table.slices_per_node())
        max_per_slice = max(len(ids) for groups in table.slice_users for ids in groups)
        return DimensionCaps(table.n_nodes, max_slices, max_per_slice,
                             max(table.users_per_node()))

    def admits(self, table: UserTable) -> bool:
        derived = DimensionCaps.for_table(table)
        return (self.max_nodes >= derived.max_nodes
                and self.max_slices >= derived.max_slices
                and self.max_users_per_slice >= derived.max_users_per_slice
                and self.max_users_per_node >= derived.max_users_per_node)


@dataclass
class StepResult:
    observation: np.ndarray     # next node-feature matrix (N, F)
    reward: float
    satisfied_count: int
    generated_count: int
    latency_s: np.ndarray       # (U,) drain-time estimate, inf when starved
    arrivals: np.ndarray        # (U,) 0/1 task-request flags
    task_bits: np.ndarray       # (U,) sampled sizes, 0 without a request
    compute_rate: np.ndarray    # (U,) bits/s
    transmit_rate: np.ndarray   # (U,) bits/s


@dataclass
class SystemState:
    """Snapshot of the queue/channel state (for inspection and tests)."""

    cq_bits: np.ndarray
    tq_bits: np.ndarray
    gain: np.ndarray
    weighted_adjacency: np.ndarray


def sample_tasks(table: UserTable, rng: np.random.Generator
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Draw this slot's task requests and sizes.

    Requests are Bernoulli per user; sizes follow the inverse-CDF heavy-tail
    draw size = threshold * u^(-1/shape) with u in (0, 1].  Both streams
    consume one uniform per user every slot so the stream layout does not
    depend on outcomes.
    """
    u = table.n_users
    arrivals = (rng.random(u) < table.arrival_rate).astype(np.int64)
    tail = 1.0 - rng.random(u)   # (0, 1]
    sizes = table.threshold_bits * tail ** (-1.0 / table.pareto_shape)
    return arrivals, np.where(arrivals == 1, sizes, 0.0)


def effective_compute(action: Action, graph: Graph, table: UserTable,
                      config: ScenarioConfig) -> np.ndarray:
    """Per-user compute service rate in bits/s.

    Cross-node fractions are masked by the adjacency and renormalized; a row
    with zero overlap falls back to uniform over the node's neighborhood.
    Node budgets are then discounted by the cooperation edge weights and split
    down slice and user levels.
    """
    n = graph.n_nodes
    mask = graph.adjacency
    node_budget = np.empty(n)
    for i in range(n):
        masked = mask[i] * action.node_compute[i]
        total = masked.sum()
        if total == 0.0:
            effective = mask[i] / mask[i].sum()
        else:
            effective = masked / total
        node_budget[i] = (graph.edge_weights[i] * effective).sum() * config.compute_hz

    rate = np.empty(table.n_users)
    for i in range(n):
        for s, ids in enumerate(table.slice_users[i]):
            slice_budget = action.slice_compute[i][s] * node_budget[i]
            per_user = action.user_compute[i][s] * slice_budget
            if config.rc_orientation == "corrected":
                rate[ids] = per_user / config.cycles_per_bit
            else:
                with np.errstate(divide="ignore"):
                    rate[ids] = config.cycles_per_bit / per_user
    return rate


def linear_snr(gain: np.ndarray, config: ScenarioConfig) -> np.ndarray:
    """Per-user SNR.  The RB fraction cancels between signal power and noise
    bandwidth, so the ratio depends on the channel gain only."""
    return (config.rb_power_w * gain) / (config.noise_psd_w_hz * config.rb_bandwidth_hz)


def effective_rate(action: Action, gain: np.ndarray, table: UserTable,
                   config: ScenarioConfig) -> np.ndarray:
    """Per-user radio transmit rate in bits/s."""
    snr = linear_snr(gain, config)
    rate = np.empty(table.n_users)
    for i in range(table.n_nodes):
        for s, ids in enumerate(table.slice_users[i]):
            slice_rbs = action.slice_rb[i][s] * config.rb_count
            user_rbs = action.user_rb[i][s] * slice_rbs
            rate[ids] = user_rbs * config.rb_bandwidth_hz * np.log2(1.0 + snr[ids])
    return rate


def advance_queues(cq: np.ndarray, tq: np.ndarray, task_bits: np.ndarray,
                   compute_rate: np.ndarray, transmit_rate: np.ndarray,
                   slot_s: float, tq_update: str) -> tuple[np.ndarray, np.ndarray]:
    """One-slot fluid queue update: arrivals join the computing queue, compute
    output feeds the transmission queue, the radio drains it (default mode;
    'paper' keeps the signs of the source formulation)."""
    next_cq = np.maximum(cq + task_bits - compute_rate * slot_s, 0.0)
    if tq_update == "corrected":
        flow = (compute_rate - transmit_rate) * slot_s
    else:
        flow = (transmit_rate - compute_rate) * slot_s
    next_tq = np.maximum(tq + flow, 0.0)
    return next_cq, next_tq


def drain_latency(cq: np.ndarray, tq: np.ndarray, compute_rate: np.ndarray,
                  transmit_rate: np.ndarray) -> np.ndarray:
    """Backlog drain time through the slower of the two service rates.

    Empty backlog is 0 regardless of the rates; positive backlog with a
    stalled pipe is +inf, never an error.
    """
    backlog = cq + tq
    service = np.minimum(compute_rate, transmit_rate)
    latency = np.full(backlog.shape, np.inf)
    with np.errstate(over="ignore"):
        np.divide(backlog, service, out=latency, where=service > 0)
    latency[backlog == 0.0] = 0.0
    return latency


class SliceEnv:
    """Single-writer environment instance; all randomness flows through
    per-instance seeded streams so runs are reproducible."""

    def __init__(self, config: ScenarioConfig, seed, layout: NodeLayout | None = None,
                 graph: Graph | None = None, caps: DimensionCaps | None = None,
                 table: UserTable | None = None):
        self.config = config.validate()
        root = seed if isinstance(seed, np.random.SeedSequence) \
            else np.random.SeedSequence(seed)
        layout_ss, structure_ss, self._episode_ss, task_ss, gain_ss = root.spawn(5)
        if layout is None:
            layout = build_layout(config, layout_ss)
        if graph is None:
            graph = build_graph(layout, config.max_neighbors, config.coop_penalty)
        if graph.n_nodes != config.n_nodes:
            raise ConfigError("graph/config node-count mismatch")
        self.layout = layout
        self.graph = graph
        self._task_rng = np.random.default_rng(task_ss)
        self._gain_rng = np.random.default_rng(gain_ss)
        # slice structure is fixed for the life of the env so learned network
        # shapes stay valid; user attributes resample on reset.  A shared
        # table pins the structure across several envs (e.g. train vs eval).
        if table is not None:
            if table.n_users != config.n_users or table.n_nodes != config.n_nodes:
                raise ConfigError("shared table does not match the config")
            self.table = table
        else:
            structure_rng = np.random.default_rng(structure_ss)
            self.table = build_users(config, structure_rng)
        self.caps = caps if caps is not None else DimensionCaps.for_table(self.table)
        if not self.caps.admits(self.table):
            raise ConfigError("declared dimension caps are smaller than the scenario")
        self._episode = 0
        self._mean_pathloss = float(np.mean(self.table.distance_m
                                            ** -config.pathloss_exponent))
        self._init_state()

    # -- state handling -----------------------------------------------------

    def _init_state(self):
        u = self.table.n_users
        self.cq_bits = np.zeros(u)
        self.tq_bits = np.zeros(u)
        self._resample_gains()
        if self.config.obs_window > 0:
            self.recent_bits = np.zeros((u, self.config.obs_window))

    def _resample_gains(self):
        fading = self._gain_rng.exponential(1.0, size=self.table.n_users)
        self.gain = fading * self.table.distance_m ** -self.config.pathloss_exponent

    def reset(self) -> np.ndarray:
        """Clear queues, redraw user attributes (same slice structure and
        sizes), and return the first observation."""
        if self.config.resample_users_on_reset:
            rng = np.random.default_rng(self._episode_ss.spawn(1)[0])
            sizes = [[len(ids) for ids in groups] for groups in self.table.slice_users]
            self.table = build_users(self.config, rng,
                                     slice_services=self.table.slice_services,
                                     slice_sizes=sizes)
            self._mean_pathloss = float(np.mean(
                self.table.distance_m ** -self.config.pathloss_exponent))
        self._episode += 1
        self._init_state()
        return self.observe()

    def state_snapshot(self) -> SystemState:
        return SystemState(self.cq_bits.copy(), self.tq_bits.copy(),
                           self.gain.copy(), self.graph.weighted_adjacency.copy())

    # -- dynamics -----------------------------------------------------------

    def step(self, action: Action) -> StepResult:
        cfg = self.config
        self._check_dims(action)
        action.validate()

        arrivals, task_bits = sample_tasks(self.table, self._task_rng)
        compute_rate = effective_compute(action, self.graph, self.table, cfg)
        transmit_rate = effective_rate(action, self.gain, self.table, cfg)
        self.cq_bits, self.tq_bits = advance_queues(
            self.cq_bits, self.tq_bits, task_bits, compute_rate, transmit_rate,
            cfg.slot_s, cfg.tq_update)
        latency = drain_latency(self.cq_bits, self.tq_bits, compute_rate,
                                transmit_rate)
        met = (latency <= self.table.latency_bound_s) & (arrivals == 1)
        satisfied = int(met.sum())
        generated = int(arrivals.sum())
        reward = satisfied / generated if generated > 0 else cfg.idle_reward

        if cfg.obs_window > 0:
            self.recent_bits = np.roll(self.recent_bits, 1, axis=1)
            self.recent_bits[:, 0] = task_bits
        self._resample_gains()
        return StepResult(self.observe(), reward, satisfied, generated, latency,
                          arrivals, task_bits, compute_rate, transmit_rate)

    def _check_dims(self, action: Action):
        t = self.table
        if action.node_compute.shape != (t.n_nodes, t.n_nodes):
            raise ValueError("node_compute shape mismatch")
        for n in range(t.n_nodes):
            s_n = len(t.slice_services[n])
            if len(action.slice_compute[n]) != s_n or len(action.slice_rb[n]) != s_n:
                raise ValueError(f"slice allocation length mismatch at node {n}")
            for s in range(s_n):
                expect = len(t.slice_users[n][s])
                if (len(action.user_compute[n][s]) != expect
                        or len(action.user_rb[n][s]) != expect):
                    raise ValueError(f"user allocation length mismatch at ({n},{s})")

    # -- observation --------------------------------------------------------

    @property
    def obs_feature_dim(self) -> int:
        per_user = 3 + self.config.obs_window
        return per_user * self.caps.max_users_per_node

    def observe(self) -> np.ndarray:
        """Per-node feature rows: [cq, tq, gain] per user slot (queue backlogs
        scaled to O(1), gains divided by their scenario mean), zero padding for
        absent slots, each slot optionally extended with recent task sizes."""
        cfg = self.config
        per_user = 3 + cfg.obs_window
        out = np.zeros((self.table.n_nodes, self.obs_feature_dim))
        scale = cfg.backlog_scale_bits
        for n in range(self.table.n_nodes):
            ids = self.table.node_user_order(n)
            for slot, uid in enumerate(ids):
                base = slot * per_user
                out[n, base] = self.cq_bits[uid] / scale
                out[n, base + 1] = self.tq_bits[uid] / scale
                out[n, base + 2] = self.gain[uid] / self._mean_pathloss
                if cfg.obs_window > 0:
                    out[n, base + 3:base + 3 + cfg.obs_window] = (
                        self.recent_bits[uid] / scale)
        return out
