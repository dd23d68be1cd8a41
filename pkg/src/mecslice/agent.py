"""Actor-critic agents for the hybrid allocation problem.

The four learned variants are toggles over one implementation:
architecture in {dense, gcn} x action-feedback recurrence in {on, off}.
Recurrence feeds the previous decoded action back into the per-node feature
rows; the input block is always present (zero-filled when recurrence is off)
so the toggle never changes parameter counts.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import autonet as an
from .config import TrainingConfig
from .environment import Action, DimensionCaps, UserTable
from .topology import propagation_operator


class TrainingError(RuntimeError):
    """A loss became non-finite; training aborted with context."""


@dataclass(frozen=True)
class _Group:
    """One simplex group: where it sits in the padded head and in the flat
    action vector; `fixed` holds a constant output for hard-projected groups."""

    node: int
    cols: np.ndarray
    out_start: int
    fixed: np.ndarray | None = None

    @property
    def width(self) -> int:
        return len(self.cols)


class ActionCodec:
    """Bidirectional map between actor head logits and feasible actions.

    The head emits one fixed-width row per node; each allocation group is a
    softmax over that row's valid columns, so every decoded action satisfies
    the simplex constraints by construction.  With `self_compute_only` the
    cross-node compute rows are hard-projected to "keep everything local"
    instead of being read from the logits.
    """

    def __init__(self, table: UserTable, caps: DimensionCaps | None = None,
                 self_compute_only: bool = False):
        caps = caps if caps is not None else DimensionCaps.for_table(table)
        if not caps.admits(table):
            raise ValueError("dimension caps are smaller than the scenario")
        self.caps = caps
        self.n_nodes = table.n_nodes
        self.self_compute_only = self_compute_only
        m, s, u = caps.max_nodes, caps.max_slices, caps.max_users_per_slice
        self.head_width = m + 2 * s + 2 * s * u
        slice_c0 = m
        slice_z0 = m + s
        user_c0 = m + 2 * s
        user_z0 = m + 2 * s + s * u

        groups: list[_Group] = []
        start = 0

        def push(node, cols, fixed=None):
            nonlocal start
            cols = np.asarray(cols, dtype=int)
            groups.append(_Group(node, cols, start, fixed))
            start += len(cols)

        for n in range(table.n_nodes):
            if self_compute_only:
                one_hot = np.zeros(table.n_nodes)
                one_hot[n] = 1.0
                push(n, np.arange(table.n_nodes), fixed=one_hot)
            else:
                push(n, np.arange(table.n_nodes))
            s_n = len(table.slice_services[n])
            push(n, slice_c0 + np.arange(s_n))
            push(n, slice_z0 + np.arange(s_n))
            for si in range(s_n):
                k = len(table.slice_users[n][si])
                push(n, user_c0 + si * u + np.arange(k))
            for si in range(s_n):
                k = len(table.slice_users[n][si])
                push(n, user_z0 + si * u + np.arange(k))
        self.groups = groups
        self.flat_dim = start
        self._slices_per_node = table.slices_per_node()

    # -- decoding ------------------------------------------------------------

    def _decode_array(self, logits: np.ndarray) -> tuple[np.ndarray, list]:
        batch = logits.ndim == 3
        xb = logits if batch else logits[None]
        out = np.zeros((xb.shape[0], self.flat_dim))
        saved = []
        for g in self.groups:
            if g.fixed is not None:
                out[:, g.out_start:g.out_start + g.width] = g.fixed
                saved.append(None)
                continue
            z = xb[:, g.node, g.cols]
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            y = e / e.sum(axis=1, keepdims=True)
            out[:, g.out_start:g.out_start + g.width] = y
            saved.append(y)
        return (out if batch else out[0]), saved

    def decode_np(self, logits: np.ndarray) -> np.ndarray:
        return self._decode_array(np.asarray(logits))[0]

    def decode(self, logits: an.Tensor) -> an.Tensor:
        """Differentiable decode; gradients flow through each group softmax
        and stop at hard-projected groups."""
        out, saved = self._decode_array(logits.data)
        batch = logits.data.ndim == 3

        def backward(grad):
            gb = grad if batch else grad[None]
            gx = np.zeros_like(logits.data if batch else logits.data[None])
            for g, y in zip(self.groups, saved):
                if y is None:
                    continue
                gg = gb[:, g.out_start:g.out_start + g.width]
                dot = (gg * y).sum(axis=1, keepdims=True)
                gx[:, g.node, g.cols] += y * (gg - dot)
            logits.accumulate(gx if batch else gx[0])
        return an.Tensor(out, parents=(logits,), backward_fn=backward)

    # -- structured/flat/padded views ----------------------------------------

    def to_action(self, flat: np.ndarray) -> Action:
        it = iter(self.groups)
        node_rows = []
        slice_c, slice_z, user_c, user_z = [], [], [], []
        for n in range(self.n_nodes):
            g = next(it)
            node_rows.append(flat[g.out_start:g.out_start + g.width])
            g = next(it)
            slice_c.append(flat[g.out_start:g.out_start + g.width])
            g = next(it)
            slice_z.append(flat[g.out_start:g.out_start + g.width])
            uc, uz = [], []
            for _ in range(self._slices_per_node[n]):
                g = next(it)
                uc.append(flat[g.out_start:g.out_start + g.width])
            for _ in range(self._slices_per_node[n]):
                g = next(it)
                uz.append(flat[g.out_start:g.out_start + g.width])
            user_c.append(uc)
            user_z.append(uz)
        return Action(np.stack(node_rows), slice_c, user_c, slice_z, user_z)

    def from_action(self, action: Action) -> np.ndarray:
        flat = np.zeros(self.flat_dim)
        it = iter(self.groups)
        for n in range(self.n_nodes):
            g = next(it)
            flat[g.out_start:g.out_start + g.width] = action.node_compute[n]
            g = next(it)
            flat[g.out_start:g.out_start + g.width] = action.slice_compute[n]
            g = next(it)
            flat[g.out_start:g.out_start + g.width] = action.slice_rb[n]
            for s in range(self._slices_per_node[n]):
                g = next(it)
                flat[g.out_start:g.out_start + g.width] = action.user_compute[n][s]
            for s in range(self._slices_per_node[n]):
                g = next(it)
                flat[g.out_start:g.out_start + g.width] = action.user_rb[n][s]
        return flat

    def encode_padded(self, flat: np.ndarray) -> np.ndarray:
        """Place flat action fractions at their padded per-node positions
        (the layout the actor head uses), for the recurrent input block."""
        batch = flat.ndim == 2
        fb = flat if batch else flat[None]
        out = np.zeros((fb.shape[0], self.n_nodes, self.head_width))
        for g in self.groups:
            out[:, g.node, g.cols] = fb[:, g.out_start:g.out_start + g.width]
        return out if batch else out[0]

    def uniform_flat(self) -> np.ndarray:
        flat = np.zeros(self.flat_dim)
        for g in self.groups:
            if g.fixed is not None:
                flat[g.out_start:g.out_start + g.width] = g.fixed
            else:
                flat[g.out_start:g.out_start + g.width] = 1.0 / g.width
        return flat

    def random_flat(self, rng: np.random.Generator) -> np.ndarray:
        flat = np.zeros(self.flat_dim)
        for g in self.groups:
            if g.fixed is not None:
                flat[g.out_start:g.out_start + g.width] = g.fixed
            else:
                flat[g.out_start:g.out_start + g.width] = rng.dirichlet(np.ones(g.width))
        return flat


# -- networks ------------------------------------------------------------------

@dataclass(frozen=True)
class AgentSpec:
    name: str
    architecture: str           # {gcn, dense}
    recurrent: bool
    gcn_hidden: tuple = (64, 64)
    dense_hidden: tuple = (128, 64)
    critic_hidden: tuple = (128, 64)
    gcn_operator: str = "binary"  # {binary, weighted} propagation source


AGENT_PRESETS = {
    "rgrl": AgentSpec("rgrl", "gcn", True),
    "gcn-rl": AgentSpec("gcn-rl", "gcn", False),
    "dense-rrl": AgentSpec("dense-rrl", "dense", True),
    "dense-rl": AgentSpec("dense-rl", "dense", False),
}

AGENT_NAMES = tuple(AGENT_PRESETS) + ("random",)


class GcnActor:
    """Graph-convolution trunk with a shared per-node dense head, so weights
    are independent of the node count."""

    def __init__(self, feat_dim: int, head_width: int, hidden: tuple,
                 rng: np.random.Generator):
        dims = (feat_dim,) + tuple(hidden)
        self.layers = [an.Gcn(dims[i], dims[i + 1], "relu", rng)
                       for i in range(len(dims) - 1)]
        self.head = an.Dense(dims[-1], head_width, "identity", rng)

    def logits(self, prop: np.ndarray, feats, tape: bool = False):
        if tape:
            h = an.as_tensor(feats)
            for layer in self.layers:
                h = layer(prop, h)
            return self.head(h)
        h = np.asarray(feats)
        for layer in self.layers:
            h = layer.forward_np(prop, h)
        return self.head.forward_np(h)

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        out.extend(self.head.parameters())
        return out

    def named_parameters(self, prefix: str = "actor") -> dict:
        named = {}
        for i, layer in enumerate(self.layers):
            named[f"{prefix}.gcn{i}.weight"] = layer.weight
        named[f"{prefix}.head.weight"] = self.head.weight
        named[f"{prefix}.head.bias"] = self.head.bias
        return named


class DenseActor:
    """Fully connected trunk over the flattened node features."""

    def __init__(self, n_nodes: int, feat_dim: int, head_width: int,
                 hidden: tuple, rng: np.random.Generator):
        self.n_nodes = n_nodes
        self.head_width = head_width
        dims = (n_nodes * feat_dim,) + tuple(hidden)
        self.layers = [an.Dense(dims[i], dims[i + 1], "relu", rng)
                       for i in range(len(dims) - 1)]
        self.head = an.Dense(dims[-1], n_nodes * head_width, "identity", rng)

    def logits(self, prop: np.ndarray, feats, tape: bool = False):
        data = feats.data if isinstance(feats, an.Tensor) else np.asarray(feats)
        batch = data.ndim == 3
        rows = data.shape[0] if batch else 1
        out_shape = ((rows,) if batch else ()) + (self.n_nodes, self.head_width)
        if tape:
            h = an.reshape(an.as_tensor(feats), (rows, self.n_nodes * data.shape[-1]))
            for layer in self.layers:
                h = layer(h)
            return an.reshape(self.head(h), out_shape)
        h = data.reshape(rows, self.n_nodes * data.shape[-1])
        for layer in self.layers:
            h = layer.forward_np(h)
        return self.head.forward_np(h).reshape(out_shape)

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        out.extend(self.head.parameters())
        return out

    def named_parameters(self, prefix: str = "actor") -> dict:
        named = {}
        for i, layer in enumerate(self.layers):
            named[f"{prefix}.dense{i}.weight"] = layer.weight
            named[f"{prefix}.dense{i}.bias"] = layer.bias
        named[f"{prefix}.head.weight"] = self.head.weight
        named[f"{prefix}.head.bias"] = self.head.bias
        return named


class Critic:
    """Dense state-action value network with a scalar head."""

    def __init__(self, in_dim: int, hidden: tuple, rng: np.random.Generator):
        dims = (in_dim,) + tuple(hidden) + (1,)
        acts = ["relu"] * len(hidden) + ["identity"]
        self.layers = [an.Dense(dims[i], dims[i + 1], acts[i], rng)
                       for i in range(len(dims) - 1)]

    def forward(self, x: an.Tensor) -> an.Tensor:
        h = x
        for layer in self.layers:
            h = layer(h)
        return h

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        h = x
        for layer in self.layers:
            h = layer.forward_np(h)
        return h

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def named_parameters(self, prefix: str = "critic") -> dict:
        named = {}
        for i, layer in enumerate(self.layers):
            named[f"{prefix}.dense{i}.weight"] = layer.weight
            named[f"{prefix}.dense{i}.bias"] = layer.bias
        return named


# -- replay ---------------------------------------------------------------------

class ReplayBuffer:
    """Uniform ring buffer of transition records."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._records: list[tuple] = []
        self._next = 0

    def __len__(self):
        return len(self._records)

    def push(self, prev_act, obs, act, reward, next_obs):
        record = (np.asarray(prev_act, dtype=np.float64).copy(),
                  np.asarray(obs, dtype=np.float64).copy(),
                  np.asarray(act, dtype=np.float64).copy(),
                  float(reward),
                  np.asarray(next_obs, dtype=np.float64).copy())
        if len(self._records) < self.capacity:
            self._records.append(record)
        else:
            self._records[self._next] = record
            self._next = (self._next + 1) % self.capacity

    def sample(self, rng: np.random.Generator, size: int):
        """Uniform without replacement; None when underfull."""
        if len(self._records) < size:
            return None
        idx = rng.choice(len(self._records), size=size, replace=False)
        prev = np.stack([self._records[i][0] for i in idx])
        obs = np.stack([self._records[i][1] for i in idx])
        act = np.stack([self._records[i][2] for i in idx])
        rew = np.array([self._records[i][3] for i in idx])
        nxt = np.stack([self._records[i][4] for i in idx])
        return prev, obs, act, rew, nxt


# -- agents ---------------------------------------------------------------------

def critic_target(reward, next_q_target, discount: float):
    """Bootstrapped regression target for the critic."""
    return reward + discount * next_q_target


def soft_update(target_params, online_params, coef: float) -> None:
    """Exponential-moving-average copy: target <- coef*online + (1-coef)*target."""
    for tgt, src in zip(target_params, online_params):
        tgt.data = coef * src.data + (1.0 - coef) * tgt.data


class DdpgAgent:
    """Deterministic actor-critic with replay, target networks, and optional
    action-feedback recurrence."""

    def __init__(self, spec: AgentSpec, codec: ActionCodec, prop: np.ndarray,
                 obs_feat_dim: int, training: TrainingConfig, seed):
        self.spec = spec
        self.codec = codec
        self.prop = np.asarray(prop)
        self.n_nodes = codec.n_nodes
        self.obs_feat_dim = obs_feat_dim
        self.training = training
        root = seed if isinstance(seed, np.random.SeedSequence) \
            else np.random.SeedSequence(seed)
        init_ss, noise_ss, replay_ss = root.spawn(3)
        init_rng = np.random.default_rng(init_ss)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.replay_rng = np.random.default_rng(replay_ss)

        feat_dim = obs_feat_dim + codec.head_width
        if spec.architecture == "gcn":
            self.actor = GcnActor(feat_dim, codec.head_width, spec.gcn_hidden, init_rng)
        elif spec.architecture == "dense":
            self.actor = DenseActor(self.n_nodes, feat_dim, codec.head_width,
                                    spec.dense_hidden, init_rng)
        else:
            raise ValueError(f"unknown architecture '{spec.architecture}'")
        critic_in = self.n_nodes * obs_feat_dim + codec.flat_dim
        self.critic = Critic(critic_in, spec.critic_hidden, init_rng)
        self.target_actor = copy.deepcopy(self.actor)
        self.target_critic = copy.deepcopy(self.critic)
        self.actor_opt = an.Adam(self.actor.parameters(), lr=training.actor_lr)
        self.critic_opt = an.Adam(self.critic.parameters(), lr=training.critic_lr)
        self.buffer = ReplayBuffer(training.buffer_capacity)

    # -- plumbing -------------------------------------------------------------

    def features(self, obs: np.ndarray, prev_flat: np.ndarray) -> np.ndarray:
        """Concatenate node features with the previous-action block (zeroed
        when recurrence is off, keeping the input width fixed)."""
        obs = np.asarray(obs)
        batch = obs.ndim == 3
        lead = (obs.shape[0],) if batch else ()
        if self.spec.recurrent:
            block = self.codec.encode_padded(np.asarray(prev_flat))
        else:
            block = np.zeros(lead + (self.n_nodes, self.codec.head_width))
        return np.concatenate([obs, block], axis=-1)

    def parameters(self):
        return self.actor.parameters()

    def named_parameters(self) -> dict:
        named = dict(self.actor.named_parameters("actor"))
        named.update(self.critic.named_parameters("critic"))
        return named

    def save(self, stem) -> None:
        an.save_checkpoint(self.named_parameters(), stem)

    def load(self, stem) -> None:
        stored = an.load_checkpoint(stem)
        for name, tensor in self.named_parameters().items():
            if name not in stored:
                raise ValueError(f"checkpoint is missing tensor '{name}'")
            if tuple(stored[name].shape) != tensor.data.shape:
                raise ValueError(f"checkpoint shape mismatch for '{name}'")
            tensor.data = stored[name]
        self.target_actor = copy.deepcopy(self.actor)
        self.target_critic = copy.deepcopy(self.critic)

    # -- acting ----------------------------------------------------------------

    def act(self, obs: np.ndarray, prev_flat: np.ndarray, sigma: float = 0.0
            ) -> tuple[np.ndarray, Action]:
        """Policy output with exploration noise injected on the head logits
        before the simplex decode, so feasibility always holds."""
        feats = self.features(obs, prev_flat)
        logits = self.actor.logits(self.prop, feats, tape=False)
        if sigma > 0.0:
            logits = logits + self.noise_rng.normal(0.0, sigma, size=logits.shape)
        flat = self.codec.decode_np(logits)
        return flat, self.codec.to_action(flat)

    # -- updates ----------------------------------------------------------------

    def critic_update(self, discount: float):
        """One mean-squared-error regression step toward the bootstrapped
        targets; returns the pre-step loss, or None while the buffer is short."""
        batch = self.buffer.sample(self.replay_rng, self.training.critic_batch)
        if batch is None:
            return None
        return self._critic_update_on(batch, discount)

    def _critic_update_on(self, batch, discount: float) -> float:
        prev, obs, act, rew, nxt = batch
        m = obs.shape[0]
        tgt_feats = self.features(nxt, act)
        tgt_logits = self.target_actor.logits(self.prop, tgt_feats, tape=False)
        next_act = self.codec.decode_np(tgt_logits)
        x_next = np.concatenate([nxt.reshape(m, -1), next_act], axis=1)
        next_q = self.target_critic.forward_np(x_next)
        y = critic_target(rew[:, None], next_q, discount)

        self.critic_opt.zero_grad()
        x = np.concatenate([obs.reshape(m, -1), act], axis=1)
        q = self.critic.forward(an.Tensor(x))
        loss = an.mean(an.square(an.sub(q, an.Tensor(y))))
        loss.backward()
        self.critic_opt.step()
        return loss.item()

    def actor_update(self):
        """One ascent step on the critic's value of the policy's own actions;
        returns the objective estimate, or None while the buffer is short."""
        batch = self.buffer.sample(self.replay_rng, self.training.actor_batch)
        if batch is None:
            return None
        return self._actor_update_on(batch)

    def _actor_update_on(self, batch) -> float:
        prev, obs, act, rew, nxt = batch
        m = obs.shape[0]
        self.actor_opt.zero_grad()
        self.critic_opt.zero_grad()
        feats = self.features(obs, prev)
        logits = self.actor.logits(self.prop, an.Tensor(feats), tape=True)
        a_pred = self.codec.decode(logits)
        x = an.concat([an.Tensor(obs.reshape(m, -1)), a_pred], axis=1)
        q = self.critic.forward(x)
        objective = an.mean(q)
        loss = an.scale(objective, -1.0)
        loss.backward()
        self.actor_opt.step()
        self.critic_opt.zero_grad()  # discard the pass-through critic grads
        return objective.item()

    def soft_update(self, coef: float) -> None:
        soft_update(self.target_actor.parameters(), self.actor.parameters(), coef)
        soft_update(self.target_critic.parameters(), self.critic.parameters(), coef)


class RandomAgent:
    """Training-free baseline: a fresh random feasible action every step."""

    def __init__(self, codec: ActionCodec, seed):
        self.codec = codec
        self.rng = np.random.default_rng(seed)

    def act(self, obs, prev_flat, sigma: float = 0.0):
        flat = self.codec.random_flat(self.rng)
        return flat, self.codec.to_action(flat)

    def parameters(self):
        return []


def build_agent(name: str, env, training: TrainingConfig, seed,
                self_compute_only: bool = False):
    """Instantiate an agent preset wired to an environment's dimensions."""
    codec = ActionCodec(env.table, env.caps, self_compute_only)
    if name == "random":
        return RandomAgent(codec, seed)
    if name not in AGENT_PRESETS:
        raise ValueError(f"unknown agent '{name}' (choose from {AGENT_NAMES})")
    spec = AGENT_PRESETS[name]
    prop = propagation_operator(env.graph, weighted=spec.gcn_operator == "weighted")
    return DdpgAgent(spec, codec, prop.matrix, env.obs_feature_dim, training, seed)


# -- loops -------------------------------------------------------------------

def train(env, agent: DdpgAgent, cfg: TrainingConfig) -> list[dict]:
    """Run the training loop and return one record per episode."""
    records = []
    sigma = cfg.sigma_start
    global_step = 0
    for episode in range(cfg.episodes):
        obs = env.reset()
        prev = agent.codec.uniform_flat()
        rewards, losses, objectives = [], [], []
        for t in range(cfg.steps_per_episode):
            flat, action = agent.act(obs, prev, sigma)
            result = env.step(action)
            agent.buffer.push(prev, obs, flat, result.reward, result.observation)
            rewards.append(result.reward)
            global_step += 1
            if global_step % cfg.update_every == 0:
                for _ in range(cfg.updates_per_step):
                    loss = agent.critic_update(cfg.discount)
                    objective = agent.actor_update()
                    for label, value in (("critic", loss), ("actor", objective)):
                        if value is not None and not np.isfinite(value):
                            raise TrainingError(
                                f"non-finite {label} loss at episode {episode} "
                                f"step {t}: {value}")
                    if loss is not None:
                        losses.append(loss)
                    if objective is not None:
                        objectives.append(objective)
                if ((loss is not None or objective is not None)
                        and global_step % cfg.soft_update_period == 0):
                    agent.soft_update(cfg.soft_update_coef)
            prev = flat
            obs = result.observation
        records.append({
            "episode": episode,
            "mean_reward": float(np.mean(rewards)),
            "critic_loss": float(np.mean(losses)) if losses else None,
            "actor_objective": float(np.mean(objectives)) if objectives else None,
            "sigma": sigma,
        })
        sigma *= cfg.sigma_decay
    return records


def evaluate(env, agent, episodes: int, steps: int, on_step=None) -> list[float]:
    """Noise-free rollouts; returns the per-episode mean reward.  `on_step`
    (episode, t, result) observes each transition, e.g. for trajectory logs."""
    ssr = []
    for episode in range(episodes):
        obs = env.reset()
        prev = agent.codec.uniform_flat()
        rewards = []
        for t in range(steps):
            flat, action = agent.act(obs, prev, sigma=0.0)
            result = env.step(action)
            rewards.append(result.reward)
            if on_step is not None:
                on_step(episode, t, result)
            prev = flat
            obs = result.observation
        ssr.append(float(np.mean(rewards)))
    return ssr
