import types

import numpy as np
import pytest

from mecslice import ScenarioConfig, SliceEnv, desk_config
from mecslice.agent import ActionCodec
from mecslice.config import ConfigError
from mecslice.environment import (Action, DimensionCaps, advance_queues,
                                  build_users, drain_latency, effective_compute,
                                  effective_rate, linear_snr, sample_tasks)
from mecslice.topology import build_graph, build_layout

from conftest import random_small_env
from straightline import reference_step


def oracle_params(cfg: ScenarioConfig) -> types.SimpleNamespace:
    return types.SimpleNamespace(
        compute_hz=cfg.compute_hz, cycles_per_bit=cfg.cycles_per_bit,
        rb_count=cfg.rb_count, rb_bandwidth_hz=cfg.rb_bandwidth_hz,
        rb_power_w=cfg.rb_power_w, noise_psd_w_hz=cfg.noise_psd_w_hz,
        slot_s=cfg.slot_s, rc_orientation=cfg.rc_orientation,
        tq_update=cfg.tq_update, idle_reward=cfg.idle_reward)


def run_against_oracle(env: SliceEnv, rng: np.random.Generator) -> None:
    """One env step vs the straight-line transcription, exact equality."""
    codec = ActionCodec(env.table, env.caps)
    flat = codec.random_flat(rng)
    action = codec.to_action(flat)
    env.cq_bits = rng.uniform(0, 1e7, size=env.table.n_users)
    env.tq_bits = rng.uniform(0, 1e7, size=env.table.n_users)
    zero_mask = rng.random(env.table.n_users) < 0.3
    env.cq_bits[zero_mask] = 0.0
    env.tq_bits[zero_mask] = 0.0
    before = env.state_snapshot()
    table = env.table
    res = env.step(action)

    ref = reference_step(
        oracle_params(env.config),
        [list(row) for row in env.graph.adjacency],
        [list(row) for row in env.graph.edge_weights],
        [[list(ids) for ids in node] for node in table.slice_users],
        [list(row) for row in action.node_compute],
        [list(v) for v in action.slice_compute],
        [[list(v) for v in node] for node in action.user_compute],
        [list(v) for v in action.slice_rb],
        [[list(v) for v in node] for node in action.user_rb],
        list(before.cq_bits), list(before.tq_bits), list(before.gain),
        list(res.arrivals), list(res.task_bits), list(table.latency_bound_s))

    assert np.array_equal(res.compute_rate, ref["rc"])
    assert np.array_equal(res.transmit_rate, ref["rt"])
    assert np.array_equal(env.cq_bits, ref["next_cq"])
    assert np.array_equal(env.tq_bits, ref["next_tq"])
    assert np.array_equal(res.latency_s, ref["latency"])
    assert res.satisfied_count == ref["satisfied"]
    assert res.generated_count == ref["generated"]
    assert res.reward == ref["reward"]


class TestSampleTasks:
    def test_certain_arrival(self):
        cfg = desk_config(n_nodes=1, users_per_node=4, slice_count_range=(1, 1))
        env = SliceEnv(cfg, seed=0)
        env.table.arrival_rate[:] = 1.0
        for _ in range(20):
            q, d = sample_tasks(env.table, np.random.default_rng(1))
            assert (q == 1).all()

    def test_sizes_exceed_threshold_and_zero_without_request(self):
        cfg = desk_config(n_nodes=2, users_per_node=10)
        env = SliceEnv(cfg, seed=3)
        rng = np.random.default_rng(7)
        for _ in range(200):
            q, d = sample_tasks(env.table, rng)
            assert (d[q == 0] == 0).all()
            assert (d[q == 1] > env.table.threshold_bits[q == 1]).all()

    def test_heavy_tail_mean_closed_form(self):
        # frozen table: shape 5.0, threshold 1000 bits -> mean 1250
        cfg = desk_config(n_nodes=1, users_per_node=1, slice_count_range=(1, 1))
        env = SliceEnv(cfg, seed=0)
        env.table.arrival_rate[:] = 1.0
        env.table.pareto_shape[:] = 5.0
        env.table.threshold_bits[:] = 1000.0
        rng = np.random.default_rng(11)
        draws = np.array([sample_tasks(env.table, rng)[1][0] for _ in range(200_000)])
        assert np.mean(draws) == pytest.approx(5.0 * 1000.0 / 4.0, rel=0.01)


class TestEffectiveCompute:
    def test_single_node_gets_full_budget(self):
        cfg = desk_config(n_nodes=1, users_per_node=2, slice_count_range=(1, 1))
        env = SliceEnv(cfg, seed=1)
        codec = ActionCodec(env.table)
        action = codec.to_action(codec.uniform_flat())
        action.user_compute[0][0][:] = [1.0, 0.0]
        rc = effective_compute(action, env.graph, env.table, cfg)
        assert rc[0] == cfg.compute_hz / cfg.cycles_per_bit
        assert rc[1] == 0.0

    def test_masked_renormalization(self):
        # three-node row with mask [1,1,0]: fractions renormalize to the overlap
        mask = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        raw = np.array([0.2, 0.3, 0.5])
        masked = mask[0] * raw
        cbar = masked / masked.sum()
        assert np.allclose(cbar, [0.4, 0.6, 0.0])

    def test_masked_renormalization_through_budget(self):
        # distinguishing edge weights expose the renormalized fractions:
        # budget_0 = (1*0.4 + 0.5*0.6) * C_B
        from mecslice.topology import Graph
        cfg = desk_config(n_nodes=3, users_per_node=1, slice_count_range=(1, 1))
        env = SliceEnv(cfg, seed=6)
        adjacency = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        weights = np.array([[1.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]])
        graph = Graph(adjacency, weights, adjacency * weights, 1)
        codec = ActionCodec(env.table)
        action = codec.to_action(codec.uniform_flat())
        action.node_compute[0] = np.array([0.2, 0.3, 0.5])
        rc = effective_compute(action, graph, env.table, cfg)
        node0_user = env.table.slice_users[0][0][0]
        expected = (1.0 * 0.4 + 0.5 * 0.6) * cfg.compute_hz / cfg.cycles_per_bit
        assert rc[node0_user] == pytest.approx(expected, rel=1e-12)

    def test_rc_orientation_flag(self):
        for orientation, expected in (("corrected", 10e9 / 15.0), ("paper", 15.0 / 10e9)):
            cfg = desk_config(n_nodes=1, users_per_node=1, slice_count_range=(1, 1),
                              rc_orientation=orientation)
            env = SliceEnv(cfg, seed=1)
            codec = ActionCodec(env.table)
            action = codec.to_action(codec.uniform_flat())
            rc = effective_compute(action, env.graph, env.table, cfg)
            assert rc[0] == pytest.approx(expected, rel=1e-12)

    def test_all_masked_row_falls_back_to_uniform(self):
        cfg = desk_config(n_nodes=2, users_per_node=2, slice_count_range=(1, 1),
                          max_neighbors=0)
        env = SliceEnv(cfg, seed=2)
        codec = ActionCodec(env.table)
        action = codec.to_action(codec.uniform_flat())
        action.node_compute[0] = np.array([0.0, 1.0])  # mass only off-neighborhood
        rc = effective_compute(action, env.graph, env.table, cfg)
        assert (rc > 0).all()  # uniform repair keeps the budget alive

    def test_renormalized_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            env = random_small_env(rng)
            codec = ActionCodec(env.table)
            action = codec.to_action(codec.random_flat(rng))
            mask = env.graph.adjacency
            for i in range(env.table.n_nodes):
                masked = mask[i] * action.node_compute[i]
                if masked.sum() > 0:
                    assert masked.sum() / masked.sum() == 1.0
                    assert np.allclose((masked / masked.sum()).sum(), 1.0, atol=1e-9)


class TestEffectiveRate:
    def test_known_rate_value(self):
        # snr 3, one RB: rate = W * log2(4) = 2W
        cfg = desk_config(n_nodes=1, users_per_node=1, slice_count_range=(1, 1))
        env = SliceEnv(cfg, seed=1)
        codec = ActionCodec(env.table)
        action = codec.to_action(codec.uniform_flat())
        gain = np.array([3.0 * cfg.noise_psd_w_hz * cfg.rb_bandwidth_hz / cfg.rb_power_w])
        action.slice_rb[0][:] = [1.0]
        action.user_rb[0][0][:] = [1.0 / cfg.rb_count]  # exactly one RB
        rt = effective_rate(action, gain, env.table, cfg)
        assert rt[0] == pytest.approx(0.18e6 * 2.0, rel=1e-12)

    def test_snr_independent_of_allocation(self):
        cfg = desk_config()
        rng = np.random.default_rng(0)
        gain = rng.exponential(1.0, size=100) * 1e-4
        snr = linear_snr(gain, cfg)
        for z in (1e-6, 0.3, 1.0):
            # literal form with the RB term present on both sides
            literal = (cfg.rb_power_w * z * gain) / (cfg.noise_psd_w_hz * z
                                                     * cfg.rb_bandwidth_hz)
            assert np.allclose(literal, snr, rtol=1e-12)

    def test_rate_linear_in_rb_share(self):
        cfg = desk_config(n_nodes=1, users_per_node=2, slice_count_range=(1, 1))
        env = SliceEnv(cfg, seed=4)
        codec = ActionCodec(env.table)
        action = codec.to_action(codec.uniform_flat())
        gain = np.array([2e-4, 3e-4])
        base = effective_rate(action, gain, env.table, cfg)
        action.user_rb[0][0][:] = action.user_rb[0][0] * np.array([2.0, 0.0])
        doubled = effective_rate(action, gain, env.table, cfg)
        assert doubled[0] == pytest.approx(2.0 * base[0], rel=1e-12)
        assert doubled[1] == 0.0


class TestQueuesAndLatency:
    def test_empty_queue_stays_zero(self):
        cq, tq = advance_queues(np.zeros(3), np.zeros(3), np.zeros(3),
                                np.zeros(3), np.zeros(3), 1.0, "corrected")
        assert (cq == 0).all() and (tq == 0).all()

    def test_zero_service_zero_arrivals_is_fixed_point(self):
        cq0 = np.array([1e5, 0.0, 7.0])
        tq0 = np.array([3.0, 9e6, 0.0])
        cq, tq = advance_queues(cq0, tq0, np.zeros(3), np.zeros(3), np.zeros(3),
                                1.0, "corrected")
        assert np.array_equal(cq, cq0) and np.array_equal(tq, tq0)

    def test_tq_update_direction_flag(self):
        tq_c = advance_queues(np.zeros(1), np.zeros(1), np.zeros(1),
                              np.array([10.0]), np.array([4.0]), 1.0, "corrected")[1]
        tq_p = advance_queues(np.zeros(1), np.zeros(1), np.zeros(1),
                              np.array([10.0]), np.array([4.0]), 1.0, "paper")[1]
        assert tq_c[0] == 6.0 and tq_p[0] == 0.0

    def test_latency_division_and_guards(self):
        lat = drain_latency(np.array([1e5, 0.0, 5.0]), np.array([0.0, 0.0, 0.0]),
                            np.array([1e7, 0.0, 0.0]), np.array([1e7, 5.0, 0.0]))
        assert lat[0] == pytest.approx(0.01)
        assert lat[1] == 0.0           # empty backlog, even with zero compute
        assert lat[2] == np.inf        # starved positive backlog, no crash

    def test_latency_meets_embb_but_not_urllc(self):
        # 1e5 bits of backlog at 1e7 bits/s both ways -> 0.01 s
        lat = drain_latency(np.array([1e5]), np.array([0.0]),
                            np.array([1e7]), np.array([1e7]))[0]
        bounds = {s.name: s.latency_bound_s for s in desk_config().services}
        assert lat == pytest.approx(0.01)
        assert lat <= bounds["embb"]
        assert not lat <= bounds["urllc"]


class TestStep:
    def test_queue_nonnegative_and_reward_bounds(self):
        rng = np.random.default_rng(99)
        for _ in range(20):
            env = random_small_env(rng)
            codec = ActionCodec(env.table)
            env.reset()
            for _ in range(10):
                res = env.step(codec.to_action(codec.random_flat(rng)))
                assert (env.cq_bits >= 0).all() and (env.tq_bits >= 0).all()
                assert 0.0 <= res.reward <= 1.0
                assert 0 <= res.satisfied_count <= res.generated_count

    def test_all_satisfied_slot_scores_one(self):
        # compute sized below the radio so nothing floods and arrivals drain
        cfg = desk_config(n_nodes=1, users_per_node=3, slice_count_range=(3, 3),
                          compute_hz=4.5e8)
        env = SliceEnv(cfg, seed=12)
        env.table.arrival_rate[:] = 1.0
        codec = ActionCodec(env.table)
        res = env.step(codec.to_action(codec.uniform_flat()))
        assert res.generated_count == env.table.n_users
        assert res.satisfied_count == res.generated_count
        assert res.reward == 1.0

    def test_idle_slot_reward_rule(self, tiny_env):
        tiny_env.reset()
        tiny_env.table.arrival_rate[:] = 1e-12  # effectively never
        codec = ActionCodec(tiny_env.table)
        res = tiny_env.step(codec.to_action(codec.uniform_flat()))
        assert res.generated_count == 0
        assert res.reward == tiny_env.config.idle_reward

    def test_matches_straightline_oracle(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            env = random_small_env(rng)
            run_against_oracle(env, rng)

    def test_dimension_mismatch_rejected(self, tiny_env):
        other = SliceEnv(desk_config(n_nodes=1, users_per_node=4,
                                     slice_count_range=(2, 2)), seed=0)
        codec = ActionCodec(other.table)
        with pytest.raises(ValueError):
            tiny_env.step(codec.to_action(codec.uniform_flat()))

    def test_invalid_simplex_rejected(self, tiny_env):
        codec = ActionCodec(tiny_env.table)
        action = codec.to_action(codec.uniform_flat())
        action.slice_compute[0][0] += 0.1
        with pytest.raises(ValueError, match="slice_compute"):
            tiny_env.step(action)


class TestObservation:
    def test_shape_and_padding(self):
        cfg = desk_config(n_nodes=2, users_per_node=3)
        env = SliceEnv(cfg, seed=8)
        obs = env.observe()
        assert obs.shape == (2, 3 * env.caps.max_users_per_node)
        # zero-backlog start: cq/tq features are zero, gains positive
        per = obs.reshape(2, env.caps.max_users_per_node, 3)
        assert (per[:, :, :2] == 0).all()
        counts = env.table.users_per_node()
        for n in range(2):
            assert (per[n, :counts[n], 2] > 0).all()
            assert (per[n, counts[n]:, :] == 0).all()

    def test_single_node_shapes(self, tiny_env):
        obs = tiny_env.observe()
        assert obs.shape[0] == 1
        assert np.array_equal(tiny_env.graph.weighted_adjacency, [[1.0]])

    def test_backlog_scaling(self, tiny_env):
        tiny_env.reset()
        tiny_env.cq_bits[:] = tiny_env.config.backlog_scale_bits
        obs = tiny_env.observe()
        per = obs.reshape(1, -1, 3)
        assert per[0, : tiny_env.table.n_users, 0] == pytest.approx(1.0)

    def test_recent_window_appended(self):
        cfg = desk_config(n_nodes=1, users_per_node=2, slice_count_range=(1, 1),
                          obs_window=2)
        env = SliceEnv(cfg, seed=5)
        env.reset()
        assert env.observe().shape == (1, 5 * env.caps.max_users_per_node)
        codec = ActionCodec(env.table)
        res = env.step(codec.to_action(codec.uniform_flat()))
        per = res.observation.reshape(1, -1, 5)
        scaled = res.task_bits / cfg.backlog_scale_bits
        assert np.allclose(per[0, : env.table.n_users, 3], scaled)


class TestUserAssignment:
    def test_minimums_respected(self):
        cfg = desk_config(n_nodes=2, users_per_node=30)
        table = build_users(cfg, np.random.default_rng(0))
        for n, groups in enumerate(table.slice_users):
            for ids in groups:
                assert len(ids) >= 1
        assert table.n_users == cfg.n_users

    def test_infeasible_minimums_rejected(self):
        cfg = ScenarioConfig(n_nodes=8, n_users=10)  # full-scale minimums, 10 users
        with pytest.raises(ConfigError):
            build_users(cfg, np.random.default_rng(0))

    def test_every_service_present_with_three_plus_slices(self):
        cfg = desk_config(n_nodes=3, users_per_node=20)
        table = build_users(cfg, np.random.default_rng(1))
        for types in table.slice_services:
            assert {0, 1, 2}.issubset(set(types))

    def test_user_distances_inside_ring(self):
        cfg = desk_config(n_nodes=2, users_per_node=50)
        table = build_users(cfg, np.random.default_rng(2))
        lo, hi = cfg.user_ring_m
        assert (table.distance_m >= lo).all() and (table.distance_m <= hi).all()

    def test_reset_keeps_structure_but_redraws_attributes(self):
        cfg = desk_config(n_nodes=2, users_per_node=10)
        env = SliceEnv(cfg, seed=21)
        before_sizes = [[len(i) for i in g] for g in env.table.slice_users]
        before_dist = env.table.distance_m.copy()
        env.reset()
        after_sizes = [[len(i) for i in g] for g in env.table.slice_users]
        assert before_sizes == after_sizes
        assert not np.array_equal(before_dist, env.table.distance_m)

    def test_caps_declared_too_small_rejected(self):
        cfg = desk_config(n_nodes=2, users_per_node=10)
        caps = DimensionCaps(1, 1, 1, 1)
        with pytest.raises(ConfigError):
            SliceEnv(cfg, seed=0, caps=caps)


def test_full_scale_defaults_run():
    # shipped full-scale constants: 8 nodes, 650 users, mandatory minimums
    env = SliceEnv(ScenarioConfig(), seed=0)
    assert env.table.n_users == 650
    for types in env.table.slice_services:
        assert {0, 1, 2}.issubset(set(types))
    codec = ActionCodec(env.table)
    env.reset()
    rng = np.random.default_rng(1)
    for _ in range(3):
        res = env.step(codec.to_action(codec.random_flat(rng)))
        assert 0.0 <= res.reward <= 1.0


def test_env_determinism():
    cfg = desk_config(n_nodes=2, users_per_node=5)
    def roll(seed):
        env = SliceEnv(cfg, seed=seed)
        codec = ActionCodec(env.table)
        env.reset()
        rng = np.random.default_rng(0)
        return [env.step(codec.to_action(codec.random_flat(rng))).reward
                for _ in range(8)]
    assert roll(77) == roll(77)
    assert roll(77) != roll(78)
