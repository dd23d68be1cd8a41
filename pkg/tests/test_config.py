import json

import pytest

from mecslice.config import (ConfigError, ScenarioConfig, TrainingConfig,
                             dbm_to_watts, desk_config, load_scenario,
                             load_training, scenario_from_dict)


class TestUnits:
    def test_dbm_conversion(self):
        assert dbm_to_watts(30.0) == pytest.approx(1.0)
        assert dbm_to_watts(0.0) == pytest.approx(1e-3)
        assert dbm_to_watts(11.0) == pytest.approx(10 ** (-1.9), rel=1e-12)

    def test_default_constants_in_si(self):
        cfg = ScenarioConfig()
        assert cfg.compute_hz == 10e9
        assert cfg.rb_count == 10.0
        assert cfg.rb_bandwidth_hz == 0.18e6
        assert cfg.rb_power_w == pytest.approx(dbm_to_watts(11.0))
        assert cfg.noise_psd_w_hz == pytest.approx(dbm_to_watts(-204.0))
        assert cfg.cycles_per_bit == 15.0
        assert cfg.slot_s == 1.0
        assert cfg.window == 100

    def test_default_service_table(self):
        by_name = {s.name: s for s in ScenarioConfig().services}
        assert by_name["embb"].latency_bound_s == 0.05
        assert by_name["mmtc"].latency_bound_s == 0.02
        assert by_name["urllc"].latency_bound_s == 0.001
        assert by_name["mmtc"].task_threshold_bits == (1000.0, 1000.0)
        assert by_name["embb"].arrival_rate == (0.6, 0.8)
        assert by_name["urllc"].min_users_per_slice == 10
        assert by_name["embb"].min_users_per_slice == 3
        assert by_name["mmtc"].min_users_per_slice == 50


class TestValidation:
    def test_defaults_valid(self):
        ScenarioConfig().validate()
        TrainingConfig().validate()

    @pytest.mark.parametrize("field,value", [
        ("n_nodes", 0),
        ("n_users", 0),
        ("max_neighbors", 9),
        ("coop_penalty", 1.5),
        ("coop_penalty", 0.0),
        ("slot_s", 0.0),
        ("rc_orientation", "sideways"),
        ("tq_update", "both"),
        ("obs_window", -1),
        ("user_ring_m", (100.0, 10.0)),
    ])
    def test_bad_scenario_fields(self, field, value):
        cfg = ScenarioConfig(**{field: value})
        with pytest.raises(ConfigError):
            cfg.validate()

    @pytest.mark.parametrize("field,value", [
        ("discount", 1.5),
        ("sigma_start", -0.1),
        ("sigma_decay", 0.0),
        ("critic_batch", 0),
        ("actor_lr", 0.0),
    ])
    def test_bad_training_fields(self, field, value):
        cfg = TrainingConfig(**{field: value})
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_desk_variant_scales_down(self):
        cfg = desk_config(n_nodes=3, users_per_node=7)
        assert cfg.n_users == 21
        assert all(s.min_users_per_slice == 1 for s in cfg.services)
        assert cfg.compute_hz == ScenarioConfig().compute_hz


class TestFileLoading:
    def test_toml_roundtrip(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("""
[scenario]
n_nodes = 3
n_users = 30
[resources]
rb_power_dbm = 20.0
[services.embb]
min_users_per_slice = 1
task_threshold_bytes = [1000, 2000]
[services.mmtc]
min_users_per_slice = 1
[services.urllc]
min_users_per_slice = 1
[training]
episodes = 12
""")
        cfg = load_scenario(path)
        assert cfg.n_nodes == 3
        assert cfg.rb_power_w == pytest.approx(dbm_to_watts(20.0))
        embb = cfg.services[0]
        assert embb.task_threshold_bits == (8000.0, 16000.0)
        assert load_training(path).episodes == 12

    def test_json_supported(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(
            {"scenario": {"n_nodes": 2, "n_users": 130, "max_neighbors": 1}}))
        assert load_scenario(path).n_nodes == 2

    def test_unknown_key_named_in_error(self):
        with pytest.raises(ConfigError, match="coop_penality"):
            scenario_from_dict({"scenario": {"coop_penality": 0.5}})

    def test_invalid_value_named_in_error(self):
        doc = {"services": {"embb": {"arrival_rate": [0.5, 1.5]}}}
        with pytest.raises(ConfigError, match="arrival_rate"):
            scenario_from_dict(doc)

    def test_unknown_service_section_rejected(self):
        with pytest.raises(ConfigError, match="hologram"):
            scenario_from_dict({"services": {"hologram": {}}})

    def test_none_path_gives_defaults(self):
        assert load_scenario(None) == ScenarioConfig()
        assert load_training(None) == TrainingConfig()
