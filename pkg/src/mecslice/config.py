"""Scenario constants, unit conversion, and config-file loading.

All runtime math is linear-scale SI: bits, Hz, watts, seconds.  Config files
carry the human-facing units (bytes, dBm) and are converted once at load.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    """A scenario/training configuration field is out of contract."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


BITS_PER_BYTE = 8.0


@dataclass(frozen=True)
class ServiceSpec:
    """Per-service-class constants. Ranges are sampled per user."""

    name: str
    min_users_per_slice: int
    latency_bound_s: float
    arrival_rate: tuple[float, float]        # Bernoulli rate range, in (0, 1]
    pareto_shape: tuple[float, float]        # heavy-tail shape range, > 1
    task_threshold_bits: tuple[float, float]  # Pareto scale range, bits

    def validate(self) -> None:
        pre = f"services.{self.name}"
        if self.min_users_per_slice < 1:
            raise ConfigError(f"{pre}.min_users_per_slice must be >= 1")
        if self.latency_bound_s <= 0:
            raise ConfigError(f"{pre}.latency_bound_s must be > 0")
        _check_range(pre + ".arrival_rate", self.arrival_rate, lo_open=0.0, hi=1.0)
        if self.pareto_shape[0] <= 1.0:
            raise ConfigError(f"{pre}.pareto_shape must be > 1 for a finite mean")
        _check_range(pre + ".pareto_shape", self.pareto_shape)
        _check_range(pre + ".task_threshold_bits", self.task_threshold_bits, lo_open=0.0)


def _check_range(name: str, rng: tuple[float, float], lo_open: float | None = None,
                 hi: float | None = None) -> None:
    lo, up = rng
    if lo > up:
        raise ConfigError(f"{name} range is inverted: {rng}")
    if lo_open is not None and lo <= lo_open:
        raise ConfigError(f"{name} must be > {lo_open}")
    if hi is not None and up > hi:
        raise ConfigError(f"{name} must be <= {hi}")


def default_services() -> tuple[ServiceSpec, ...]:
    """The shipped per-class constants (thresholds stored in bits)."""
    return (
        ServiceSpec("embb", 3, 0.05, (0.6, 0.8), (5.0, 10.0), (0.1e6 * BITS_PER_BYTE, 0.3e6 * BITS_PER_BYTE)),
        ServiceSpec("mmtc", 50, 0.02, (0.4, 0.6), (5.0, 10.0), (125.0 * BITS_PER_BYTE, 125.0 * BITS_PER_BYTE)),
        ServiceSpec("urllc", 10, 0.001, (0.8, 1.0), (5.0, 10.0), (10.0 * BITS_PER_BYTE, 300.0 * BITS_PER_BYTE)),
    )


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical and service constants of one deployment.

    Defaults are the shipped full-scale values; `desk_config` builds the small
    variants used for fast runs.
    """

    n_nodes: int = 8
    n_users: int = 650
    max_neighbors: int = 3          # 0 disables compute cooperation
    coop_penalty: float = 0.9       # cooperation cost factor in (0, 1]
    slice_count_range: tuple[int, int] = (3, 6)
    services: tuple[ServiceSpec, ...] = field(default_factory=default_services)

    # geometry
    area_side_m: float = 200.0
    coverage_radius_m: float = 100.0
    user_ring_m: tuple[float, float] = (10.0, 100.0)
    pathloss_exponent: float = 2.0

    # shared resources per node
    compute_hz: float = 10e9        # MEC CPU frequency
    rb_count: float = 10.0          # transmission resource blocks
    rb_power_w: float = dbm_to_watts(11.0)
    rb_bandwidth_hz: float = 0.18e6
    noise_psd_w_hz: float = dbm_to_watts(-204.0)
    cycles_per_bit: float = 15.0

    # time discretization and bookkeeping
    slot_s: float = 1.0
    window: int = 100               # retained task-size history length
    obs_window: int = 0             # recent task sizes exposed per user (0 = off)
    backlog_scale_bits: float = 1e6

    # model toggles (see README)
    rc_orientation: str = "corrected"   # {corrected, paper}
    tq_update: str = "corrected"        # {corrected, paper}
    idle_reward: float = 1.0            # reward when no task was generated
    resample_users_on_reset: bool = True

    def validate(self) -> "ScenarioConfig":
        if self.n_nodes < 1:
            raise ConfigError("n_nodes must be >= 1")
        if self.n_users < 1:
            raise ConfigError("n_users must be >= 1")
        if not 0 <= self.max_neighbors <= self.n_nodes:
            raise ConfigError("max_neighbors must be in [0, n_nodes]")
        if not 0.0 < self.coop_penalty <= 1.0:
            raise ConfigError("coop_penalty must be in (0, 1]")
        lo, hi = self.slice_count_range
        if lo < 1 or hi < lo:
            raise ConfigError("slice_count_range must satisfy 1 <= lo <= hi")
        if not self.services:
            raise ConfigError("services must be non-empty")
        for svc in self.services:
            svc.validate()
        if self.area_side_m <= 0 or self.coverage_radius_m <= 0:
            raise ConfigError("area_side_m and coverage_radius_m must be > 0")
        d_lo, d_hi = self.user_ring_m
        if not 0 <= d_lo < d_hi <= self.coverage_radius_m:
            raise ConfigError("user_ring_m must satisfy 0 <= lo < hi <= coverage_radius_m")
        for name in ("pathloss_exponent", "compute_hz", "rb_count", "rb_power_w",
                     "rb_bandwidth_hz", "noise_psd_w_hz", "cycles_per_bit", "slot_s",
                     "backlog_scale_bits"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.obs_window < 0 or self.obs_window > self.window:
            raise ConfigError("obs_window must be in [0, window]")
        if self.rc_orientation not in ("corrected", "paper"):
            raise ConfigError("rc_orientation must be 'corrected' or 'paper'")
        if self.tq_update not in ("corrected", "paper"):
            raise ConfigError("tq_update must be 'corrected' or 'paper'")
        if not 0.0 <= self.idle_reward <= 1.0:
            raise ConfigError("idle_reward must be in [0, 1]")
        return self


def desk_services() -> tuple[ServiceSpec, ...]:
    """Shipped service constants with per-slice minimums relaxed to 1 user."""
    return tuple(replace(s, min_users_per_slice=1) for s in default_services())


def desk_config(n_nodes: int = 2, users_per_node: int = 10, **overrides) -> ScenarioConfig:
    """Minutes-scale variant: fewer users, same physical constants."""
    base = ScenarioConfig(
        n_nodes=n_nodes,
        n_users=users_per_node * n_nodes,
        max_neighbors=min(3, n_nodes - 1) if n_nodes > 1 else 0,
        services=desk_services(),
    )
    return replace(base, **overrides).validate()


@dataclass(frozen=True)
class TrainingConfig:
    episodes: int = 500
    steps_per_episode: int = 40
    discount: float = 0.9
    sigma_start: float = 0.2
    sigma_decay: float = 0.995
    buffer_capacity: int = 100_000
    critic_batch: int = 64
    actor_batch: int = 64
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    soft_update_coef: float = 0.005
    soft_update_period: int = 1
    update_every: int = 1
    updates_per_step: int = 1

    def validate(self) -> "TrainingConfig":
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        if self.steps_per_episode < 1:
            raise ConfigError("steps_per_episode must be >= 1")
        if not 0.0 <= self.discount <= 1.0:
            raise ConfigError("discount must be in [0, 1]")
        if self.sigma_start < 0:
            raise ConfigError("sigma_start must be >= 0")
        if not 0.0 < self.sigma_decay <= 1.0:
            raise ConfigError("sigma_decay must be in (0, 1]")
        for name in ("buffer_capacity", "critic_batch", "actor_batch",
                     "soft_update_period", "update_every", "updates_per_step"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("actor_lr", "critic_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 <= self.soft_update_coef <= 1.0:
            raise ConfigError("soft_update_coef must be in [0, 1]")
        return self


# ---------------------------------------------------------------------------
# config-file loading
# ---------------------------------------------------------------------------

_SCENARIO_KEYS = {"n_nodes", "n_users", "max_neighbors", "coop_penalty", "slice_count_range"}
_GEOMETRY_KEYS = {"area_side_m", "coverage_radius_m", "user_ring_m", "pathloss_exponent"}
_RESOURCE_KEYS = {"compute_hz", "rb_count", "rb_power_dbm", "rb_bandwidth_hz",
                  "noise_psd_dbm_hz", "cycles_per_bit"}
_SIM_KEYS = {"slot_s", "window", "obs_window", "backlog_scale_bits", "rc_orientation",
             "tq_update", "idle_reward", "resample_users_on_reset"}
_SERVICE_KEYS = {"min_users_per_slice", "latency_bound_s", "arrival_rate",
                 "pareto_shape", "task_threshold_bytes"}


def read_config_file(path: str | Path) -> dict:
    """Parse a TOML or JSON config file into a plain dict."""
    p = Path(path)
    raw = p.read_bytes()
    try:
        if p.suffix.lower() == ".json":
            return json.loads(raw.decode("utf-8"))
        return tomllib.loads(raw.decode("utf-8"))
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc


def _reject_unknown(section: str, data: dict, allowed: set) -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in [{section}]")


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    """Build a ScenarioConfig from a parsed config document.

    Absent sections/keys fall back to the shipped defaults; unknown keys are
    rejected so typos fail loudly.
    """
    kwargs: dict = {}
    sec = doc.get("scenario", {})
    _reject_unknown("scenario", sec, _SCENARIO_KEYS)
    for key in ("n_nodes", "n_users", "max_neighbors"):
        if key in sec:
            kwargs[key] = int(sec[key])
    if "coop_penalty" in sec:
        kwargs["coop_penalty"] = float(sec["coop_penalty"])
    if "slice_count_range" in sec:
        lo, hi = sec["slice_count_range"]
        kwargs["slice_count_range"] = (int(lo), int(hi))

    geo = doc.get("geometry", {})
    _reject_unknown("geometry", geo, _GEOMETRY_KEYS)
    for key in ("area_side_m", "coverage_radius_m", "pathloss_exponent"):
        if key in geo:
            kwargs[key] = float(geo[key])
    if "user_ring_m" in geo:
        lo, hi = geo["user_ring_m"]
        kwargs["user_ring_m"] = (float(lo), float(hi))

    res = doc.get("resources", {})
    _reject_unknown("resources", res, _RESOURCE_KEYS)
    for key in ("compute_hz", "rb_count", "rb_bandwidth_hz", "cycles_per_bit"):
        if key in res:
            kwargs[key] = float(res[key])
    if "rb_power_dbm" in res:
        kwargs["rb_power_w"] = dbm_to_watts(float(res["rb_power_dbm"]))
    if "noise_psd_dbm_hz" in res:
        kwargs["noise_psd_w_hz"] = dbm_to_watts(float(res["noise_psd_dbm_hz"]))

    sim = doc.get("simulation", {})
    _reject_unknown("simulation", sim, _SIM_KEYS)
    for key in ("slot_s", "backlog_scale_bits", "idle_reward"):
        if key in sim:
            kwargs[key] = float(sim[key])
    for key in ("window", "obs_window"):
        if key in sim:
            kwargs[key] = int(sim[key])
    for key in ("rc_orientation", "tq_update"):
        if key in sim:
            kwargs[key] = str(sim[key])
    if "resample_users_on_reset" in sim:
        kwargs["resample_users_on_reset"] = bool(sim["resample_users_on_reset"])

    if "services" in doc:
        services = []
        for base in default_services():
            entry = dict(doc["services"].get(base.name, {}))
            _reject_unknown(f"services.{base.name}", entry, _SERVICE_KEYS)
            svc_kwargs: dict = {}
            if "min_users_per_slice" in entry:
                svc_kwargs["min_users_per_slice"] = int(entry["min_users_per_slice"])
            if "latency_bound_s" in entry:
                svc_kwargs["latency_bound_s"] = float(entry["latency_bound_s"])
            for key, target in (("arrival_rate", "arrival_rate"), ("pareto_shape", "pareto_shape")):
                if key in entry:
                    lo, hi = entry[key]
                    svc_kwargs[target] = (float(lo), float(hi))
            if "task_threshold_bytes" in entry:
                lo, hi = entry["task_threshold_bytes"]
                svc_kwargs["task_threshold_bits"] = (float(lo) * BITS_PER_BYTE,
                                                     float(hi) * BITS_PER_BYTE)
            services.append(replace(base, **svc_kwargs))
        unknown = set(doc["services"]) - {s.name for s in services}
        if unknown:
            raise ConfigError(f"unknown service section(s): {sorted(unknown)}")
        kwargs["services"] = tuple(services)

    return ScenarioConfig(**kwargs).validate()


def training_from_dict(doc: dict) -> TrainingConfig:
    sec = dict(doc.get("training", {}))
    allowed = {f.name for f in TrainingConfig.__dataclass_fields__.values()}
    _reject_unknown("training", sec, allowed)
    ints = {"episodes", "steps_per_episode", "buffer_capacity", "critic_batch",
            "actor_batch", "soft_update_period", "update_every"}
    kwargs = {k: (int(v) if k in ints else float(v)) for k, v in sec.items()}
    return TrainingConfig(**kwargs).validate()


def load_scenario(path: str | Path | None) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig().validate()
    return scenario_from_dict(read_config_file(path))


def load_training(path: str | Path | None) -> TrainingConfig:
    if path is None:
        return TrainingConfig().validate()
    return training_from_dict(read_config_file(path))
