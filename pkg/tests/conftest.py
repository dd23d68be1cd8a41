import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for straightline / helpers

from mecslice import SliceEnv, desk_config
from mecslice.environment import build_users


@pytest.fixture
def tiny_config():
    """One node, one slice per service, two users per slice."""
    return desk_config(n_nodes=1, users_per_node=6, slice_count_range=(3, 3))


@pytest.fixture
def tiny_env(tiny_config):
    return SliceEnv(tiny_config, seed=1234)


def random_small_env(rng: np.random.Generator) -> SliceEnv:
    """Random instance within the exact-oracle envelope: <=2 nodes, <=2
    slices per node, <=3 users per slice, both model-toggle settings."""
    n_nodes = int(rng.integers(1, 3))
    slice_services = [[int(rng.integers(0, 3)) for _ in range(rng.integers(1, 3))]
                      for _ in range(n_nodes)]
    slice_sizes = [[int(rng.integers(1, 4)) for _ in node] for node in slice_services]
    n_users = int(sum(sum(row) for row in slice_sizes))
    cfg = desk_config(
        n_nodes=n_nodes,
        n_users=n_users,
        slice_count_range=(1, 2),
        max_neighbors=int(rng.integers(0, n_nodes)),
        rc_orientation=str(rng.choice(["corrected", "paper"])),
        tq_update=str(rng.choice(["corrected", "paper"])),
    )
    table = build_users(cfg, rng, slice_services=slice_services,
                        slice_sizes=slice_sizes)
    return SliceEnv(cfg, seed=int(rng.integers(2 ** 31)), table=table)
