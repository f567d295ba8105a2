import math

import numpy as np

from qcomp.scenario import NetworkConfig, NetworkScenario, generate_channels


def scalar_scenario(h2):
    return NetworkScenario.from_channels({(0, 0): np.array([[math.sqrt(h2)]], dtype=complex)})


def random_scenario(seed, n_cells=2, n_users=2, n_antennas=8):
    cfg = NetworkConfig(n_cells=n_cells, n_users_per_cell=n_users, n_bs_antennas=n_antennas)
    return generate_channels(cfg, np.random.default_rng(seed))


def iid_scenario(seed, n_cells=2, n_users=2, n_antennas=4, scale=1.0):
    """Unit-variance Rayleigh channels without geometry."""
    rng = np.random.default_rng(seed)
    shape = (n_cells, n_cells, n_antennas, n_users)
    H = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)
    return NetworkScenario(H)
