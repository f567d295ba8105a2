"""Multicell geometry, user drops and noise-normalized channels.

Channels are stored as one array ``H`` of shape ``(N_c, N_c, N_b, N_u)`` where
``H[i, j]`` is the matrix between BS ``i`` and the users of cell ``j``; column
``u`` of ``H[i, j]`` is the vector ``h_{i,j,u}``. Entries are divided by the
square root of the thermal noise power (in mW), so the receiver noise is
unit-variance and solver powers come out in mW.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1
SPEED_OF_LIGHT = 299_792_458.0
THERMAL_NOISE_DBM_HZ = -174.0
MAX_DROP_ATTEMPTS = 1_000_000

# Erceg et al. terrain categories: exponent = a - b*h_b + c/h_b
ERCEG_TERRAIN = {
    "A": (4.6, 0.0075, 12.6),
    "B": (4.0, 0.0065, 17.1),
    "C": (3.6, 0.0050, 20.0),
}


class ConfigError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PathlossParams:
    reference_distance: float = 100.0
    terrain: str = "B"
    bs_height: float = 30.0
    # overrides the terrain formula when set
    exponent: float | None = None

    def path_exponent(self) -> float:
        if self.exponent is not None:
            return float(self.exponent)
        a, b, c = ERCEG_TERRAIN[self.terrain]
        return a - b * self.bs_height + c / self.bs_height


@dataclass(frozen=True)
class NetworkConfig:
    n_cells: int = 2
    n_users_per_cell: int = 2
    n_bs_antennas: int = 16
    inter_site_distance: float = 2000.0
    min_user_bs_distance: float = 100.0
    carrier_frequency: float = 2.4e9
    bandwidth: float = 10e6
    noise_figure: float = 5.0
    shadowing_std: float = 8.7
    pathloss: PathlossParams = field(default_factory=PathlossParams)
    seed: int = 0

    def __post_init__(self):
        if self.n_cells not in (1, 2, 7):
            raise ConfigError(f"n_cells must be 1, 2 or 7, got {self.n_cells}")
        for name in ("n_users_per_cell", "n_bs_antennas"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.inter_site_distance <= 2 * self.min_user_bs_distance:
            raise ConfigError("inter_site_distance must exceed 2 * min_user_bs_distance")
        if self.shadowing_std < 0:
            raise ConfigError("shadowing_std must be nonnegative")
        if self.pathloss.terrain not in ERCEG_TERRAIN and self.pathloss.exponent is None:
            raise ConfigError(f"unknown terrain category {self.pathloss.terrain!r}")

    @property
    def noise_power_dbm(self) -> float:
        return THERMAL_NOISE_DBM_HZ + 10 * math.log10(self.bandwidth) + self.noise_figure

    @property
    def noise_power_mw(self) -> float:
        return 10 ** (self.noise_power_dbm / 10)

    def replace(self, **changes) -> "NetworkConfig":
        if "pathloss" in changes and isinstance(changes["pathloss"], dict):
            changes["pathloss"] = PathlossParams(**changes["pathloss"])
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        if "pathloss" in d:
            pl = d["pathloss"] or {}
            bad = set(pl) - {f.name for f in dataclasses.fields(PathlossParams)}
            if bad:
                raise ConfigError(f"unknown pathloss keys: {sorted(bad)}")
            d["pathloss"] = PathlossParams(**pl)
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _freeze(a):
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NetworkScenario:
    """Channels of one Monte-Carlo drop (immutable)."""

    H: np.ndarray
    bs_positions: np.ndarray | None = None
    user_positions: np.ndarray | None = None
    noise_power_mw: float = 1.0

    def __post_init__(self):
        H = np.asarray(self.H, dtype=complex)
        if H.ndim != 4 or H.shape[0] != H.shape[1]:
            raise ValueError(f"H must have shape (N_c, N_c, N_b, N_u), got {H.shape}")
        if not np.all(np.isfinite(H)):
            raise ValueError("channel entries must be finite")
        object.__setattr__(self, "H", _freeze(H))
        if self.bs_positions is not None:
            object.__setattr__(self, "bs_positions", _freeze(self.bs_positions))
        if self.user_positions is not None:
            object.__setattr__(self, "user_positions", _freeze(self.user_positions))

    @classmethod
    def from_channels(cls, channels: dict, **kw) -> "NetworkScenario":
        """Build from a ``{(i, j): N_b x N_u}`` mapping."""
        n_c = 1 + max(max(k) for k in channels)
        n_b, n_u = np.shape(channels[(0, 0)])
        H = np.zeros((n_c, n_c, n_b, n_u), dtype=complex)
        for (i, j), m in channels.items():
            H[i, j] = m
        return cls(H, **kw)

    @property
    def n_cells(self) -> int:
        return self.H.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.H.shape[2]

    @property
    def n_users(self) -> int:
        return self.H.shape[3]

    @property
    def channels(self) -> dict:
        return {(i, j): self.H[i, j] for i in range(self.n_cells) for j in range(self.n_cells)}

    def h(self, i, j, u) -> np.ndarray:
        return self.H[i, j, :, u]

    def H_bs(self, i) -> np.ndarray:
        """``H_i = [H_{i,1}, ..., H_{i,N_c}]``, shape ``N_b x N_c*N_u``."""
        return self.H[i].transpose(1, 0, 2).reshape(self.n_antennas, -1)

    def cell_view(self, i) -> "NetworkScenario":
        """Single-cell scenario holding only the in-cell channels of cell ``i``."""
        return NetworkScenario(self.H[i:i + 1, i:i + 1], noise_power_mw=self.noise_power_mw)

    def to_dbm(self, power):
        """Solver power (mW scale) to dBm."""
        with np.errstate(divide="ignore"):
            return 10 * np.log10(np.asarray(power, dtype=float))

    # serialization -------------------------------------------------------
    def to_json(self) -> str:
        H = np.ascontiguousarray(self.H)
        blob = {
            "schema_version": SCHEMA_VERSION,
            "shape": list(H.shape),
            "H_complex128_b64": base64.b64encode(H.astype("<c16").tobytes()).decode(),
            "bs_positions": None if self.bs_positions is None else self.bs_positions.tolist(),
            "user_positions": None if self.user_positions is None else self.user_positions.tolist(),
            "noise_power_mw": self.noise_power_mw,
        }
        return json.dumps(blob)

    @classmethod
    def from_json(cls, text: str) -> "NetworkScenario":
        blob = json.loads(text)
        if blob.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported scenario schema {blob.get('schema_version')!r}")
        raw = base64.b64decode(blob["H_complex128_b64"])
        H = np.frombuffer(raw, dtype="<c16").reshape(blob["shape"])
        return cls(H, blob["bs_positions"], blob["user_positions"], blob["noise_power_mw"])


def generate_layout(config: NetworkConfig) -> np.ndarray:
    """BS coordinates for the 1-, 2- or 7-cell hexagonal layouts."""
    d = config.inter_site_distance
    if config.n_cells == 1:
        return np.zeros((1, 2))
    if config.n_cells == 2:
        return np.array([[0.0, 0.0], [d, 0.0]])
    if config.n_cells == 7:
        ang = np.deg2rad(60.0 * np.arange(6))
        ring = d * np.column_stack((np.cos(ang), np.sin(ang)))
        return np.vstack((np.zeros((1, 2)), ring))
    raise ConfigError(f"unsupported n_cells {config.n_cells}")


def _in_hexagon(p, inradius):
    """Hexagon with flat sides facing the neighbours at 0, 60, ... degrees."""
    ang = np.deg2rad(60.0 * np.arange(6))
    normals = np.column_stack((np.cos(ang), np.sin(ang)))
    return np.all(p @ normals.T <= inradius, axis=-1)


def drop_users(layout, config: NetworkConfig, rng: np.random.Generator) -> np.ndarray:
    """Uniform user positions inside each serving hexagon.

    Returns an array of shape ``(N_c, N_u, 2)``. Users closer than
    ``min_user_bs_distance`` to any BS are rejected and redrawn.
    """
    layout = np.asarray(layout, dtype=float)
    inradius = config.inter_site_distance / 2
    circ = inradius * 2 / math.sqrt(3)
    out = np.empty((len(layout), config.n_users_per_cell, 2))
    attempts = 0
    for c, bs in enumerate(layout):
        for u in range(config.n_users_per_cell):
            while True:
                attempts += 1
                if attempts > MAX_DROP_ATTEMPTS:
                    raise GenerationError("user drop exceeded the rejection-sampling cap")
                p = rng.uniform(-circ, circ, size=2)
                if not _in_hexagon(p, inradius):
                    continue
                pos = bs + p
                if np.min(np.linalg.norm(layout - pos, axis=1)) < config.min_user_bs_distance:
                    continue
                out[c, u] = pos
                break
    return out


def free_space_loss_db(distance, carrier_frequency) -> float:
    lam = SPEED_OF_LIGHT / carrier_frequency
    return 20 * np.log10(4 * math.pi * distance / lam)


def channel_gain_db(distance, config: NetworkConfig, shadow_sample=0.0):
    """Log-distance gain (negative pathloss) plus a shadowing sample, in dB.

    Distances below the reference distance are clamped to it.
    """
    pl = config.pathloss
    d0 = pl.reference_distance
    d = np.maximum(np.asarray(distance, dtype=float), d0)
    loss = free_space_loss_db(d0, config.carrier_frequency) + 10 * pl.path_exponent() * np.log10(d / d0)
    return -loss + shadow_sample


def large_scale_gains(bs_positions, user_positions, config, rng) -> np.ndarray:
    """Linear gains ``g[i, j, u]`` between BS ``i`` and user ``u`` of cell ``j``."""
    diff = user_positions[None, :, :, :] - bs_positions[:, None, None, :]
    dist = np.linalg.norm(diff, axis=-1)
    shadow = config.shadowing_std * rng.standard_normal(dist.shape)
    return 10 ** (channel_gain_db(dist, config, shadow) / 10)


def generate_channels(config: NetworkConfig, rng: np.random.Generator | None = None) -> NetworkScenario:
    """Draw one network realization; ``rng`` defaults to one seeded by ``config.seed``."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    bs = generate_layout(config)
    users = drop_users(bs, config, rng)
    g = large_scale_gains(bs, users, config, rng)
    n_c, n_b, n_u = config.n_cells, config.n_bs_antennas, config.n_users_per_cell
    small = (rng.standard_normal((n_c, n_c, n_b, n_u))
             + 1j * rng.standard_normal((n_c, n_c, n_b, n_u))) / math.sqrt(2)
    scale = np.sqrt(g / config.noise_power_mw)[:, :, None, :]
    return NetworkScenario(scale * small, bs, users, config.noise_power_mw)
