"""OFDMA uplink numerology, tile allocation, hopping pilots, per-tone observation.

Tiles are 4 contiguous subcarriers by 3 OFDMA symbols with pilots on the
four corners. Under virtual MIMO the corners are split diagonally between
two users:

    user A: (symbol 0, k0) and (symbol 2, k0 + 3)   -> hop nu = +3
    user B: (symbol 0, k0 + 3) and (symbol 2, k0)   -> hop nu = -3

Symbols 0 and 2 of a tile form the even/odd pair seen by the estimator;
symbol 1 carries no pilots.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelProfile, cfr_at_tones
from .numerics import complex_gaussian, make_rng

__all__ = [
    "TILE_WIDTH",
    "TILES_PER_SUBCHANNEL",
    "AllocationError",
    "SystemConfig",
    "TileAllocation",
    "PilotPattern",
    "ToneObservation",
    "load_system_config",
    "system_config_from_mapping",
    "random_tile_allocation",
    "pilot_pattern",
    "data_offsets",
    "modulate_qpsk",
    "pilot_symbols",
    "observe_symbol",
    "observe_window",
]

TILE_WIDTH = 4
TILES_PER_SUBCHANNEL = 6

# offsets inside a tile carrying user data, per tile symbol (corners are pilots)
_DATA_OFFSETS = {0: (1, 2), 1: (0, 1, 2, 3), 2: (1, 2)}


class AllocationError(ValueError):
    """Requested subchannels do not fit in the usable band."""


@dataclass(frozen=True)
class SystemConfig:
    bw: float = 10e6
    N: int = 1024
    N_used: int = 840
    L_cp: int = 128
    f_c: float = 3.5e9

    def __post_init__(self):
        if not (0 < self.N_used <= self.N):
            raise ValueError("need 0 < N_used <= N")
        if not (0 <= self.L_cp < self.N):
            raise ValueError("need 0 <= L_cp < N")
        if self.bw <= 0:
            raise ValueError("bandwidth must be positive")

    @property
    def T(self) -> float:
        return 1.0 / self.bw

    @property
    def T_s(self) -> float:
        return (self.N + self.L_cp) / self.bw


_SYSTEM_KEYS = {"bw_hz": ("bw", float), "n_fft": ("N", int), "n_used": ("N_used", int),
                "l_cp": ("L_cp", int), "f_c_hz": ("f_c", float)}


def load_system_config(path, section: str = "system") -> SystemConfig:
    """Read ``bw_hz``, ``n_fft``, ``n_used``, ``l_cp``, ``f_c_hz`` from an INI file.

    Missing keys keep their WiMAX defaults. Unknown keys in the section are
    rejected so typos do not silently fall back to defaults.
    """
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"cannot read config file {path}")
    if not parser.has_section(section):
        return SystemConfig()
    return system_config_from_mapping(dict(parser[section]), source=str(path))


def system_config_from_mapping(values: dict, source: str = "<mapping>") -> SystemConfig:
    kwargs = {}
    for key, raw in values.items():
        if key not in _SYSTEM_KEYS:
            raise ValueError(f"{source}: unknown system key {key!r}")
        name, conv = _SYSTEM_KEYS[key]
        kwargs[name] = conv(float(raw)) if conv is int else conv(raw)
    return SystemConfig(**kwargs)


@dataclass(frozen=True)
class TileAllocation:
    tile_starts: np.ndarray  # sorted base subcarrier per tile
    tiles_per_user: int
    symbol_triplet_index: int = 0

    def tile_tones(self) -> np.ndarray:
        """(n_tiles, 4) matrix of subcarrier indexes."""
        return self.tile_starts[:, None] + np.arange(TILE_WIDTH)[None, :]


@dataclass(frozen=True)
class PilotPattern:
    pilots_even: np.ndarray
    pilots_odd: np.ndarray
    nu: int

    @property
    def P(self) -> int:
        return len(self.pilots_even)


@dataclass
class ToneObservation:
    symbol_index: int
    tones: np.ndarray
    tx: np.ndarray
    cfr_true: np.ndarray
    rx: np.ndarray
    noise_var: float = field(default=0.0)


def random_tile_allocation(cfg: SystemConfig, n_sch: int, seed, triplet_index: int = 0) -> TileAllocation:
    """Draw ``6 * n_sch`` disjoint 4-aligned tiles uniformly from the usable band."""
    n_tiles = TILES_PER_SUBCHANNEL * n_sch
    slots = cfg.N_used // TILE_WIDTH
    if n_sch < 1 or n_tiles > slots:
        raise AllocationError(
            f"{n_sch} subchannels need {n_tiles * TILE_WIDTH} subcarriers, only {cfg.N_used} usable"
        )
    rng = make_rng(seed, triplet_index)
    picked = np.sort(rng.choice(slots, size=n_tiles, replace=False))
    return TileAllocation(
        tile_starts=picked * TILE_WIDTH,
        tiles_per_user=n_tiles,
        symbol_triplet_index=triplet_index,
    )


def pilot_pattern(alloc: TileAllocation, user_role: str = "A") -> PilotPattern:
    k0 = np.asarray(alloc.tile_starts)
    last = TILE_WIDTH - 1
    role = user_role.upper()
    if role == "A":
        return PilotPattern(pilots_even=k0.copy(), pilots_odd=k0 + last, nu=last)
    if role == "B":
        return PilotPattern(pilots_even=k0 + last, pilots_odd=k0.copy(), nu=-last)
    raise ValueError(f"user_role must be 'A' or 'B', got {user_role!r}")


def data_offsets(tile_symbol: int) -> tuple:
    """In-tile subcarrier offsets carrying data on tile symbol 0, 1 or 2."""
    return _DATA_OFFSETS[tile_symbol]


def modulate_qpsk(bits) -> np.ndarray:
    """Gray-mapped unit-energy QPSK. Bit pairs: 00, 01, 11, 10 walk the quadrants."""
    bits = np.asarray(bits, dtype=int).ravel()
    if bits.size % 2:
        raise ValueError("QPSK needs an even number of bits")
    if np.any((bits != 0) & (bits != 1)):
        raise ValueError("bits must be 0 or 1")
    b0, b1 = bits[0::2], bits[1::2]
    re = 1.0 - 2.0 * b1
    im = 1.0 - 2.0 * b0
    return (re + 1j * im) / np.sqrt(2)


def pilot_symbols(P: int, seed) -> np.ndarray:
    """Known unit-modulus QPSK pilot values."""
    if P < 1:
        raise ValueError("P must be >= 1")
    rng = make_rng(seed)
    return modulate_qpsk(rng.integers(0, 2, size=2 * P))


def observe_symbol(cfg: SystemConfig, tones, tx, gains_at_n, profile: ChannelProfile,
                   noise_var: float, seed, symbol_index: int = 0) -> ToneObservation:
    """Received values ``tx * H + w`` on ``tones`` for one OFDMA symbol.

    Exact frequency-domain form of the uplink model under a sufficient cyclic
    prefix and ideal synchronization.
    """
    tones = np.asarray(tones)
    tx = np.asarray(tx, dtype=complex)
    if tones.shape != tx.shape:
        raise ValueError("tones and tx must have the same length")
    h = cfr_at_tones(gains_at_n, profile.delays_norm, tones, cfg.N)
    w = complex_gaussian(tones.size, noise_var, seed)
    return ToneObservation(symbol_index, tones, tx, h, tx * h + w, noise_var)


def observe_window(cfg: SystemConfig, tile_tones, tx_grid, gains, profile: ChannelProfile,
                   noise_var: float, seed) -> tuple:
    """Vectorized ``observe_symbol`` over a whole run of tile symbols.

    Args:
        tile_tones: ``(n_tiles, 4)`` subcarrier indexes.
        tx_grid: ``(n_symbols, n_tiles, 4)`` transmitted values; zero where
            the user is silent.
        gains: ``(L, n_symbols)`` tap gains.

    Returns:
        ``(rx, cfr_true)`` with the shape of ``tx_grid``. Noise is drawn as a
        unit-variance grid and scaled, so the same seed at different SNRs
        reuses the same noise shape.
    """
    tile_tones = np.asarray(tile_tones)
    tx_grid = np.asarray(tx_grid, dtype=complex)
    n_sym = tx_grid.shape[0]
    h = cfr_at_tones(gains, profile.delays_norm, tile_tones.ravel(), cfg.N)  # (n_tones, n_sym)
    h = h.T.reshape(n_sym, *tile_tones.shape)
    w = complex_gaussian(h.size, 1.0, seed).reshape(h.shape)
    return tx_grid * h + np.sqrt(noise_var) * w, h
