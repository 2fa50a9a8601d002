"""Sparse WSSUS multipath Rayleigh channel and its frequency response."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import DomainError, bessel_j0, make_rng

__all__ = [
    "VEH_A_DELAYS_NS",
    "VEH_A_POWERS_DB",
    "ChannelProfile",
    "FadingProcess",
    "veh_a_profile",
    "make_profile",
    "load_profile",
    "time_correlation",
    "generate_fading",
    "cfr_at_tones",
]

# ITU-R M.1225 Vehicular A
VEH_A_DELAYS_NS = (0.0, 310.0, 710.0, 1090.0, 1730.0, 2510.0)
VEH_A_POWERS_DB = (0.0, -1.0, -9.0, -10.0, -15.0, -20.0)

DEFAULT_OSCILLATORS = 32


@dataclass(frozen=True)
class ChannelProfile:
    """Static tap delays and average powers.

    ``delays_norm`` is in sampling periods and may be non-integer;
    ``powers_lin`` sums to one.
    """

    delays_ns: np.ndarray
    powers_db: np.ndarray
    delays_norm: np.ndarray
    powers_lin: np.ndarray

    @property
    def n_taps(self) -> int:
        return len(self.delays_norm)

    def check_cp(self, l_cp: int) -> None:
        if np.any(self.delays_norm >= l_cp):
            raise DomainError(f"tap delay exceeds cyclic prefix of {l_cp} samples")


@dataclass(frozen=True)
class FadingProcess:
    gains: np.ndarray  # (L, n_symbols) complex
    f_d: float
    T_s: float

    @property
    def n_symbols(self) -> int:
        return self.gains.shape[1]


def make_profile(delays_ns, powers_db, bw: float) -> ChannelProfile:
    """Build a unit-power profile from delays (ns) and powers (dB)."""
    if bw <= 0:
        raise DomainError("bandwidth must be positive")
    delays_ns = np.asarray(delays_ns, dtype=float)
    powers_db = np.asarray(powers_db, dtype=float)
    if delays_ns.shape != powers_db.shape or delays_ns.ndim != 1 or delays_ns.size == 0:
        raise ValueError("delays and powers must be equal-length non-empty 1-D sequences")
    if delays_ns[0] != 0:
        raise ValueError("first tap delay must be zero")
    if np.any(np.diff(delays_ns) <= 0):
        raise ValueError("tap delays must be strictly increasing")
    lin = 10.0 ** (powers_db / 10.0)
    return ChannelProfile(
        delays_ns=delays_ns,
        powers_db=powers_db,
        delays_norm=delays_ns * bw / 1e9,
        powers_lin=lin / lin.sum(),
    )


def veh_a_profile(bw: float = 10e6) -> ChannelProfile:
    return make_profile(VEH_A_DELAYS_NS, VEH_A_POWERS_DB, bw)


def load_profile(path, bw: float) -> ChannelProfile:
    """Read a ``delay_ns power_db`` table (whitespace separated, ``#`` comments)."""
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'delay_ns power_db', got {line!r}")
        rows.append((float(parts[0]), float(parts[1])))
    if not rows:
        raise ValueError(f"{path}: no taps found")
    delays, powers = zip(*rows)
    return make_profile(delays, powers, bw)


def time_correlation(f_d: float, T_s: float, m) -> float:
    """Normalized tap autocorrelation J0(2 pi f_d T_s |m|) (Jakes spectrum)."""
    if f_d < 0 or T_s <= 0:
        raise DomainError("need f_d >= 0 and T_s > 0")
    return bessel_j0(2 * np.pi * f_d * T_s * np.abs(m))


def generate_fading(
    profile: ChannelProfile,
    f_d: float,
    T_s: float,
    n_symbols: int,
    seed,
    n_osc: int = DEFAULT_OSCILLATORS,
) -> FadingProcess:
    """Sum-of-sinusoids Rayleigh fading, one gain per tap per OFDMA symbol.

    Tap ``l`` is a sum of ``n_osc`` unit complex exponentials with Doppler
    shifts ``f_d cos(alpha)`` and independent uniform phases. The arrival
    angles sit on a uniform grid of spacing ``2 pi / n_osc``; each tap's grid
    is rotated by ``2 pi (l + 1/4) / (L n_osc)``, which interleaves the taps
    and guarantees no two oscillators of different taps share a Doppler
    shift (``cos`` is even, so angle pairs summing to a multiple of 2 pi would
    collide). Time-average autocorrelation then tracks J0(2 pi f_d T_s m),
    cross-tap correlation vanishes for long runs, and ``E|gain|^2`` equals the
    tap power.
    """
    if n_symbols < 1:
        raise ValueError("n_symbols must be >= 1")
    if n_osc < 16:
        raise ValueError("use at least 16 oscillators per tap")
    rng = make_rng(seed)
    L = profile.n_taps
    k = np.arange(n_osc)
    offset = 2 * np.pi * (np.arange(L)[:, None] + 0.25) / L
    alpha = (2 * np.pi * k[None, :] + offset) / n_osc
    phi = rng.uniform(-np.pi, np.pi, size=(L, n_osc))
    w = 2 * np.pi * f_d * T_s * np.cos(alpha)  # rad per symbol, (L, n_osc)
    n = np.arange(n_symbols)
    gains = np.empty((L, n_symbols), dtype=complex)
    amp = np.sqrt(profile.powers_lin / n_osc)
    for l in range(L):
        phase = np.outer(w[l], n) + phi[l][:, None]
        gains[l] = amp[l] * np.exp(1j * phase).sum(axis=0)
    return FadingProcess(gains=gains, f_d=f_d, T_s=T_s)


def cfr_at_tones(gains, delays_norm, tones, N: int) -> np.ndarray:
    """Frequency response sum_l gain_l exp(-j 2 pi k tau_l / N) at ``tones``.

    ``gains`` may be an ``L``-vector or an ``(L, n)`` matrix, in which case
    the result is ``(len(tones), n)``.
    """
    tones = np.asarray(tones)
    if N < 1:
        raise ValueError("N must be >= 1")
    if tones.size and (tones.min() < 0 or tones.max() >= N):
        raise IndexError(f"tone index out of range [0, {N})")
    F = np.exp(-2j * np.pi * np.outer(tones, np.asarray(delays_norm, dtype=float)) / N)
    return F @ np.asarray(gains, dtype=complex)
