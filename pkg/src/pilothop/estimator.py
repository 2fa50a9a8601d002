"""Pilot-hopping parametric channel estimator and the local-linear baseline.

Pipeline for one observation window (fixed pilot geometry):

1. LS estimates on the even/odd pilot sets of every symbol pair, stacked
   into 2P-vectors and averaged into a sample autocorrelation.
2. Lag-1 tap correlation ``eta`` from the block norms, then the Doppler
   attenuation of the off-diagonal blocks is undone.
3. MDL on the averaged diagonal blocks picks the path count.
4. ESPRIT on the compensated 2P x 2P matrix recovers the delays from the
   rotation between the two P-row halves of the signal subspace.
5. Integer windows around each delay give the interpolation support, and a
   least-squares fit on that support maps pilots to any other tone.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    DegenerateError,
    DimensionError,
    DomainError,
    SubspaceError,
    general_eigenvalues,
    hermitian_evd,
    pseudo_inverse,
    solve_shift_operator,
)

log = logging.getLogger(__name__)

__all__ = [
    "ETA_MIN",
    "MDL_ORDER_CAP",
    "DEFAULT_BETA",
    "TLSFallbackWarning",
    "StackedPilotEstimate",
    "CorrAccumulator",
    "DelayEstimate",
    "Interpolator",
    "ls_pilot_estimate",
    "stack_pair",
    "split_pair",
    "accumulate",
    "estimate_eta",
    "compensate_doppler",
    "reduce_to_Rp",
    "mdl_k_max",
    "mdl_order",
    "esprit_delays",
    "round_half_up",
    "expand_delay_support",
    "build_interpolator",
    "make_interpolator",
    "interpolate_cfr",
    "ll_baseline",
    "middle_symbol_cfr",
    "estimate_delays",
]

ETA_MIN = 0.05
MDL_ORDER_CAP = 24
DEFAULT_BETA = 5


class TLSFallbackWarning(RuntimeWarning):
    """TLS shift-operator solve failed and LS was used instead."""


@dataclass(frozen=True)
class StackedPilotEstimate:
    vector: np.ndarray  # even-symbol estimates on top, odd below
    pair_index: int = 0

    @property
    def P(self) -> int:
        return len(self.vector) // 2


@dataclass
class CorrAccumulator:
    """Running sum of outer products of stacked pilot estimates."""

    dim: int
    sum: np.ndarray = field(default=None)
    count: int = 0

    def __post_init__(self):
        if self.sum is None:
            self.sum = np.zeros((self.dim, self.dim), dtype=complex)

    def add(self, v) -> "CorrAccumulator":
        v = np.asarray(getattr(v, "vector", v), dtype=complex)
        if v.shape != (self.dim,):
            raise DimensionError(f"expected a {self.dim}-vector, got shape {v.shape}")
        self.sum += np.outer(v, v.conj())
        self.count += 1
        return self

    def add_many(self, rows) -> "CorrAccumulator":
        """Accumulate every row of an ``(n, dim)`` array."""
        rows = np.asarray(rows, dtype=complex)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise DimensionError(f"expected (n, {self.dim}) rows, got shape {rows.shape}")
        self.sum += rows.T @ rows.conj()
        self.count += rows.shape[0]
        return self

    @property
    def n_symbols(self) -> int:
        return 2 * self.count

    def finalize(self) -> np.ndarray:
        if self.count == 0:
            raise DegenerateError("no snapshots accumulated")
        r = self.sum / self.count
        return 0.5 * (r + r.conj().T)


@dataclass(frozen=True)
class DelayEstimate:
    eta_hat: float
    order_L_hat: int
    taus: np.ndarray
    support: np.ndarray
    beta: int

    def to_record(self) -> str:
        """``eta_hat L_hat tau_0 ... tau_{L-1}`` on one line."""
        fields = [repr(float(self.eta_hat)), str(int(self.order_L_hat))]
        fields += [repr(float(t)) for t in self.taus]
        return " ".join(fields)

    @staticmethod
    def parse_record(line: str) -> tuple:
        parts = line.split()
        if len(parts) < 2:
            raise ValueError(f"malformed delay record: {line!r}")
        eta, L = float(parts[0]), int(parts[1])
        taus = np.array([float(p) for p in parts[2:]])
        if len(taus) != L:
            raise ValueError(f"record announces {L} delays but carries {len(taus)}")
        return eta, L, taus


@dataclass(frozen=True)
class Interpolator:
    G_even: np.ndarray
    G_odd: np.ndarray
    data_tones_even: np.ndarray
    data_tones_odd: np.ndarray


def ls_pilot_estimate(rx_pilots, pilot_tx) -> np.ndarray:
    rx_pilots = np.asarray(rx_pilots, dtype=complex)
    pilot_tx = np.asarray(pilot_tx, dtype=complex)
    if rx_pilots.shape[-1] != pilot_tx.shape[-1]:
        raise DimensionError("received and transmitted pilot vectors differ in length")
    if np.any(pilot_tx == 0):
        raise ZeroDivisionError("zero-valued pilot")
    return rx_pilots / pilot_tx


def stack_pair(even_est, odd_est, pair_index: int = 0) -> StackedPilotEstimate:
    even_est = np.asarray(even_est, dtype=complex)
    odd_est = np.asarray(odd_est, dtype=complex)
    if even_est.shape != odd_est.shape or even_est.ndim != 1:
        raise DimensionError("even and odd estimates must be equal-length vectors")
    return StackedPilotEstimate(np.concatenate([even_est, odd_est]), pair_index)


def split_pair(v: StackedPilotEstimate) -> tuple:
    P = v.P
    return v.vector[:P], v.vector[P:]


def accumulate(acc: CorrAccumulator, v) -> CorrAccumulator:
    return acc.add(v)


def _blocks(R) -> tuple:
    R = np.asarray(R, dtype=complex)
    n = R.shape[0]
    if R.ndim != 2 or R.shape[1] != n or n % 2:
        raise DimensionError(f"expected a square 2P x 2P matrix, got shape {R.shape}")
    P = n // 2
    return R[:P, :P], R[:P, P:], R[P:, :P], R[P:, P:]


def estimate_eta(R, eta_min: float = ETA_MIN) -> float:
    """Lag-1 time correlation from the ratio of off- to on-diagonal block energy.

    Clamped to ``[eta_min, 1]``.
    """
    a11, a12, a21, a22 = _blocks(R)
    den = np.linalg.norm(a11) ** 2 + np.linalg.norm(a22) ** 2
    if den == 0:
        raise DegenerateError("diagonal blocks carry no energy")
    num = np.linalg.norm(a12) ** 2 + np.linalg.norm(a21) ** 2
    eta = math.sqrt(num / den)
    return min(1.0, max(eta_min, eta))


def compensate_doppler(R, eta: float) -> np.ndarray:
    if not eta > 0:
        raise DomainError("eta must be positive")
    R = np.array(R, dtype=complex)
    P = R.shape[0] // 2
    _blocks(R)
    R[:P, P:] /= eta
    R[P:, :P] /= eta
    return 0.5 * (R + R.conj().T)


def reduce_to_Rp(R) -> np.ndarray:
    a11, _, _, a22 = _blocks(R)
    rp = 0.5 * (a11 + a22)
    return 0.5 * (rp + rp.conj().T)


def mdl_k_max(eigenvalues, cap: int = MDL_ORDER_CAP) -> int:
    """Largest order MDL may consider: ``min(p - 1, effective_rank - 1, cap)``."""
    ev = np.asarray(eigenvalues, dtype=float)
    if ev.size == 0 or ev[0] <= 0:
        return 0
    eff_rank = int(np.sum(ev > 1e-10 * ev[0]))
    return max(0, min(ev.size - 1, eff_rank - 1, cap))


def mdl_order(eigenvalues, snapshots: int, k_max: int) -> int:
    """Minimum-description-length path count (Wax-Kailath), at least 1.

    Args:
        eigenvalues: Covariance eigenvalues in descending order.
        snapshots: Number of snapshots behind the covariance.
        k_max: Largest candidate order, below ``len(eigenvalues)``.
    """
    ev = np.asarray(eigenvalues, dtype=float)
    p = ev.size
    if p == 0 or ev[0] <= 0:
        raise DegenerateError("eigenvalue spectrum is empty or all zero")
    if snapshots < 1:
        raise ValueError("snapshots must be >= 1")
    if np.any(np.diff(ev) > 1e-12 * ev[0]):
        raise ValueError("eigenvalues must be sorted in descending order")
    k_max = min(int(k_max), p - 1)
    if k_max < 1:
        return 1
    ev = np.maximum(ev, 1e-12 * ev[0])
    logs = np.log(ev)
    best_k, best = 1, np.inf
    for k in range(1, k_max + 1):
        tail = ev[k:]
        m = p - k
        log_ratio = logs[k:].mean() - math.log(tail.mean())
        score = -snapshots * m * log_ratio + 0.5 * k * (2 * p - k) * math.log(snapshots)
        if score < best:
            best_k, best = k, score
    return best_k


def esprit_delays(R_tilde, L_hat: int, nu: int, N: int, mode: str = "TLS") -> np.ndarray:
    """Path delays (in samples) from a Doppler-compensated 2P x 2P correlation.

    The upper and lower halves of the ``L_hat``-dimensional signal subspace
    are related by a rotation whose eigenvalues are ``exp(-j 2 pi nu tau / N)``.
    Delays are returned ascending in ``[0, N / |nu|)``.

    Raises:
        SubspaceError: no eigen-gap after position ``L_hat``.
    """
    if nu == 0:
        raise DomainError("hopping offset nu must be non-zero")
    R_tilde = np.asarray(R_tilde, dtype=complex)
    P = R_tilde.shape[0] // 2
    if not 1 <= L_hat <= P:
        raise DomainError(f"L_hat must lie in [1, {P}]")
    eig = hermitian_evd(R_tilde)
    lam = eig.values
    if L_hat < lam.size and lam[L_hat - 1] - lam[L_hat] < 1e-12 * max(lam[0], np.finfo(float).tiny):
        raise SubspaceError(f"no eigen-gap after {L_hat} dominant eigenvalues")
    U = eig.vectors[:, :L_hat]
    u_up, u_dw = U[:P], U[P:]
    try:
        Q = solve_shift_operator(u_up, u_dw, mode)
    except SubspaceError:
        if mode.upper() != "TLS":
            raise
        warnings.warn("TLS ESPRIT failed; falling back to LS", TLSFallbackWarning, stacklevel=2)
        Q = solve_shift_operator(u_up, u_dw, "LS")
    ang = np.mod(np.angle(np.conj(general_eigenvalues(Q))), 2 * np.pi)
    period = N / abs(nu)
    taus = np.mod(ang * N / (2 * np.pi * nu), period)
    # a zero delay with rounding noise lands just below the period
    taus = np.where(period - taus < 1e-9 * period, 0.0, taus)
    return np.sort(taus)


def round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=float) + 0.5).astype(int)


def _windows(centres, beta: int, L_cp: int) -> np.ndarray:
    if len(centres) == 0:
        return np.array([], dtype=int)
    idx = (np.asarray(centres)[:, None] + np.arange(-beta, beta + 1)[None, :]).ravel()
    idx = idx[(idx >= 0) & (idx < L_cp)]
    return np.unique(idx)


def expand_delay_support(taus, beta: int, L_cp: int, P: int, period: float | None = None,
                         return_beta: bool = False):
    """Union of integer windows ``round(tau) +- beta``, clipped to the CP.

    ``beta`` shrinks until ``2 * beta * len(taus) <= P`` and the support has at
    most ``P`` entries.

    With ``period`` (the unambiguous range ``N / |nu|``) given, estimates past
    the midpoint between ``L_cp`` and ``period`` are read as wrapped negative
    delays. Paths cannot precede the first (zero-delay) tap, so those
    estimates are clamped to zero before windowing.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    taus = np.asarray(taus, dtype=float)
    if period is not None:
        taus = np.where(taus >= 0.5 * (L_cp + period), 0.0, taus)
    centres = round_half_up(taus)
    n_paths = taus.size
    support = _windows(centres, beta, L_cp)
    while beta > 0 and (2 * beta * n_paths > P or support.size > P):
        beta -= 1
        support = _windows(centres, beta, L_cp)
    return (support, beta) if return_beta else support


def _fourier(tones, delays, N: int) -> np.ndarray:
    return np.exp(-2j * np.pi * np.outer(np.asarray(tones, dtype=float), np.asarray(delays, dtype=float)) / N)


def build_interpolator(data_tones, pilot_tones, support, N: int) -> np.ndarray:
    """``G = F_d @ pinv(F_p)`` over the integer delay ``support``."""
    support = np.asarray(support)
    if support.size == 0:
        raise DegenerateError("empty delay support")
    F_d = _fourier(data_tones, support, N)
    F_p = _fourier(pilot_tones, support, N)
    return F_d @ pseudo_inverse(F_p)


def make_interpolator(pattern, data_tones_even, data_tones_odd, support, N: int) -> Interpolator:
    return Interpolator(
        G_even=build_interpolator(data_tones_even, pattern.pilots_even, support, N),
        G_odd=build_interpolator(data_tones_odd, pattern.pilots_odd, support, N),
        data_tones_even=np.asarray(data_tones_even),
        data_tones_odd=np.asarray(data_tones_odd),
    )


def interpolate_cfr(G, pilot_est) -> np.ndarray:
    """Apply ``G`` to one pilot vector, or to every row of an ``(n, P)`` array."""
    G = np.asarray(G)
    pilot_est = np.asarray(pilot_est, dtype=complex)
    if pilot_est.shape[-1] != G.shape[1]:
        raise DimensionError(f"G expects {G.shape[1]} pilots, got {pilot_est.shape[-1]}")
    return pilot_est @ G.T if pilot_est.ndim == 2 else G @ pilot_est


def ll_baseline(tile_pilot_estimates) -> np.ndarray:
    """Per-tile mean of its two pilot estimates, used for every data tone in the tile.

    Accepts ``(n_tiles, 2)`` (or ``(..., n_tiles, 2)``) and returns one value per tile.
    """
    est = np.asarray(tile_pilot_estimates, dtype=complex)
    if est.shape[-1] != 2:
        raise DimensionError("need exactly two pilot estimates per tile")
    return est.mean(axis=-1)


def middle_symbol_cfr(first, third) -> np.ndarray:
    first = np.asarray(first, dtype=complex)
    third = np.asarray(third, dtype=complex)
    if first.shape != third.shape:
        raise DimensionError("first and third symbol estimates differ in shape")
    return 0.5 * (first + third)


def estimate_delays(
    R_con,
    n_symbols: int,
    nu: int,
    N: int,
    L_cp: int,
    beta: int = DEFAULT_BETA,
    mode: str = "TLS",
    eta_min: float = ETA_MIN,
) -> DelayEstimate:
    """Full delay-estimation chain on a finalized sample correlation.

    ``n_symbols`` is the number of pilot-bearing symbols behind ``R_con``
    (two per stacked pair); it is the snapshot count handed to MDL.
    If the ESPRIT subspace turns out degenerate the order is reduced until it
    is not.
    """
    R_con = np.asarray(R_con, dtype=complex)
    P = R_con.shape[0] // 2
    eta = estimate_eta(R_con, eta_min)
    R_tilde = compensate_doppler(R_con, eta)
    rp_vals = hermitian_evd(reduce_to_Rp(R_con)).values
    L_hat = max(1, mdl_order(rp_vals, n_symbols, mdl_k_max(rp_vals)))
    while True:
        try:
            taus = esprit_delays(R_tilde, L_hat, nu, N, mode)
            break
        except SubspaceError:
            if L_hat == 1:
                raise
            log.debug("degenerate subspace at L_hat=%d, retrying with %d", L_hat, L_hat - 1)
            L_hat -= 1
    support, beta_used = expand_delay_support(
        taus, beta, L_cp, P, period=N / abs(nu), return_beta=True
    )
    if support.size == 0:
        raise DegenerateError("no estimated delay falls inside the cyclic prefix")
    return DelayEstimate(eta, L_hat, taus, support, beta_used)
