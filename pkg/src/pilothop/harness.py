"""Monte Carlo NMSE sweeps: pilot-hopping estimator (PH) vs local-linear (LL).

One trial is one estimation window: ``n_t // 2`` consecutive tile triplets
over a single fading realization and a single pseudo-random tile
allocation. Random streams are derived from ``(seed, trial, stream)``
through ``numpy.random.SeedSequence`` spawn keys, so a trial is
reproducible on its own and independent of worker scheduling. The SNR does
not enter the stream derivation: every SNR point of a sweep sees the same
channels and the same (scaled) noise.

NMSE is aggregated as a ratio of sums over all data tones, symbols and
trials. The confidence half-width is a percentile bootstrap over trials.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .channel import ChannelProfile, generate_fading, load_profile, veh_a_profile
from .estimator import (
    DEFAULT_BETA,
    CorrAccumulator,
    DelayEstimate,
    build_interpolator,
    estimate_delays,
    ll_baseline,
    ls_pilot_estimate,
    middle_symbol_cfr,
)
from .frame import (
    TILE_WIDTH,
    SystemConfig,
    data_offsets,
    modulate_qpsk,
    observe_window,
    random_tile_allocation,
)
from .numerics import DegenerateError, make_rng

log = logging.getLogger(__name__)

__all__ = [
    "ESTIMATORS",
    "NMSE_FLOOR_DB",
    "CSV_HEADER",
    "ExperimentConfig",
    "NmseRecord",
    "TrialResult",
    "nmse_db",
    "run_trial",
    "run_sweep",
    "estimate_window",
    "csv_text",
    "write_csv",
    "read_csv",
    "preset",
    "PRESETS",
]

ESTIMATORS = ("PH", "LL")
NMSE_FLOOR_DB = -200.0
MIN_SUCCESS_FRACTION = 0.95
CSV_HEADER = ["estimator", "snr_db", "f_d_hz", "n_t", "n_sch", "nmse_db", "trials", "ci95_db"]
DEFAULT_SNR_DB = tuple(float(s) for s in range(0, 45, 5))

# per-trial random streams
_FADING, _ALLOC, _SYMBOLS, _NOISE = range(4)
_BOOTSTRAP_STREAM = 2**31 - 1
_N_BOOTSTRAP = 1000


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    n_sch: int = 20
    n_t: int = 192
    f_d: float = 200.0
    snr_db_list: tuple = DEFAULT_SNR_DB
    n_trials: int = 100
    estimator: str = "BOTH"
    esprit_mode: str = "TLS"
    beta: int = DEFAULT_BETA
    nu: int = 3
    seed: int = 20080101
    profile_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "estimator", self.estimator.upper())
        object.__setattr__(self, "esprit_mode", self.esprit_mode.upper())
        object.__setattr__(self, "snr_db_list", tuple(float(s) for s in self.snr_db_list))
        if self.n_t < 2:
            raise ValueError("n_t must be >= 2 (at least one symbol pair)")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if self.n_sch < 1 or 24 * self.n_sch > self.system.N_used:
            raise ValueError(f"n_sch={self.n_sch} does not fit {self.system.N_used} usable tones")
        if self.estimator not in ("PH", "LL", "BOTH"):
            raise ValueError("estimator must be PH, LL or BOTH")
        if self.esprit_mode not in ("LS", "TLS"):
            raise ValueError("esprit_mode must be LS or TLS")
        if not 0 <= self.beta <= 5:
            raise ValueError("beta must lie in 0..5")
        if self.nu not in (TILE_WIDTH - 1, -(TILE_WIDTH - 1)):
            raise ValueError("with corner pilots nu is +3 (user A) or -3 (user B)")
        if self.f_d < 0:
            raise ValueError("f_d must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def n_pairs(self) -> int:
        return self.n_t // 2

    @property
    def estimators(self) -> tuple:
        return ESTIMATORS if self.estimator == "BOTH" else (self.estimator,)

    def profile(self) -> ChannelProfile:
        if self.profile_path:
            return load_profile(self.profile_path, self.system.bw)
        return veh_a_profile(self.system.bw)


@dataclass(frozen=True)
class NmseRecord:
    estimator: str
    snr_db: float
    f_d: float
    n_t: int
    n_sch: int
    nmse_db: float
    trials: int
    ci95_db: float


@dataclass
class TrialResult:
    """Squared-error and reference-energy sums for one trial."""

    err: dict = field(default_factory=dict)
    energy: float = 0.0
    failed: dict = field(default_factory=dict)
    delays: DelayEstimate | None = None


def nmse_db(estimates, truths) -> float:
    """``10 log10(sum |est - true|^2 / sum |true|^2)``, floored at -200 dB."""
    est = np.asarray(estimates, dtype=complex)
    tru = np.asarray(truths, dtype=complex)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {tru.shape}")
    return _ratio_db(np.sum(np.abs(est - tru) ** 2), np.sum(np.abs(tru) ** 2))


def _ratio_db(err: float, energy: float) -> float:
    if energy <= 0:
        raise DegenerateError("reference CFR has zero energy")
    if err <= 0:
        return NMSE_FLOOR_DB
    return max(NMSE_FLOOR_DB, 10.0 * math.log10(err / energy))


def _noise_var(snr_db: float) -> float:
    # unit-power profile and unit-modulus symbols: per-tone SNR = 1 / noise_var
    return 10.0 ** (-snr_db / 10.0)


class _Window:
    """Transmit grid, channel and observations of one trial window."""

    def __init__(self, cfg: ExperimentConfig, snr_db: float, trial: int):
        sysc = cfg.system
        self.cfg = cfg
        profile = cfg.profile()
        profile.check_cp(sysc.L_cp)
        n_sym = 3 * cfg.n_pairs
        alloc = random_tile_allocation(sysc, cfg.n_sch, make_rng(cfg.seed, trial, _ALLOC))
        self.tones = alloc.tile_tones()
        n_tiles = len(self.tones)
        fading = generate_fading(profile, cfg.f_d, sysc.T_s, n_sym, make_rng(cfg.seed, trial, _FADING))

        rng = make_rng(cfg.seed, trial, _SYMBOLS)
        tx = modulate_qpsk(rng.integers(0, 2, size=2 * n_sym * n_tiles * TILE_WIDTH))
        tx = tx.reshape(n_sym, n_tiles, TILE_WIDTH)
        # user A pilots: tile symbol 0 at offset 0, tile symbol 2 at offset 3
        self.even_off, self.odd_off = (0, 3) if cfg.nu > 0 else (3, 0)
        tx[0::3, :, self.odd_off] = 0  # the other user's pilot corners
        tx[2::3, :, self.even_off] = 0
        self.rx, self.truth = observe_window(
            sysc, self.tones, tx, fading.gains, profile, _noise_var(snr_db),
            make_rng(cfg.seed, trial, _NOISE),
        )
        self.tx = tx
        self.pilots_even = self.tones[:, self.even_off]
        self.pilots_odd = self.tones[:, self.odd_off]

    def pilot_estimates(self) -> tuple:
        e = ls_pilot_estimate(self.rx[0::3, :, self.even_off], self.tx[0::3, :, self.even_off])
        o = ls_pilot_estimate(self.rx[2::3, :, self.odd_off], self.tx[2::3, :, self.odd_off])
        return e, o  # (n_pairs, P) each

    def delay_estimate(self, even, odd) -> DelayEstimate:
        acc = CorrAccumulator(2 * even.shape[1])
        acc.add_many(np.hstack([even, odd]))
        sysc = self.cfg.system
        return estimate_delays(acc.finalize(), acc.n_symbols, self.cfg.nu, sysc.N, sysc.L_cp,
                               beta=self.cfg.beta, mode=self.cfg.esprit_mode)

    def errors(self, est_grid) -> float:
        """Squared error of an ``(n_sym, n_tiles, 4)`` estimate over user data tones."""
        total = 0.0
        for s in range(3):
            off = list(data_offsets(s))
            d = est_grid[s::3][:, :, off] - self.truth[s::3][:, :, off]
            total += float(np.sum(np.abs(d) ** 2))
        return total

    def energy(self) -> float:
        return self.errors(np.zeros_like(self.truth))


def _ph_grid(win: _Window, even, odd, de: DelayEstimate) -> np.ndarray:
    N = win.cfg.system.N
    all_tones = win.tones.ravel()
    G_ev = build_interpolator(all_tones, win.pilots_even, de.support, N)
    G_od = build_interpolator(all_tones, win.pilots_odd, de.support, N)
    shape = (even.shape[0],) + win.tones.shape
    h_ev = (even @ G_ev.T).reshape(shape)
    h_od = (odd @ G_od.T).reshape(shape)
    grid = np.empty_like(win.truth)
    grid[0::3] = h_ev
    grid[1::3] = middle_symbol_cfr(h_ev, h_od)
    grid[2::3] = h_od
    return grid


def run_trial(cfg: ExperimentConfig, snr_db: float, trial: int) -> TrialResult:
    """One window: channel, allocation, observations, then each estimator.

    Estimator failures (degenerate subspace and the like) are recorded in
    ``failed`` rather than raised.
    """
    win = _Window(cfg, snr_db, trial)
    even, odd = win.pilot_estimates()
    res = TrialResult(energy=win.energy())
    if "PH" in cfg.estimators:
        try:
            de = win.delay_estimate(even, odd)
            res.err["PH"] = win.errors(_ph_grid(win, even, odd, de))
            res.delays = de
        except (DegenerateError, np.linalg.LinAlgError) as exc:
            log.warning("PH failed in trial %d at %.1f dB: %s", trial, snr_db, exc)
            res.failed["PH"] = str(exc)
    if "LL" in cfg.estimators:
        tile_mean = ll_baseline(np.stack([even, odd], axis=-1))  # (n_pairs, P)
        grid = np.repeat(tile_mean[:, None, :, None], 3, axis=1)
        grid = np.broadcast_to(grid, (tile_mean.shape[0], 3) + win.tones.shape)
        res.err["LL"] = win.errors(grid.reshape(win.truth.shape))
    return res


def estimate_window(cfg: ExperimentConfig, snr_db: float, trial: int = 0) -> DelayEstimate:
    """Delay estimate of a single window (raises on estimator failure)."""
    win = _Window(cfg, snr_db, trial)
    return win.delay_estimate(*win.pilot_estimates())


def _trial_task(args):
    cfg, snr_db, trial = args
    return run_trial(cfg, snr_db, trial)


def _bootstrap_halfwidth(err: np.ndarray, energy: np.ndarray, rng) -> float:
    n = err.size
    if n < 2:
        return 0.0
    idx = rng.integers(0, n, size=(_N_BOOTSTRAP, n))
    e = err[idx].sum(axis=1)
    g = energy[idx].sum(axis=1)
    db = 10 * np.log10(np.maximum(e / g, 10 ** (NMSE_FLOOR_DB / 10)))
    lo, hi = np.percentile(db, [2.5, 97.5])
    return float((hi - lo) / 2)


def run_sweep(cfg: ExperimentConfig, workers: int = 1) -> list:
    """Aggregate ``n_trials`` trials per SNR point into one record per estimator.

    Results do not depend on ``workers``: trials are keyed by index and
    reduced in index order.
    """
    records = []
    per_snr = {}
    tasks = [(cfg, snr, t) for snr in cfg.snr_db_list for t in range(cfg.n_trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_task, tasks, chunksize=max(1, cfg.n_trials // workers)))
    else:
        results = [_trial_task(t) for t in tasks]
    for (_, snr, _), r in zip(tasks, results):
        per_snr.setdefault(snr, []).append(r)

    for name in cfg.estimators:
        for i, snr in enumerate(cfg.snr_db_list):
            trials = per_snr[snr]
            ok = [r for r in trials if name in r.err]
            n_failed = len(trials) - len(ok)
            if n_failed > (1 - MIN_SUCCESS_FRACTION) * len(trials):
                log.warning("%s at %.1f dB: %d of %d trials failed; point is not valid",
                            name, snr, n_failed, len(trials))
            if not ok:
                raise DegenerateError(f"every {name} trial failed at {snr} dB")
            err = np.array([r.err[name] for r in ok])
            energy = np.array([r.energy for r in ok])
            rng = make_rng(cfg.seed, _BOOTSTRAP_STREAM, i)
            records.append(NmseRecord(
                estimator=name,
                snr_db=snr,
                f_d=cfg.f_d,
                n_t=cfg.n_t,
                n_sch=cfg.n_sch,
                nmse_db=_ratio_db(err.sum(), energy.sum()),
                trials=len(ok),
                ci95_db=_bootstrap_halfwidth(err, energy, rng),
            ))
    return records


def csv_text(records) -> str:
    """CSV rendering of ``records``, ordered by estimator then SNR."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in sorted(records, key=lambda r: (r.estimator, r.snr_db)):
        w.writerow([r.estimator, repr(float(r.snr_db)), repr(float(r.f_d)), r.n_t, r.n_sch,
                    repr(float(r.nmse_db)), r.trials, repr(float(r.ci95_db))])
    return buf.getvalue()


def write_csv(records, path) -> None:
    path = Path(path)
    try:
        path.write_text(csv_text(records))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_csv(path) -> list:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [
            NmseRecord(row[0], float(row[1]), float(row[2]), int(row[3]), int(row[4]),
                       float(row[5]), int(row[6]), float(row[7]))
            for row in reader
        ]


PRESETS = {
    "fig1": {"f_d": [200.0], "n_sch": [20], "n_t": [96, 192, 387]},
    "fig2": {"n_t": [192], "n_sch": [20], "f_d": [50.0, 100.0, 200.0, 400.0]},
    "fig3": {"n_t": [192], "f_d": [200.0], "n_sch": [10, 20, 30]},
}


def preset(name: str, base: ExperimentConfig | None = None, **overrides) -> list:
    """Expand a figure preset into one ExperimentConfig per curve.

    Keyword overrides (``n_t``, ``f_d``, ``n_sch`` or any other config field)
    replace the swept values; duplicate configs are dropped.
    """
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    base = base or ExperimentConfig()
    grid = dict(PRESETS[name])
    for key in ("n_t", "f_d", "n_sch"):
        if overrides.get(key) is not None:
            grid[key] = [overrides.pop(key)]
    extra = {k: v for k, v in overrides.items() if v is not None}
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = set(extra) - names
    if unknown:
        raise ValueError(f"unknown config fields {sorted(unknown)}")
    out = []
    for n_t in grid["n_t"]:
        for f_d in grid["f_d"]:
            for n_sch in grid["n_sch"]:
                c = replace(base, n_t=n_t, f_d=f_d, n_sch=n_sch, **extra)
                if c not in out:
                    out.append(c)
    return out
