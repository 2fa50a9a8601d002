import time
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import analytic_rcon, equispaced, fourier, j0_series, mdl_scores
from pilothop import estimator as est
from pilothop.estimator import (
    CorrAccumulator,
    DelayEstimate,
    TLSFallbackWarning,
    accumulate,
    build_interpolator,
    compensate_doppler,
    esprit_delays,
    estimate_delays,
    estimate_eta,
    expand_delay_support,
    interpolate_cfr,
    ll_baseline,
    ls_pilot_estimate,
    mdl_k_max,
    mdl_order,
    middle_symbol_cfr,
    reduce_to_Rp,
    round_half_up,
    split_pair,
    stack_pair,
)
from pilothop.frame import SystemConfig, pilot_pattern, random_tile_allocation
from pilothop.numerics import DegenerateError, DimensionError, DomainError, SubspaceError

N = 1024
VEH_A = [0.0, 3.1, 7.1, 10.9, 17.3, 25.1]
VEH_A_POW = 10 ** (np.array([0, -1, -9, -10, -15, -20]) / 10)


@pytest.fixture(scope="module")
def pattern():
    return pilot_pattern(random_tile_allocation(SystemConfig(), 20, seed=77))


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


# --- LS, stacking, accumulation ---------------------------------------------

def test_ls_unit_pilots():
    h = np.array([1 + 2j, -0.5j, 3])
    np.testing.assert_array_equal(ls_pilot_estimate(h, np.ones(3)), h)


def test_ls_complex_division():
    assert ls_pilot_estimate([1 + 1j], [1j])[0] == pytest.approx(1 - 1j)


def test_ls_zero_pilot():
    with pytest.raises(ZeroDivisionError):
        ls_pilot_estimate([1.0], [0.0])


def test_stack_and_split():
    v = stack_pair([1, 2], [3, 4])
    np.testing.assert_array_equal(v.vector, [1, 2, 3, 4])
    e, o = split_pair(v)
    np.testing.assert_array_equal(e, [1, 2])
    np.testing.assert_array_equal(o, [3, 4])
    with pytest.raises(DimensionError):
        stack_pair([1, 2], [3])


def test_accumulate_single_snapshot_rank_one(rng):
    v = crandn(rng, 6)
    R = accumulate(CorrAccumulator(6), v).finalize()
    np.testing.assert_allclose(R, np.outer(v, v.conj()), atol=1e-14)
    assert np.linalg.matrix_rank(R, tol=1e-10) == 1


def test_accumulate_duplicates_idempotent(rng):
    v = crandn(rng, 4)
    acc = CorrAccumulator(4)
    for _ in range(7):
        acc.add(stack_pair(v[:2], v[2:]))
    np.testing.assert_allclose(acc.finalize(), np.outer(v, v.conj()), atol=1e-14)
    assert acc.n_symbols == 14


def test_accumulate_errors():
    with pytest.raises(DimensionError):
        CorrAccumulator(4).add(np.ones(3))
    with pytest.raises(DegenerateError):
        CorrAccumulator(4).finalize()


def test_add_many_matches_add(rng):
    rows = crandn(rng, 9, 6)
    a = CorrAccumulator(6).add_many(rows)
    b = CorrAccumulator(6)
    for r in rows:
        b.add(r)
    np.testing.assert_allclose(a.finalize(), b.finalize(), atol=1e-13)
    assert a.count == b.count == 9


def test_sample_correlation_converges(rng):
    pe = equispaced(16, N, 2)
    R = analytic_rcon(pe, pe + 3, [0, 4, 9], [0.6, 0.3, 0.1], 0.95, N, noise_var=0.05)
    w, V = np.linalg.eigh(R)
    root = V * np.sqrt(np.clip(w, 0, None))
    acc = CorrAccumulator(R.shape[0]).add_many(crandn(rng, 10_000, R.shape[0]) @ root.T)
    Rhat = acc.finalize()
    assert np.linalg.norm(Rhat - R) / np.linalg.norm(R) < 0.1
    np.testing.assert_allclose(Rhat, Rhat.conj().T, atol=1e-12 * np.linalg.norm(Rhat))
    assert np.linalg.eigvalsh(Rhat).min() >= -1e-9 * np.linalg.eigvalsh(Rhat).max()


# --- eta and Doppler compensation -------------------------------------------

def test_eta_static_blocks(rng):
    a = crandn(rng, 5, 5)
    M = a @ a.conj().T
    assert estimate_eta(np.block([[M, M], [M, M]])) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("eta", [0.5, 0.9, 0.99])
def test_eta_exact_for_equispaced_pilots(eta):
    pe = equispaced(128, N)
    R = analytic_rcon(pe, pe + 3, [0, 3, 7, 11, 17, 25], VEH_A_POW, eta, N)
    assert abs(estimate_eta(R) - eta) < 1e-10


def test_eta_matches_jakes_lag_one():
    target = j0_series(2 * np.pi * 200 * 115.2e-6)
    pe = equispaced(128, N)
    R = analytic_rcon(pe, pe + 3, [0, 3, 7, 11, 17, 25], VEH_A_POW, target, N)
    assert estimate_eta(R) == pytest.approx(0.994768, abs=1e-6)


def test_eta_clamped():
    pe = equispaced(8, 64)
    R = analytic_rcon(pe, pe + 3, [0, 2], [0.5, 0.5], 0.0, 64)
    assert estimate_eta(R) == est.ETA_MIN
    assert estimate_eta(2.0 * np.eye(4) + np.ones((4, 4))) <= 1.0


def test_eta_zero_denominator():
    with pytest.raises(DegenerateError):
        estimate_eta(np.zeros((4, 4)))


@given(st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_eta_scale_invariant(c, seed):
    rng = np.random.default_rng(seed)
    X = crandn(rng, 8, 3)
    R = X @ X.conj().T
    assert estimate_eta(c * R) == pytest.approx(estimate_eta(R), rel=1e-12)


def test_compensate_identity_and_blocks(rng):
    X = crandn(rng, 6, 6)
    R = X @ X.conj().T
    np.testing.assert_allclose(compensate_doppler(R, 1.0), R, atol=1e-14)
    C = compensate_doppler(R, 0.8)
    np.testing.assert_allclose(C[:3, 3:], R[:3, 3:] / 0.8, atol=1e-14)
    np.testing.assert_allclose(C[3:, 3:], R[3:, 3:], atol=1e-14)
    with pytest.raises(DomainError):
        compensate_doppler(R, 0.0)


def test_compensate_restores_static_model(pattern):
    args = (pattern.pilots_even, pattern.pilots_odd, VEH_A, VEH_A_POW)
    np.testing.assert_allclose(
        compensate_doppler(analytic_rcon(*args, 0.9, N), 0.9), analytic_rcon(*args, 1.0, N), atol=1e-10
    )


def test_reduce_to_rp(pattern, rng):
    X = crandn(rng, 4, 4)
    M = X @ X.conj().T
    np.testing.assert_allclose(reduce_to_Rp(np.block([[M, 0 * M], [0 * M, M]])), M)
    R = analytic_rcon(pattern.pilots_even, pattern.pilots_odd, VEH_A, VEH_A_POW, 0.9, N)
    Fe = fourier(pattern.pilots_even, VEH_A, N)
    Rp = reduce_to_Rp(R)
    np.testing.assert_allclose(Rp, Fe @ np.diag(VEH_A_POW) @ Fe.conj().T, atol=1e-10)
    assert np.linalg.norm(Rp - Rp.conj().T) <= 1e-12 * np.linalg.norm(Rp)


# --- MDL --------------------------------------------------------------------

def test_mdl_flat_spectrum_returns_one():
    assert mdl_order(np.ones(8), 100, 7) == 1


def test_mdl_two_sources():
    eigs = [9, 5, 1, 1, 1, 1, 1, 1]
    scores = mdl_scores(eigs, 500)
    assert int(np.argmin(scores[1:])) + 1 == 2
    assert mdl_order(eigs, 500, 7) == 2


@given(st.lists(st.floats(1e-3, 1e3), min_size=3, max_size=12), st.integers(1, 1000))
def test_mdl_matches_scalar_oracle(vals, snapshots):
    eigs = sorted(vals, reverse=True)
    k_max = len(eigs) - 1
    scores = mdl_scores(eigs, snapshots)
    expected = 1 + int(np.argmin(scores[1:k_max + 1]))
    got = mdl_order(eigs, snapshots, k_max)
    assert got == expected or scores[got] == pytest.approx(scores[expected], rel=1e-9)


def test_mdl_degenerate():
    with pytest.raises(DegenerateError):
        mdl_order(np.zeros(5), 10, 4)


def test_mdl_k_max_rank_deficient():
    eigs = np.r_[np.linspace(10, 1, 30), np.zeros(90)]
    assert mdl_k_max(eigs) == 24
    assert mdl_k_max(np.r_[[5.0, 2.0, 1.0], np.zeros(5)]) == 2


def test_mdl_analytic_four_taps(pattern):
    Fe = fourier(pattern.pilots_even, [0, 5, 11, 20], N)
    Rp = Fe @ (0.25 * np.eye(4)) @ Fe.conj().T + 1e-2 * np.eye(pattern.P)
    eigs = np.linalg.eigvalsh(Rp)[::-1]
    assert mdl_order(eigs, 192, mdl_k_max(eigs)) == 4


# --- ESPRIT -----------------------------------------------------------------

def esprit_on(pattern, delays, powers, **kw):
    R = analytic_rcon(pattern.pilots_even, pattern.pilots_odd, delays, powers, 1.0, N)
    return esprit_delays(R, len(delays), pattern.nu, N, **kw)


def test_esprit_zero_delay(pattern):
    assert esprit_on(pattern, [0.0], [1.0])[0] == pytest.approx(0.0, abs=1e-8)


def test_esprit_single_path_phase(pattern):
    R = analytic_rcon(pattern.pilots_even, pattern.pilots_odd, [5.0], [1.0], 1.0, N)
    U = np.linalg.eigh(R)[1][:, -1:]
    q = np.linalg.lstsq(U[:pattern.P], U[pattern.P:], rcond=None)[0][0, 0]
    assert np.angle(np.conj(q)) == pytest.approx(2 * np.pi * 15 / 1024, abs=1e-10)
    assert esprit_delays(R, 1, 3, N)[0] == pytest.approx(5.0, abs=1e-8)


@pytest.mark.parametrize("mode", ["LS", "TLS"])
def test_esprit_veh_a(pattern, mode):
    taus = esprit_on(pattern, VEH_A, VEH_A_POW, mode=mode)
    np.testing.assert_allclose(taus, VEH_A, atol=0.05)


def test_esprit_user_b_negative_nu():
    pat = pilot_pattern(random_tile_allocation(SystemConfig(), 20, seed=5), "B")
    taus = esprit_on(pat, VEH_A, VEH_A_POW)
    np.testing.assert_allclose(taus, VEH_A, atol=0.05)
    assert np.all((taus >= 0) & (taus < N / 3))


@pytest.mark.parametrize("tau", [0.0, 2.5, 40.0, 120.7])
def test_esprit_wraparound(pattern, tau):
    a = esprit_on(pattern, [tau], [1.0])[0]
    b = esprit_on(pattern, [tau + N / 3], [1.0])[0]
    assert a == pytest.approx(b, abs=1e-6)
    assert a == pytest.approx(tau, abs=1e-6)


def test_esprit_degenerate_subspace(pattern):
    R = analytic_rcon(pattern.pilots_even, pattern.pilots_odd, [4.0], [1.0], 1.0, N)
    with pytest.raises(SubspaceError):
        esprit_delays(R, 2, 3, N)


def test_esprit_bad_args(pattern):
    R = np.eye(2 * pattern.P)
    with pytest.raises(DomainError):
        esprit_delays(R, 1, 0, N)
    with pytest.raises(DomainError):
        esprit_delays(R, 0, 3, N)


def test_esprit_tls_fallback(pattern, monkeypatch):
    real = est.solve_shift_operator

    def flaky(u, d, mode):
        if mode == "TLS":
            raise SubspaceError("forced")
        return real(u, d, mode)

    monkeypatch.setattr(est, "solve_shift_operator", flaky)
    with pytest.warns(TLSFallbackWarning):
        taus = esprit_on(pattern, [3.0, 9.0], [0.5, 0.5], mode="TLS")
    np.testing.assert_allclose(taus, [3.0, 9.0], atol=1e-6)


# --- support expansion ------------------------------------------------------

def test_support_single_window():
    assert list(expand_delay_support([5.0], 2, 128, 120)) == [3, 4, 5, 6, 7]


def test_support_clipped_at_zero():
    assert list(expand_delay_support([1.0], 3, 128, 120)) == [0, 1, 2, 3, 4]


def test_support_windows_merge():
    assert list(expand_delay_support([3.1, 7.1], 3, 128, 120)) == list(range(11))


def test_support_clipped_at_cp():
    assert list(expand_delay_support([126.0], 3, 128, 120)) == [123, 124, 125, 126, 127]


def test_support_beta_cap():
    s, b = expand_delay_support([10.0, 40.0, 80.0], 5, 128, 12, return_beta=True)
    # beta = 2 passes 2*beta*L <= P but leaves 15 > 12 support indexes
    assert b == 1
    assert list(s) == [9, 10, 11, 39, 40, 41, 79, 80, 81]


def test_support_wrapped_estimate_clamped():
    period = N / 3
    assert list(expand_delay_support([338.0], 1, 128, 120, period=period)) == [0, 1]
    assert list(expand_delay_support([200.0], 1, 128, 120, period=period)) == []


def test_round_half_up():
    np.testing.assert_array_equal(round_half_up([2.5, 3.49, -0.5, 0.5]), [3, 3, 0, 1])


@given(st.lists(st.floats(0, 340), min_size=1, max_size=24), st.integers(0, 5), st.integers(1, 200))
def test_support_bounds(taus, beta, P):
    s = expand_delay_support(taus, beta, 128, P, period=N / 3)
    assert len(s) <= max(P, len(taus))
    assert np.all((s >= 0) & (s < 128))
    assert np.all(np.diff(s) > 0)


# --- interpolation ----------------------------------------------------------

def test_interpolator_flat_support(pattern):
    data = np.arange(0, 840, 7)
    G = build_interpolator(data, pattern.pilots_even, [0], N)
    np.testing.assert_allclose(G, G[0, 0], atol=1e-14)
    np.testing.assert_allclose(G.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(interpolate_cfr(G, np.full(pattern.P, 2 - 1j)), 2 - 1j, atol=1e-12)


def test_interpolator_projector_idempotent(pattern, rng):
    G = build_interpolator(pattern.pilots_even, pattern.pilots_even, np.arange(12), N)
    v = crandn(rng, pattern.P)
    once = interpolate_cfr(G, v)
    np.testing.assert_allclose(interpolate_cfr(G, once), once, atol=1e-9)


def test_interpolator_exact_on_integer_delays(pattern, rng):
    delays = [0, 3, 7, 11, 17, 25]
    g = crandn(rng, 6)
    data = np.setdiff1d(np.arange(840), pattern.pilots_even)
    hp = fourier(pattern.pilots_even, delays, N) @ g
    G = build_interpolator(data, pattern.pilots_even, expand_delay_support(delays, 2, 128, pattern.P), N)
    np.testing.assert_allclose(interpolate_cfr(G, hp), fourier(data, delays, N) @ g, atol=1e-9)


@given(st.sets(st.integers(0, 127), min_size=1, max_size=10), st.integers(0, 2**32 - 1))
def test_interpolation_exactness_property(delays, seed):
    rng = np.random.default_rng(seed)
    pat = pilot_pattern(random_tile_allocation(SystemConfig(), 20, seed=seed))
    delays = sorted(delays)
    support = sorted(set(delays) | set(rng.choice(128, size=5, replace=False).tolist()))
    g = crandn(rng, len(delays))
    data = rng.choice(840, size=40, replace=False)
    G = build_interpolator(data, pat.pilots_odd, support, N)
    hp = fourier(pat.pilots_odd, delays, N) @ g
    truth = fourier(data, delays, N) @ g
    assert np.max(np.abs(interpolate_cfr(G, hp) - truth)) < 1e-9 * max(1, np.abs(truth).max())


def test_interpolator_empty_support():
    with pytest.raises(DegenerateError):
        build_interpolator([1, 2], [0, 3], [], N)


def test_interpolate_shapes_and_linearity(rng):
    G = crandn(rng, 5, 3)
    v = crandn(rng, 3)
    np.testing.assert_allclose(interpolate_cfr(G, (2 - 3j) * v), (2 - 3j) * interpolate_cfr(G, v))
    rows = crandn(rng, 4, 3)
    np.testing.assert_allclose(interpolate_cfr(G, rows)[2], interpolate_cfr(G, rows[2]))
    with pytest.raises(DimensionError):
        interpolate_cfr(G, crandn(rng, 4))


# --- LL baseline and middle symbol ------------------------------------------

def test_ll_mean():
    assert ll_baseline([[1 + 1j, 1 - 1j]])[0] == pytest.approx(1.0)
    np.testing.assert_allclose(ll_baseline([[2j, 2j], [3, 3]]), [2j, 3])


def test_ll_flat_channel_exact():
    h = 0.3 - 0.8j
    assert ll_baseline(np.full((10, 2), h)) == pytest.approx(np.full(10, h))


@given(st.integers(0, 2**32 - 1), st.integers(2, 50))
def test_ll_is_per_tile(seed, n_tiles):
    rng = np.random.default_rng(seed)
    est_all = crandn(rng, n_tiles, 2)
    out = ll_baseline(est_all)
    k = int(rng.integers(n_tiles))
    changed = est_all.copy()
    changed[np.arange(n_tiles) != k] = crandn(rng, n_tiles - 1, 2)
    assert ll_baseline(changed)[k] == out[k]


def test_middle_symbol():
    v = np.array([1 + 1j, 2])
    np.testing.assert_array_equal(middle_symbol_cfr(v, v), v)
    assert middle_symbol_cfr([0], [2])[0] == 1
    with pytest.raises(DimensionError):
        middle_symbol_cfr([1, 2], [1])


# --- delay record and full chain --------------------------------------------

def test_delay_record_round_trip():
    de = DelayEstimate(0.9947, 3, np.array([0.0, 3.125, 7.1]), np.arange(12), 5)
    line = de.to_record()
    assert line.split()[:2] == ["0.9947", "3"]
    eta, L, taus = DelayEstimate.parse_record(line)
    assert (eta, L) == (0.9947, 3)
    np.testing.assert_array_equal(taus, de.taus)
    with pytest.raises(ValueError):
        DelayEstimate.parse_record("0.9 2 1.0")


def test_estimate_delays_analytic(pattern):
    R = analytic_rcon(pattern.pilots_even, pattern.pilots_odd, VEH_A, VEH_A_POW, 0.99, N, noise_var=1e-4)
    de = estimate_delays(R, 192, 3, N, 128, beta=3)
    assert de.eta_hat == pytest.approx(0.99, abs=0.01)
    assert de.order_L_hat == 6
    np.testing.assert_allclose(de.taus, VEH_A, atol=0.1)
    # windows of +-3 around 0, 3, 7, 11, 17, 25 leave only 21 uncovered
    assert list(de.support) == list(range(0, 21)) + list(range(22, 29))
    assert len(de.support) <= pattern.P and de.beta == 3


def test_esprit_acceptance_runtime(pattern):
    t = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        for mode in ("LS", "TLS"):
            esprit_on(pattern, VEH_A, VEH_A_POW, mode=mode)
    assert time.perf_counter() - t < 1.0
