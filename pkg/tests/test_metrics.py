import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from _oracles import binomial_se
from nlpn_apsk.analytic import HarmonicsBank, rice_pdf
from nlpn_apsk.channel import ChannelParams, sample_channel
from nlpn_apsk.constellation import build_apsk, rescale_power, uniform_radii
from nlpn_apsk.detection import map_thresholds
from nlpn_apsk.labeling import Labeling, brgc
from nlpn_apsk.metrics import (NumericalError, QuadratureConfig, TransitionMatrix, annulus_masses,
                               awgn_ml_sep, bep, first_stage_error, qam16, ring_mass,
                               sector_bounds, sep, sep_ts, symbol_errors_ts,
                               transition_matrices_mc, transition_matrix_mc,
                               transition_matrix_ts, wilson_interval)
from nlpn_apsk.units import dbm_to_watt


def _spec(l, p_dbm, phi=None):
    return build_apsk(l, uniform_radii(l, dbm_to_watt(p_dbm)), phi)


SPECS = [((8,), -4), ((4, 4), -5), ((1, 5, 10), -3), ((4, 4, 4, 4), -2), ((3, 1), 0)]


def _tm(spec, bank, config=None):
    th = map_thresholds(spec, bank.params.sigma2)
    return transition_matrix_ts(spec, th, bank, config)


@pytest.mark.parametrize("l, p", SPECS)
def test_rows_sum_to_one_and_ring_symmetry(bank7000, l, p):
    spec = _spec(l, p)
    P = _tm(spec, bank7000).probabilities
    assert np.all(P >= -1e-15) and np.all(P <= 1 + 1e-15)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-6)
    for sl in spec.ring_slices():
        d = np.diag(P)[sl]
        assert np.ptp(d) < 1e-8


def test_qam16_reference_rows(bank5500):
    const = qam16(dbm_to_watt(-3))
    assert tuple(const.ring_counts) == (4, 8, 4)
    unit = np.sqrt(dbm_to_watt(-3) / 10)
    np.testing.assert_allclose(const.radii, unit * np.sqrt([2, 10, 18]), rtol=1e-12)
    assert const.power == pytest.approx(dbm_to_watt(-3), rel=1e-12)
    P = _tm(const, bank5500).probabilities
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-6)


def test_sector_bounds_unequal_spacing():
    lo, hi = sector_bounds([0.2, 1.0, 4.0])
    np.testing.assert_allclose(hi - lo, [(0.8 + (2 * np.pi - 3.8)) / 2, 3.8 / 2,
                                         (3.0 + 2 * np.pi - 3.8) / 2])
    assert np.sum(hi - lo) == pytest.approx(2 * np.pi)
    lo, hi = sector_bounds([1.0])
    assert hi[0] - lo[0] == pytest.approx(2 * np.pi)


def test_ring_mass_matches_rice_quadrature():
    s2 = 6e-6
    for r, lo, hi in [(0.03, 0.0, 0.028), (0.03, 0.028, 0.033), (0.03, 0.04, np.inf),
                      (0.01, 0.03, 0.035)]:
        upper = min(hi, r + 0.05)
        ref, _ = integrate.quad(rice_pdf, lo, upper, args=(r, s2), epsabs=1e-15, limit=300)
        assert ring_mass(r, lo, hi, s2) == pytest.approx(ref, rel=1e-7, abs=1e-15)


@pytest.mark.parametrize("l, p", SPECS[:4] + [((4, 4), 3)])
def test_node_doubling_changes_sep_little(bank7000, l, p):
    spec = _spec(l, p)
    cfg = QuadratureConfig()
    assert abs(sep_ts(spec, bank7000, config=cfg)
               - sep_ts(spec, bank7000, config=cfg.refined())) < 1e-7


def test_node_doubling_qam16(bank5500):
    const = qam16(dbm_to_watt(-3))
    cfg = QuadratureConfig()
    a = sep(_tm(const, bank5500, cfg))
    b = sep(_tm(const, bank5500, cfg.refined()))
    assert abs(a - b) < 1e-7


def test_quadrature_is_deterministic(ch7000):
    spec = _spec((1, 5, 10), -3)
    a = _tm(spec, HarmonicsBank(ch7000)).probabilities
    b = _tm(spec, HarmonicsBank(ch7000)).probabilities
    assert a.tobytes() == b.tobytes()


def test_diagonal_shortcut_matches_full_matrix(bank7000):
    spec = _spec((4, 4, 4, 4), -2)
    th = map_thresholds(spec, bank7000.params.sigma2)
    P = transition_matrix_ts(spec, th, bank7000).probabilities
    np.testing.assert_allclose(symbol_errors_ts(spec, th, bank7000), 1 - np.diag(P), atol=1e-13)


def test_row_sum_violation_raises(bank7000, monkeypatch):
    # the harmonic terms cancel over a full ring, so rows only drift if they are corrupted
    import nlpn_apsk.metrics as metrics

    real = metrics._sector_terms
    monkeypatch.setattr(metrics, "_sector_terms", lambda *a: real(*a) + 1e-3)
    with pytest.raises(NumericalError):
        _tm(_spec((4, 4), -5), bank7000)


def test_sep_definition_and_phase_invariance(bank7000):
    assert sep(TransitionMatrix(np.eye(5), "quadrature")) == 0.0
    spec = _spec((4, 4, 4, 4), -4)
    base = sep_ts(spec, bank7000)
    rng = np.random.default_rng(1)
    for _ in range(3):
        phi = rng.uniform(0, 2 * np.pi, 4)
        assert abs(sep_ts(spec.with_phase_offsets(phi), bank7000) - base) < 1e-8


def test_one_point_rings_sep_is_first_stage_error(bank7000, ch7000):
    spec = _spec((1, 1, 1, 1), -1)
    th = map_thresholds(spec, ch7000.sigma2)
    stage = [first_stage_error(k, spec, th, ch7000.sigma2) for k in range(4)]
    assert sep_ts(spec, bank7000, th) == pytest.approx(np.mean(stage), abs=1e-14)
    assert sep(transition_matrix_ts(spec, th, bank7000)) == pytest.approx(np.mean(stage),
                                                                          abs=1e-12)


def test_first_stage_error_single_ring_and_range(ch7000):
    spec = _spec((8,), -4)
    th = map_thresholds(spec, ch7000.sigma2)
    assert first_stage_error(0, spec, th, ch7000.sigma2) == 0.0
    with pytest.raises(IndexError):
        first_stage_error(1, spec, th, ch7000.sigma2)


def test_first_stage_error_matches_monte_carlo(ch7000):
    spec = _spec((4, 4, 4, 4), -6)
    th = map_thresholds(spec, ch7000.sigma2)
    rng = np.random.default_rng(9)
    n = 100_000
    for k, r in enumerate(spec.radii):
        y = sample_channel(np.full(n, r + 0j), ch7000, rng).y
        miss = np.mean(th.ring_of(np.abs(y)) != k)
        p = first_stage_error(k, spec, th, ch7000.sigma2)
        assert abs(miss - p) < 3 * binomial_se(p, n)


def test_first_stage_error_falls_with_power(ch7000):
    spec = _spec((4, 4, 4, 4), -10)
    prev = np.full(4, np.inf)
    for p in np.arange(-10, 6, 1.0):
        s = rescale_power(spec, dbm_to_watt(p))
        th = map_thresholds(s, ch7000.sigma2)
        cur = np.array([first_stage_error(k, s, th, ch7000.sigma2) for k in range(4)])
        assert np.all(cur < prev)
        prev = cur


def test_annulus_masses_rows_sum_to_one(ch7000):
    spec = _spec((1, 5, 10), -3)
    F = annulus_masses(spec, map_thresholds(spec, ch7000.sigma2), ch7000.sigma2)
    np.testing.assert_allclose(F.sum(axis=1), 1.0, atol=1e-14)


# -- Monte-Carlo ----------------------------------------------------------------------

def test_mc_identity_without_nonlinearity_at_high_snr():
    ch = ChannelParams(7000, gamma=0.0, noise_var=1e-12)
    spec = _spec((4, 4), -5)
    T = transition_matrix_mc(spec, "two_stage", ch, 10_000, rng=0)
    np.testing.assert_array_equal(T.probabilities, np.eye(8))
    assert T.method == "monte_carlo" and T.sample_count == 10_000


def test_mc_rows_sum_exactly_and_validate(ch7000, bank7000):
    spec = _spec((4, 4), -5)
    out = transition_matrices_mc(spec, ["ts", "ml"], ch7000, 10_000, rng=3, bank=bank7000)
    for T in out.values():
        counts = T.probabilities * T.sample_count
        np.testing.assert_allclose(counts, np.round(counts), atol=1e-9)
        assert np.all(np.round(counts).sum(axis=1) == T.sample_count)
    with pytest.raises(ValueError):
        transition_matrix_mc(spec, "ts", ch7000, 9_999)


def test_mc_threads_do_not_change_result(ch7000, bank7000):
    spec = _spec((4,), -5)
    a = transition_matrix_mc(spec, "ts", ch7000, 10_000, rng=4, bank=bank7000)
    b = transition_matrix_mc(spec, "ts", ch7000, 10_000, rng=4, bank=bank7000, threads=3)
    np.testing.assert_array_equal(a.probabilities, b.probabilities)


@pytest.mark.slow
def test_quadrature_matches_monte_carlo_entries(ch7000, bank7000):
    """Every entry within 3 standard errors after a Bonferroni correction.

    With 16 entries a family-wise level of 0.27% (3 sigma) corresponds to
    3.9 standard errors per entry.
    """
    spec = _spec((2, 2), -4)
    th = map_thresholds(spec, ch7000.sigma2)
    Q = transition_matrix_ts(spec, th, bank7000).probabilities
    n = 1_000_000
    E = transition_matrix_mc(spec, "ts", ch7000, n, rng=12, bank=bank7000,
                             thresholds=th).probabilities
    se = np.vectorize(binomial_se)(Q, n)
    assert np.all(np.abs(E - Q) < 3.9 * se)


# -- BEP ---------------------------------------------------------------------------------

def test_bep_bounds_and_binary_case(bank7000):
    spec = _spec((2,), -5)
    T = _tm(spec, bank7000)
    lab = Labeling(np.array([[0], [1]]))
    assert bep(T, lab) == pytest.approx(sep(T), rel=1e-12)
    with pytest.raises(ValueError):
        bep(T, brgc(2))


@given(st.permutations(range(8)))
def test_bep_at_least_sep_over_m(perm):
    T = _TM_44
    bits = ((np.array(perm)[:, None] >> np.arange(2, -1, -1)) & 1)
    assert bep(T, Labeling(bits)) >= sep(T) / 3 - 1e-15


@given(st.permutations(range(8)), st.integers(0, 2), st.permutations(range(3)))
def test_bep_invariant_under_complement_and_column_swap(perm, col, order):
    bits = ((np.array(perm)[:, None] >> np.arange(2, -1, -1)) & 1)
    flipped = bits.copy()
    flipped[:, col] ^= 1
    base = bep(_TM_44, Labeling(bits))
    assert bep(_TM_44, Labeling(flipped)) == pytest.approx(base, rel=1e-12)
    assert bep(_TM_44, Labeling(bits[:, list(order)])) == pytest.approx(base, rel=1e-12)


_TM_44 = transition_matrix_ts(
    _spec((4, 4), -5), map_thresholds(_spec((4, 4), -5), ChannelParams(7000).sigma2),
    HarmonicsBank(ChannelParams(7000)))


def test_gray_psk_bep_near_lower_bound_on_linear_channel():
    ch = ChannelParams(7000, gamma=0.0)
    spec = _spec((4,), -6)  # about 16 dB SNR
    T = _tm(spec, HarmonicsBank(ch))
    ratio = bep(T, brgc(2)) / (sep(T) / 2)
    assert 1.0 <= ratio <= 1.1


def test_transition_matrix_csv_roundtrip(tmp_path, bank7000):
    T = _tm(_spec((4, 4), -5), bank7000)
    path = tmp_path / "t.csv"
    text = T.to_csv(path)
    assert text.splitlines()[0] == "tx," + ",".join(f"rx{j}" for j in range(8))
    back = TransitionMatrix.from_csv(path)
    np.testing.assert_array_equal(back.probabilities, T.probabilities)
    with pytest.raises(ValueError):
        TransitionMatrix(np.ones((2, 3)), "quadrature")


# -- references ----------------------------------------------------------------------------

def test_awgn_references():
    snr = 10.0
    from math import erfc, sqrt

    Q = lambda x: 0.5 * erfc(x / sqrt(2))  # noqa: E731
    assert awgn_ml_sep(2, snr) == pytest.approx(Q(sqrt(2 * snr)), rel=1e-12)
    p = 2 * (1 - 1 / 4) * Q(sqrt(3 * snr / 15))
    assert awgn_ml_sep(16, snr) == pytest.approx(1 - (1 - p) ** 2, rel=1e-12)
    p4 = Q(sqrt(snr))
    assert awgn_ml_sep(4, snr) == pytest.approx(1 - (1 - p4) ** 2, rel=1e-12)
    assert np.isnan(awgn_ml_sep(8, snr))


def test_awgn_reference_matches_simulation():
    rng = np.random.default_rng(0)
    snr = 10 ** 1.3
    pts = np.array([a + 1j * b for a, b in itertools.product([-3, -1, 1, 3], repeat=2)])
    pts = pts / np.sqrt(10)
    n = 400_000
    idx = rng.integers(0, 16, n)
    noise = np.sqrt(1 / snr / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    det = np.argmin(np.abs((pts[idx] + noise)[:, None] - pts[None, :]), axis=1)
    emp = np.mean(det != idx)
    ref = float(awgn_ml_sep(16, snr))
    assert abs(emp - ref) < 3 * binomial_se(ref, n)


def test_wilson_interval_brackets_estimate():
    lo, hi = wilson_interval(30, 1000)
    assert lo < 0.03 < hi
    assert 0.0 <= wilson_interval(0, 100)[0] < wilson_interval(0, 100)[1]
