import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlpn_apsk.analytic import HarmonicsBank
from nlpn_apsk.channel import ChannelParams
from nlpn_apsk.constellation import build_apsk, uniform_radii
from nlpn_apsk.detection import map_thresholds
from nlpn_apsk.labeling import (Labeling, brgc, direct_product, exhaustive_labeling_search,
                                gray_rectangular, proposed_phase_offsets)
from nlpn_apsk.metrics import TransitionMatrix, bep, sep, transition_matrix_ts
from nlpn_apsk.optimize import NelderMeadConfig, TsObjective, optimize_radii
from nlpn_apsk.units import dbm_to_watt


def _rows(lab):
    return ["".join(map(str, r)) for r in np.asarray(getattr(lab, "bits", lab))]


def _is_gray_cycle(bits):
    b = np.asarray(bits)
    return all(np.sum(b[i] != b[(i + 1) % len(b)]) == 1 for i in range(len(b)))


def test_brgc_small_orders():
    assert _rows(brgc(1)) == ["0", "1"]
    assert _rows(brgc(2)) == ["00", "01", "11", "10"]
    with pytest.raises(ValueError):
        brgc(0)


@pytest.mark.parametrize("m", range(1, 7))
def test_brgc_gray_property(m):
    lab = brgc(m)
    assert lab.bits.shape == (2**m, m)
    assert _is_gray_cycle(lab.bits)


def test_direct_product_example():
    out = direct_product(brgc(1), brgc(2))
    assert _rows(out) == ["000", "001", "011", "010", "100", "101", "111", "110"]
    single = direct_product(np.array([[1, 0]]), brgc(2))
    assert _rows(single) == ["1000", "1001", "1011", "1010"]


@given(st.integers(1, 3), st.integers(1, 3))
def test_direct_product_of_labelings_is_labeling(a, b):
    lab = Labeling(direct_product(brgc(a), brgc(b)))
    assert lab.n_points == 2 ** (a + b)


def test_gray_rectangular_examples():
    spec = build_apsk((4, 4), (1.0, 2.0))
    lab = gray_rectangular(spec)
    assert lab == Labeling(direct_product(brgc(1), brgc(2)))
    assert _rows(gray_rectangular(build_apsk((2, 2), (1.0, 2.0)))) == ["00", "01", "10", "11"]
    big = build_apsk((8, 8, 8, 8), (1.0, 2.0, 3.0, 4.0))
    bits = gray_rectangular(big).bits
    for sl in big.ring_slices():
        assert _is_gray_cycle(bits[sl])
    for bad in [build_apsk((4,), (1.0,)), build_apsk((4, 2), (1.0, 2.0)),
                build_apsk((3, 3), (1.0, 2.0))]:
        with pytest.raises(ValueError):
            gray_rectangular(bad)


def test_labeling_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        Labeling(np.array([[0, 0], [0, 1], [1, 1], [1, 1]]))
    with pytest.raises(ValueError):
        Labeling(np.array([[0], [1], [1]]))
    with pytest.raises(ValueError):
        Labeling(np.array([[0], [2]]))
    lab = brgc(3)
    path = tmp_path / "lab.csv"
    text = lab.to_csv(path)
    assert text.splitlines()[:3] == ["symbol,bits", "0,000", "1,001"]
    assert Labeling.from_csv(path) == lab
    assert Labeling.from_csv(text) == lab


# -- phase offsets ----------------------------------------------------------------------

def test_linear_channel_offsets_are_zero():
    ch = ChannelParams(7000, gamma=0.0)
    spec = build_apsk((4, 4, 4, 4), uniform_radii((4, 4, 4, 4), dbm_to_watt(-5)))
    th = map_thresholds(spec, ch.sigma2)
    phi = proposed_phase_offsets(spec, th, HarmonicsBank(ch))
    phi = np.angle(np.exp(1j * phi))
    np.testing.assert_allclose(phi, 0.0, atol=1e-9)


def test_offsets_telescope(bank7000, ch7000):
    spec = build_apsk((8, 8, 8, 8), uniform_radii((8, 8, 8, 8), dbm_to_watt(-3)))
    th = map_thresholds(spec, ch7000.sigma2)
    phi = proposed_phase_offsets(spec, th, bank7000)
    r = spec.radii
    total = sum(bank7000[r[k - 1]].correction_angle(np.array([th.mu[k]]))[0]
                - bank7000[r[k]].correction_angle(np.array([th.mu[k]]))[0] for k in range(1, 4))
    assert phi[0] == 0.0
    assert np.all((phi >= 0) & (phi < 2 * np.pi))
    assert np.angle(np.exp(1j * (phi[-1] - total))) == pytest.approx(0.0, abs=1e-12)


def test_offsets_need_harmonics_for_every_ring(bank7000, ch7000):
    spec = build_apsk((4, 4), uniform_radii((4, 4), dbm_to_watt(-5)))
    th = map_thresholds(spec, ch7000.sigma2)
    partial = {spec.radii[0]: bank7000[spec.radii[0]]}
    with pytest.raises(ValueError):
        proposed_phase_offsets(spec, th, partial)
    with pytest.raises(ValueError):
        proposed_phase_offsets(build_apsk((8,), (0.03,)), map_thresholds(
            build_apsk((8,), (0.03,)), ch7000.sigma2), bank7000)


@pytest.fixture(scope="module")
def proposed_vs_zero(ch7000, bank7000):
    obj = TsObjective(ch7000, bank=bank7000)
    rows = []
    for p in (-8, -7, -6, -5, -4):
        spec = optimize_radii((4, 4), dbm_to_watt(p), ch7000, NelderMeadConfig(n_starts=2),
                              0, obj).spec
        th = map_thresholds(spec, ch7000.sigma2)
        phi = proposed_phase_offsets(spec, th, bank7000)
        T0 = transition_matrix_ts(spec, th, bank7000)
        T1 = transition_matrix_ts(spec.with_phase_offsets(phi), th, bank7000)
        rows.append((p, T0, T1, gray_rectangular(spec)))
    return rows


def test_proposed_offsets_lower_bep(proposed_vs_zero):
    for _, T0, T1, lab in proposed_vs_zero:
        assert bep(T1, lab) <= bep(T0, lab)


def test_offsets_change_transitions_but_not_sep(proposed_vs_zero):
    for _, T0, T1, _ in proposed_vs_zero:
        assert abs(sep(T0) - sep(T1)) < 1e-8
        assert np.max(np.abs(T0.probabilities - T1.probabilities)) > 1e-6


# -- exhaustive search ---------------------------------------------------------------------

def _random_tm(M, seed):
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.full(M, 0.3), size=M) * 0.3 + 0.7 * np.eye(M)
    return TransitionMatrix(P, "quadrature")


@pytest.mark.parametrize("seed", range(5))
def test_pruned_search_equals_unpruned_for_four_points(seed):
    T = _random_tm(4, seed)
    lab, val = exhaustive_labeling_search(T)
    lab_u, val_u = exhaustive_labeling_search(T, prune=False)
    assert val == pytest.approx(val_u, rel=1e-12)
    assert bep(T, lab) == pytest.approx(val, rel=1e-12)
    brute = min(bep(T, np.array([[int(c) for c in f"{v:02b}"] for v in perm]))
                for perm in itertools.permutations(range(4)))
    assert val == pytest.approx(brute, rel=1e-12)


def test_pruned_search_equals_unpruned_for_eight_points():
    T = _random_tm(8, 11)
    assert exhaustive_labeling_search(T)[1] == pytest.approx(
        exhaustive_labeling_search(T, prune=False)[1], rel=1e-12)


def test_search_binary_and_limits():
    T = _random_tm(2, 0)
    lab, val = exhaustive_labeling_search(T)
    assert val == pytest.approx(sep(T), rel=1e-12)
    with pytest.raises(ValueError):
        exhaustive_labeling_search(_random_tm(16, 0))
    with pytest.raises(ValueError):
        exhaustive_labeling_search(_random_tm(6, 0))


def test_search_beats_gray_rectangular(bank7000, ch7000):
    spec = build_apsk((4, 4), uniform_radii((4, 4), dbm_to_watt(-5)))
    T = transition_matrix_ts(spec, map_thresholds(spec, ch7000.sigma2), bank7000)
    lab, val = exhaustive_labeling_search(T)
    assert val <= bep(T, gray_rectangular(spec)) + 1e-15
    assert len(set(_rows(lab))) == 8


def test_gray_wins_for_qpsk_at_high_snr():
    ch = ChannelParams(7000, gamma=0.0)
    spec = build_apsk((4,), uniform_radii((4,), dbm_to_watt(-6)))
    T = transition_matrix_ts(spec, map_thresholds(spec, ch.sigma2), HarmonicsBank(ch))
    lab, val = exhaustive_labeling_search(T)
    assert _is_gray_cycle(lab.bits)
    assert val == pytest.approx(bep(T, brgc(2)), rel=1e-12)
