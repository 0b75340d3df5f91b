import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nlpn_apsk.constellation import (ApskSpec, build_apsk, count_partitions,
                                     enumerate_partitions, partition_from_string,
                                     partition_to_string, rescale_power, uniform_radii)

DELTA_4444 = 0.3651483716701107  # sqrt(16 / 120)


ring_sizes = st.lists(st.integers(1, 6), min_size=1, max_size=5).map(tuple)
powers = st.floats(1e-5, 10.0)


def test_unit_psk_symbols():
    spec = build_apsk((4,), (1.0,), (0.0,))
    np.testing.assert_allclose(spec.symbols, [1, 1j, -1, -1j], atol=1e-15)
    assert spec.power == pytest.approx(1.0, rel=1e-12)


def test_uniform_4444_delta():
    r = uniform_radii((4, 4, 4, 4), 1.0)
    np.testing.assert_allclose(r, DELTA_4444 * np.arange(1, 5), rtol=1e-12)
    assert build_apsk((4, 4, 4, 4), r).power == pytest.approx(1.0, rel=1e-12)


def test_origin_point_partition():
    r = uniform_radii((1, 3), 1.0)
    np.testing.assert_allclose(r, [0.0, np.sqrt(4 / 3)], rtol=1e-12)
    spec = build_apsk((1, 3), r)
    assert spec.symbols[0] == 0


def test_uniform_radii_examples():
    np.testing.assert_allclose(uniform_radii((8,), 2.0), [np.sqrt(2)], rtol=1e-12)
    np.testing.assert_allclose(uniform_radii((1, 7), 1.0), [0.0, np.sqrt(8 / 7)], rtol=1e-12)


def test_ring_major_ordering():
    spec = build_apsk((2, 3), (1.0, 2.0), (0.1, 0.2))
    expected = [np.exp(0.1j), np.exp(1j * (np.pi + 0.1)),
                2 * np.exp(0.2j), 2 * np.exp(1j * (2 * np.pi / 3 + 0.2)),
                2 * np.exp(1j * (4 * np.pi / 3 + 0.2))]
    np.testing.assert_allclose(spec.symbols, expected, atol=1e-14)
    np.testing.assert_array_equal(spec.ring_index, [0, 0, 1, 1, 1])


@pytest.mark.parametrize("l, r, phi", [
    ((4, 4), (1.0,), (0.0, 0.0)),
    ((4, 4), (2.0, 1.0), (0.0, 0.0)),
    ((4, 4), (1.0, 1.0), (0.0, 0.0)),
    ((1, 4), (0.5, 1.0), (0.0, 0.0)),
    ((4, 4), (0.0, 1.0), (0.0, 0.0)),
])
def test_build_apsk_rejects(l, r, phi):
    with pytest.raises(ValueError):
        build_apsk(l, r, phi)


def test_nearly_equal_radii_rejected():
    with pytest.raises(ValueError):
        build_apsk((4, 4), (1.0, 1.0 + 1e-12))


def test_rescale_examples():
    spec = build_apsk((4, 4), (0.5, 1.0), (0.0, 0.3))
    twice = rescale_power(spec, 4 * spec.power)
    np.testing.assert_allclose(twice.radii, [1.0, 2.0], rtol=1e-12)
    assert twice.phase_offsets == spec.phase_offsets
    same = rescale_power(spec, spec.power)
    np.testing.assert_allclose(same.radii, spec.radii, rtol=1e-15)
    psk = rescale_power(build_apsk((4,), (1.0,)), 0.5)
    np.testing.assert_allclose(psk.radii, [np.sqrt(0.5)], rtol=1e-12)
    with pytest.raises(ValueError):
        rescale_power(spec, 0.0)


def test_partition_counts():
    assert len(enumerate_partitions(4)) == 8
    assert set(enumerate_partitions(2)) == {(2,), (1, 1)}
    assert len(enumerate_partitions(8)) == 128
    assert len(enumerate_partitions(16)) == 32768
    assert count_partitions(16) == 32768
    assert count_partitions(16, 6) == len(enumerate_partitions(16, 6))


def test_partitions_are_lexicographic():
    parts = enumerate_partitions(6)
    assert parts == sorted(parts)
    assert enumerate_partitions(6) == parts


@given(st.integers(1, 12))
def test_partition_enumeration_invariants(M):
    parts = enumerate_partitions(M)
    assert len(parts) == 2 ** (M - 1)
    assert len(set(parts)) == len(parts)
    assert all(sum(l) == M and min(l) >= 1 for l in parts)


@given(ring_sizes, powers)
def test_uniform_spec_power_and_spacing(l, P):
    if l == (1,):
        return
    r = uniform_radii(l, P)
    spec = build_apsk(l, r)
    recomputed = np.mean(np.abs(spec.symbols) ** 2)
    assert recomputed == pytest.approx(P, rel=1e-12)
    assert spec.power == pytest.approx(P, rel=1e-12)
    delta = r[0] if l[0] > 1 else r[1]
    np.testing.assert_allclose(np.diff(r), delta, rtol=1e-10)
    scaled = rescale_power(spec, 3.7 * P)
    d = np.diff(scaled.radii)
    if d.size:
        np.testing.assert_allclose(d, d[0], rtol=1e-10)
    assert scaled.power == pytest.approx(3.7 * P, rel=1e-12)


@given(ring_sizes, powers, st.lists(st.floats(-3, 3), min_size=5, max_size=5))
def test_symbols_distinct(l, P, phi):
    if l == (1,):
        return
    spec = build_apsk(l, uniform_radii(l, P), phi[:len(l)])
    s = spec.symbols
    dist = np.abs(s[:, None] - s[None, :]) + np.eye(s.size)
    assert dist.min() > 0
    assert s.size == sum(l)


def test_json_roundtrip():
    spec = build_apsk((1, 5, 10), (0.0, 0.4, 0.9), (0.0, 0.1, 0.2))
    back = ApskSpec.from_json(spec.to_json())
    assert back == spec
    data = json.loads(spec.to_json())
    assert set(data) == {"l", "r", "phi", "P"}
    data["P"] = 2 * data["P"]
    with pytest.raises(ValueError):
        ApskSpec.from_dict(data)


def test_partition_strings():
    assert partition_to_string((1, 6, 9)) == "1-6-9"
    assert partition_from_string("1-6-9") == (1, 6, 9)
    assert partition_from_string("(4,4)") == (4, 4)
    with pytest.raises(ValueError):
        partition_from_string("")
