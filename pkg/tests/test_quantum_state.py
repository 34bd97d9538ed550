import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from heqkd.errors import UnusedPairError, ZeroBlockError
from heqkd.quantum_state import (
    DIAGNOSTIC_BIT_MAPS,
    PAIR_BIT_MAPS,
    BasisSet,
    JointState,
    crosstalk,
    depolarize,
    dephase_polarization,
    derive_pair_bits,
    diagnostic_qber,
    ideal_state,
    pair_bits,
    qber_from_crosstalk,
    qber_table,
    timebin_phase,
    used_pairs,
)

ZERO_UNDER_DEPHASING = [(1, 1), (1, 2), (1, 3), (2, 1), (3, 1)]
HALF_UNDER_DEPHASING = [(2, 2), (2, 4), (3, 3), (4, 2), (4, 4)]


@pytest.mark.parametrize("d", [2, 4])
def test_bases_orthonormal(d):
    assert BasisSet.standard(d).orthonormality_error() < 1e-15


def test_mub_certificates():
    b = BasisSet.standard(4)
    for pair in [(1, 4), (2, 3)]:
        assert b.mub_error(*pair) < 1e-15
    assert BasisSet.standard(2).mub_error(1, 2) < 1e-15


@pytest.mark.parametrize("d", [2, 4])
def test_ideal_state_properties(d):
    s = ideal_state(d)
    assert s.is_valid()
    assert s.purity() == pytest.approx(1.0, abs=1e-14)
    for side in "AB":
        np.testing.assert_allclose(s.marginal(side), np.eye(d) / d, atol=1e-15)
    psi = np.linalg.eigh(s.rho)[1][:, -1].reshape(d, d)
    schmidt = np.linalg.svd(psi, compute_uv=False)
    np.testing.assert_allclose(schmidt, np.full(d, 1 / math.sqrt(d)), atol=1e-14)


def test_ideal_4d_blocks():
    xt = crosstalk(ideal_state(4))
    np.testing.assert_allclose(xt.block(1, 1), np.eye(4) / 4, atol=1e-15)
    b12 = xt.block(1, 2)
    # |<0 x (0 +- 1)/sqrt2 | Psi>|^2 = 1/8
    np.testing.assert_allclose(b12[0], [1 / 8, 1 / 8, 0, 0], atol=1e-15)
    for pair in used_pairs(4):
        assert qber_from_crosstalk(xt, pair) == pytest.approx(0.0, abs=1e-14)


def test_ideal_2d_blocks():
    xt = crosstalk(ideal_state(2))
    assert qber_from_crosstalk(xt, (1, 1)) == pytest.approx(0.0, abs=1e-15)
    assert qber_from_crosstalk(xt, (2, 2)) == pytest.approx(0.0, abs=1e-15)
    assert xt.full().shape == (4, 4)


@pytest.mark.parametrize("d", [2, 4])
def test_same_basis_blocks_symmetric(d):
    xt = crosstalk(ideal_state(d))
    for i in BasisSet.standard(d).indices:
        np.testing.assert_allclose(xt.block(i, i), xt.block(i, i).T, atol=1e-15)


def test_dephasing_2d_table():
    xt = crosstalk(dephase_polarization(ideal_state(2)))
    assert qber_from_crosstalk(xt, (1, 1)) == pytest.approx(0.0, abs=1e-12)
    assert qber_from_crosstalk(xt, (2, 2)) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("side", ["A", "B"])
def test_dephasing_4d_table(side):
    xt = crosstalk(dephase_polarization(ideal_state(4), side))
    for pair in ZERO_UNDER_DEPHASING:
        assert abs(qber_from_crosstalk(xt, pair)) < 1e-10
    for pair in HALF_UNDER_DEPHASING:
        assert abs(qber_from_crosstalk(xt, pair) - 0.5) < 1e-10
    for pair in DIAGNOSTIC_BIT_MAPS:
        assert abs(diagnostic_qber(xt, pair) - 0.5) < 1e-10


@pytest.mark.parametrize("d", [2, 4])
def test_dephasing_idempotent_and_trace_preserving(d):
    once = dephase_polarization(ideal_state(d))
    twice = dephase_polarization(once)
    np.testing.assert_allclose(once.rho, twice.rho, atol=1e-15)
    assert once.trace() == pytest.approx(1.0, abs=1e-14)
    assert once.min_eigenvalue() >= -1e-10


@given(st.floats(0.0, 1.0))
def test_depolarizing_same_basis_qber(lam):
    for d in (2, 4):
        xt = crosstalk(depolarize(ideal_state(d), lam))
        for i in BasisSet.standard(d).indices:
            expected = lam * (d - 1) / d
            assert qber_from_crosstalk(xt, (i, i)) == pytest.approx(expected, abs=1e-12)


@given(st.floats(0.0, 1.0), st.floats(-math.pi, math.pi))
def test_channels_keep_state_physical(lam, phase):
    s = timebin_phase(dephase_polarization(depolarize(ideal_state(4), lam)), phase)
    assert s.trace() == pytest.approx(1.0, abs=1e-12)
    assert s.min_eigenvalue() >= -1e-10


@given(st.floats(-math.pi, math.pi))
def test_timebin_phase_only_touches_phase_sensitive_pairs(phase):
    xt = crosstalk(timebin_phase(ideal_state(4), phase))
    pen = (1 - math.cos(phase)) / 2
    for pair, q in qber_table(xt).items():
        if pair in [(2, 2), (2, 4), (4, 2), (4, 4)]:
            assert q == pytest.approx(pen, abs=1e-12)
        else:
            assert q == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("pair", sorted(PAIR_BIT_MAPS))
def test_pair_bit_maps_match_derivation(pair):
    assert derive_pair_bits(*pair) == PAIR_BIT_MAPS[pair]


@pytest.mark.parametrize("pair", sorted(DIAGNOSTIC_BIT_MAPS))
def test_diagnostic_maps_match_derivation(pair):
    assert derive_pair_bits(*pair) == DIAGNOSTIC_BIT_MAPS[pair]


def test_pair_bit_partitions_cover_each_block():
    xt = crosstalk(depolarize(ideal_state(4), 0.3))
    for pair in PAIR_BIT_MAPS:
        a, b = pair_bits(pair)
        block = xt.block(*pair)
        total = sum(block[np.ix_(a == x, b == y)].sum() for x, y in itertools.product((0, 1), repeat=2))
        assert total == pytest.approx(1.0, abs=1e-14)


def test_unused_pairs_rejected():
    xt = crosstalk(ideal_state(4))
    for pair in [(3, 4), (4, 3)]:
        with pytest.raises(UnusedPairError):
            qber_from_crosstalk(xt, pair)
        with pytest.raises(UnusedPairError):
            pair_bits(pair)
    with pytest.raises(UnusedPairError):
        qber_from_crosstalk(crosstalk(ideal_state(2)), (1, 2))


def test_zero_block_raises():
    with pytest.raises(ZeroBlockError):
        crosstalk(JointState(np.zeros((16, 16))))


def test_qber_table_reporting():
    xt = crosstalk(ideal_state(4))
    assert set(qber_table(xt)) == set(used_pairs(4))
    assert set(qber_table(xt, include_unused=True)) == set(used_pairs(4)) | set(DIAGNOSTIC_BIT_MAPS)


def test_csv_layout():
    text = crosstalk(ideal_state(4)).to_csv().splitlines()
    assert len(text) == 17
    assert text[0].split(",")[:3] == ["alice", "B1_0", "B1_1"]
    assert text[1].startswith("A1_0,0.2500000000,0.0000000000")


def test_validation():
    with pytest.raises(ValueError):
        ideal_state(3)
    with pytest.raises(ValueError):
        JointState(np.zeros((5, 5)))
    with pytest.raises(ValueError):
        timebin_phase(ideal_state(2), 0.1)
