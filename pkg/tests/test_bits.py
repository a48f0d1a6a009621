import numpy as np
import pytest
from hypothesis import given, strategies as st

from quenchlab import bits
from quenchlab.errors import CapacityError, ContractViolation


@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=63))
def test_encode_decode_round_trip(spins):
    code = bits.encode(spins)
    assert bits.decode(code, len(spins)).tolist() == spins
    assert bits.decode_many(np.array([code], dtype=np.uint64), len(spins))[0].tolist() == spins


def test_all_configs_rows_are_codes():
    c = bits.all_configs(5)
    assert c.shape == (32, 5)
    for code in range(32):
        assert bits.encode(c[code]) == code


def test_enumeration_cap():
    with pytest.raises(CapacityError):
        bits.all_configs(25)


def test_decode_rejects_oversized_code():
    with pytest.raises(ContractViolation):
        bits.decode(8, 3)


@given(st.integers(0, 2**20 - 1), st.integers(0, 2**20 - 1))
def test_parity_sign_is_monomial(code, mask):
    spins = bits.decode(code, 20)
    expected = int(np.prod(spins[[i for i in range(20) if mask >> i & 1]]))
    assert int(bits.parity_sign(code, mask)) == expected


def hadamard(n):
    h = np.array([[1.0]])
    for _ in range(n):
        h = np.block([[h, h], [h, -h]])
    return h


@pytest.mark.parametrize("n", [0, 1, 3, 6])
def test_fwht_matches_hadamard_matrix(n):
    rng = np.random.default_rng(n)
    a = rng.normal(size=(3, 1 << n))
    assert np.allclose(bits.fwht(a), a @ hadamard(n).T)


def test_fwht_involution():
    a = np.random.default_rng(0).normal(size=64)
    assert np.allclose(bits.fwht(bits.fwht(a)), 64 * a)


def test_fwht_rejects_non_power_of_two():
    with pytest.raises(ContractViolation):
        bits.fwht(np.zeros(6))


def test_site_overlap_values():
    n = 4
    c = bits.all_configs(n).astype(float)
    q = bits.site_overlap_values(n)
    for a in range(16):
        for b in range(16):
            assert q[a ^ b] == pytest.approx(c[a] @ c[b] / n)
