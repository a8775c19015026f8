from __future__ import annotations

from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from annealgap.spin_core import (
    DimensionError,
    KLocalOperator,
    PauliTerm,
    SpinConfiguration,
    apply_operator,
    basis_state,
    diagonal_energies,
    hamming,
    uniform_state,
)

PAULI = {"Z": np.diag([-1.0, 1.0]), "X": np.array([[0.0, 1.0], [1.0, 0.0]]), "I": np.eye(2)}


def kron_oracle(n: int, items) -> np.ndarray:
    """Dense matrix from Kronecker products; spin i is bit i, so it is the rightmost factor for i=0."""
    out = np.zeros((1 << n, 1 << n))
    for sites, word, coeff in items:
        labels = ["I"] * n
        for s, p in zip(sites, word):
            labels[s] = p
        out += coeff * reduce(np.kron, [PAULI[p] for p in reversed(labels)])
    return out


@st.composite
def random_items(draw, max_n=5, max_terms=6, max_k=3):
    n = draw(st.integers(1, max_n))
    items = []
    for _ in range(draw(st.integers(0, max_terms))):
        k = draw(st.integers(1, min(max_k, n)))
        sites = draw(st.lists(st.integers(0, n - 1), min_size=k, max_size=k, unique=True))
        word = "".join(draw(st.sampled_from("ZX")) for _ in range(k))
        coeff = draw(st.floats(-2, 2, allow_nan=False))
        items.append((sites, word, coeff))
    return n, items


# -- configurations ---------------------------------------------------------


def test_configuration_index_roundtrip_little_endian():
    c = SpinConfiguration.from_string("1100")
    assert c.index == 0b0011
    assert str(SpinConfiguration.from_index(0b0011, 4)) == "1100"
    assert list(c.spins) == [1, 1, -1, -1]


@given(st.integers(1, 12).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, (1 << n) - 1))))
def test_index_roundtrip(pair):
    n, b = pair
    assert SpinConfiguration.from_index(b, n).index == b


def test_configuration_validation():
    with pytest.raises(ValueError):
        SpinConfiguration((0, 2))
    with pytest.raises(ValueError):
        SpinConfiguration(())
    with pytest.raises(ValueError):
        SpinConfiguration.from_index(8, 3)


def test_flip_and_from_spins():
    c = SpinConfiguration.from_spins([1, -1, -1])
    assert str(c) == "100"
    assert str(c.flip(0, 2)) == "001"


@pytest.mark.parametrize("a,b,d", [("000", "000", 0), ("000", "111", 3), ("0101", "0110", 2)])
def test_hamming_examples(a, b, d):
    assert hamming(a, b) == d


def test_hamming_length_mismatch():
    with pytest.raises(ValueError):
        hamming("01", "011")


@given(st.integers(1, 10).flatmap(lambda n: st.tuples(*[st.integers(0, (1 << n) - 1)] * 3, st.just(n))))
def test_hamming_metric(t):
    a, b, c, n = t
    A, B, C = (SpinConfiguration.from_index(x, n) for x in (a, b, c))
    assert hamming(A, A) == 0
    assert hamming(A, B) == hamming(B, A) == bin(a ^ b).count("1")
    assert hamming(A, B) <= n
    assert hamming(A, C) <= hamming(A, B) + hamming(B, C)


# -- operators ---------------------------------------------------------------


def test_apply_examples():
    z = KLocalOperator.z(1, 0)
    x = KLocalOperator.x(1, 0)
    np.testing.assert_array_equal(apply_operator(z, basis_state(1, 1)), basis_state(1, 1))
    np.testing.assert_array_equal(apply_operator(x, basis_state(0, 1)), basis_state(1, 1))
    psi = uniform_state(3)
    np.testing.assert_allclose(apply_operator(KLocalOperator.transverse_field(3), psi), 3 * psi, atol=1e-15)


def test_z_acts_by_bit_sign():
    op = KLocalOperator.z(4, 2)
    for b in range(16):
        out = op @ basis_state(b, 4, float)
        assert out[b] == (1.0 if (b >> 2) & 1 else -1.0)


@settings(max_examples=60, deadline=None)
@given(random_items())
def test_dense_matches_kron_oracle(data):
    n, items = data
    op = KLocalOperator.from_list(n, items)
    np.testing.assert_allclose(op.to_dense(), kron_oracle(n, items), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(random_items(max_n=6))
def test_hermitian(data):
    n, items = data
    m = KLocalOperator.from_list(n, items).to_dense()
    np.testing.assert_allclose(m, m.T, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(random_items(), st.integers(0, 2**32 - 1))
def test_linearity_and_blocks(data, seed):
    n, items = data
    op = KLocalOperator.from_list(n, items)
    rng = np.random.default_rng(seed)
    psi, phi = rng.normal(size=(2, 1 << n)) + 1j * rng.normal(size=(2, 1 << n))
    a, b = 0.3 - 1.2j, 2.5
    np.testing.assert_allclose(op @ (a * psi + b * phi), a * (op @ psi) + b * (op @ phi), atol=1e-12)
    block = np.stack([psi, phi], axis=1)
    np.testing.assert_allclose(op @ block, np.stack([op @ psi, op @ phi], axis=1), atol=1e-13)


def test_arithmetic_merges_terms():
    a = KLocalOperator.from_list(2, [((0, 1), "ZZ", 1.0), ((0,), "X", 0.5)])
    b = KLocalOperator.from_list(2, [((1, 0), "ZZ", 2.0)])
    c = 2 * a - b
    np.testing.assert_allclose(c.to_dense(), 2 * a.to_dense() - b.to_dense())
    assert c.locality == 2
    assert not c.is_diagonal


def test_dimension_errors():
    op = KLocalOperator.transverse_field(3)
    with pytest.raises(DimensionError):
        op @ np.ones(4)
    with pytest.raises(DimensionError):
        op + KLocalOperator.transverse_field(2)
    with pytest.raises(ValueError):
        KLocalOperator.from_list(2, [((0, 2), "ZZ", 1.0)])
    with pytest.raises(ValueError):
        PauliTerm((1, 0), "ZZ", 1.0)
    with pytest.raises(ValueError):
        PauliTerm((0,), "Y", 1.0)


def test_dense_guard():
    with pytest.raises(ValueError):
        KLocalOperator.transverse_field(15).to_dense()


# -- diagonal energies ---------------------------------------------------------


def test_diagonal_energy_examples():
    zz = KLocalOperator.from_list(2, [((0, 1), "ZZ", 1.0)])
    np.testing.assert_array_equal(diagonal_energies(zz), [1, -1, -1, 1])
    field = KLocalOperator.from_list(3, [((i,), "Z", -1.0) for i in range(3)])
    e = diagonal_energies(field)
    assert e.min() == -3 and int(np.argmin(e)) == 0b111


def test_diagonal_energies_single_ec3_clause():
    # (x0 + x1 + x2 - 1)^2 with x_i = (1 + z_i)/2, expanded by hand
    op = KLocalOperator.from_list(3, [((), "", 1.0), ((0,), "Z", 0.5), ((1,), "Z", 0.5), ((2,), "Z", 0.5),
                                      ((0, 1), "ZZ", 0.5), ((0, 2), "ZZ", 0.5), ((1, 2), "ZZ", 0.5)])
    e = diagonal_energies(op)
    direct = [(bin(b).count("1") - 1) ** 2 for b in range(8)]
    np.testing.assert_allclose(e, direct, atol=1e-12)
    assert sorted(np.flatnonzero(np.abs(e) < 1e-9)) == [1, 2, 4]


def test_diagonal_energies_rejects_x():
    with pytest.raises(ValueError):
        diagonal_energies(KLocalOperator.transverse_field(2))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.lists(st.integers(0, n - 1), min_size=1, max_size=3,
                                                                  unique=True), st.integers(-3, 3)), max_size=6))))
def test_integer_diagonal_consistency(data):
    n, raw = data
    op = KLocalOperator.from_list(n, [(s, "Z" * len(s), c) for s, c in raw])
    e = diagonal_energies(op)
    np.testing.assert_allclose(e, np.round(e), atol=1e-9)
    for b in range(1 << n):
        np.testing.assert_allclose(op @ basis_state(b, n, float), e[b] * basis_state(b, n, float))
