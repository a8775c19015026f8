"""Bit-indexed spin configurations and k-local Pauli operators.

Basis convention: amplitude index ``b`` encodes the configuration whose spin
``i`` is bit ``i`` of ``b`` (little-endian).  Bit value 1 is the sigma^z = +1
eigenstate, bit value 0 is sigma^z = -1.

Operators are sums of Pauli words built from Z and X only.  They are applied
term-by-term to amplitude vectors without building a matrix; ``to_dense`` is
kept as a small-N test oracle.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

import numpy as np

DENSE_LIMIT = 14


class DimensionError(ValueError):
    """Operator and vector sizes disagree."""


@dataclass(frozen=True)
class SpinConfiguration:
    """A classical configuration of N spins, stored as a tuple of bits."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if len(self.bits) < 1:
            raise ValueError("a configuration needs at least one spin")
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"bits must be 0 or 1, got {self.bits}")

    @classmethod
    def from_index(cls, index: int, n_spins: int) -> SpinConfiguration:
        if not 0 <= index < (1 << n_spins):
            raise ValueError(f"index {index} out of range for {n_spins} spins")
        return cls(tuple((int(index) >> i) & 1 for i in range(n_spins)))

    @classmethod
    def from_string(cls, text: str) -> SpinConfiguration:
        """Parse ``"0110"``; character ``i`` is spin ``i``."""
        return cls(tuple(int(c) for c in text.strip()))

    @classmethod
    def from_spins(cls, spins: Iterable[int]) -> SpinConfiguration:
        """Build from +/-1 values."""
        return cls(tuple(1 if s > 0 else 0 for s in spins))

    @property
    def n_spins(self) -> int:
        return len(self.bits)

    @property
    def index(self) -> int:
        return sum(b << i for i, b in enumerate(self.bits))

    @property
    def spins(self) -> np.ndarray:
        return 2 * np.asarray(self.bits, dtype=np.int64) - 1

    def flip(self, *sites: int) -> SpinConfiguration:
        bits = list(self.bits)
        for i in sites:
            bits[i] ^= 1
        return SpinConfiguration(tuple(bits))

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)


def as_configuration(obj) -> SpinConfiguration:
    if isinstance(obj, SpinConfiguration):
        return obj
    if isinstance(obj, str):
        return SpinConfiguration.from_string(obj)
    return SpinConfiguration(tuple(int(b) for b in obj))


def hamming(a, b) -> int:
    """Number of differing bits between two configurations of equal length."""
    a, b = as_configuration(a), as_configuration(b)
    if a.n_spins != b.n_spins:
        raise ValueError(f"length mismatch: {a.n_spins} vs {b.n_spins}")
    return sum(x != y for x, y in zip(a.bits, b.bits))


def popcount(values) -> np.ndarray:
    return np.bitwise_count(np.asarray(values, dtype=np.uint64)).astype(np.int64)


@lru_cache(maxsize=8)
def bit_table(n_spins: int) -> np.ndarray:
    """``table[i, b]`` is bit ``i`` of basis index ``b`` (uint8, read-only)."""
    idx = np.arange(1 << n_spins, dtype=np.int64)
    table = ((idx[None, :] >> np.arange(n_spins, dtype=np.int64)[:, None]) & 1).astype(np.uint8)
    table.flags.writeable = False
    return table


@dataclass(frozen=True)
class PauliTerm:
    """``coeff`` times a product of Z/X on distinct sites.

    ``word[k]`` is the Pauli label acting on ``support[k]``.
    """

    support: tuple[int, ...]
    word: str
    coeff: float

    def __post_init__(self):
        if len(self.support) != len(self.word):
            raise ValueError("support and word must have equal length")
        if list(self.support) != sorted(set(self.support)):
            raise ValueError(f"support must be sorted without duplicates: {self.support}")
        if set(self.word) - {"Z", "X"}:
            raise ValueError(f"only Z and X are supported, got {self.word!r}")

    @property
    def is_diagonal(self) -> bool:
        return "X" not in self.word

    @property
    def z_mask(self) -> int:
        return sum(1 << i for i, p in zip(self.support, self.word) if p == "Z")

    @property
    def x_mask(self) -> int:
        return sum(1 << i for i, p in zip(self.support, self.word) if p == "X")


def _term(sites: Sequence[int], word: str, coeff: float) -> PauliTerm:
    order = sorted(range(len(sites)), key=lambda k: sites[k])
    return PauliTerm(tuple(int(sites[k]) for k in order), "".join(word[k] for k in order), float(coeff))


class KLocalOperator:
    """Sum of real-weighted Z/X Pauli words on ``n_spins`` spins.

    Immutable once built.  Arithmetic (``+``, ``-``, scalar ``*``) returns a
    new operator; repeated words are merged when the operator is compiled.
    """

    def __init__(self, n_spins: int, terms: Iterable[PauliTerm] = ()):
        if n_spins < 1:
            raise ValueError("n_spins must be >= 1")
        self.n_spins = int(n_spins)
        terms = tuple(terms)
        for t in terms:
            if t.support and not (0 <= t.support[0] and t.support[-1] < n_spins):
                raise ValueError(f"term {t} has indices outside [0, {n_spins})")
        self.terms = terms

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_list(cls, n_spins: int, items: Iterable[tuple[Sequence[int], str, float]]) -> KLocalOperator:
        return cls(n_spins, [_term(tuple(s), w, c) for s, w, c in items])

    @classmethod
    def z(cls, n_spins: int, i: int, coeff: float = 1.0) -> KLocalOperator:
        return cls(n_spins, [PauliTerm((i,), "Z", coeff)])

    @classmethod
    def x(cls, n_spins: int, i: int, coeff: float = 1.0) -> KLocalOperator:
        return cls(n_spins, [PauliTerm((i,), "X", coeff)])

    @classmethod
    def identity(cls, n_spins: int, coeff: float = 1.0) -> KLocalOperator:
        return cls(n_spins, [PauliTerm((), "", coeff)])

    @classmethod
    def transverse_field(cls, n_spins: int, coeff: float = 1.0) -> KLocalOperator:
        """``coeff * sum_i sigma^x_i``."""
        return cls(n_spins, [PauliTerm((i,), "X", coeff) for i in range(n_spins)])

    # -- arithmetic ------------------------------------------------------
    def _check_compatible(self, other: KLocalOperator):
        if not isinstance(other, KLocalOperator):
            return NotImplemented
        if other.n_spins != self.n_spins:
            raise DimensionError(f"cannot combine {self.n_spins}- and {other.n_spins}-spin operators")

    def __add__(self, other: KLocalOperator) -> KLocalOperator:
        if self._check_compatible(other) is NotImplemented:
            return NotImplemented
        return KLocalOperator(self.n_spins, self.terms + other.terms)

    def __mul__(self, scalar: float) -> KLocalOperator:
        if not np.isscalar(scalar):
            return NotImplemented
        s = float(scalar)
        return KLocalOperator(self.n_spins, [PauliTerm(t.support, t.word, s * t.coeff) for t in self.terms])

    __rmul__ = __mul__

    def __neg__(self) -> KLocalOperator:
        return -1.0 * self

    def __sub__(self, other: KLocalOperator) -> KLocalOperator:
        return self + (-1.0) * other

    def __matmul__(self, psi: np.ndarray) -> np.ndarray:
        return apply_operator(self, psi)

    def __repr__(self) -> str:
        return f"KLocalOperator(n_spins={self.n_spins}, terms={len(self.terms)})"

    # -- structure -------------------------------------------------------
    @property
    def dim(self) -> int:
        return 1 << self.n_spins

    @property
    def is_diagonal(self) -> bool:
        return all(t.is_diagonal or t.coeff == 0.0 for t in self.terms)

    @property
    def locality(self) -> int:
        return max((len(t.support) for t in self.terms), default=0)

    def norm_bound(self) -> float:
        """Triangle-inequality bound on the operator norm."""
        return float(sum(abs(t.coeff) for t in self.terms))

    def _z_signs(self, z_mask: int) -> np.ndarray:
        signs = np.ones(self.dim)
        bits = bit_table(self.n_spins)
        for i in range(self.n_spins):
            if (z_mask >> i) & 1:
                signs *= 2.0 * bits[i] - 1.0
        return signs

    @cached_property
    def _compiled(self):
        diag = np.zeros(self.dim)
        groups: dict[int, list[PauliTerm]] = defaultdict(list)
        for t in self.terms:
            if t.coeff == 0.0:
                continue
            if t.is_diagonal:
                diag += t.coeff * self._z_signs(t.z_mask)
            else:
                groups[t.x_mask].append(t)
        offdiag = []
        for mask in sorted(groups):
            ts = groups[mask]
            if all(t.z_mask == 0 for t in ts):
                weight = float(sum(t.coeff for t in ts))
            else:
                weight = sum(t.coeff * self._z_signs(t.z_mask) for t in ts)
            offdiag.append((mask, weight))
        return diag, offdiag

    @property
    def diagonal(self) -> np.ndarray:
        """Diagonal of the operator in the computational basis (read-only view)."""
        d = self._compiled[0].view()
        d.flags.writeable = False
        return d

    def _flip(self, v: np.ndarray, mask: int) -> np.ndarray:
        """Return ``w`` with ``w[b] = v[b ^ mask]``; ``v`` may carry trailing columns."""
        if mask & (mask - 1) == 0:
            i = mask.bit_length() - 1
            shape = v.shape
            w = v.reshape((-1, 2, 1 << i) + shape[1:])[:, ::-1]
            return w.reshape(shape)
        perm = np.arange(self.dim, dtype=np.int64) ^ mask
        return v[perm]

    def apply(self, psi: np.ndarray) -> np.ndarray:
        diag, offdiag = self._compiled
        psi = np.asarray(psi)
        if psi.shape[0] != self.dim:
            raise DimensionError(f"vector of length {psi.shape[0]} does not match {self.n_spins} spins")
        d = diag if psi.ndim == 1 else diag[:, None]
        out = d * psi
        for mask, weight in offdiag:
            if np.isscalar(weight):
                out += weight * self._flip(psi, mask)
            else:
                w = weight if psi.ndim == 1 else weight[:, None]
                out += self._flip(w * psi, mask)
        return out

    def to_dense(self) -> np.ndarray:
        if self.n_spins > DENSE_LIMIT:
            raise ValueError(f"dense materialization is limited to N <= {DENSE_LIMIT}")
        return self.apply(np.eye(self.dim))


def apply_operator(op: KLocalOperator, psi: np.ndarray) -> np.ndarray:
    """Return ``op @ psi`` for a vector (or a block of column vectors)."""
    return op.apply(psi)


def diagonal_energies(op: KLocalOperator) -> np.ndarray:
    """Classical energy of every basis configuration of an all-Z operator."""
    if not op.is_diagonal:
        raise ValueError("diagonal_energies needs an operator with Z terms only")
    return np.array(op.diagonal)


def basis_state(index: int, n_spins: int, dtype=complex) -> np.ndarray:
    psi = np.zeros(1 << n_spins, dtype=dtype)
    psi[index] = 1.0
    return psi


def uniform_state(n_spins: int, dtype=complex) -> np.ndarray:
    dim = 1 << n_spins
    return np.full(dim, 1.0 / np.sqrt(dim), dtype=dtype)


def normalize(psi: np.ndarray) -> np.ndarray:
    nrm = np.linalg.norm(psi)
    if nrm == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return psi / nrm
