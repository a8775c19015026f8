"""Hamiltonian families: EC3 instances, classical Ising costs, annealing paths,
the staggered-field antiferromagnetic chain and sampled l-bit models."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .spin_core import KLocalOperator, PauliTerm, SpinConfiguration, as_configuration, bit_table

# Brute-force enumeration works on chunks of this many assignments.
_CHUNK_BITS = 20


# ---------------------------------------------------------------------------
# EXACT COVER 3
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EC3Instance:
    """EXACT COVER 3 formula: every clause wants exactly one true variable."""

    n_vars: int
    clauses: tuple[tuple[int, int, int], ...]
    seed: int | None = None

    def __post_init__(self):
        for c in self.clauses:
            if len(c) != 3 or len(set(c)) != 3 or tuple(sorted(c)) != tuple(c):
                raise ValueError(f"clause {c} must be a sorted triple of distinct indices")
            if c[0] < 0 or c[2] >= self.n_vars:
                raise ValueError(f"clause {c} out of range for {self.n_vars} variables")

    @property
    def n_clauses(self) -> int:
        return len(self.clauses)

    @property
    def alpha(self) -> float:
        return self.n_clauses / self.n_vars

    def cost(self, x) -> int:
        """E_C for a single 0/1 assignment."""
        return sum((x[i] + x[j] + x[k] - 1) ** 2 for i, j, k in self.clauses)

    def _chunks(self):
        n = self.n_vars
        step = 1 << min(n, _CHUNK_BITS)
        low = bit_table(min(n, _CHUNK_BITS))
        for start in range(0, 1 << n, step):
            if n <= _CHUNK_BITS:
                bits = low
            else:
                high = np.array([(start >> i) & 1 for i in range(_CHUNK_BITS, n)], dtype=np.uint8)
                bits = np.concatenate([low, np.repeat(high[:, None], step, axis=1)])
            yield start, bits

    def energies(self) -> np.ndarray:
        """E_C(x) for every assignment, indexed by the little-endian bit encoding."""
        out = np.empty(1 << self.n_vars, dtype=np.int64)
        for start, bits in self._chunks():
            e = np.zeros(bits.shape[1], dtype=np.int64)
            for i, j, k in self.clauses:
                c = bits[i].astype(np.int64) + bits[j] + bits[k] - 1
                e += c * c
            out[start:start + bits.shape[1]] = e
        return out

    def solutions(self) -> np.ndarray:
        """Indices of all satisfying assignments."""
        found = []
        for start, bits in self._chunks():
            alive = np.ones(bits.shape[1], dtype=bool)
            for i, j, k in self.clauses:
                alive &= (bits[i] + bits[j] + bits[k]) == 1
                if not alive.any():
                    break
            found.append(start + np.flatnonzero(alive))
        return np.concatenate(found)

    def is_satisfiable(self) -> bool:
        for start, bits in self._chunks():
            alive = np.ones(bits.shape[1], dtype=bool)
            for i, j, k in self.clauses:
                alive &= (bits[i] + bits[j] + bits[k]) == 1
                if not alive.any():
                    break
            if alive.any():
                return True
        return False

    # -- text format: "N M seed" then one "i j k" per clause -----------------
    def dumps(self) -> str:
        seed = -1 if self.seed is None else self.seed
        lines = [f"{self.n_vars} {self.n_clauses} {seed}"]
        lines += [f"{i} {j} {k}" for i, j, k in self.clauses]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> EC3Instance:
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        if not rows or len(rows[0]) != 3:
            raise ValueError("header must be 'N M seed'")
        n, m, seed = (int(v) for v in rows[0])
        clauses = tuple(tuple(int(v) for v in r) for r in rows[1:])
        if len(clauses) != m:
            raise ValueError(f"header announces {m} clauses, found {len(clauses)}")
        return cls(n, clauses, None if seed < 0 else seed)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> EC3Instance:
        return cls.loads(Path(path).read_text())


def random_ec3(n_vars: int, alpha: float, seed: int) -> EC3Instance:
    """Sample round(alpha*N) distinct clauses uniformly from all triples."""
    if n_vars < 3:
        raise ValueError("EC3 needs at least 3 variables")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    m = int(math.floor(alpha * n_vars + 0.5))
    total = math.comb(n_vars, 3)
    if m > total:
        raise ValueError(f"alpha*N = {m} exceeds the {total} available triples")
    rng = np.random.default_rng(seed)
    if total <= 200_000:
        triples = list(itertools.combinations(range(n_vars), 3))
        picks = rng.choice(total, size=m, replace=False)
        clauses = sorted(triples[p] for p in picks)
    else:
        chosen: set[tuple[int, int, int]] = set()
        while len(chosen) < m:
            chosen.add(tuple(sorted(int(v) for v in rng.choice(n_vars, 3, replace=False))))
        clauses = sorted(chosen)
    return EC3Instance(n_vars, tuple(clauses), seed)


# ---------------------------------------------------------------------------
# Classical cost functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClassicalCostFunction:
    """E(sigma) = -sum_i h_i s_i - sum_S J_S prod_{i in S} s_i with s_i = +/-1.

    ``couplings`` maps sorted index tuples (length >= 2) to J_S.
    """

    n_spins: int
    fields: np.ndarray
    couplings: Mapping[tuple[int, ...], float] = field(default_factory=dict)

    def __post_init__(self):
        h = np.asarray(self.fields, dtype=float)
        if h.shape != (self.n_spins,):
            raise ValueError(f"expected {self.n_spins} fields, got shape {h.shape}")
        object.__setattr__(self, "fields", h)
        clean = {}
        for key, val in self.couplings.items():
            s = tuple(sorted(int(i) for i in key))
            if len(s) < 2 or len(set(s)) != len(s) or s[0] < 0 or s[-1] >= self.n_spins:
                raise ValueError(f"bad coupling support {key}")
            clean[s] = clean.get(s, 0.0) + float(val)
        object.__setattr__(self, "couplings", clean)

    @classmethod
    def ising(cls, fields, pair_couplings: Mapping[tuple[int, int], float] | None = None) -> ClassicalCostFunction:
        h = np.asarray(fields, dtype=float)
        return cls(len(h), h, dict(pair_couplings or {}))

    def to_operator(self) -> KLocalOperator:
        terms = [PauliTerm((i,), "Z", -h) for i, h in enumerate(self.fields) if h != 0.0]
        terms += [PauliTerm(s, "Z" * len(s), -j) for s, j in sorted(self.couplings.items()) if j != 0.0]
        return KLocalOperator(self.n_spins, terms)

    def energies(self) -> np.ndarray:
        """Energy of every basis configuration."""
        return np.array(self.to_operator().diagonal)

    def energy(self, config) -> float:
        s = as_configuration(config).spins
        e = -float(np.dot(self.fields, s))
        for sup, j in self.couplings.items():
            e -= j * float(np.prod(s[list(sup)]))
        return e

    def energies_of(self, indices) -> np.ndarray:
        """Energies of the configurations with the given basis indices."""
        idx = np.asarray(indices, dtype=np.int64)
        spins = 2.0 * ((idx[:, None] >> np.arange(self.n_spins)) & 1) - 1.0
        e = -spins @ self.fields
        for sup, j in self.couplings.items():
            e -= j * np.prod(spins[:, list(sup)], axis=1)
        return e

    def shifted_fields(self, delta) -> ClassicalCostFunction:
        return ClassicalCostFunction(self.n_spins, self.fields + np.asarray(delta, dtype=float), dict(self.couplings))

    # Text format: "n N", then "h i value" and "J i j ... value" lines; '#' starts a comment.
    def dumps(self) -> str:
        lines = [f"n {self.n_spins}"]
        lines += [f"h {i} {float(h)!r}" for i, h in enumerate(self.fields) if h != 0.0]
        lines += ["J " + " ".join(map(str, sup)) + f" {float(j)!r}" for sup, j in sorted(self.couplings.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> ClassicalCostFunction:
        n = None
        fields: dict[int, float] = {}
        couplings: dict[tuple[int, ...], float] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            parts = raw.split("#", 1)[0].split()
            if not parts:
                continue
            tag, args = parts[0].lower(), parts[1:]
            try:
                if tag == "n" and len(args) == 1:
                    n = int(args[0])
                elif tag == "h" and len(args) == 2:
                    i = int(args[0])
                    fields[i] = fields.get(i, 0.0) + float(args[1])
                elif tag == "j" and len(args) >= 3:
                    sup = tuple(int(a) for a in args[:-1])
                    couplings[sup] = couplings.get(sup, 0.0) + float(args[-1])
                else:
                    raise ValueError(raw)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: cannot parse {raw.strip()!r}") from exc
        if n is None:
            raise ValueError("missing 'n N' line")
        h = np.zeros(n)
        for i, v in fields.items():
            if not 0 <= i < n:
                raise ValueError(f"field index {i} out of range")
            h[i] = v
        return cls(n, h, couplings)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> ClassicalCostFunction:
        return cls.loads(Path(path).read_text())


def ec3_to_cost(instance: EC3Instance) -> tuple[ClassicalCostFunction, float]:
    """Rewrite E_C in +/-1 spins (s_i = 2 x_i - 1).

    Each clause contributes (s_i+s_j+s_k+1)^2/4 = 1 + (s_i+s_j+s_k)/2 +
    (s_i s_j + s_i s_k + s_j s_k)/2, so the result is 2-local and
    ``cost.energy(s) + constant == E_C(x)`` exactly.
    """
    n = instance.n_vars
    h = np.zeros(n)
    pairs: dict[tuple[int, int], float] = {}
    for i, j, k in instance.clauses:
        for v in (i, j, k):
            h[v] -= 0.5
        for p in ((i, j), (i, k), (j, k)):
            pairs[p] = pairs.get(p, 0.0) - 0.5
    return ClassicalCostFunction(n, h, pairs), float(instance.n_clauses)


# ---------------------------------------------------------------------------
# Annealing paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AnnealingPath:
    """One-parameter Hamiltonian family.

    ``parameterization == "s"``: H(s) = s*problem + (1-s)*driver, s in [0, 1].
    ``parameterization == "lambda"``: H(lam) = problem + lam*driver.
    """

    problem: KLocalOperator
    driver: KLocalOperator
    parameterization: str = "s"

    def __post_init__(self):
        if self.parameterization not in ("s", "lambda"):
            raise ValueError("parameterization must be 's' or 'lambda'")
        if self.problem.n_spins != self.driver.n_spins:
            raise ValueError("problem and driver act on different numbers of spins")

    @property
    def n_spins(self) -> int:
        return self.problem.n_spins

    def weights(self, param: float) -> tuple[float, float]:
        """Coefficients (a, b) with H(param) = a*problem + b*driver."""
        if self.parameterization == "s":
            return float(param), 1.0 - float(param)
        return 1.0, float(param)

    def at(self, param: float) -> KLocalOperator:
        a, b = self.weights(param)
        return a * self.problem + b * self.driver

    def derivative(self) -> KLocalOperator:
        """dH/dparam, independent of the parameter for both families."""
        if self.parameterization == "s":
            return self.problem - self.driver
        return self.driver

    def derivative_at(self, param: float) -> KLocalOperator:
        return self.derivative()

    @property
    def has_standard_driver(self) -> bool:
        """True if the driver is exactly sum_i sigma^x_i."""
        d = self.driver
        if not d.terms or any(t.word != "X" for t in d.terms):
            return False
        coeff = {}
        for t in d.terms:
            coeff[t.support[0]] = coeff.get(t.support[0], 0.0) + t.coeff
        return coeff == {i: 1.0 for i in range(d.n_spins)}

    def to_lambda(self, s: float) -> float:
        """lambda = (1-s)/s; H(s) = s * H_lambda((1-s)/s)."""
        return (1.0 - s) / s


def build_annealing_path(problem, parameterization: str = "s") -> AnnealingPath:
    """Attach the transverse-field driver sum_i sigma^x_i to a classical problem."""
    op = problem.to_operator() if isinstance(problem, ClassicalCostFunction) else problem
    if not op.is_diagonal:
        raise ValueError("the problem Hamiltonian must be diagonal")
    return AnnealingPath(op, KLocalOperator.transverse_field(op.n_spins), parameterization)


def _chain_bonds(length: int, periodic: bool) -> list[tuple[int, int]]:
    bonds = [(i, i + 1) for i in range(length - 1)]
    if periodic and length > 2:
        bonds.append((0, length - 1))
    return bonds


@dataclass(frozen=True)
class AfmChainModel:
    """sum_i s_i s_{i+1} + (-1)^i h s_i + Gamma sigma^x_i on L spins."""

    length: int
    h: float = 0.0
    gamma: float = 0.0
    periodic: bool = True

    def bond_operator(self) -> KLocalOperator:
        return KLocalOperator(self.length, [PauliTerm(b, "ZZ", 1.0) for b in _chain_bonds(self.length, self.periodic)])

    def staggered_field(self) -> KLocalOperator:
        return KLocalOperator(self.length, [PauliTerm((i,), "Z", (-1.0) ** i) for i in range(self.length)])

    def operator(self) -> KLocalOperator:
        return (self.bond_operator() + self.h * self.staggered_field()
                + KLocalOperator.transverse_field(self.length, self.gamma))

    def path_in_h(self) -> AnnealingPath:
        """H(h) = H(0, Gamma) + h * staggered field."""
        fixed = self.bond_operator() + KLocalOperator.transverse_field(self.length, self.gamma)
        return AnnealingPath(fixed, self.staggered_field(), "lambda")

    def path_in_gamma(self) -> AnnealingPath:
        fixed = self.bond_operator() + self.h * self.staggered_field()
        return AnnealingPath(fixed, KLocalOperator.transverse_field(self.length), "lambda")


def build_afm_chain(L: int, h: float, Gamma: float, periodic: bool = True) -> KLocalOperator:
    """Staggered-field antiferromagnetic Ising chain in a transverse field.

    The ring (``periodic=True``) is the default: an odd ring is frustrated and
    always hosts one domain wall.  For L = 2 the ring has a single bond.
    """
    if L < 2:
        raise ValueError("the chain needs at least 2 spins")
    return AfmChainModel(L, h, Gamma, periodic).operator()


# ---------------------------------------------------------------------------
# l-bit models
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LBitModel:
    """Classical model in l-bits whose couplings are polynomials in lambda.

    ``field_series[i, m]`` and ``coupling_series[(i, j)][m]`` hold the
    coefficient of lambda**m.
    """

    n_spins: int
    field_series: np.ndarray
    coupling_series: Mapping[tuple[int, int], np.ndarray]
    decay_xi: float = 2.0
    ratio: float = 0.5

    @property
    def series_order(self) -> int:
        return self.field_series.shape[1] - 1

    def cost_at(self, lam: float) -> ClassicalCostFunction:
        if lam < 0:
            raise ValueError("lambda must be >= 0")
        powers = lam ** np.arange(self.series_order + 1)
        h = self.field_series @ powers
        J = {s: float(c @ powers) for s, c in self.coupling_series.items()}
        return ClassicalCostFunction(self.n_spins, h, J)

    def order_cost(self, m: int) -> ClassicalCostFunction:
        """Cost function built from the lambda**m coefficients only."""
        J = {s: float(c[m]) for s, c in self.coupling_series.items()}
        return ClassicalCostFunction(self.n_spins, self.field_series[:, m], J)

    def energy_polynomials(self) -> np.ndarray:
        """``P[b, m]``: coefficient of lambda**m in the energy of configuration b."""
        return np.stack([self.order_cost(m).energies() for m in range(self.series_order + 1)], axis=1)


def sample_lbit_model(
    n_spins: int,
    seed: int,
    int_range: tuple[int, int] = (-1, 1),
    series_order: int = 3,
    decay_xi: float = 2.0,
    ratio: float = 0.5,
) -> LBitModel:
    """Random l-bit model on an open chain.

    lambda**0: integer fields on every site and integer couplings on nearest
    neighbours, uniform on ``int_range``.  lambda**m (m >= 1): uniform
    [-1, 1] times ``ratio**m``; pair coefficients carry an extra
    exp(-|i-j|/decay_xi) and exist for every pair.
    """
    if series_order < 0:
        raise ValueError("series_order must be >= 0")
    lo, hi = int_range
    rng = np.random.default_rng(seed)
    scale = ratio ** np.arange(1, series_order + 1)
    fields = np.zeros((n_spins, series_order + 1))
    fields[:, 0] = rng.integers(lo, hi + 1, size=n_spins)
    fields[:, 1:] = rng.uniform(-1.0, 1.0, size=(n_spins, series_order)) * scale
    couplings = {}
    for i in range(n_spins):
        for j in range(i + 1, n_spins):
            c = np.zeros(series_order + 1)
            if j == i + 1:
                c[0] = rng.integers(lo, hi + 1)
            c[1:] = rng.uniform(-1.0, 1.0, size=series_order) * scale * math.exp(-(j - i) / decay_xi)
            couplings[(i, j)] = c
    return LBitModel(n_spins, fields, couplings, decay_xi, ratio)


@dataclass(frozen=True, eq=False)
class LBitPath:
    """H(lam) = H'(lam) + delta_lambda * sum_i sigma^x_i with H' the l-bit model.

    Not affine in lambda; offers the same ``at``/``derivative_at`` interface
    as a lambda-parameterized AnnealingPath.
    """

    model: LBitModel
    delta_lambda: float = 0.0
    parameterization: str = "lambda"

    @property
    def n_spins(self) -> int:
        return self.model.n_spins

    def at(self, lam: float) -> KLocalOperator:
        op = evaluate_lbit(self.model, lam)
        if self.delta_lambda:
            op = op + KLocalOperator.transverse_field(self.n_spins, self.delta_lambda)
        return op

    def derivative_at(self, lam: float) -> KLocalOperator:
        m = np.arange(1, self.model.series_order + 1)
        w = m * lam ** (m - 1.0)
        fields = self.model.field_series[:, 1:] @ w
        J = {s: float(c[1:] @ w) for s, c in self.model.coupling_series.items()}
        return ClassicalCostFunction(self.n_spins, fields, J).to_operator()


def evaluate_lbit(model: LBitModel, lam: float) -> KLocalOperator:
    """All-Z operator of the l-bit model at a given lambda."""
    return model.cost_at(lam).to_operator()


def ground_configurations(cost: ClassicalCostFunction, tol: float = 1e-9) -> list[SpinConfiguration]:
    e = cost.energies()
    idx = np.flatnonzero(e <= e.min() + tol)
    return [SpinConfiguration.from_index(int(b), cost.n_spins) for b in idx]
