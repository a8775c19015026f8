"""Low-lying spectra along annealing paths, gap profiles and perturbation series."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .models import AnnealingPath, ClassicalCostFunction
from .spin_core import KLocalOperator, SpinConfiguration, as_configuration

DEGENERACY_RTOL = 1e-10
GOLDEN = 0.5 * (math.sqrt(5.0) - 1.0)


class ConvergenceError(RuntimeError):
    """The eigensolver hit its iteration limit; carries the best residuals."""

    def __init__(self, message: str, residuals=None, energies=None, param=None):
        super().__init__(message)
        self.residuals = None if residuals is None else np.asarray(residuals)
        self.energies = None if energies is None else np.asarray(energies)
        self.param = param


class ResonanceError(ValueError):
    """A perturbative denominator vanished."""


class DegeneracyWarning(UserWarning):
    pass


def degeneracy_tolerance(op: KLocalOperator) -> float:
    """Levels closer than this are treated as exactly degenerate."""
    return DEGENERACY_RTOL * max(2.0 * op.norm_bound(), 1.0)


# ---------------------------------------------------------------------------
# Eigensolver
# ---------------------------------------------------------------------------


@dataclass
class SpectrumSlice:
    param: float | None
    energies: np.ndarray
    eigenvectors: np.ndarray | None
    residual_norms: np.ndarray

    @property
    def gap(self) -> float:
        return float(self.energies[1] - self.energies[0])


def _orthonormalize(V: np.ndarray, X: np.ndarray, drop: float = 1e-10) -> np.ndarray:
    """Columns of X orthonormalized against V and each other (two CGS passes)."""
    cols: list[np.ndarray] = []
    for x in X.T:
        x = np.array(x, dtype=float)
        n0 = np.linalg.norm(x)
        if n0 == 0.0:
            continue
        for _ in range(2):
            if V.shape[1]:
                x -= V @ (V.T @ x)
            if cols:
                C = np.column_stack(cols)
                x -= C @ (C.T @ x)
        nrm = np.linalg.norm(x)
        if nrm > drop * n0:
            cols.append(x / nrm)
    if not cols:
        return np.empty((X.shape[0], 0))
    return np.column_stack(cols)


def _diagonal_spectrum(op: KLocalOperator, k: int, param, return_vectors: bool) -> SpectrumSlice:
    diag = op.diagonal
    order = np.argsort(diag, kind="stable")[:k]
    vecs = None
    if return_vectors:
        vecs = np.zeros((op.dim, k))
        vecs[order, np.arange(k)] = 1.0
    return SpectrumSlice(param, np.array(diag[order]), vecs, np.zeros(k))


def lowest_k(
    hamiltonian: KLocalOperator,
    k: int,
    *,
    tol: float = 1e-9,
    max_iter: int = 2000,
    seed: int = 0,
    buffer: int = 2,
    max_basis: int | None = None,
    v0: np.ndarray | None = None,
    return_vectors: bool = True,
    param: float | None = None,
) -> SpectrumSlice:
    """Lowest ``k`` eigenpairs of a real symmetric k-local operator.

    Block Krylov iteration (block size ``k + buffer``) with Rayleigh-Ritz on
    the full, explicitly reorthogonalized basis and thick restarts.  The next
    block is the set of unconverged Ritz residuals, so the basis spans the
    same space as block Lanczos.  All-Z operators are solved by sorting.
    """
    op = hamiltonian
    dim = op.dim
    if not 1 <= k <= dim:
        raise ValueError(f"k must lie in [1, {dim}]")
    if op.is_diagonal:
        return _diagonal_spectrum(op, k, param, return_vectors)

    b = min(k + buffer, dim)
    m_max = min(dim, max_basis or max(6 * b, 40))
    rng = np.random.default_rng(seed)
    start = rng.standard_normal((dim, b))
    if v0 is not None:
        v0 = np.real(np.asarray(v0, dtype=complex)).reshape(dim, -1)
        start[:, : min(b, v0.shape[1])] = v0[:, :b]
    V = _orthonormalize(np.empty((dim, 0)), start)
    W = op.apply(V)
    res = np.full(b, np.inf)
    theta = np.full(b, np.nan)
    for _ in range(max_iter):
        T = V.T @ W
        theta, Y = np.linalg.eigh(0.5 * (T + T.T))
        nb = min(b, len(theta))
        X = V @ Y[:, :nb]
        R = W @ Y[:, :nb] - X * theta[:nb]
        res = np.linalg.norm(R, axis=0)
        if np.all(res[:k] <= tol) or V.shape[1] == dim:
            vecs = X[:, :k] if return_vectors else None
            return SpectrumSlice(param, theta[:k].copy(), vecs, res[:k].copy())
        new = R[:, res > tol]
        if V.shape[1] + new.shape[1] > m_max:
            keep = max(nb, m_max // 2)
            V = V @ Y[:, :keep]
            W = W @ Y[:, :keep]
        Q = _orthonormalize(V, new)
        if Q.shape[1] == 0:
            Q = _orthonormalize(V, rng.standard_normal((dim, 1)))
        V = np.hstack([V, Q])
        W = np.hstack([W, op.apply(Q)])
    raise ConvergenceError(
        f"lowest_k did not converge in {max_iter} iterations (residuals {res[:k]})",
        residuals=res[:k], energies=theta[:k], param=param,
    )


def dense_lowest(hamiltonian: KLocalOperator, k: int) -> np.ndarray:
    """Dense full diagonalization oracle (N <= 14)."""
    return np.linalg.eigvalsh(hamiltonian.to_dense())[:k]


# ---------------------------------------------------------------------------
# Gap profiles
# ---------------------------------------------------------------------------


@dataclass
class GapProfile:
    params: np.ndarray
    energies: np.ndarray
    gaps: np.ndarray
    v10: np.ndarray | None = None
    residuals: np.ndarray | None = None
    eigenvectors: list | None = None
    tracking: np.ndarray | None = None
    degenerate: np.ndarray | None = None
    min_gap: tuple[float, float] = (math.nan, math.nan)
    refined: bool = False
    notes: list = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        return self.energies.shape[1]

    def pair_gap(self, lower: int, upper: int) -> np.ndarray:
        return self.energies[:, upper] - self.energies[:, lower]


def _match_levels(prev: np.ndarray, cur: np.ndarray) -> np.ndarray:
    """perm[j] = index of the current level best overlapping previous level j.

    Greedy on |overlap|, ties broken by energy order.
    """
    k = prev.shape[1]
    ov = np.abs(prev.T @ cur)
    pairs = sorted(((-round(ov[i, j], 12), i, j) for i in range(k) for j in range(k)))
    perm = -np.ones(k, dtype=int)
    used = set()
    for _, i, j in pairs:
        if perm[i] < 0 and j not in used:
            perm[i] = j
            used.add(j)
    return perm


def matrix_element_v10(path: AnnealingPath, param: float, eigvecs: np.ndarray, gap: float | None = None) -> float:
    """|<1| dH/dparam |0>| for the two lowest eigenvectors (columns 0 and 1)."""
    v0, v1 = eigvecs[:, 0], eigvecs[:, 1]
    value = float(abs(np.vdot(v1, path.derivative_at(param).apply(v0))))
    if gap is not None and gap <= degeneracy_tolerance(path.at(param)):
        warnings.warn(f"ground state degenerate at param={param}; V10 is basis dependent", DegeneracyWarning, stacklevel=2)
    return value


def gap_sweep(
    path: AnnealingPath,
    grid: Sequence[float],
    k: int = 2,
    *,
    keep_vectors: bool = False,
    with_v10: bool = True,
    tol: float = 1e-9,
    max_iter: int = 2000,
    seed: int = 0,
) -> GapProfile:
    """Lowest ``k`` levels at every grid point, E1 - E0 gaps and V10.

    Each point is solved independently from the same seeded start block.
    """
    grid = np.asarray(grid, dtype=float)
    if k < 2:
        raise ValueError("a gap needs k >= 2")
    if len(grid) > 1 and np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if path.parameterization == "s" and (grid.min() < 0 or grid.max() > 1):
        raise ValueError("s must lie in [0, 1]")
    n = len(grid)
    energies = np.empty((n, k))
    residuals = np.empty((n, k))
    v10 = np.empty(n) if with_v10 else None
    degenerate = np.zeros(n, dtype=bool)
    tracking = np.empty((n, k), dtype=int)
    vectors = []
    prev = None
    for p, x in enumerate(grid):
        op = path.at(x)
        try:
            sl = lowest_k(op, k, tol=tol, max_iter=max_iter, seed=seed, param=x)
        except ConvergenceError as exc:
            raise ConvergenceError(f"at param={x}: {exc}", exc.residuals, exc.energies, x) from exc
        energies[p] = sl.energies
        residuals[p] = sl.residual_norms
        gap = sl.energies[1] - sl.energies[0]
        degenerate[p] = gap <= degeneracy_tolerance(op)
        if with_v10:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegeneracyWarning)
                v10[p] = matrix_element_v10(path, x, sl.eigenvectors)
        if prev is None:
            tracking[p] = np.arange(k)
        else:
            perm = _match_levels(prev, sl.eigenvectors)
            tracking[p] = perm[tracking[p - 1]]
        prev = sl.eigenvectors
        if keep_vectors:
            vectors.append(sl.eigenvectors)
    gaps = np.maximum(energies[:, 1] - energies[:, 0], 0.0)
    profile = GapProfile(grid, energies, gaps, v10, residuals, vectors if keep_vectors else None,
                         tracking, degenerate)
    if n:
        i = int(np.argmin(gaps))
        profile.min_gap = (float(grid[i]), float(gaps[i]))
    if degenerate.any():
        profile.notes.append(f"{int(degenerate.sum())} grid points with degenerate ground state")
    return profile


def _golden_section(f, a: float, b: float, c: float, fb: float, tol: float):
    """Minimize f on [a, c] given a < b < c with f(b) below both ends."""
    x0, x3 = a, c
    if abs(c - b) > abs(b - a):
        x1, x2 = b, b + (1 - GOLDEN) * (c - b)
        f1, f2 = fb, f(b + (1 - GOLDEN) * (c - b))
    else:
        x1, x2 = b - (1 - GOLDEN) * (b - a), b
        f1, f2 = f(b - (1 - GOLDEN) * (b - a)), fb
    while abs(x3 - x0) > tol:
        if f2 < f1:
            x0, x1, x2 = x1, x2, GOLDEN * x2 + (1 - GOLDEN) * x3
            f1, f2 = f2, f(x2)
        else:
            x3, x2, x1 = x2, x1, GOLDEN * x1 + (1 - GOLDEN) * x0
            f2, f1 = f1, f(x1)
    return (x1, f1) if f1 < f2 else (x2, f2)


def _diagonal_crossing(path: AnnealingPath, p: float, levels: tuple[int, int], lo: float, hi: float):
    """Exact crossing of two configurations on an all-Z affine path."""
    dp, dd = path.problem.diagonal, path.driver.diagonal
    a, b = path.weights(p)
    order = np.argsort(a * dp + b * dd, kind="stable")
    i, j = order[levels[0]], order[levels[1]]
    # E_i - E_j is affine in the parameter
    d0, d1 = (float(np.dot(path.weights(x), (dp[i] - dp[j], dd[i] - dd[j]))) for x in (lo, hi))
    if d0 == d1 or d0 * d1 > 0:
        return None
    return lo + (hi - lo) * d0 / (d0 - d1)


def refine_min_gap(
    path: AnnealingPath,
    bracket: Sequence[float],
    k: int = 2,
    tol_param: float = 1e-10,
    *,
    levels: tuple[int, int] = (0, 1),
    tol: float = 1e-9,
    seed: int = 0,
) -> tuple[float, float]:
    """Golden-section refinement of a local gap minimum inside ``bracket``.

    ``bracket`` is (lo, hi) or (lo, mid, hi); the gap at mid must be below the
    gap at both ends.
    """
    if len(bracket) == 2:
        lo, hi = float(bracket[0]), float(bracket[1])
        mid = 0.5 * (lo + hi)
    elif len(bracket) == 3:
        lo, mid, hi = (float(v) for v in bracket)
    else:
        raise ValueError("bracket must have 2 or 3 entries")
    if not lo < mid < hi:
        raise ValueError("bracket must be ordered lo < mid < hi")
    k = max(k, levels[1] + 1)
    lower, upper = levels

    def gap(x: float) -> float:
        e = lowest_k(path.at(x), k, tol=tol, seed=seed, return_vectors=False, param=x).energies
        return float(e[upper] - e[lower])

    g_lo, g_mid, g_hi = gap(lo), gap(mid), gap(hi)
    if not (g_mid < g_lo and g_mid < g_hi):
        raise ValueError(f"bracket {lo, mid, hi} does not enclose a gap minimum "
                         f"(gaps {g_lo:.3g}, {g_mid:.3g}, {g_hi:.3g})")
    x, g = _golden_section(gap, lo, mid, hi, g_mid, tol_param)
    if isinstance(path, AnnealingPath) and path.problem.is_diagonal and path.driver.is_diagonal:
        root = _diagonal_crossing(path, x, levels, lo, hi)
        if root is not None:
            g_root = gap(root)
            if g_root < g:
                x, g = root, g_root
    if g_mid < g:
        x, g = mid, g_mid
    return float(x), float(max(g, 0.0))


def adiabatic_time_bound(profile: GapProfile) -> float:
    """max over the grid of |V10| / gap**2 (hbar = 1)."""
    if profile.v10 is None:
        raise ValueError("profile was computed without V10")
    if profile.degenerate is not None and profile.degenerate.any():
        return math.inf
    if np.any(profile.gaps <= 0.0):
        return math.inf
    return float(np.max(np.abs(profile.v10) / profile.gaps**2))


# ---------------------------------------------------------------------------
# Rayleigh-Schroedinger series in the transverse field
# ---------------------------------------------------------------------------


@dataclass
class PerturbationSeries:
    """E(lam) = E0 + sum_m lam**(2m) F_m about one classical configuration."""

    config: SpinConfiguration
    order: int
    coefficients: np.ndarray  # [E0, F1, ..., F_order]

    @property
    def classical_energy(self) -> float:
        return float(self.coefficients[0])

    def energy(self, lam: float, order: int | None = None) -> float:
        m = self.order if order is None else order
        c = self.coefficients[: m + 1]
        return float(sum(cm * lam ** (2 * i) for i, cm in enumerate(c)))


def _neighbourhood(base: int, n: int, radius: int) -> list[int]:
    out = []
    for r in range(radius + 1):
        for combo in itertools.combinations(range(n), r):
            out.append(base ^ sum(1 << i for i in combo))
    return out


def rs_perturbation(
    cost: ClassicalCostFunction,
    config,
    order: int,
    resonance_tol: float = 1e-9,
) -> PerturbationSeries:
    """Rayleigh-Schroedinger energy series of H = cost + lam * sum_i sigma^x_i.

    Works on the configurations within Hamming distance ``order`` of
    ``config``, which is exact for all coefficients up to lam**(2*order).
    """
    config = as_configuration(config)
    if config.n_spins != cost.n_spins:
        raise ValueError("configuration and cost function sizes differ")
    if order < 0:
        raise ValueError("order must be >= 0")
    n = cost.n_spins
    local = _neighbourhood(config.index, n, min(order, n))
    pos = {c: i for i, c in enumerate(local)}
    energies = cost.energies_of(local)
    e0 = float(energies[0])
    denom = e0 - energies
    denom[0] = np.inf
    close = np.flatnonzero(np.abs(denom) < resonance_tol)
    if close.size:
        other = SpinConfiguration.from_index(local[int(close[0])], n)
        raise ResonanceError(f"resonant denominator between {config} and {other} (E = {e0})")
    resolvent = 1.0 / denom
    rows, cols = [], []
    for a, c in enumerate(local):
        for i in range(n):
            d = c ^ (1 << i)
            if d in pos:
                rows.append(pos[d])
                cols.append(a)
    m = len(local)
    V = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    psi = [np.zeros(m)]
    psi[0][0] = 1.0
    E = [e0, 0.0]
    for kk in range(1, 2 * order):
        rhs = V @ psi[kk - 1]
        for j in range(1, kk + 1):
            rhs = rhs - E[j] * psi[kk - j]
        psi.append(resolvent * rhs)
        E.append(float((V @ psi[kk])[0]))
    coeffs = np.array([E[2 * mm] for mm in range(order + 1)])
    return PerturbationSeries(config, order, coeffs)


def crossing_location_estimate(
    series_a: PerturbationSeries,
    series_b: PerturbationSeries,
    lam_max: float | None = None,
) -> float | None:
    """Smallest positive lam where the truncated series of a and b meet."""
    if series_a.order != series_b.order:
        raise ValueError("series must have equal order")
    diff = np.asarray(series_a.coefficients) - np.asarray(series_b.coefficients)
    if series_a.config == series_b.config or np.all(diff == 0.0):
        raise ValueError("identical series define no crossing")
    nz = np.flatnonzero(diff)
    diff = diff[: nz[-1] + 1]
    if len(diff) == 1:
        return None
    # polynomial in u = lam**2, numpy wants the highest power first
    roots = np.roots(diff[::-1])
    scale = max(1.0, float(np.max(np.abs(roots)))) if roots.size else 1.0
    u = sorted(r.real for r in roots if abs(r.imag) <= 1e-12 * scale and r.real > 0)
    lams = [math.sqrt(x) for x in u if lam_max is None or math.sqrt(x) <= lam_max]
    return lams[0] if lams else None
