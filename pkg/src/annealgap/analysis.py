"""Crossing detection, state labels, perturbative gap estimates, scaling fits
and EC3 ensemble statistics."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .models import AnnealingPath, ClassicalCostFunction, LBitModel, random_ec3, sample_lbit_model
from .spectral import (
    GapProfile,
    ResonanceError,
    degeneracy_tolerance,
    lowest_k,
    refine_min_gap,
)
from .spin_core import (
    DENSE_LIMIT,
    KLocalOperator,
    SpinConfiguration,
    as_configuration,
    bit_table,
    hamming,
    popcount,
)

MAX_FLIP_DISTANCE = 20
GEOMETRY_LIMIT = 26
DELOCALIZED = "delocalized label"


def derive_seed(master: int, *keys) -> int:
    """Stable 63-bit seed from a master seed and task keys (blake2b of their repr)."""
    text = ":".join(str(k) for k in (int(master),) + keys)
    digest = hashlib.blake2b(text.encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


# ---------------------------------------------------------------------------
# Labels and crossing reports
# ---------------------------------------------------------------------------


def label_state(psi: np.ndarray) -> tuple[SpinConfiguration, float]:
    """Dominant basis configuration of ``psi`` and its probability."""
    psi = np.asarray(psi)
    n = int(psi.size).bit_length() - 1
    if psi.size != 1 << n or n < 1:
        raise ValueError("state length must be a power of two (>= 2)")
    prob = np.abs(psi) ** 2
    b = int(np.argmax(prob))  # first maximum, i.e. smallest index on ties
    return SpinConfiguration.from_index(b, n), float(prob[b])


def classify_crossing(lam: float, n_spins: int, lam_star: float | None = None,
                      lam_cr: float | None = None) -> str:
    """Annotate a crossing position; the default thresholds are heuristics.

    lam_star defaults to N**(-1/8) and lam_cr to 1/ln N.  At small N the
    first exceeds the second, in which case "in-phase" is never produced.
    """
    lam_star = n_spins ** (-1 / 8) if lam_star is None else lam_star
    if lam_cr is None:
        lam_cr = 1.0 / math.log(n_spins) if n_spins > 1 else math.inf
    if lam >= lam_cr:
        return "transition-adjacent"
    if lam <= lam_star:
        return "perturbative-endpoint"
    return "in-phase"


@dataclass
class CrossingReport:
    param_star: float
    gap_star: float
    level_pair: tuple[int, int]
    config_lower: SpinConfiguration
    config_upper: SpinConfiguration
    hamming_d: int
    classification: str
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.gap_star < 0:
            raise ValueError("gap_star must be >= 0")
        if self.hamming_d != hamming(self.config_lower, self.config_upper):
            raise ValueError("hamming_d does not match the labels")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["level_pair"] = list(self.level_pair)
        d["config_lower"] = str(self.config_lower)
        d["config_upper"] = str(self.config_upper)
        return d


def _lambda_of(path: AnnealingPath | None, param: float) -> float:
    if path is None or path.parameterization == "lambda":
        return float(param)
    return path.to_lambda(param) if param > 0 else math.inf


def detect_crossings(
    profile: GapProfile,
    path: AnnealingPath,
    level_pairs: Sequence[tuple[int, int]] = ((0, 1),),
    gap_threshold: float = math.inf,
    *,
    tol_param: float = 1e-10,
    tol: float = 1e-9,
    lam_star: float | None = None,
    lam_cr: float | None = None,
) -> list[CrossingReport]:
    """Reports for every interior local minimum of a level-pair gap below threshold.

    Labels come from the eigenvectors one grid step either side of the
    minimum, where the two levels are still near-classical.
    """
    if profile.eigenvectors is None:
        raise ValueError("profile must be computed with keep_vectors=True")
    params = profile.params
    n_spins = path.n_spins
    reports = []
    for lower, upper in level_pairs:
        if not 0 <= lower < upper < profile.n_levels:
            raise ValueError(f"level pair {(lower, upper)} outside the {profile.n_levels} computed levels")
        g = profile.pair_gap(lower, upper)
        for p in range(1, len(params) - 1):
            if not (g[p] <= g[p - 1] and g[p] < g[p + 1]) or g[p] >= gap_threshold:
                continue
            flags = []
            x, gap = float(params[p]), float(g[p])
            if g[p] < g[p - 1]:
                try:
                    x, gap = refine_min_gap(path, (params[p - 1], params[p], params[p + 1]),
                                            max(profile.n_levels, upper + 1), tol_param,
                                            levels=(lower, upper), tol=tol)
                except ValueError:
                    flags.append("unrefined")
            else:
                flags.append("unrefined")
            if gap <= degeneracy_tolerance(path.at(x)):
                gap = 0.0
            left = profile.eigenvectors[p - 1]
            right = profile.eigenvectors[p + 1]
            # the lower level before the crossing continues as the upper level after it
            cfg_lo, w_lo = label_state(left[:, lower])
            cfg_hi, w_hi = label_state(left[:, upper])
            r_lo, wr_lo = label_state(right[:, lower])
            if w_lo < 0.5 and w_hi < 0.5 and wr_lo < 0.5:
                flags.append(DELOCALIZED)
            elif w_hi < 0.5 and wr_lo >= 0.5:
                cfg_hi = r_lo
            reports.append(CrossingReport(
                param_star=x,
                gap_star=gap,
                level_pair=(lower, upper),
                config_lower=cfg_lo,
                config_upper=cfg_hi,
                hamming_d=hamming(cfg_lo, cfg_hi),
                classification=classify_crossing(_lambda_of(path, x), n_spins, lam_star, lam_cr),
                flags=flags,
            ))
    reports.sort(key=lambda r: (r.param_star, r.level_pair))
    return reports


# ---------------------------------------------------------------------------
# Exact ground crossings of l-bit models
# ---------------------------------------------------------------------------


def lbit_ground_crossings(
    model: LBitModel,
    lam_max: float = 0.5,
    n_grid: int = 401,
    *,
    lam_star: float | None = None,
    lam_cr: float | None = None,
) -> list[CrossingReport]:
    """Level crossings of the classical ground state for lambda in (0, lam_max].

    Energies are polynomials in lambda, so every crossing is located by root
    finding on the difference of the two configuration energies.
    """
    P = model.energy_polynomials()
    n = model.n_spins
    powers = np.arange(P.shape[1])

    def energies(lam):
        return P @ (lam ** powers)

    def ground(lam):
        return int(np.argmin(energies(lam)))

    def diff(a, b):
        c = P[a] - P[b]
        return lambda lam: float(c @ (lam ** powers))

    crossings: list[tuple[float, int, int]] = []

    def resolve(lo, hi, a, b, depth=0):
        f = diff(a, b)
        f_lo, f_hi = f(lo), f(hi)
        if f_lo > 0 or f_hi < 0:
            # a is not below b at lo (or vice versa): split at the midpoint
            mid = 0.5 * (lo + hi)
            if depth > 60 or hi - lo < 1e-13:
                crossings.append((mid, a, b))
                return
            c = ground(mid)
            for l2, h2, x, y in ((lo, mid, a, c), (mid, hi, c, b)):
                if x != y:
                    resolve(l2, h2, x, y, depth + 1)
            return
        x = brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps) if f_lo < 0 < f_hi else (lo if f_lo == 0 else hi)
        e = energies(x)
        c = int(np.argmin(e))
        if c not in (a, b) and e[c] < e[a] - 1e-9:
            resolve(lo, x, a, c, depth + 1)
            resolve(x, hi, c, b, depth + 1)
            return
        crossings.append((x, a, b))

    grid = np.linspace(0.0, lam_max, n_grid)
    grid[0] = min(1e-9, lam_max / n_grid)  # break lambda = 0 ties toward 0+
    labels = [ground(x) for x in grid]
    for i in range(1, len(grid)):
        if labels[i] != labels[i - 1]:
            resolve(grid[i - 1], grid[i], labels[i - 1], labels[i])

    reports = []
    for x, a, b in sorted(crossings):
        ca, cb = SpinConfiguration.from_index(a, n), SpinConfiguration.from_index(b, n)
        e = energies(x)
        reports.append(CrossingReport(
            param_star=float(x),
            gap_star=float(abs(e[a] - e[b])),
            level_pair=(0, 1),
            config_lower=ca,
            config_upper=cb,
            hamming_d=hamming(ca, cb),
            classification=classify_crossing(x, n, lam_star, lam_cr),
        ))
    return reports


# ---------------------------------------------------------------------------
# Perturbative and exact avoided-crossing gaps
# ---------------------------------------------------------------------------


@dataclass
class PerturbativeGap:
    estimate: float
    hamming_d: int
    ordering: tuple[int, ...]
    exact: float | None = None
    detuning: float | None = None


def _flip_masks(a: int, diff_bits: Sequence[int]) -> np.ndarray:
    """Basis index of ``a`` with every subset of ``diff_bits`` flipped."""
    d = len(diff_bits)
    subsets = np.arange(1 << d, dtype=np.int64)
    flips = np.zeros(1 << d, dtype=np.int64)
    for k, bit in enumerate(diff_bits):
        flips |= ((subsets >> k) & 1) << bit
    return a ^ flips


def perturbative_gap(
    model_at_crossing: ClassicalCostFunction,
    config_a,
    config_b,
    delta_lambda: float,
    *,
    max_d: int = MAX_FLIP_DISTANCE,
    degeneracy_window: float = 1e-6,
    resonance_tol: float = 1e-12,
    exact: bool = True,
) -> PerturbativeGap:
    """delta_lambda**d times the best product of 1/|E_a - E_intermediate|.

    The maximum over flip orderings is a longest-path problem on the subset
    lattice of the d differing spins, solved in log space in O(2**d * d).
    For N <= 14 the exact avoided gap of the detuned model with a uniform
    transverse probe is returned alongside.
    """
    cost = model_at_crossing
    a, b = as_configuration(config_a), as_configuration(config_b)
    n = cost.n_spins
    if a.n_spins != n or b.n_spins != n:
        raise ValueError("configurations do not match the model size")
    if delta_lambda <= 0:
        raise ValueError("delta_lambda must be positive")
    diff_bits = [i for i in range(n) if a.bits[i] != b.bits[i]]
    d = len(diff_bits)
    if d == 0:
        raise ValueError("configurations must differ")
    if d > max_d:
        raise ValueError(f"Hamming distance {d} exceeds the limit {max_d}")
    idx = _flip_masks(a.index, diff_bits)
    e = cost.energies_of(idx)
    e_a, e_b = float(e[0]), float(e[-1])
    if abs(e_a - e_b) > degeneracy_window:
        raise ValueError(f"energies {e_a} and {e_b} differ by more than {degeneracy_window}")

    full = (1 << d) - 1
    denom = np.abs(e_a - e)
    inner = np.ones(1 << d, dtype=bool)
    inner[[0, full]] = False
    bad = np.flatnonzero(inner & (denom <= resonance_tol))
    if bad.size:
        cfg = SpinConfiguration.from_index(int(idx[bad[0]]), n)
        raise ResonanceError(f"intermediate configuration {cfg} is resonant with {a}")
    weight = np.zeros(1 << d)
    weight[inner] = -np.log(denom[inner])
    best = np.full(1 << d, -np.inf)
    best[0] = 0.0
    choice = np.zeros(1 << d, dtype=np.int64)
    for S in range(1, 1 << d):
        for k in range(d):
            if S >> k & 1:
                v = best[S ^ (1 << k)]
                if v > best[S]:
                    best[S], choice[S] = v, k
        best[S] += weight[S]
    order = []
    S = full
    while S:
        k = int(choice[S])
        order.append(diff_bits[k])
        S ^= 1 << k
    estimate = math.exp(d * math.log(delta_lambda) + best[full])
    result = PerturbativeGap(estimate, d, tuple(reversed(order)))
    if exact and n <= DENSE_LIMIT:
        result.exact, result.detuning = exact_avoided_gap(cost, a, b, delta_lambda)
    return result


def exact_avoided_gap(
    cost: ClassicalCostFunction,
    config_a,
    config_b,
    delta_lambda: float,
    *,
    n_grid: int = 11,
    tol: float = 1e-10,
    max_refine: int = 12,
) -> tuple[float, float]:
    """Minimum gap between the two levels that become a and b under detuning.

    H(eps) = cost - eps * sum_{i in diff} a_i sigma^z_i + delta_lambda * sum_i sigma^x_i;
    the detuning lowers a and raises b, so the two classical levels cross at
    eps0 = (E_a - E_b) / (2 d).  The gap is minimized over eps near eps0.
    Returns (gap, eps at the minimum).
    """
    a, b = as_configuration(config_a), as_configuration(config_b)
    n = cost.n_spins
    diff_bits = [i for i in range(n) if a.bits[i] != b.bits[i]]
    d = len(diff_bits)
    e_all = cost.energies()
    e_a, e_b = e_all[a.index], e_all[b.index]
    eps0 = (e_a - e_b) / (2 * d)
    # classical level index of the pair at the detuned crossing
    shift = np.zeros(1 << n)
    bits_a = np.array(a.spins, dtype=float)
    table = bit_table(n)
    for i in diff_bits:
        shift -= bits_a[i] * (2.0 * table[i] - 1.0)
    e_cross = e_all + eps0 * shift
    level = int(np.sum(e_cross < e_cross[a.index] - 1e-9))
    k = min(level + 3, 1 << n)

    base = cost.to_operator() + KLocalOperator.transverse_field(n, delta_lambda)
    detune = KLocalOperator.from_list(n, [((i,), "Z", -bits_a[i]) for i in diff_bits])
    path = AnnealingPath(base, detune, "lambda")
    state = {"v0": None}

    def gap(eps):
        sl = lowest_k(path.at(eps), k, tol=tol, v0=state["v0"], param=eps)
        state["v0"] = sl.eigenvectors
        # the two levels carrying most of the weight on a and b
        w = sl.eigenvectors[a.index] ** 2 + sl.eigenvectors[b.index] ** 2
        i, j = sorted(np.argsort(-w, kind="stable")[:2])
        return float(sl.energies[j] - sl.energies[i])

    width = max(delta_lambda**2 * n, 1e-6)
    for _ in range(8):
        xs = eps0 + np.linspace(-width, width, n_grid)
        gs = np.array([gap(x) for x in xs])
        i = int(np.argmin(gs))
        if 0 < i < n_grid - 1:
            break
        eps0 = xs[i]
        width *= 4
    else:
        raise RuntimeError("avoided gap minimum not bracketed")
    # near the minimum gap**2 is quadratic in eps (exact for two levels):
    # refine with parabola fits on a window of the natural width gap / (2d)
    best_x, best_g = float(xs[i]), float(gs[i])
    c, h = best_x, float(xs[1] - xs[0])
    gc = best_g
    for _ in range(max_refine):
        gl, gr = gap(c - h), gap(c + h)
        for x, g in ((c - h, gl), (c + h, gr)):
            if g < best_g:
                best_x, best_g = x, g
        curv = gl**2 + gr**2 - 2 * gc**2
        if curv <= 0:
            break
        step = 0.5 * h * (gl**2 - gr**2) / curv
        step = max(-h, min(h, step))
        vertex = gc**2 - curv * (step / h) ** 2 / 2
        c = c + step
        gc = gap(c)
        if gc < best_g:
            best_x, best_g = c, gc
        width_nat = math.sqrt(max(vertex, 0.0)) / (2 * d)
        if abs(gc**2 - max(vertex, 0.0)) <= 1e-8 * gc**2 and abs(step) <= h:
            break
        h = max(min(h, 2 * width_nat), 1e-15)
    return best_g, best_x


# ---------------------------------------------------------------------------
# Gap scaling
# ---------------------------------------------------------------------------


@dataclass
class ModelFit:
    name: str
    prefactor: float
    rate: float
    rss: float
    r2: float
    aicc: float


@dataclass
class ScalingFit:
    sizes: list[int]
    gaps: list[float]
    polynomial: ModelFit
    exponential: ModelFit
    preferred: str | None

    def to_dict(self) -> dict:
        return asdict(self)


def _aicc(rss: float, n: int, k: int = 2) -> float:
    rss = max(rss, n * 1e-30)
    return n * math.log(rss / n) + 2 * k + 2 * k * (k + 1) / (n - k - 1)


def _linfit(x: np.ndarray, y: np.ndarray):
    A = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    rss = float(resid @ resid)
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return coef, rss, r2


def fit_gap_scaling(sizes: Sequence[float], gaps: Sequence[float]) -> ScalingFit:
    """Fit log gap against log N (Delta = A N^-b) and against N (Delta = A e^-cN).

    Scores are small-sample corrected AIC on the log residuals; the preferred
    model has the strictly lower score (None on a tie).
    """
    N = np.asarray(sizes, dtype=float)
    g = np.asarray(gaps, dtype=float)
    if N.shape != g.shape or N.ndim != 1:
        raise ValueError("sizes and gaps must be equal-length sequences")
    if len(N) < 4:
        raise ValueError("need at least 4 sizes")
    if np.any(~np.isfinite(g)) or np.any(g <= 0):
        raise ValueError("gaps must be finite and positive")
    if np.any(N <= 0):
        raise ValueError("sizes must be positive")
    y = np.log(g)
    n = len(N)
    (c0, c1), rss, r2 = _linfit(np.log(N), y)
    poly = ModelFit("polynomial", math.exp(c0), -c1, rss, r2, _aicc(rss, n))
    (c0, c1), rss, r2 = _linfit(N, y)
    expo = ModelFit("exponential", math.exp(c0), -c1, rss, r2, _aicc(rss, n))
    if poly.aicc < expo.aicc:
        preferred = "polynomial"
    elif expo.aicc < poly.aicc:
        preferred = "exponential"
    else:
        preferred = None
    return ScalingFit([int(v) if float(v).is_integer() else float(v) for v in N], [float(v) for v in g],
                      poly, expo, preferred)


# ---------------------------------------------------------------------------
# Ground-state geometry and EC3 statistics
# ---------------------------------------------------------------------------


@dataclass
class GroundStateGeometry:
    instance_id: str | int | None
    n_spins: int
    ground_indices: np.ndarray
    energy: float
    max_distance: int
    n_clusters: int
    pairwise: np.ndarray | None = None

    @property
    def configurations(self) -> list[SpinConfiguration]:
        return [SpinConfiguration.from_index(int(b), self.n_spins) for b in self.ground_indices]

    @property
    def size(self) -> int:
        return len(self.ground_indices)


def _max_pairwise_distance(idx: np.ndarray, chunk: int = 2048) -> int:
    best = 0
    u = idx.astype(np.uint64)
    for start in range(0, len(u), chunk):
        block = u[start:start + chunk]
        best = max(best, int(popcount(block[:, None] ^ u[None, :]).max()))
    return best


def _single_flip_clusters(idx: np.ndarray, n: int) -> int:
    if len(idx) <= 1:
        return len(idx)
    rows, cols = [], []
    order = np.arange(len(idx))
    for i in range(n):
        nb = idx ^ (1 << i)
        pos = np.searchsorted(idx, nb)
        pos = np.minimum(pos, len(idx) - 1)
        hit = idx[pos] == nb
        rows.append(order[hit])
        cols.append(pos[hit])
    r, c = np.concatenate(rows), np.concatenate(cols)
    graph = coo_matrix((np.ones(len(r)), (r, c)), shape=(len(idx), len(idx)))
    count, _ = connected_components(graph, directed=False)
    return int(count)


def geometry_from_energies(energies: np.ndarray, n_spins: int, *, tol: float = 1e-9,
                           instance_id=None, pairwise_limit: int = 2000) -> GroundStateGeometry:
    e = np.asarray(energies)
    e0 = e.min()
    idx = np.flatnonzero(e <= e0 + tol).astype(np.int64)
    pairwise = None
    if len(idx) <= pairwise_limit:
        iu = np.triu_indices(len(idx), 1)
        pairwise = popcount(idx[iu[0]] ^ idx[iu[1]])
    return GroundStateGeometry(
        instance_id=instance_id,
        n_spins=n_spins,
        ground_indices=idx,
        energy=float(e0),
        max_distance=_max_pairwise_distance(idx),
        n_clusters=_single_flip_clusters(idx, n_spins),
        pairwise=pairwise,
    )


def ground_state_geometry(cost: ClassicalCostFunction, *, instance_id=None, tol: float = 1e-9,
                          max_spins: int = GEOMETRY_LIMIT) -> GroundStateGeometry:
    """Exhaustive ground manifold, its Hamming diameter and single-flip clusters."""
    if cost.n_spins > max_spins:
        raise ValueError(f"N={cost.n_spins} exceeds the enumeration budget of {max_spins} spins; "
                         "use a smaller instance")
    return geometry_from_energies(cost.energies(), cost.n_spins, tol=tol, instance_id=instance_id)


@dataclass
class ThresholdRow:
    alpha: float
    p_sat: float
    stderr: float
    mean_max_distance_over_n: float
    n_instances: int


def _ec3_task(args):
    n_vars, alpha, seed = args
    inst = random_ec3(n_vars, alpha, seed)
    e = inst.energies()
    geo = geometry_from_energies(e, n_vars, tol=0.5, pairwise_limit=0)
    return bool(geo.energy == 0), geo.max_distance / n_vars


def ec3_sat_threshold(
    n_vars: int,
    alphas: Sequence[float],
    n_instances: int,
    seed: int,
    *,
    map_fn=map,
) -> list[ThresholdRow]:
    """Satisfiable fraction per clause density with binomial standard errors.

    Instance ``i`` at density index ``j`` uses ``derive_seed(seed, j, i)``.
    ``mean_max_distance_over_n`` averages the ground-manifold diameter of
    E_C over all instances (satisfiable or not).
    """
    if n_vars > GEOMETRY_LIMIT:
        raise ValueError(f"n_vars={n_vars} exceeds the enumeration budget of {GEOMETRY_LIMIT}")
    if n_instances < 1:
        raise ValueError("n_instances must be >= 1")
    rows = []
    for j, alpha in enumerate(alphas):
        tasks = [(n_vars, float(alpha), derive_seed(seed, j, i)) for i in range(n_instances)]
        out = list(map_fn(_ec3_task, tasks))
        sat = np.array([o[0] for o in out], dtype=float)
        dist = np.array([o[1] for o in out])
        p = float(sat.mean())
        rows.append(ThresholdRow(float(alpha), p, math.sqrt(p * (1 - p) / n_instances),
                                 float(dist.mean()), n_instances))
    return rows


def ec3_geometry_survey(n_vars: int, alpha: float, n_instances: int, seed: int, *, map_fn=map) -> np.ndarray:
    """max_distance / N for the ground manifold of E_C on each random instance."""
    tasks = [(n_vars, float(alpha), derive_seed(seed, 0, i)) for i in range(n_instances)]
    return np.array([o[1] for o in map_fn(_ec3_task, tasks)])


@dataclass
class LBitCrossingRecord:
    seed: int
    report: CrossingReport
    estimate: float | None
    exact: float | None


def lbit_crossing_survey(
    n_spins: int,
    seeds: Sequence[int],
    *,
    lam_max: float = 0.5,
    delta_lambda: float | None = 0.02,
    map_fn=map,
    **sample_opts,
) -> list[LBitCrossingRecord]:
    """Ground crossings of sampled l-bit models, with probe gaps when delta_lambda is set."""
    tasks = [(n_spins, int(s), lam_max, delta_lambda, sample_opts) for s in seeds]
    return [rec for recs in map_fn(_lbit_task, tasks) for rec in recs]


def _lbit_task(args):
    n, seed, lam_max, dl, opts = args
    model = sample_lbit_model(n, seed, **opts)
    out = []
    for rep in lbit_ground_crossings(model, lam_max):
        est = ex = None
        if dl:
            pg = perturbative_gap(model.cost_at(rep.param_star), rep.config_lower, rep.config_upper, dl)
            est, ex = pg.estimate, pg.exact
        out.append(LBitCrossingRecord(seed, rep, est, ex))
    return out
