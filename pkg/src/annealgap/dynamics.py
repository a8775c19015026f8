"""Time-dependent Schroedinger evolution along an annealing path."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .models import AnnealingPath
from .spectral import degeneracy_tolerance, lowest_k
from .spin_core import KLocalOperator, popcount

# Fourth-order commutator-free Magnus scheme: two exponentials per step built
# from H at the Gauss-Legendre nodes.
_SQ3 = math.sqrt(3.0)
_NODES = (0.5 - _SQ3 / 6.0, 0.5 + _SQ3 / 6.0)
_A1, _A2 = (3.0 - 2.0 * _SQ3) / 12.0, (3.0 + 2.0 * _SQ3) / 12.0


class EvolutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnnealSchedule:
    """s(t) = f(t/T), piecewise linear through ``knots`` of (t/T, s)."""

    total_time: float
    knots: tuple[tuple[float, float], ...] = ((0.0, 0.0), (1.0, 1.0))

    def __post_init__(self):
        if self.total_time < 0:
            raise ValueError("total time must be >= 0")
        u = [k[0] for k in self.knots]
        s = [k[1] for k in self.knots]
        if len(self.knots) < 2 or u[0] != 0.0 or u[-1] != 1.0 or np.any(np.diff(u) <= 0):
            raise ValueError("knots must start at t/T=0, end at t/T=1 and increase")
        if s[0] != 0.0 or s[-1] != 1.0 or np.any(np.diff(s) < 0):
            raise ValueError("s must run nondecreasing from 0 to 1")

    @classmethod
    def linear(cls, total_time: float) -> AnnealSchedule:
        return cls(float(total_time))

    @classmethod
    def parse_shape(cls, total_time: float, shape: str | None) -> AnnealSchedule:
        """``None``/``"linear"`` or ``"u0:s0,u1:s1,..."``."""
        if shape in (None, "", "linear"):
            return cls.linear(total_time)
        knots = tuple(tuple(float(v) for v in item.split(":")) for item in shape.split(","))
        return cls(float(total_time), knots)

    def s(self, t: float) -> float:
        if self.total_time == 0.0:
            return 1.0
        u = min(max(t / self.total_time, 0.0), 1.0)
        xs, ys = zip(*self.knots)
        return float(np.interp(u, xs, ys))


@dataclass
class EvolutionResult:
    T: float
    final_state: np.ndarray
    success_probability: float
    residual_energy: float
    norm_drift: float
    n_steps: int = 0
    max_step_error: float = 0.0


def _krylov_expm(apply, psi: np.ndarray, tau: float, m_max: int = 40, tol: float = 1e-12):
    """exp(-1j * tau * H) @ psi with a Lanczos basis; returns (vector, error estimate)."""
    beta0 = np.linalg.norm(psi)
    if beta0 == 0.0:
        return psi.copy(), 0.0
    V = [psi / beta0]
    alphas: list[float] = []
    betas: list[float] = []
    err = math.inf
    for j in range(m_max):
        w = apply(V[j])
        a = float(np.vdot(V[j], w).real)
        alphas.append(a)
        w = w - a * V[j]
        if j:
            w = w - betas[-1] * V[j - 1]
        basis = np.array(V)
        w = w - basis.T @ (basis.conj() @ w)
        b = float(np.linalg.norm(w))
        T = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
        evals, U = np.linalg.eigh(T)
        y = U @ (np.exp(-1j * tau * evals) * U[0].conj())
        err = beta0 * b * abs(y[-1])
        if err <= tol or b < 1e-13 * max(1.0, abs(a)):
            return beta0 * (basis.T @ y), err
        if j == m_max - 1:
            return beta0 * (basis.T @ y), err
        betas.append(b)
        V.append(w / b)
    return beta0 * (np.array(V).T @ y), err


def _initial_state(path: AnnealingPath) -> np.ndarray:
    n = path.n_spins
    if path.has_standard_driver:
        # ground state of sum_i sigma^x_i: every spin in |-> = (|0> - |1>)/sqrt(2)
        signs = 1.0 - 2.0 * (popcount(np.arange(1 << n)) % 2)
        return signs.astype(complex) / math.sqrt(1 << n)
    sl = lowest_k(path.driver, min(2, path.driver.dim))
    if sl.energies.size > 1 and sl.gap <= degeneracy_tolerance(path.driver):
        raise ValueError("driver ground state is degenerate; initial state undefined")
    return sl.eigenvectors[:, 0].astype(complex)


def ground_projector(problem: KLocalOperator):
    """(E0, function returning the ground-manifold weight of a state)."""
    if problem.is_diagonal:
        diag = problem.diagonal
        e0 = float(diag.min())
        idx = np.flatnonzero(diag <= e0 + 1e-9 * max(1.0, abs(e0)))
        return e0, lambda psi: float(np.sum(np.abs(psi[idx]) ** 2))
    k = min(problem.dim, 4)
    sl = lowest_k(problem, k)
    tol = degeneracy_tolerance(problem)
    vecs = sl.eigenvectors[:, sl.energies <= sl.energies[0] + tol]
    return float(sl.energies[0]), lambda psi: float(np.sum(np.abs(vecs.T @ psi) ** 2))


def evolve(
    path: AnnealingPath,
    schedule: AnnealSchedule,
    *,
    dt_max: float = 0.25,
    tol: float = 1e-10,
    krylov_dim: int = 40,
    min_dt: float = 1e-12,
) -> EvolutionResult:
    """Integrate i d/dt psi = H(s(t)) psi from the driver ground state.

    Steps of at most ``dt_max``; a step whose Krylov error estimate exceeds
    ``tol`` is split in half until it passes.
    """
    if path.parameterization != "s":
        raise ValueError("evolution needs an s-parameterized path")
    P, D = path.problem, path.driver
    psi = _initial_state(path)
    T = float(schedule.total_time)
    n_steps = 0
    worst = 0.0

    def propagate(psi, t0, dt):
        nonlocal n_steps, worst
        s1 = schedule.s(t0 + _NODES[0] * dt)
        s2 = schedule.s(t0 + _NODES[1] * dt)
        w1, w2 = path.weights(s1), path.weights(s2)
        out = psi
        for c1, c2 in ((_A2, _A1), (_A1, _A2)):
            a = c1 * w1[0] + c2 * w2[0]
            b = c1 * w1[1] + c2 * w2[1]
            out, err = _krylov_expm(lambda v: a * P.apply(v) + b * D.apply(v), out, dt, krylov_dim, tol)
            if err > tol:
                if dt / 2 < min_dt:
                    raise EvolutionError(f"step size underflow at t={t0:.6g} (dt={dt:.3g}, error {err:.3g})")
                half = propagate(psi, t0, dt / 2)
                return propagate(half, t0 + dt / 2, dt / 2)
            worst = max(worst, err)
        n_steps += 1
        return out

    if T > 0:
        n = max(1, math.ceil(T / dt_max))
        dt = T / n
        for i in range(n):
            psi = propagate(psi, i * dt, dt)

    norm = float(np.linalg.norm(psi))
    e0, weight = ground_projector(P)
    energy = float(np.vdot(psi, P.apply(psi)).real) / norm**2
    return EvolutionResult(
        T=T,
        final_state=psi,
        success_probability=min(max(weight(psi) / norm**2, 0.0), 1.0),
        residual_energy=energy - e0,
        norm_drift=abs(norm - 1.0),
        n_steps=n_steps,
        max_step_error=worst,
    )


def landau_zener_probability(slope_a: float, coupling_b: float, T: float) -> float:
    """Diabatic transition probability exp(-2 pi b^2 T / a).

    Valid for H(t) = (a/2)(t/T - 1/2) sigma^z + b sigma^x; the success
    probability is one minus this value.
    """
    if slope_a <= 0:
        raise ValueError("slope must be positive")
    if coupling_b < 0:
        raise ValueError("coupling must be non-negative")
    return math.exp(-2.0 * math.pi * coupling_b**2 * T / slope_a)


def landau_zener_path(slope_a: float, coupling_b: float) -> AnnealingPath:
    """Single spin swept through an avoided crossing of minimum gap 2b."""
    z = lambda c: KLocalOperator.z(1, 0, c)
    x = KLocalOperator.x(1, 0, coupling_b)
    return AnnealingPath(z(slope_a / 4) + x, z(-slope_a / 4) + x, "s")


@dataclass
class SuccessCurve:
    results: list[EvolutionResult] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        p = [r.success_probability for r in self.results]
        return all(b >= a - 1e-12 for a, b in zip(p, p[1:]))

    def pairs(self) -> list[tuple[float, float]]:
        return [(r.T, r.success_probability) for r in self.results]

    def __iter__(self):
        return iter(self.pairs())

    def __len__(self) -> int:
        return len(self.results)


def success_curve(
    path: AnnealingPath,
    T_values: Sequence[float],
    schedule_shape: str | None = None,
    **opts,
) -> SuccessCurve:
    """One evolution per total time; a non-monotone trend is reported, not fixed."""
    Ts = [float(t) for t in T_values]
    if any(t <= 0 for t in Ts) or any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise ValueError("T values must be positive and ascending")
    curve = SuccessCurve()
    for T in Ts:
        curve.results.append(evolve(path, AnnealSchedule.parse_shape(T, schedule_shape), **opts))
    return curve
