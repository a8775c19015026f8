from __future__ import annotations

import math

import numpy as np
import pytest

from annealgap.dynamics import (
    AnnealSchedule,
    evolve,
    ground_projector,
    landau_zener_path,
    landau_zener_probability,
    success_curve,
)
from annealgap.models import ClassicalCostFunction, build_annealing_path
from annealgap.spin_core import KLocalOperator


def small_path(seed: int = 0):
    rng = np.random.default_rng(seed)
    cost = ClassicalCostFunction.ising(rng.normal(size=4), {(0, 1): 0.7, (1, 2): -0.4, (2, 3): 1.1, (0, 3): 0.3})
    return build_annealing_path(cost)


# -- schedules -----------------------------------------------------------------


def test_linear_schedule():
    sch = AnnealSchedule.linear(10.0)
    assert sch.s(0) == 0.0 and sch.s(10.0) == 1.0 and sch.s(2.5) == 0.25


def test_piecewise_schedule():
    sch = AnnealSchedule.parse_shape(4.0, "0:0,0.5:0.8,1:1")
    assert sch.s(2.0) == pytest.approx(0.8)
    assert sch.s(3.0) == pytest.approx(0.9)


@pytest.mark.parametrize("shape", ["0:0,0.5:0.9,0.7:0.6,1:1", "0:0.1,1:1", "0:0,0.5:0.5", "0:0,0.5:0.5,0.5:0.6,1:1"])
def test_schedule_validation(shape):
    with pytest.raises(ValueError):
        AnnealSchedule.parse_shape(1.0, shape)


# -- Landau-Zener ------------------------------------------------------------------


@pytest.mark.parametrize("T", [50.0, 100.0, 200.0])
def test_landau_zener_success(T):
    a, b = 10.0, 0.2
    res = evolve(landau_zener_path(a, b), AnnealSchedule.linear(T))
    assert abs(res.success_probability - (1 - landau_zener_probability(a, b, T))) <= 1e-3


def test_sudden_limit():
    # T = 0 leaves the system in the diabatic state: success 1 - P_LZ(0) = 0
    res = evolve(landau_zener_path(1000.0, 0.01), AnnealSchedule.linear(0.0))
    assert res.success_probability < 1e-8
    assert landau_zener_probability(1.0, 0.3, 0.0) == 1.0


def test_lz_probability_validation():
    with pytest.raises(ValueError):
        landau_zener_probability(0.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        landau_zener_probability(1.0, -0.1, 1.0)


# -- integrator ------------------------------------------------------------------------


def test_fourth_order_convergence():
    path, sch = small_path(), AnnealSchedule.linear(10.0)
    ref = evolve(path, sch, dt_max=0.005, tol=1e-13).final_state
    err = [np.linalg.norm(evolve(path, sch, dt_max=h, tol=1e-13).final_state - ref) for h in (0.5, 0.25, 0.125)]
    for e1, e2 in zip(err, err[1:]):
        assert 12 <= e1 / e2 <= 24


def test_norm_and_result_invariants():
    res = evolve(small_path(1), AnnealSchedule.linear(30.0))
    assert res.norm_drift <= 1e-9
    assert 0.0 <= res.success_probability <= 1.0
    assert res.residual_energy >= -1e-9


def test_needs_s_path():
    path = build_annealing_path(ClassicalCostFunction.ising([1.0]), "lambda")
    with pytest.raises(ValueError):
        evolve(path, AnnealSchedule.linear(1.0))


def test_ground_projector_sums_degenerate_manifold():
    op = KLocalOperator.from_list(2, [((0, 1), "ZZ", 1.0)])
    e0, weight = ground_projector(op)
    assert e0 == -1.0
    psi = np.full(4, 0.5)
    assert weight(psi) == pytest.approx(0.5)
    e0, weight = ground_projector(KLocalOperator.transverse_field(2))
    assert e0 == pytest.approx(-2.0)
    assert weight(np.array([1, -1, -1, 1]) / 2.0) == pytest.approx(1.0)


# -- success curves -------------------------------------------------------------------


def test_success_curve_lz_monotone():
    curve = success_curve(landau_zener_path(10.0, 0.2), [20.0, 50.0, 100.0])
    assert len(curve) == 3
    assert curve.monotone
    assert [t for t, _ in curve] == [20.0, 50.0, 100.0]


def test_success_curve_validation():
    path = landau_zener_path(10.0, 0.2)
    with pytest.raises(ValueError):
        success_curve(path, [10.0, 5.0])
    with pytest.raises(ValueError):
        success_curve(path, [0.0, 5.0])


def test_success_curve_with_shape():
    curve = success_curve(small_path(2), [5.0, 40.0], "0:0,0.3:0.6,1:1")
    p = [r.success_probability for r in curve.results]
    assert all(0 <= x <= 1 for x in p) and math.isfinite(p[1])
