import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tugofwar.grid import ValueField, build_grid, extend_boundary, make_boundary
from tugofwar.params import make_params, make_weight
from tugofwar.problem import Problem
from tugofwar.solver import apply_T, build_operator, initial_field, residual, solve_fixed_point


def interval_problem(weight, boundary, eps, p=4.0, h=None):
    return Problem.from_catalog({"kind": "interval", "params": [0, 1]}, weight, boundary, p, eps, h)


def full_field(grid, fn):
    return ValueField(grid, np.where(grid.defined, fn(grid.coords), np.nan))


def test_single_node_against_straight_line_formula():
    eps, h, p, n = 0.25, 0.0625, 4.0, 1
    pb = interval_problem({"kind": "affine", "params": [1.0]}, {"kind": "affine", "params": [0.0, 1.0]}, eps, p, h)
    g = pb.grid
    v = full_field(g, lambda c: c[:, 0])
    tv = apply_T(v, g, pb.weight, pb.boundary, pb.params)

    # independent evaluation at x = 0.5 without package helpers
    x = 0.5
    ball = [k * h for k in range(-40, 41) if abs(k * h - x) <= eps + 1e-12]
    vals = [y for y in ball]
    f, df = 1.0 + x, 1.0
    gam = f / (abs(df) / (2 * (p + n)) + f)
    alpha = (p - 2) / (p + n)
    beta = 1 - alpha
    target = x + eps**2 * math.copysign(1.0, df)
    lo = math.floor(target / h)
    t = target / h - lo
    drift_val = (1 - t) * (lo * h) + t * ((lo + 1) * h)
    expected = gam * alpha / 2 * (max(vals) + min(vals)) + gam * beta * sum(vals) / len(vals) + (1 - gam) * drift_val

    assert len(vals) == 9
    assert expected == pytest.approx(0.50390625, abs=1e-15)
    assert tv.values[g.node_of([x])] == pytest.approx(expected, abs=1e-15)


def test_constant_preserved():
    pb = interval_problem({"kind": "affine", "params": [1.0]}, {"kind": "constant", "params": [2.5]}, 0.1)
    v = full_field(pb.grid, lambda c: np.full(len(c), 2.5))
    tv = apply_T(v, pb.grid, pb.weight, pb.boundary, pb.params)
    np.testing.assert_allclose(tv.values[pb.grid.defined], 2.5, rtol=0, atol=1e-15)


def test_affine_preserved_without_drift():
    pb = interval_problem({"kind": "constant", "params": [1.0]}, {"kind": "affine", "params": [0.0, 1.0]}, 0.1)
    g = pb.grid
    tv = apply_T(full_field(g, lambda c: c[:, 0]), g, pb.weight, pb.boundary, pb.params)
    np.testing.assert_allclose(tv.values[g.interior], g.coords[g.interior, 0], atol=1e-15)


@pytest.fixture(scope="module")
def box_problem():
    return Problem.from_catalog(
        {"kind": "box", "params": [0, 0, 1, 1]},
        {"kind": "sinusoidal", "params": [2.0, 1.5, -1.0]},
        {"kind": "quadratic", "params": [0.0, 0.5, -0.2, 0.3]},
        4.0, 0.2, 0.05,
    )


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_monotone_operator(box_problem, seed):
    pb = box_problem
    g = pb.grid
    rng = np.random.default_rng(seed)
    F = extend_boundary(g, pb.boundary).values
    u = F.copy()
    u[g.interior] = rng.normal(size=g.interior.size)
    v = u.copy()
    v[g.interior] += rng.uniform(0, 1, g.interior.size)
    tu = apply_T(ValueField(g, u), g, pb.weight, pb.boundary, pb.params).values
    tv = apply_T(ValueField(g, v), g, pb.weight, pb.boundary, pb.params).values
    assert np.all(tu[g.interior] <= tv[g.interior] + 1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(-5, 5))
def test_shift_identity(box_problem, seed, c):
    pb = box_problem
    g = pb.grid
    rng = np.random.default_rng(seed)
    v = extend_boundary(g, pb.boundary).values
    v[g.interior] = rng.normal(size=g.interior.size)
    shifted = make_boundary("quadratic", [c, 0.5, -0.2, 0.3], 2)
    t0 = apply_T(ValueField(g, v), g, pb.weight, pb.boundary, pb.params).values
    t1 = apply_T(ValueField(g, v + c), g, pb.weight, shifted, pb.params).values
    np.testing.assert_allclose(t1[g.defined], t0[g.defined] + c, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_range_preservation(box_problem, seed):
    pb = box_problem
    g = pb.grid
    F = extend_boundary(g, pb.boundary).values
    lo, hi = np.nanmin(F), np.nanmax(F)
    v = F.copy()
    v[g.interior] = np.random.default_rng(seed).uniform(lo, hi, g.interior.size)
    tv = apply_T(ValueField(g, v), g, pb.weight, pb.boundary, pb.params).values
    assert np.all(tv[g.defined] >= lo - 1e-15) and np.all(tv[g.defined] <= hi + 1e-15)


def test_constant_data_converges_in_one_sweep():
    pb = interval_problem({"kind": "affine", "params": [1.0]}, {"kind": "constant", "params": [0.7]}, 0.1)
    v, rep = pb.solve()
    assert rep.iterations == 1 and rep.converged
    np.testing.assert_allclose(v.values[pb.grid.defined], 0.7, atol=0)


def test_constant_weight_linear_solution_within_two_h():
    eps = 0.05
    pb = interval_problem({"kind": "constant", "params": [1.0]}, {"kind": "affine", "params": [0.0, 1.0]}, eps)
    v, rep = pb.solve()
    g = pb.grid
    assert rep.converged and rep.monotone_violations == 0
    assert np.max(np.abs(v.values[g.interior] - g.coords[g.interior, 0])) <= 2 * g.h
    assert len(rep.residual_history) == rep.iterations
    assert residual(v, g, pb.weight, pb.boundary, pb.params) <= 1e-8


def test_residual_examples():
    pb = interval_problem({"kind": "constant", "params": [1.0]}, {"kind": "affine", "params": [0.0, 1.0]}, 0.1)
    g = pb.grid
    exact = full_field(g, lambda c: c[:, 0])
    assert residual(exact, g, pb.weight, pb.boundary, pb.params) <= 1e-14
    assert residual(initial_field(g, pb.boundary), g, pb.weight, pb.boundary, pb.params) > 0


def test_iterates_monotone_and_residual_nonincreasing(box_problem):
    pb = box_problem
    worst = [0.0]

    def cb(j, prev, nxt):
        d = nxt[pb.grid.interior] - prev[pb.grid.interior]
        worst[0] = min(worst[0], float(d.min()))

    v, rep = pb.solve(callback=cb)
    assert rep.converged and rep.monotone_violations == 0
    assert worst[0] >= -1e-13
    r = np.array(rep.residual_history)
    assert np.all(r[1:] <= r[:-1] * (1 + 1e-12) + 1e-15)


def test_unconverged_returns_flagged_iterate(box_problem):
    pb = box_problem
    v, rep = pb.solve(tol=1e-14, max_iter=5)
    assert not rep.converged and rep.iterations == 5
    assert np.all(np.isfinite(v.values[pb.grid.defined]))
    tv = apply_T(v, pb.grid, pb.weight, pb.boundary, pb.params)
    assert np.max(np.abs(tv.values - v.values)[pb.grid.interior]) <= rep.final_residual


def test_bad_arguments(box_problem):
    with pytest.raises(ValueError):
        box_problem.solve(tol=-1)
    with pytest.raises(ValueError):
        box_problem.solve(max_iter=0)


def test_lipschitz_flag_enforced():
    with pytest.raises(ValueError, match="Lipschitz"):
        interval_problem({"kind": "constant", "params": [1.0]}, {"kind": "affine", "params": [0.0, 2.0], "lipschitz": True}, 0.1)


def test_discrete_comparison_small(box_problem):
    pb = box_problem
    F2 = make_boundary("quadratic", [0.1, 0.5, -0.2, 0.35], 2)
    v1, r1 = pb.solve(tol=0.0, max_iter=400)
    v2, r2 = solve_fixed_point(pb.grid, pb.weight, F2, pb.params, tol=0.0, max_iter=400)
    g = pb.grid
    assert np.all(extend_boundary(g, pb.boundary).values[g.layer] <= extend_boundary(g, F2).values[g.layer])
    assert np.all(v1.values[g.defined] <= v2.values[g.defined] + 1e-12)


def test_operator_drift_stencil_zero_without_gradient():
    pb = interval_problem({"kind": "constant", "params": [3.0]}, {"kind": "affine", "params": [0.0, 1.0]}, 0.1)
    op = build_operator(pb.grid, pb.weight, pb.boundary, pb.params)
    assert np.all(op.c_drift == 0) and np.all(op.gamma == 1)
