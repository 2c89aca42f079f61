import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tugofwar.grid import (
    BOUNDARY_LAYER,
    INTERIOR,
    OUTSIDE,
    ValueField,
    ball_nodes,
    build_grid,
    extend_boundary,
    make_boundary,
    make_domain,
    value_at,
)
from tugofwar.params import make_params


@pytest.fixture(scope="module")
def interval_grid():
    return build_grid({"kind": "interval", "params": [0, 1]}, make_params(4, 1, 0.1), 0.025)


@pytest.fixture(scope="module")
def box_grid():
    return build_grid({"kind": "box", "params": [0, 0, 1, 1]}, make_params(4, 2, 0.1), 0.025)


def node_at(grid, x):
    node = grid.node_of(np.atleast_1d(x))
    np.testing.assert_allclose(grid.coords[node], x, atol=1e-12)
    return node


def test_interval_classification(interval_grid):
    g = interval_grid
    assert g.region[node_at(g, 0.5)] == INTERIOR
    assert g.region[node_at(g, -0.05)] == BOUNDARY_LAYER
    assert g.region[node_at(g, -0.15)] == OUTSIDE
    assert g.region[node_at(g, 0.0)] == BOUNDARY_LAYER
    assert g.region[node_at(g, 1.1)] == BOUNDARY_LAYER
    np.testing.assert_allclose(np.diff(g.coords[:, 0]), 0.025, atol=1e-14)


def test_ball_layer_node():
    g = build_grid({"kind": "ball", "params": [0, 0, 1]}, make_params(4, 2, 0.1), 0.025)
    assert g.region[node_at(g, [1.05, 0.0])] == BOUNDARY_LAYER
    assert g.region[node_at(g, [0.95, 0.0])] == INTERIOR
    assert g.region[node_at(g, [1.15, 0.0])] == OUTSIDE


def test_resolution_rule_enforced():
    with pytest.raises(ValueError, match="resolution rule"):
        build_grid({"kind": "interval", "params": [0, 1]}, make_params(4, 1, 0.1), 0.05)


def test_unknown_domain_rejected():
    with pytest.raises(ValueError, match="unknown domain"):
        make_domain("torus", [1.0])


def test_partition(box_grid):
    g = box_grid
    total = np.sum(g.region == INTERIOR) + np.sum(g.region == BOUNDARY_LAYER) + np.sum(g.region == OUTSIDE)
    assert total == g.size
    assert set(np.unique(g.region)) <= {INTERIOR, BOUNDARY_LAYER, OUTSIDE}


def test_classification_matches_distance(box_grid):
    g = box_grid
    d = g.domain.distance(g.coords)
    inside = g.domain.contains(g.coords)
    assert np.all(inside[g.region == INTERIOR])
    lay = g.region == BOUNDARY_LAYER
    assert np.all(~inside[lay]) and np.all(d[lay] <= 0.1 + 1e-12)
    assert np.all(d[g.region == OUTSIDE] > 0.1)


@pytest.mark.parametrize("domain,n", [
    ({"kind": "lshape", "params": [1.0]}, 2),
    ({"kind": "ball", "params": [0.0, 0.0, 0.0, 0.5]}, 3),
])
def test_lshape_and_3d_balls_cover(domain, n):
    g = build_grid(domain, make_params(4, n, 0.2), 0.05)
    assert g.interior.size > 0
    for node in g.interior[:: max(1, g.interior.size // 25)]:
        nb = ball_nodes(g, node)
        assert nb.size > 1 and np.all(g.region[nb] != OUTSIDE)


def test_lshape_notch_is_not_interior():
    g = build_grid({"kind": "lshape", "params": [1.0]}, make_params(4, 2, 0.2), 0.05)
    assert g.region[node_at(g, [0.75, 0.75])] == OUTSIDE
    assert g.region[node_at(g, [0.55, 0.55])] == BOUNDARY_LAYER
    assert g.region[node_at(g, [0.25, 0.75])] == INTERIOR


def test_ball_nodes_1d(interval_grid):
    g = interval_grid
    nb = ball_nodes(g, node_at(g, 0.5))
    np.testing.assert_allclose(g.coords[nb, 0], np.linspace(0.4, 0.6, 9), atol=1e-12)


def test_ball_nodes_requires_interior(interval_grid):
    with pytest.raises(ValueError):
        ball_nodes(interval_grid, node_at(interval_grid, -0.05))


def test_ball_nodes_2d_brute_force(box_grid):
    g = box_grid
    node = node_at(g, [0.5, 0.5])
    x = g.coords[node]
    brute = [
        g.node_of(x + 0.025 * np.array(k))
        for k in itertools.product(range(-4, 5), repeat=2)
        if np.hypot(*(0.025 * np.array(k))) <= 0.1 + 1e-12
    ]
    nb = ball_nodes(g, node)
    assert nb.size == len(brute) == 49
    np.testing.assert_array_equal(nb, np.sort(brute))
    assert np.all(np.diff(nb) > 0)


def test_ball_nodes_reflection_symmetric():
    g = build_grid({"kind": "interval", "params": [-1, 1]}, make_params(4, 1, 0.1), 0.025)
    for x in (0.3, 0.925, 0.975):
        assert ball_nodes(g, node_at(g, x)).size == ball_nodes(g, node_at(g, -x)).size


def test_extend_boundary(interval_grid, box_grid):
    g = interval_grid
    zero = extend_boundary(g, make_boundary("constant", [0.0], 1))
    assert np.all(zero.values[g.layer] == 0) and np.all(np.isnan(zero.values[g.interior]))
    lin = extend_boundary(g, make_boundary("affine", [0.0, 1.0], 1))
    assert lin.values[node_at(g, -0.05)] == pytest.approx(-0.05, abs=1e-15)
    a = np.array([0.3, -0.7])
    aff = extend_boundary(box_grid, make_boundary("affine", [0.2, *a], 2))
    np.testing.assert_allclose(aff.values[box_grid.layer], 0.2 + box_grid.coords[box_grid.layer] @ a, atol=1e-15)


def test_extend_boundary_rejects_nonfinite(interval_grid):
    from tugofwar.grid import BoundaryData

    F = BoundaryData(lambda x: np.where(x[:, 0] < 0, np.nan, 1.0))
    with pytest.raises(ValueError, match="not finite"):
        extend_boundary(interval_grid, F)


def test_value_at_examples(interval_grid, box_grid):
    g = interval_grid
    vals = np.where(g.defined, 2 * g.coords[:, 0] + 1, np.nan)
    fld = ValueField(g, vals)
    assert value_at(g, fld, np.array([0.5])) == pytest.approx(2.0, abs=1e-14)
    i = node_at(g, 0.5)
    step = np.where(g.defined, 0.0, np.nan)
    step[i], step[i + 1] = 1.0, 3.0
    assert value_at(g, ValueField(g, step), np.array([0.5125])) == pytest.approx(2.0, abs=1e-14)
    a = np.array([0.3, -0.7])
    b = box_grid
    fld2 = ValueField(b, np.where(b.defined, b.coords @ a, np.nan))
    pts = np.random.default_rng(0).uniform(-0.05, 1.05, (100, 2))
    np.testing.assert_allclose(value_at(b, fld2, pts), pts @ a, atol=1e-14)


def test_value_at_outside_rejected(interval_grid):
    fld = ValueField(interval_grid, np.where(interval_grid.defined, 0.0, np.nan))
    with pytest.raises(ValueError):
        value_at(interval_grid, fld, np.array([1.3]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_interpolation_monotone(seed):
    g = build_grid({"kind": "box", "params": [0, 0, 1, 1]}, make_params(4, 2, 0.2), 0.05)
    rng = np.random.default_rng(seed)
    v1 = np.where(g.defined, rng.normal(size=g.size), np.nan)
    v2 = v1 + np.where(g.defined, rng.uniform(0, 1, g.size), np.nan)
    pts = rng.uniform(-0.05, 1.05, (200, 2))
    assert np.all(value_at(g, ValueField(g, v1), pts) <= value_at(g, ValueField(g, v2), pts) + 1e-15)


def test_interpolation_second_order():
    errs = []
    hs = [0.05, 0.025, 0.0125]
    pts = np.random.default_rng(4).uniform(0.1, 0.9, (400, 2))
    for h in hs:
        g = build_grid({"kind": "box", "params": [0, 0, 1, 1]}, make_params(4, 2, 0.2), h)
        fld = ValueField(g, np.where(g.defined, np.sum(g.coords**2, axis=1), np.nan))
        errs.append(np.max(np.abs(value_at(g, fld, pts) - np.sum(pts**2, axis=1))))
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order >= 1.9


def test_lipschitz_constant_sampled(box_grid):
    F = make_boundary("affine", [0.0, 2.0, 0.0], 2, lipschitz=True)
    assert F.lipschitz_constant(box_grid) == pytest.approx(2.0, rel=1e-2)
    G = make_boundary("affine", [0.0, 0.6, 0.8], 2, lipschitz=True)
    assert G.lipschitz_constant(box_grid) <= 1 + 1e-9
