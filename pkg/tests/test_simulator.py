import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tugofwar.grid import ValueField, ball_nodes
from tugofwar.params import move_probabilities, gamma
from tugofwar.problem import Problem
from tugofwar.simulator import (
    DRIFT,
    CounterStream,
    MOVE_NAMES,
    Strategy,
    advance,
    counter_uniform,
    estimate_value,
    greedy_strategies,
    optional_stopping_check,
    payoffs,
    play_game,
    simulate,
    step,
    supermartingale_check,
)

BOX = {"kind": "box", "params": [0, 0, 1, 1]}


@pytest.fixture(scope="module")
def weighted_box():
    pb = Problem.from_catalog(BOX, {"kind": "exponential", "params": [2.0, -1.0]}, {"kind": "affine", "params": [0.0, 0.6, 0.8]}, 4.0, 0.2, 0.05)
    v, rep = pb.solve()
    assert rep.converged
    return pb, v


def test_counter_uniform_deterministic_and_keyed():
    a = counter_uniform(1, np.arange(1000), 5, 0)
    assert np.array_equal(a, counter_uniform(1, np.arange(1000), 5, 0))
    assert not np.array_equal(a, counter_uniform(2, np.arange(1000), 5, 0))
    assert not np.array_equal(a, counter_uniform(1, np.arange(1000), 6, 0))
    assert not np.array_equal(a, counter_uniform(1, np.arange(1000), 5, 1))
    assert np.all((a >= 0) & (a < 1))


def test_counter_uniform_is_uniform():
    u = counter_uniform(42, np.arange(200_000), np.arange(200_000) % 7, 3)
    counts, _ = np.histogram(u, bins=20, range=(0, 1))
    expected = len(u) / 20
    chi2 = np.sum((counts - expected) ** 2 / expected)
    assert chi2 < 50  # 19 dof, p ~ 1e-4
    assert abs(np.corrcoef(u[:-1], u[1:])[0, 1]) < 0.01


def test_constant_weight_never_drifts(flat_coarse):
    pb, v, _ = flat_coarse
    s_a, s_b = greedy_strategies(v)
    res = simulate(pb, [0.5], s_a, s_b, 3, np.arange(300), 100_000, record=True)
    assert all("Drift" not in t.move_kinds for t in res.trajectories)
    x = np.full((50_000, 1), 0.5)
    _, kinds = advance(pb, x, s_a, s_b, 9, np.arange(50_000), np.zeros(50_000))
    assert not np.any(kinds == DRIFT)


def test_move_frequencies_match_multinomial(weighted_box):
    pb, v = weighted_box
    s_a, s_b = greedy_strategies(v)
    x0 = np.array([0.4, 0.55])
    m = 100_000
    _, kinds = advance(pb, np.repeat(x0[None, :], m, axis=0), s_a, s_b, 11, np.arange(m), np.full(m, 3))
    prob = move_probabilities(gamma(x0, pb.weight, pb.params), pb.params)
    assert prob[3] > 0.05
    counts = np.bincount(kinds, minlength=4)
    sd = np.sqrt(m * prob * (1 - prob))
    assert np.all(np.abs(counts - m * prob) <= 4 * sd)


def test_step_advances_counter(weighted_box):
    pb, v = weighted_box
    s_a, s_b = greedy_strategies(v)
    rs = CounterStream(5, 0)
    moves = [step(pb, np.array([0.5, 0.5]), s_a, s_b, rs) for _ in range(3)]
    assert rs.counter == 3
    assert all(k in MOVE_NAMES for _, k in moves)
    with pytest.raises(ValueError):
        step(pb, np.array([1.05, 0.5]), s_a, s_b, rs)


def test_start_in_layer_exits_immediately(flat_coarse):
    pb, v, _ = flat_coarse
    t = play_game(pb, [-0.05], *greedy_strategies(v), rng_seed=0)
    assert t.exit_index == 0 and t.payoff == pytest.approx(-0.05) and len(t.positions) == 1


def test_play_game_deterministic(weighted_box):
    pb, v = weighted_box
    s_a, s_b = greedy_strategies(v)
    t1 = play_game(pb, [0.5, 0.5], s_a, s_b, 77, index=4)
    t2 = play_game(pb, [0.5, 0.5], s_a, s_b, 77, index=4)
    assert np.array_equal(t1.positions, t2.positions) and t1.move_kinds == t2.move_kinds
    batch = simulate(pb, [0.5, 0.5], s_a, s_b, 77, np.arange(8), 1_000_000, record=True)
    assert np.array_equal(batch.trajectories[4].positions, t1.positions)


def test_payoffs_independent_of_workers(weighted_box):
    pb, v = weighted_box
    a = payoffs(pb, [0.5, 0.5], v, 400, 5, workers=1)
    b = payoffs(pb, [0.5, 0.5], v, 400, 5, workers=3)
    assert np.array_equal(a, b)


def test_trajectory_invariants(weighted_box):
    pb, v = weighted_box
    g = pb.grid
    eps = pb.params.eps
    res = simulate(pb, [0.3, 0.6], *greedy_strategies(v), 21, np.arange(200), 1_000_000, record=True)
    lo, hi = np.nanmin(pb.boundary(g.coords[g.layer])), np.nanmax(pb.boundary(g.coords[g.layer]))
    for t in res.trajectories:
        d = np.linalg.norm(np.diff(t.positions, axis=0), axis=1)
        kinds = np.array(t.move_kinds)
        assert np.all(d[kinds == "Noise"] <= eps + 1e-12)
        np.testing.assert_allclose(d[kinds == "Drift"], eps**2, rtol=1e-12)
        # player moves start from the lattice node nearest the token
        assert np.all(d[np.isin(kinds, ["PlayerA", "PlayerB"])] <= eps + g.h * np.sqrt(g.n) / 2 + 1e-12)
        inside = g.domain.contains(t.positions)
        assert np.all(inside[:-1]) and not inside[-1]
        assert g.region_of(t.positions[-1:])[0] == 1
        assert lo - 1e-12 <= t.payoff <= hi + 1e-12


def test_strategy_attains_discrete_extremum(weighted_box):
    pb, v = weighted_box
    g = pb.grid
    s_a, s_b = greedy_strategies(v)
    nodes = g.interior[::7]
    up = s_a.choose(g.coords[nodes])
    down = s_b.choose(g.coords[nodes])
    for node, a, b in zip(nodes, up, down):
        ball = ball_nodes(g, node)
        assert v.values[a] == np.max(v.values[ball]) and a in ball
        assert v.values[b] == np.min(v.values[ball]) and b in ball


def test_strategy_ties_go_to_smallest_node(weighted_box):
    pb, _ = weighted_box
    g = pb.grid
    flat = ValueField(g, np.where(g.defined, 1.0, np.nan))
    node = g.interior[len(g.interior) // 2]
    for kind in ("maximize", "minimize"):
        pick = Strategy(kind, flat).choose(g.coords[node][None, :])[0]
        assert pick == ball_nodes(g, node)[0]


def test_strategy_rejects_bad_kind(weighted_box):
    with pytest.raises(ValueError):
        Strategy("random", weighted_box[1])
    with pytest.raises(ValueError):
        Strategy("maximize", weighted_box[1], -1.0)


def test_constant_data_estimate():
    pb = Problem.from_catalog({"kind": "interval", "params": [0, 1]}, {"kind": "affine", "params": [1.0]}, {"kind": "constant", "params": [0.3]}, 4.0, 0.1)
    v, _ = pb.solve()
    est = estimate_value(pb, [0.5], v, 200, 1)
    assert est.mean == pytest.approx(0.3, abs=1e-15) and est.std_error == 0.0


def test_truncation_rare_and_estimate_consistent(flat_coarse):
    pb, v, _ = flat_coarse
    est = estimate_value(pb, [0.5], v, 4000, 13, max_steps=100_000)
    assert est.n_truncated / 4000 < 1e-3 and not est.unreliable
    assert abs(est.mean - v([0.5])) <= 3 * est.std_error


def test_truncation_flags_unreliable(flat_coarse):
    pb, v, _ = flat_coarse
    est = estimate_value(pb, [0.5], v, 500, 13, max_steps=2)
    assert est.n_truncated > 5 and est.unreliable
    assert est.n_samples + est.n_truncated == 500


def test_std_error_clt_scaling(flat_coarse):
    pb, v, _ = flat_coarse
    a = estimate_value(pb, [0.5], v, 3000, 2)
    b = estimate_value(pb, [0.5], v, 6000, 2)
    assert b.std_error / a.std_error == pytest.approx(1 / np.sqrt(2), rel=0.2)


def test_supermartingale_fixed_point_and_control(weighted_box):
    pb, v = weighted_box
    s_a, s_b = greedy_strategies(v, 0.1)
    trajs = simulate(pb, [0.5, 0.5], s_a, s_b, 3, np.arange(40), 1_000_000, record=True).trajectories
    rep = supermartingale_check(pb, v, 0.1, trajs, n_states=60, n_resamples=2000, seed=1)
    assert rep.n_states > 0 and rep.n_violations == 0
    bad = v.copy()
    node = pb.grid.node_of([0.5, 0.5])
    bad.values[node] += 1.0
    trajs_bad = simulate(pb, [0.5, 0.5], *greedy_strategies(bad, 0.1), 3, np.arange(40), 1_000_000, record=True).trajectories
    ctrl = supermartingale_check(pb, bad, 0.1, trajs_bad, n_states=200, n_resamples=2000, seed=1)
    assert ctrl.n_violations >= 1


def test_optional_stopping(weighted_box):
    pb, v = weighted_box
    rep = optional_stopping_check(pb, v, 0.1, [0.5, 0.5], horizon=20, n_samples=2000, seed=4)
    assert rep.ok


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**63))
def test_payoffs_bounded(weighted_box, seed):
    pb, v = weighted_box
    g = pb.grid
    F = pb.boundary(g.coords[g.layer])
    pay = payoffs(pb, [0.5, 0.5], v, 50, seed)
    assert np.all((pay >= F.min() - 1e-12) & (pay <= F.max() + 1e-12))
