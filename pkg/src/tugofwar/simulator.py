"""Monte Carlo playouts of the game with positional strategies read off a value field.

Randomness is counter based: the uniform used by trajectory ``i`` at step
``k`` for purpose ``slot`` is a hash of ``(seed, i, k, slot)``.  A trajectory
is therefore fixed by its seed and index alone, however the batch is split
across workers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import ValueField
from .params import drift_targets, gamma, move_probabilities
from .problem import Problem

PLAYER_A, PLAYER_B, NOISE, DRIFT = 0, 1, 2, 3
MOVE_NAMES = ("PlayerA", "PlayerB", "Noise", "Drift")

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_LANES = tuple(np.uint64(c) for c in (0x243F6A8885A308D3, 0x13198A2E03707344, 0xA4093822299F31D0, 0x082EFA98EC4E6C89))


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def counter_uniform(seed, stream, counter, slot) -> np.ndarray:
    """Uniform doubles in [0, 1) keyed by ``(seed, stream, counter, slot)``.

    Arguments broadcast against each other.  Each key component passes
    through its own splitmix64 round, so distinct keys give independent
    looking outputs.
    """
    with np.errstate(over="ignore"):
        z = _mix(np.asarray(seed, dtype=np.uint64) + _LANES[0])
        for lane, part in zip(_LANES[1:], (stream, counter, slot)):
            z = _mix(z ^ _mix(np.asarray(part, dtype=np.uint64) * _GOLDEN + lane))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass
class CounterStream:
    """One trajectory's random stream; ``counter`` advances once per step."""

    seed: int
    stream: int
    counter: int = 0


@dataclass
class Strategy:
    """Greedy positional strategy over lattice nodes.

    ``maximize`` picks the candidate with the largest value of ``source`` and
    ``minimize`` the smallest; ties go to the lexicographically smallest node.
    On a finite lattice the extremum is attained, so ``slack_eta`` only
    records the tolerance used by the supermartingale diagnostic.
    """

    kind: str
    source: ValueField
    slack_eta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("maximize", "minimize"):
            raise ValueError("strategy kind must be 'maximize' or 'minimize'")
        if self.slack_eta < 0:
            raise ValueError("slack_eta must be nonnegative")

    def choose(self, x: np.ndarray) -> np.ndarray:
        """Chosen flat node indices for Interior positions ``x`` of shape ``(m, n)``.

        The admissible set is the closed eps-ball of lattice nodes around the
        lattice node nearest to each position.
        """
        grid = self.source.grid
        near = grid.nearest_nodes(np.atleast_2d(x))
        cand = near[:, None] + grid.flat_offsets[None, :]
        ok = grid.defined[cand]
        vals = self.source.values[cand]
        if self.kind == "maximize":
            pick = np.argmax(np.where(ok, vals, -np.inf), axis=1)
        else:
            pick = np.argmin(np.where(ok, vals, np.inf), axis=1)
        return cand[np.arange(len(cand)), pick]


def greedy_strategies(v: ValueField, eta: float = 0.0):
    return Strategy("maximize", v, eta), Strategy("minimize", v, eta)


def _noise(problem: Problem, x, seed, streams, counters):
    """Uniform points in the continuum balls ``B_eps(x)`` by cube rejection."""
    m, n = x.shape
    eps = problem.params.eps
    out = np.empty_like(x)
    todo = np.arange(m)
    attempt = 0
    while todo.size:
        slots = 1 + attempt * n + np.arange(n)
        u = counter_uniform(seed, streams[todo, None], counters[todo, None], slots[None, :])
        h = eps * (2.0 * u - 1.0)
        ok = np.sum(h * h, axis=1) <= eps * eps
        out[todo[ok]] = x[todo[ok]] + h[ok]
        todo = todo[~ok]
        attempt += 1
    return out


def advance(problem: Problem, x, s_a: Strategy, s_b: Strategy, seed, streams, counters):
    """One move for each Interior position in ``x``: returns ``(next, kinds)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    streams = np.asarray(streams, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    grid = s_a.source.grid
    gam = np.atleast_1d(gamma(x, problem.weight, problem.params))
    pr = move_probabilities(gam, problem.params)
    u = counter_uniform(seed, streams, counters, 0)
    c1 = pr[:, 0]
    c2 = pr[:, 0] + pr[:, 1]
    c3 = 1.0 - pr[:, 3]
    kinds = (u >= c1).astype(np.int8) + (u >= c2) + (u >= c3)
    nxt = np.empty_like(x)
    for kind, strat in ((PLAYER_A, s_a), (PLAYER_B, s_b)):
        sel = kinds == kind
        if np.any(sel):
            nxt[sel] = grid.coords[strat.choose(x[sel])]
    sel = kinds == NOISE
    if np.any(sel):
        nxt[sel] = _noise(problem, x[sel], seed, streams[sel], counters[sel])
    sel = kinds == DRIFT
    if np.any(sel):
        tgt, _ = drift_targets(x[sel], problem.weight, problem.params)
        nxt[sel] = tgt
    return nxt, kinds


def step(problem: Problem, x, s_a: Strategy, s_b: Strategy, rng_state: CounterStream):
    """Single move from Interior point ``x``; advances ``rng_state.counter``."""
    x = np.asarray(x, dtype=float)
    if not problem.grid.domain.contains(x[None, :])[0]:
        raise ValueError("step requires a position inside the domain")
    nxt, kinds = advance(problem, x[None, :], s_a, s_b, rng_state.seed, [rng_state.stream], [rng_state.counter])
    rng_state.counter += 1
    return nxt[0], MOVE_NAMES[int(kinds[0])]


@dataclass
class Trajectory:
    positions: np.ndarray
    move_kinds: list
    exit_index: Optional[int]
    payoff: Optional[float]

    @property
    def truncated(self) -> bool:
        return self.exit_index is None


@dataclass
class BatchResult:
    exit_index: np.ndarray  # -1 when truncated
    payoff: np.ndarray  # NaN when truncated
    trajectories: Optional[list] = None


def simulate(problem: Problem, x0, s_a: Strategy, s_b: Strategy, seed: int, streams, max_steps: int, record: bool = False) -> BatchResult:
    """Play one game per entry of ``streams`` from the common start ``x0``, in lockstep."""
    streams = np.asarray(streams, dtype=np.uint64)
    m = streams.size
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dom = problem.grid.domain
    if problem.grid.region_of(x0[None, :])[0] == 2:
        raise ValueError("start position lies outside the domain and its eps-layer")
    pos = np.repeat(x0[None, :], m, axis=0)
    exit_index = np.full(m, -1, dtype=np.int64)
    payoff = np.full(m, np.nan)
    active = np.flatnonzero(np.full(m, bool(dom.contains(x0[None, :])[0])))
    if active.size < m:
        exit_index[:] = 0
        payoff[:] = problem.boundary(x0[None, :])[0]
    hist = [] if record else None
    k = 0
    while active.size and k < max_steps:
        nxt, kinds = advance(problem, pos[active], s_a, s_b, seed, streams[active], np.full(active.size, k, dtype=np.uint64))
        pos[active] = nxt
        if record:
            hist.append((active.copy(), nxt, kinds))
        k += 1
        out = ~dom.contains(nxt)
        if np.any(out):
            done = active[out]
            exit_index[done] = k
            payoff[done] = problem.boundary(nxt[out])
            active = active[~out]
    trajs = None
    if record:
        trajs = _assemble(x0, m, hist, exit_index, payoff)
    return BatchResult(exit_index, payoff, trajs)


def _assemble(x0, m, hist, exit_index, payoff):
    pos = [[x0.copy()] for _ in range(m)]
    kinds = [[] for _ in range(m)]
    for idx, nxt, kd in hist:
        for r, i in enumerate(idx):
            pos[i].append(nxt[r])
            kinds[i].append(MOVE_NAMES[int(kd[r])])
    out = []
    for i in range(m):
        ex = int(exit_index[i])
        out.append(Trajectory(
            positions=np.array(pos[i]),
            move_kinds=kinds[i],
            exit_index=None if ex < 0 else ex,
            payoff=None if ex < 0 else float(payoff[i]),
        ))
    return out


def play_game(problem: Problem, x0, s_a: Strategy, s_b: Strategy, rng_seed: int, max_steps: int = 1_000_000, index: int = 0) -> Trajectory:
    """Trajectory number ``index`` under ``rng_seed``; identical to that game inside any batch."""
    return simulate(problem, x0, s_a, s_b, rng_seed, [index], max_steps, record=True).trajectories[0]


@dataclass
class MCEstimate:
    mean: float
    std_error: float
    n_samples: int
    n_truncated: int
    seed: int
    unreliable: bool = False

    def to_dict(self):
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "n_truncated": self.n_truncated,
            "seed": self.seed,
            "unreliable": self.unreliable,
        }


TRUNCATION_LIMIT = 0.01


def payoffs(problem: Problem, x0, v: ValueField, n_samples: int, rng_seed: int, max_steps: int = 1_000_000, workers: int = 1, eta: float = 0.0):
    """Payoff per trajectory index (NaN for truncated games), split over ``workers`` threads."""
    s_a, s_b = greedy_strategies(v, eta)
    workers = max(1, int(workers))
    chunks = np.array_split(np.arange(n_samples, dtype=np.uint64), workers)
    run = lambda c: simulate(problem, x0, s_a, s_b, rng_seed, c, max_steps).payoff
    if workers == 1:
        parts = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
    return np.concatenate(parts)


def summarize(pay: np.ndarray, seed: int) -> MCEstimate:
    ok = np.isfinite(pay)
    done = pay[ok]
    n = int(done.size)
    n_trunc = int(pay.size - n)
    # shifted by the first sample so constant payoffs give an exact mean and zero error
    shift = done[0] if n else 0.0
    dev = done - shift
    mean = float(shift + np.sum(dev) / n) if n else float("nan")
    if n > 1:
        se = float(np.sqrt(np.sum((dev - np.sum(dev) / n) ** 2) / (n - 1)) / np.sqrt(n))
    else:
        se = float("nan")
    unreliable = pay.size == 0 or n_trunc / pay.size > TRUNCATION_LIMIT
    return MCEstimate(mean, se, n, n_trunc, int(seed), unreliable)


def estimate_value(problem: Problem, x0, v: ValueField, n_samples: int, rng_seed: int, max_steps: int = 1_000_000, workers: int = 1) -> MCEstimate:
    """Mean payoff of ``n_samples`` games played with the greedy strategies from ``v``.

    Truncated games are left out of the mean and counted; more than 1%
    truncation marks the estimate unreliable.
    """
    return summarize(payoffs(problem, x0, v, n_samples, rng_seed, max_steps, workers), rng_seed)


@dataclass
class SupermartingaleReport:
    eta: float
    n_states: int
    n_resamples: int
    sigma: float
    violations: list = field(default_factory=list)
    max_excess_sigma: float = float("-inf")

    @property
    def n_violations(self) -> int:
        return len(self.violations)

    def to_dict(self):
        return {
            "eta": self.eta,
            "n_states": self.n_states,
            "n_resamples": self.n_resamples,
            "sigma": self.sigma,
            "n_violations": self.n_violations,
            "max_excess_sigma": self.max_excess_sigma,
            "violations": self.violations,
        }


def _on_lattice(grid, x):
    k = x / grid.h
    return np.all(np.abs(k - np.rint(k)) < 1e-9, axis=1)


def conditional_expectation(problem: Problem, v: ValueField, s_a, s_b, x, k: int, eta: float, n_resamples: int, seed: int, stream: int):
    """Monte Carlo mean and standard error of ``v(x_k) + eta 2^-k`` given ``x_{k-1} = x``."""
    counters = np.arange(n_resamples, dtype=np.uint64)
    streams = np.full(n_resamples, stream, dtype=np.uint64)
    xs = np.repeat(np.atleast_2d(x), n_resamples, axis=0)
    nxt, _ = advance(problem, xs, s_a, s_b, seed, streams, counters)
    vals = problem.field_value(v, nxt) + eta * 2.0 ** (-k)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_resamples))


def supermartingale_check(
    problem: Problem,
    v: ValueField,
    eta: float,
    trajectories: list,
    n_states: int = 200,
    n_resamples: int = 4000,
    seed: int = 0,
    sigma: float = 4.0,
    lattice_states_only: bool = True,
) -> SupermartingaleReport:
    """Check ``E[M_k | x_{k-1}] <= M_{k-1}`` with ``M_k = v(x_k) + eta 2^-k``.

    States ``x_{k-1}`` are drawn from the non-terminal positions of
    ``trajectories`` (by default only those sitting on lattice nodes, where
    ``v`` is the discrete fixed point rather than an interpolant).  A state
    is a violation when the resampled mean exceeds ``M_{k-1}`` by more than
    ``sigma`` standard errors.
    """
    s_a, s_b = greedy_strategies(v, eta)
    grid = problem.grid
    pool = []
    for t in trajectories:
        last = len(t.positions) - 1 if t.exit_index is None else t.exit_index - 1
        for j in range(last + 1):
            pool.append((j, t.positions[j]))
    if lattice_states_only and pool:
        on = _on_lattice(grid, np.array([p for _, p in pool]))
        pool = [s for s, keep in zip(pool, on) if keep]
    report = SupermartingaleReport(float(eta), 0, int(n_resamples), float(sigma))
    if not pool:
        return report
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=min(n_states, len(pool)), replace=False)
    report.n_states = len(picks)
    for sid, i in enumerate(sorted(picks)):
        j, x = pool[i]
        lhs, se = conditional_expectation(problem, v, s_a, s_b, x, j + 1, eta, n_resamples, seed + 1, sid)
        rhs = float(problem.field_value(v, x[None, :])[0]) + eta * 2.0 ** (-j)
        excess = (lhs - rhs) / se if se > 0 else (np.inf if lhs - rhs > 1e-12 else 0.0)
        report.max_excess_sigma = max(report.max_excess_sigma, float(excess))
        if lhs - rhs > sigma * se + 1e-12:
            report.violations.append({
                "state": [float(c) for c in x], "k": j + 1,
                "conditional_mean": lhs, "bound": rhs, "std_error": se,
            })
    return report


@dataclass
class OptionalStoppingReport:
    horizon: int
    m0: float
    mean_stopped: float
    std_error: float
    sigma: float

    @property
    def ok(self) -> bool:
        return self.mean_stopped <= self.m0 + self.sigma * self.std_error + 1e-12


def optional_stopping_check(problem: Problem, v: ValueField, eta: float, x0, horizon: int, n_samples: int, seed: int, sigma: float = 4.0) -> OptionalStoppingReport:
    """Empirical mean of ``M_{min(tau, T)}`` against ``M_0``."""
    s_a, s_b = greedy_strategies(v, eta)
    res = simulate(problem, x0, s_a, s_b, seed, np.arange(n_samples), horizon, record=True)
    vals = np.empty(n_samples)
    for i, t in enumerate(res.trajectories):
        kk = len(t.positions) - 1
        vals[i] = problem.field_value(v, t.positions[-1][None, :])[0] + eta * 2.0 ** (-kk)
    m0 = float(problem.field_value(v, np.atleast_2d(x0))[0]) + eta
    return OptionalStoppingReport(int(horizon), m0, float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_samples)), sigma)
