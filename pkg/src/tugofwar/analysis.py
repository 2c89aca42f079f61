"""Independent checks: Taylor consistency, ball moments, 1D oracle, convergence studies."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .params import DELTA_GRAD, GameParams, WeightField, gamma, make_params
from .problem import Problem

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


class SmoothTestFunction:
    """C^2 test function with closed-form gradient and Hessian."""

    def __init__(self, f, grad, hess, n: int, kind: str = "custom", params=()):
        self._f, self._g, self._h = f, grad, hess
        self.n = n
        self.kind = kind
        self.params = tuple(params)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(self._f(x[None, :])[0])
        return self._f(x)

    def grad(self, x):
        return np.asarray(self._g(np.asarray(x, dtype=float)), dtype=float)

    def hessian(self, x):
        return np.asarray(self._h(np.asarray(x, dtype=float)), dtype=float)

    def self_check(self, points, rtol: float = 1e-5, step: float = 1e-5) -> None:
        """Check gradient and Hessian against central differences at ``points``."""
        for x in np.atleast_2d(points):
            g = self.grad(x)
            H = self.hessian(x)
            eye = np.eye(self.n) * step
            g_fd = np.array([(self(x + e) - self(x - e)) / (2 * step) for e in eye])
            H_fd = np.array([(self.grad(x + e) - self.grad(x - e)) / (2 * step) for e in eye])
            gscale = max(np.max(np.abs(g)), 1.0)
            hscale = max(np.max(np.abs(H)), 1.0)
            if not np.allclose(g_fd, g, rtol=rtol, atol=rtol * gscale):
                raise ValueError(f"{self.kind}: gradient disagrees with finite differences at {x}")
            if not np.allclose(H_fd, H, rtol=rtol, atol=rtol * hscale):
                raise ValueError(f"{self.kind}: Hessian disagrees with finite differences at {x}")


def make_test_function(kind: str, params: Sequence[float], n: int) -> SmoothTestFunction:
    """Catalog of smooth test functions.

    - ``affine``: ``[b, g_1..g_n]``, phi = b + g.x
    - ``quadratic``: ``[A_11..A_nn (row major), g_1..g_n, c]``, phi = x.Ax/2 + g.x + c
    - ``separable_power``: ``[c_1..c_n, k_1..k_n]``, phi = sum c_i x_i^k_i
    """
    prm = np.asarray(params, dtype=float).ravel()
    if kind == "affine":
        if prm.size != n + 1:
            raise ValueError(f"affine test function takes {n + 1} parameters")
        b, g = prm[0], prm[1:].copy()
        return SmoothTestFunction(
            lambda x: b + x @ g, lambda x: g.copy(), lambda x: np.zeros((n, n)), n, kind, prm
        )
    if kind == "quadratic":
        if prm.size != n * n + n + 1:
            raise ValueError(f"quadratic test function takes {n * n + n + 1} parameters")
        A = prm[: n * n].reshape(n, n)
        A = (A + A.T) / 2
        g = prm[n * n: n * n + n].copy()
        c = prm[-1]
        return SmoothTestFunction(
            lambda x: 0.5 * np.einsum("mi,ij,mj->m", x, A, x) + x @ g + c,
            lambda x: A @ x + g,
            lambda x: A.copy(),
            n, kind, prm,
        )
    if kind == "separable_power":
        if prm.size != 2 * n:
            raise ValueError(f"separable_power test function takes {2 * n} parameters")
        c, k = prm[:n].copy(), prm[n:].copy()
        return SmoothTestFunction(
            lambda x: np.sum(c * x**k, axis=1),
            lambda x: c * k * x ** (k - 1),
            lambda x: np.diag(c * k * (k - 1) * x ** (k - 2)),
            n, kind, prm,
        )
    raise ValueError(f"unknown test function kind {kind!r}")


# ---------------------------------------------------------------- generator


def generator_terms(phi: SmoothTestFunction, x, w: WeightField, params: GameParams) -> dict:
    """The pieces of the predicted second-order generator at ``x``.

    ``laplacian = f lap(phi)``, ``directional = f (p-2) D2phi xi.xi`` with
    ``xi = Dphi/|Dphi|``, ``drift = Dphi.Df`` and
    ``denominator = |Df| + 2 f (p+n)``.
    """
    x = np.asarray(x, dtype=float)
    g = phi.grad(x)
    gn = np.linalg.norm(g)
    if gn < DELTA_GRAD:
        raise ValueError("predicted generator needs a nondegenerate gradient of the test function")
    xi = g / gn
    H = phi.hessian(x)
    f = float(w.value(x))
    df = w.grad(x)
    dfn = float(np.linalg.norm(df))
    if dfn < DELTA_GRAD:
        df, dfn = np.zeros_like(df), 0.0
    return {
        "laplacian": f * float(np.trace(H)),
        "directional": f * (params.p - 2) * float(xi @ H @ xi),
        "drift": float(g @ df),
        "denominator": dfn + 2 * f * (params.p + params.n),
    }


def predicted_generator(phi: SmoothTestFunction, x, w: WeightField, params: GameParams) -> float:
    """Limit of ``(T phi(x) - phi(x)) / eps^2`` as ``eps -> 0``."""
    t = generator_terms(phi, x, w, params)
    return (t["laplacian"] + t["directional"] + t["drift"]) / t["denominator"]


# ------------------------------------------------------- continuum operator


def _golden_max(fun, a: float, b: float, tol: float) -> tuple[float, float]:
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    best = (a, fun(a)), (b, fun(b)), (c, fc), (d, fd)
    return max(best, key=lambda t: t[1])


def _to_cartesian(coords: np.ndarray, n: int) -> np.ndarray:
    """Hyperspherical ``(r, angles...)`` to unit-free offsets, for n <= 3."""
    r = coords[..., 0]
    if n == 1:
        return coords[..., :1]
    if n == 2:
        th = coords[..., 1]
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
    th, ph = coords[..., 1], coords[..., 2]
    return np.stack([r * np.sin(th) * np.cos(ph), r * np.sin(th) * np.sin(ph), r * np.cos(th)], axis=-1)


def _ball_extremum(phi, x, eps: float, sign: float, sweeps: int = 8) -> float:
    """``sign * max(sign * phi)`` over the closed ball, by dense sampling plus golden refinement."""
    n = x.size
    if n == 1:
        lo_hi = [(-eps, eps)]
        dense = [np.linspace(-eps, eps, 801)]
    elif n == 2:
        lo_hi = [(0.0, eps), (-np.inf, np.inf)]
        dense = [np.linspace(0.0, eps, 41), np.linspace(0.0, 2 * np.pi, 720, endpoint=False)]
    elif n == 3:
        lo_hi = [(0.0, eps), (0.0, np.pi), (-np.inf, np.inf)]
        dense = [np.linspace(0.0, eps, 17), np.linspace(0.0, np.pi, 91), np.linspace(0.0, 2 * np.pi, 180, endpoint=False)]
    else:
        raise ValueError("continuum extrema are implemented for n <= 3")

    def value(c):
        return sign * phi(x + _to_cartesian(np.asarray(c, dtype=float), n))

    mesh = np.stack(np.meshgrid(*dense, indexing="ij"), axis=-1).reshape(-1, n)
    vals = sign * phi(x + _to_cartesian(mesh, n))
    spacing = [d[1] - d[0] for d in dense]
    starts = [mesh[np.argmax(vals)]]
    if n > 1:
        on_sphere = np.isclose(mesh[:, 0], eps)
        starts.append(mesh[on_sphere][np.argmax(vals[on_sphere])])
    best = -np.inf
    for start, pin_radius in zip(starts, (False, True)):
        c = start.copy()
        width = np.array(spacing)
        for _ in range(sweeps):
            for d in range(n):
                if pin_radius and d == 0:
                    c[0] = eps
                    continue
                a = max(c[d] - width[d], lo_hi[d][0])
                b = min(c[d] + width[d], lo_hi[d][1])
                tol = 1e-13 * max(eps, 1.0) if d == 0 else 1e-12

                def along(t, d=d):
                    cc = c.copy()
                    cc[d] = t
                    return value(cc)

                c[d], _ = _golden_max(along, a, b, tol)
            width = width / 2
        best = max(best, float(value(c)))
    return sign * best


def ball_extrema(phi, x, eps: float) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return _ball_extremum(phi, x, eps, 1.0), _ball_extremum(phi, x, eps, -1.0)


def ball_quadrature(n: int, eps: float, order: int = 16):
    """Tensor-product Gauss nodes and normalized weights for the mean over ``B_eps(0)``."""
    gl, gw = np.polynomial.legendre.leggauss(order)
    if n == 1:
        return (eps * gl)[:, None], gw / gw.sum()
    r = eps * (gl + 1) / 2
    m_ph = 4 * order
    ph = 2 * np.pi * np.arange(m_ph) / m_ph
    if n == 2:
        R, P = np.meshgrid(r, ph, indexing="ij")
        W = np.outer(gw * r, np.ones(m_ph))
        pts = np.stack([R * np.cos(P), R * np.sin(P)], axis=-1).reshape(-1, 2)
    elif n == 3:
        R, U, P = np.meshgrid(r, gl, ph, indexing="ij")
        W = (gw * r**2)[:, None, None] * gw[None, :, None] * np.ones(m_ph)[None, None, :]
        S = np.sqrt(1 - U**2)
        pts = np.stack([R * S * np.cos(P), R * S * np.sin(P), R * U], axis=-1).reshape(-1, 3)
    else:
        raise ValueError("ball quadrature is implemented for n <= 3")
    W = W.ravel()
    return pts, W / W.sum()


def ball_mean(phi, x, eps: float, order: int = 16) -> float:
    x = np.asarray(x, dtype=float)
    pts, wts = ball_quadrature(x.size, eps, order)
    return float(wts @ phi(x + pts))


def continuum_operator(phi: SmoothTestFunction, x, w: WeightField, params: GameParams) -> float:
    """One application of the game operator to ``phi`` at ``x`` over the continuum ball."""
    x = np.asarray(x, dtype=float)
    eps = params.eps
    gam = float(gamma(x, w, params))
    mx, mn = ball_extrema(phi, x, eps)
    out = gam * params.alpha / 2 * (mx + mn) + gam * params.beta * ball_mean(phi, x, eps)
    df = w.grad(x)
    dfn = float(np.linalg.norm(df))
    if dfn >= DELTA_GRAD:
        out += (1 - gam) * phi(x + eps**2 * df / dfn)
    return out


# ------------------------------------------------------------------ studies


def fit_order(params, distances) -> float:
    """Least-squares slope of ``log distance`` against ``log parameter``."""
    params = np.asarray(params, dtype=float)
    distances = np.asarray(distances, dtype=float)
    ok = (params > 0) & (distances > 0) & np.isfinite(distances)
    if ok.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(params[ok]), np.log(distances[ok]), 1)
    return float(slope)


@dataclass
class StudyResult:
    parameter: str
    values: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    order: float = float("nan")
    rows: list = field(default_factory=list)

    def order_so_far(self) -> list:
        return [fit_order(self.values[: i + 1], self.distances[: i + 1]) if i else float("nan") for i in range(len(self.values))]

    def nonincreasing(self, slack: float = 0.10) -> bool:
        """Each distance at most ``(1 + slack)`` times its predecessor."""
        d = self.distances
        return all(d[i + 1] <= (1 + slack) * d[i] for i in range(len(d) - 1))

    def to_dict(self):
        return {
            "parameter": self.parameter,
            "values": list(self.values),
            "distances": list(self.distances),
            "order": self.order,
            "rows": self.rows,
        }


def taylor_consistency(phi, x, w: WeightField, params: GameParams, eps_list) -> StudyResult:
    """Deviation of ``(T phi - phi)/eps^2`` from the predicted generator along ``eps_list``."""
    x = np.asarray(x, dtype=float)
    pred = predicted_generator(phi, x, w, params)
    res = StudyResult("eps")
    for eps in eps_list:
        prm = make_params(params.p, params.n, eps)
        quotient = (continuum_operator(phi, x, w, prm) - phi(x)) / eps**2
        dev = abs(quotient - pred)
        res.values.append(float(eps))
        res.distances.append(float(dev))
        res.rows.append({"eps": float(eps), "quotient": float(quotient), "predicted": float(pred), "deviation": float(dev)})
    res.order = fit_order(res.values, res.distances) if len(res.values) >= 3 else float("nan")
    return res


def moment_estimate(n: int, eps: float, quadrature_points: int, method: str = "mc", seed: int = 0) -> float:
    """Estimate of the ball mean of ``h_1^2`` over ``B_eps(0)``.

    ``mc`` averages over ``quadrature_points`` uniform samples in the ball;
    ``grid`` uses the midpoints of a cube grid with about that many cells.
    """
    if n not in (1, 2, 3):
        raise ValueError("moment check supports n in {1, 2, 3}")
    if method == "mc":
        rng = np.random.default_rng(seed)
        got, total, m = 0, 0.0, int(quadrature_points)
        while got < m:
            h = rng.uniform(-eps, eps, size=(min(2 * (m - got) + 64, 1 << 20), n))
            h = h[np.sum(h * h, axis=1) <= eps * eps][: m - got]
            total += float(np.sum(h[:, 0] ** 2))
            got += len(h)
        return total / m
    if method == "grid":
        k = max(1, int(round(quadrature_points ** (1.0 / n))))
        c = eps * ((np.arange(k) + 0.5) / k * 2 - 1)
        mesh = np.stack(np.meshgrid(*([c] * n), indexing="ij"), axis=-1).reshape(-1, n)
        inside = np.sum(mesh * mesh, axis=1) <= eps * eps
        return float(np.mean(mesh[inside, 0] ** 2))
    raise ValueError(f"unknown quadrature method {method!r}")


def moment_reference(n: int, eps: float) -> float:
    return eps**2 / (n + 2)


def moment_check(n: int, eps: float, quadrature_points: int, method: str = "mc", seed: int = 0) -> float:
    """Relative deviation of the estimated ball second moment from ``eps^2/(n+2)``."""
    ref = moment_reference(n, eps)
    return abs(moment_estimate(n, eps, quadrature_points, method, seed) - ref) / ref


def weighted_p_harmonic_1d(f: Callable, a: float, b: float, Fa: float, Fb: float, p: float, quad_points: int = 2000):
    """Reference solution of the 1D weighted p-Laplace Dirichlet problem.

    The flux ``f |u'|^{p-2} u'`` is constant, so ``u`` is an affine image of
    the primitive of ``f^{-1/(p-1)}``, integrated here by composite
    Gauss-Legendre over ``quad_points`` panels.
    """
    if not b > a:
        raise ValueError("need a < b")
    gl, gw = np.polynomial.legendre.leggauss(5)
    edges = np.linspace(a, b, int(quad_points) + 1)
    expo = -1.0 / (p - 1.0)

    def integrand(t):
        vals = np.asarray(f(t), dtype=float)
        if np.any(~(vals > 0)):
            raise ValueError("weight must be positive on the interval")
        return vals**expo

    def panel_integral(lo, hi):
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        t = mid[:, None] + half[:, None] * gl[None, :]
        return half * (integrand(t.ravel()).reshape(t.shape) @ gw)

    cum = np.concatenate([[0.0], np.cumsum(panel_integral(edges[:-1], edges[1:]))])
    total = cum[-1]
    if not np.isfinite(total):
        raise ValueError("quadrature of the weight is not finite")

    def u(x):
        x = np.asarray(x, dtype=float)
        xs = np.clip(np.atleast_1d(x).ravel(), a, b)
        j = np.clip(np.searchsorted(edges, xs, side="right") - 1, 0, len(edges) - 2)
        part = cum[j] + panel_integral(edges[j], xs)
        out = Fa + (Fb - Fa) * part / total
        return out.reshape(np.shape(x)) if np.ndim(x) else float(out[0])

    return u


@dataclass
class OracleInstance:
    """Problem family with a reference solution ``reference(points) -> values``."""

    domain: dict
    weight: dict
    boundary: dict
    p: float
    reference: Optional[Callable] = None
    name: str = "instance"

    def problem(self, eps: float, h: float | None = None, p: float | None = None) -> Problem:
        return Problem.from_catalog(self.domain, self.weight, self.boundary, self.p if p is None else p, eps, h)


def weighted_1d_instance(a: float = 0.0, b: float = 1.0, slope: float = 1.0, p: float = 4.0, Fa: float = 0.0, Fb: float = 1.0, quad_points: int = 4000) -> OracleInstance:
    """Interval ``(a, b)`` with ``f = 1 + slope x`` and affine data through ``(a, Fa)``, ``(b, Fb)``."""
    s = (Fb - Fa) / (b - a)
    u = weighted_p_harmonic_1d(lambda t: 1.0 + slope * t, a, b, Fa, Fb, p, quad_points)
    weight = {"kind": "affine", "params": [slope]} if slope else {"kind": "constant", "params": [1.0]}
    return OracleInstance(
        domain={"kind": "interval", "params": [a, b]},
        weight=weight,
        boundary={"kind": "affine", "params": [Fa - s * a, s]},
        p=p,
        reference=lambda pts: u(np.asarray(pts)[:, 0]),
        name=f"interval-affine-weight-{slope}",
    )


def affine_limit_instance(domain: dict, weight: dict, slope: Sequence[float], offset: float = 0.0) -> OracleInstance:
    """Affine data ``F = offset + slope.x``; the infinity-harmonic reference is ``F`` itself."""
    a = np.asarray(slope, dtype=float)
    if np.linalg.norm(a) > 1 + 1e-12:
        raise ValueError("the p-limit instance needs boundary data with Lipschitz constant at most 1")
    return OracleInstance(
        domain=domain,
        weight=weight,
        boundary={"kind": "affine", "params": [offset, *a], "lipschitz": True},
        p=4.0,
        reference=lambda pts: offset + np.asarray(pts) @ a,
        name="affine-infinity-harmonic",
    )


def oracle_distance(problem: Problem, v, reference: Callable) -> float:
    grid = problem.grid
    pts = grid.coords[grid.interior]
    return float(np.max(np.abs(v.values[grid.interior] - reference(pts))))


def _solve_row(problem: Problem, reference, tol, max_iter, **extra):
    v, rep = problem.solve(tol=tol, max_iter=max_iter)
    dist = oracle_distance(problem, v, reference)
    row = {
        **extra,
        "h": problem.grid.h,
        "distance": dist,
        "iterations": rep.iterations,
        "final_residual": rep.final_residual,
        "converged": rep.converged,
        "monotone_violations": rep.monotone_violations,
    }
    return dist, row


def epsilon_study(instance: OracleInstance, eps_list, tol: float = 1e-8, max_iter: int = 1_000_000) -> StudyResult:
    """Sup distance to the oracle for each eps, with ``h = eps / 4``."""
    res = StudyResult("eps")
    for eps in eps_list:
        problem = instance.problem(eps, eps / 4)
        dist, row = _solve_row(problem, instance.reference, tol, max_iter, eps=float(eps))
        res.values.append(float(eps))
        res.distances.append(dist)
        res.rows.append(row)
    if len(res.values) >= 3:
        res.order = fit_order(res.values, res.distances)
    return res


def p_limit_study(instance: OracleInstance, p_list, eps: float = 0.02, tol: float = 1e-8, max_iter: int = 1_000_000) -> StudyResult:
    """Sup distance to the infinity-harmonic reference for each p at fixed eps and ``h = eps/4``."""
    if instance.domain["kind"] == "lshape":
        raise ValueError("the p-limit study is restricted to domains with C^1 boundary pieces (interval, box, ball)")
    res = StudyResult("p")
    for p in p_list:
        problem = instance.problem(eps, eps / 4, p=p)
        dist, row = _solve_row(problem, instance.reference, tol, max_iter, p=float(p), alpha=problem.params.alpha)
        res.values.append(float(p))
        res.distances.append(dist)
        res.rows.append(row)
    if len(res.values) >= 3:
        res.order = fit_order(res.values, res.distances)
    return res
