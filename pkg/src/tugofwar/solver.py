"""Dynamic programming operator and its monotone fixed-point iteration.

At an Interior node ``x`` the operator is

    Tv(x) = gamma (alpha/2) (max_B v + min_B v) + gamma beta mean_B v
            + (1 - gamma) v(x + eps^2 Df/|Df|)

with ``B`` the closed eps-ball of lattice nodes, the ball mean taken as the
plain average over those nodes and the off-lattice drift value interpolated.
On BoundaryLayer nodes ``Tv = F``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .grid import BoundaryData, GridDomain, ValueField, extend_boundary
from .params import GameParams, WeightField, drift_targets, gamma

log = logging.getLogger(__name__)

if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER = "workqueue"

MONOTONE_SLACK = 1e-13


@numba.njit(parallel=True, cache=True)
def _sweep(v, out, interior, nbr_ptr, nbr_idx, c_ext, c_mean, c_drift, d_idx, d_wts):
    for t in numba.prange(interior.size):
        mx = -np.inf
        mn = np.inf
        s = 0.0
        for k in range(nbr_ptr[t], nbr_ptr[t + 1]):
            y = v[nbr_idx[k]]
            if y > mx:
                mx = y
            if y < mn:
                mn = y
            s += y
        u = 0.0
        for q in range(d_idx.shape[1]):
            u += d_wts[t, q] * v[d_idx[t, q]]
        cnt = nbr_ptr[t + 1] - nbr_ptr[t]
        out[interior[t]] = c_ext[t] * (mx + mn) + c_mean[t] * (s / cnt) + c_drift[t] * u


@numba.njit(cache=True)
def _change(new, old, interior):
    res = 0.0
    low = np.inf
    for t in range(interior.size):
        d = new[interior[t]] - old[interior[t]]
        if abs(d) > res:
            res = abs(d)
        if d < low:
            low = d
    return res, low


@dataclass
class DPPOperator:
    """Precomputed per-node coefficients and stencils of ``T`` on a grid."""

    grid: GridDomain
    params: GameParams
    boundary: np.ndarray
    nbr_ptr: np.ndarray
    nbr_idx: np.ndarray
    c_ext: np.ndarray
    c_mean: np.ndarray
    c_drift: np.ndarray
    d_idx: np.ndarray
    d_wts: np.ndarray
    gamma: np.ndarray

    def apply(self, v: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        if out is None:
            out = np.empty_like(v)
        out[:] = self.boundary
        _sweep(
            v, out, self.grid.interior, self.nbr_ptr, self.nbr_idx,
            self.c_ext, self.c_mean, self.c_drift, self.d_idx, self.d_wts,
        )
        return out


def build_operator(grid: GridDomain, w: WeightField, F: BoundaryData, params: GameParams) -> DPPOperator:
    interior = grid.interior
    pts = grid.coords[interior]
    nb = interior[:, None] + grid.flat_offsets[None, :]
    # flat_offsets are lexicographically sorted, so rows already are too
    keep = grid.defined[nb]
    counts = keep.sum(axis=1)
    nbr_ptr = np.zeros(len(interior) + 1, dtype=np.int64)
    np.cumsum(counts, out=nbr_ptr[1:])
    nbr_idx = np.ascontiguousarray(nb[keep], dtype=np.int64)

    if len(interior):
        gam = np.asarray(gamma(pts, w, params), dtype=float)
        tgt, has = drift_targets(pts, w, params)
        try:
            d_idx, d_wts = grid.interp_stencil(tgt)
        except ValueError as exc:
            raise RuntimeError(f"drift target left the covered region: {exc}") from exc
        d_wts = np.where(has[:, None], d_wts, 0.0)
    else:
        gam = np.empty(0)
        d_idx = np.zeros((0, 2**grid.n), dtype=np.int64)
        d_wts = np.zeros((0, 2**grid.n))
        has = np.zeros(0, dtype=bool)

    boundary = extend_boundary(grid, F).values
    return DPPOperator(
        grid=grid,
        params=params,
        boundary=boundary,
        nbr_ptr=nbr_ptr,
        nbr_idx=nbr_idx,
        c_ext=gam * params.alpha / 2,
        c_mean=gam * params.beta,
        c_drift=np.where(has, 1.0 - gam, 0.0),
        d_idx=np.ascontiguousarray(d_idx),
        d_wts=np.ascontiguousarray(d_wts),
        gamma=gam,
    )


def set_workers(workers: int | None) -> None:
    if workers:
        numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))


def apply_T(v: ValueField, grid: GridDomain, w: WeightField, F: BoundaryData, params: GameParams) -> ValueField:
    op = build_operator(grid, w, F, params)
    _require_defined(v)
    return ValueField(grid, op.apply(v.values))


def _require_defined(v: ValueField):
    vals = v.values[v.grid.defined]
    if not np.all(np.isfinite(vals)):
        raise ValueError("value field must be finite on all Interior and BoundaryLayer nodes")


def residual(v: ValueField, grid: GridDomain, w: WeightField, F: BoundaryData, params: GameParams) -> float:
    """Sup norm of ``Tv - v`` over Interior nodes."""
    tv = apply_T(v, grid, w, F, params)
    if not grid.interior.size:
        return 0.0
    return float(np.max(np.abs(tv.values[grid.interior] - v.values[grid.interior])))


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    final_residual: float = float("inf")
    monotone_violations: int = 0
    converged: bool = False
    tol: float = 0.0
    max_iter: int = 0

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "monotone_violations": self.monotone_violations,
            "converged": self.converged,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "residual_history": list(self.residual_history),
        }


def initial_field(grid: GridDomain, F: BoundaryData) -> ValueField:
    """``inf F`` over the layer on Interior nodes, ``F`` on the layer."""
    v = extend_boundary(grid, F)
    low = np.min(v.values[grid.layer]) if grid.layer.size else 0.0
    v.values[grid.interior] = low
    return v


def solve_fixed_point(
    grid: GridDomain,
    w: WeightField,
    F: BoundaryData,
    params: GameParams,
    tol: float = 1e-8,
    max_iter: int = 1_000_000,
    callback=None,
    operator: DPPOperator | None = None,
):
    """Iterate ``v_j = T v_{j-1}`` from below until ``|Tv - v|_inf <= tol``.

    Sweeps are Jacobi style.  The returned field is the last iterate whose
    residual was measured; when ``max_iter`` sweeps do not reach ``tol`` the
    last iterate is returned with ``report.converged = False``.
    ``callback(j, v_prev, v_next)`` is called after every sweep if given.
    """
    if not tol >= 0:
        raise ValueError("tol must be nonnegative")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    op = operator if operator is not None else build_operator(grid, w, F, params)
    v = initial_field(grid, F).values
    nxt = np.empty_like(v)
    report = SolveReport(tol=float(tol), max_iter=int(max_iter))
    interior = grid.interior
    for j in range(1, max_iter + 1):
        op.apply(v, nxt)
        res, low = _change(nxt, v, interior) if interior.size else (0.0, 0.0)
        if callback is not None:
            callback(j, v, nxt)
        report.residual_history.append(float(res))
        if low < -MONOTONE_SLACK:
            report.monotone_violations += 1
        if res <= tol:
            report.converged = True
            break
        if j < max_iter:
            v, nxt = nxt, v
    report.iterations = len(report.residual_history)
    report.final_residual = report.residual_history[-1]
    if not report.converged:
        log.warning("fixed point not reached after %d sweeps (residual %.3e)", max_iter, report.final_residual)
    return ValueField(grid, v.copy()), report
