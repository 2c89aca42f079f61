"""Lattice discretization of the domain and its exterior boundary layer."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .params import GameParams, rowdot

INTERIOR, BOUNDARY_LAYER, OUTSIDE = 0, 1, 2
REGION_NAMES = ("Interior", "BoundaryLayer", "Outside")

_GEOM_TOL = 1e-12
# Outside nodes kept around the layer so interpolation stencils never fall off the lattice.
_PAD_CELLS = 2


class Domain:
    """Open, bounded catalog shape with closed-form distance."""

    kind: str
    n: int

    def contains(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def distance(self, x: np.ndarray) -> np.ndarray:
        """Euclidean distance from each row of ``x`` to the closure of the domain."""
        raise NotImplementedError

    @property
    def bounds(self):
        raise NotImplementedError

    @property
    def diameter(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params)}


class Box(Domain):
    def __init__(self, lo, hi, kind="box"):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if self.lo.shape != self.hi.shape or np.any(self.hi <= self.lo):
            raise ValueError(f"{kind} needs lower corner strictly below upper corner")
        self.kind = kind
        self.n = self.lo.size
        self.params = tuple(self.lo) + tuple(self.hi)

    def contains(self, x):
        x = np.atleast_2d(x)
        tol = _GEOM_TOL * max(1.0, self.diameter)
        return np.all((x > self.lo + tol) & (x < self.hi - tol), axis=1)

    def distance(self, x):
        x = np.atleast_2d(x)
        excess = np.maximum(np.maximum(self.lo - x, x - self.hi), 0.0)
        return np.linalg.norm(excess, axis=1)

    @property
    def bounds(self):
        return self.lo.copy(), self.hi.copy()


class Ball(Domain):
    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, dtype=float))
        self.radius = float(radius)
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")
        self.kind = "ball"
        self.n = self.center.size
        self.params = tuple(self.center) + (self.radius,)

    def contains(self, x):
        x = np.atleast_2d(x)
        tol = _GEOM_TOL * max(1.0, self.radius)
        return np.linalg.norm(x - self.center, axis=1) < self.radius - tol

    def distance(self, x):
        x = np.atleast_2d(x)
        return np.maximum(np.linalg.norm(x - self.center, axis=1) - self.radius, 0.0)

    @property
    def bounds(self):
        return self.center - self.radius, self.center + self.radius


class LShape(Domain):
    """``(0,s)^2`` with the closed upper-right quarter ``[s/2, s)^2`` removed."""

    def __init__(self, size):
        self.size = float(size)
        if self.size <= 0:
            raise ValueError("lshape size must be positive")
        s = self.size
        self.kind = "lshape"
        self.n = 2
        self.params = (s,)
        self._a = Box([0.0, 0.0], [s, s / 2])
        self._b = Box([0.0, 0.0], [s / 2, s])

    def contains(self, x):
        x = np.atleast_2d(x)
        s = self.size
        tol = _GEOM_TOL * max(1.0, s)
        in_square = np.all((x > tol) & (x < s - tol), axis=1)
        notch = (x[:, 0] > s / 2 - tol) & (x[:, 1] > s / 2 - tol)
        return in_square & ~notch

    def distance(self, x):
        return np.minimum(self._a.distance(x), self._b.distance(x))

    @property
    def bounds(self):
        return np.zeros(2), np.full(2, self.size)


DOMAIN_KINDS = ("interval", "box", "ball", "lshape")


def make_domain(kind: str, params: Sequence[float]) -> Domain:
    """Catalog lookup.

    - ``interval``: ``[a, b]``
    - ``box``: ``[lo_1..lo_n, hi_1..hi_n]``
    - ``ball``: ``[c_1..c_n, r]``
    - ``lshape``: ``[s]``
    """
    prm = [float(c) for c in params]
    if kind == "interval":
        if len(prm) != 2:
            raise ValueError("interval takes [a, b]")
        return Box([prm[0]], [prm[1]], kind="interval")
    if kind == "box":
        if len(prm) < 2 or len(prm) % 2:
            raise ValueError("box takes [lo_1..lo_n, hi_1..hi_n]")
        k = len(prm) // 2
        return Box(prm[:k], prm[k:])
    if kind == "ball":
        if len(prm) < 2:
            raise ValueError("ball takes [c_1..c_n, r]")
        return Ball(prm[:-1], prm[-1])
    if kind == "lshape":
        if len(prm) != 1:
            raise ValueError("lshape takes [s]")
        return LShape(prm[0])
    raise ValueError(f"unknown domain kind {kind!r}; expected one of {DOMAIN_KINDS}")


def ball_offsets(radius_cells: float, n: int) -> np.ndarray:
    """Integer offsets ``k`` with ``|k| <= radius_cells``, lexicographically sorted."""
    r = int(np.floor(radius_cells * (1 + 1e-12)))
    rng = range(-r, r + 1)
    lim = radius_cells**2 * (1 + 1e-12)
    offs = [k for k in itertools.product(rng, repeat=n) if sum(c * c for c in k) <= lim]
    return np.array(offs, dtype=np.int64).reshape(-1, n)


class GridDomain:
    """Axis-aligned lattice ``h * k`` covering the domain and its eps-layer.

    Nodes are addressed by flat C-order index, so sorting by flat index is the
    lexicographic order of the integer multi-index.
    """

    def __init__(self, domain: Domain, eps: float, h: float):
        if h <= 0:
            raise ValueError("lattice spacing h must be positive")
        if h > eps / 4 * (1 + 1e-12):
            raise ValueError(f"resolution rule violated: h={h} must satisfy h <= eps/4 = {eps / 4}")
        self.domain = domain
        self.eps = float(eps)
        self.h = float(h)
        self.n = domain.n
        lo, hi = domain.bounds
        self.k_lo = np.floor((lo - eps) / h - 1e-9).astype(np.int64) - _PAD_CELLS
        self.k_hi = np.ceil((hi + eps) / h + 1e-9).astype(np.int64) + _PAD_CELLS
        self.shape = tuple(int(c) for c in (self.k_hi - self.k_lo + 1))
        self.strides = np.array(
            [int(np.prod(self.shape[d + 1:])) for d in range(self.n)], dtype=np.int64
        )
        self.size = int(np.prod(self.shape))

        idx = np.indices(self.shape).reshape(self.n, -1).T
        self.coords = (idx + self.k_lo) * self.h
        inside = domain.contains(self.coords)
        near = domain.distance(self.coords) <= self.eps * (1 + 1e-12)
        region = np.full(self.size, OUTSIDE, dtype=np.int8)
        region[near] = BOUNDARY_LAYER
        region[inside] = INTERIOR
        self.region = region
        self.interior = np.flatnonzero(region == INTERIOR)
        self.layer = np.flatnonzero(region == BOUNDARY_LAYER)
        self.defined = region != OUTSIDE

        self.offsets = ball_offsets(self.eps / self.h, self.n)
        self.flat_offsets = self.offsets @ self.strides
        if self.interior.size:
            self._check_balls()

    @property
    def bbox(self):
        lo, hi = self.domain.bounds
        return lo - self.eps, hi + self.eps

    def _check_balls(self):
        mi = self.multi_index(self.interior)
        lo = mi.min(axis=0) + self.offsets.min(axis=0)
        hi = mi.max(axis=0) + self.offsets.max(axis=0)
        if np.any(lo < 0) or np.any(hi >= np.array(self.shape)):
            raise RuntimeError("lattice does not cover the eps-balls of interior nodes")
        nb = self.interior[:, None] + self.flat_offsets[None, :]
        if np.any(self.region[nb] == OUTSIDE):
            raise RuntimeError("an interior eps-ball reaches an Outside node")

    def multi_index(self, flat):
        return np.stack(np.unravel_index(np.asarray(flat), self.shape), axis=-1)

    def flat_index(self, multi):
        multi = np.asarray(multi, dtype=np.int64)
        return multi @ self.strides

    def node_of(self, x) -> int:
        """Flat index of the lattice node at (or nearest to) point ``x``."""
        return int(self.nearest_nodes(np.atleast_2d(x))[0])

    def nearest_nodes(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = np.rint(x / self.h).astype(np.int64) - self.k_lo
        if np.any(k < 0) or np.any(k >= np.array(self.shape)):
            raise ValueError("point lies outside the lattice")
        return k @ self.strides

    def region_of(self, x):
        """Continuum classification of arbitrary points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.full(len(x), OUTSIDE, dtype=np.int8)
        out[self.domain.distance(x) <= self.eps * (1 + 1e-12)] = BOUNDARY_LAYER
        out[self.domain.contains(x)] = INTERIOR
        return out

    def interp_stencil(self, x):
        """Multilinear stencil: corner flat indices ``(m, 2^n)`` and weights.

        Corners with zero weight are redirected to a defined corner so callers
        never touch undefined values.  Raises ``ValueError`` if a corner with
        positive weight is not an Interior or BoundaryLayer node.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = x / self.h - self.k_lo
        snapped = np.rint(s)
        s = np.where(np.abs(s - snapped) < 1e-9, snapped, s)
        base = np.floor(s).astype(np.int64)
        base = np.minimum(base, np.array(self.shape) - 2)
        t = s - base
        if np.any(base < 0) or np.any(t < -1e-9) or np.any(t > 1 + 1e-9):
            raise ValueError("point lies outside the covered lattice")
        t = np.clip(t, 0.0, 1.0)
        m = len(x)
        corners = np.array(list(itertools.product((0, 1), repeat=self.n)), dtype=np.int64)
        idx = np.empty((m, len(corners)), dtype=np.int64)
        wts = np.empty((m, len(corners)))
        for c, bits in enumerate(corners):
            idx[:, c] = (base + bits) @ self.strides
            wts[:, c] = np.prod(np.where(bits == 1, t, 1.0 - t), axis=1)
        bad = (wts > 0) & ~self.defined[idx]
        if np.any(bad):
            raise ValueError("interpolation stencil touches nodes outside the domain and its layer")
        best = idx[np.arange(m), np.argmax(wts, axis=1)]
        idx = np.where(wts > 0, idx, best[:, None])
        return idx, wts

    def ball_nodes(self, node: int, eps: float | None = None) -> np.ndarray:
        return ball_nodes(self, node, eps)


def build_grid(domain, params: GameParams, h: float) -> GridDomain:
    """Lattice for ``domain`` (a ``Domain`` or ``{"kind", "params"}`` dict)."""
    if isinstance(domain, dict):
        domain = make_domain(domain["kind"], domain.get("params", []))
    elif isinstance(domain, (tuple, list)):
        domain = make_domain(domain[0], domain[1])
    if domain.n != params.n:
        raise ValueError(f"domain dimension {domain.n} does not match n={params.n}")
    return GridDomain(domain, params.eps, float(h))


def ball_nodes(grid: GridDomain, node: int, eps: float | None = None) -> np.ndarray:
    """Nodes of the closed eps-ball around ``node``, minus Outside nodes, sorted."""
    if grid.region[node] != INTERIOR:
        raise ValueError("ball_nodes requires an Interior node")
    offs = grid.flat_offsets if eps is None else ball_offsets(eps / grid.h, grid.n) @ grid.strides
    nb = node + offs
    return np.sort(nb[grid.region[nb] != OUTSIDE])


class ValueField:
    """Real values on the lattice; NaN on Outside nodes."""

    def __init__(self, grid: GridDomain, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.size,):
            raise ValueError("value array does not match the lattice size")
        self.grid = grid
        self.values = values

    def copy(self) -> "ValueField":
        return ValueField(self.grid, self.values.copy())

    def at_nodes(self, nodes) -> np.ndarray:
        return self.values[np.asarray(nodes)]

    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior]

    def __call__(self, x):
        return value_at(self.grid, self, x)


@dataclass
class BoundaryData:
    """Boundary payoff ``F``; ``lipschitz`` asks for the 1-Lipschitz check."""

    F_eval: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    params: tuple = ()
    lipschitz: bool = False

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        vals = np.asarray(self.F_eval(np.atleast_2d(x)), dtype=float).reshape(-1)
        return vals[0] if single else vals

    def lipschitz_constant(self, grid: GridDomain, n_pairs: int = 4000) -> float:
        """Largest sampled difference quotient over BoundaryLayer node pairs."""
        pts = grid.coords[grid.layer]
        if len(pts) < 2:
            return 0.0
        vals = self(pts)
        rng = np.random.default_rng(2024)
        i = rng.integers(0, len(pts), n_pairs)
        j = rng.integers(0, len(pts), n_pairs)
        keep = i != j
        d = np.linalg.norm(pts[i[keep]] - pts[j[keep]], axis=1)
        q = np.abs(vals[i[keep]] - vals[j[keep]]) / d
        return float(q.max()) if q.size else 0.0


BOUNDARY_KINDS = ("constant", "affine", "quadratic")


def make_boundary(kind: str, params: Sequence[float], n: int, lipschitz: bool = False) -> BoundaryData:
    """Catalog boundary data.

    - ``constant``: ``[c]``
    - ``affine``: ``[b, a_1..a_n]``, F = b + a.x
    - ``quadratic``: ``[b, a_1..a_n, q]``, F = b + a.x + q|x|^2
    """
    prm = np.asarray(params, dtype=float).ravel()
    if kind == "constant":
        if prm.size != 1:
            raise ValueError("constant boundary data takes [c]")
        c = prm[0]
        fn = lambda x: np.full(len(x), c)
    elif kind == "affine":
        if prm.size != n + 1:
            raise ValueError(f"affine boundary data takes {n + 1} parameters [b, a_1..a_n]")
        b, a = prm[0], prm[1:].copy()
        fn = lambda x: b + rowdot(x, a)
    elif kind == "quadratic":
        if prm.size != n + 2:
            raise ValueError(f"quadratic boundary data takes {n + 2} parameters [b, a_1..a_n, q]")
        b, a, q = prm[0], prm[1:-1].copy(), prm[-1]
        fn = lambda x: b + rowdot(x, a) + q * rowdot(x * x, np.ones(n))
    else:
        raise ValueError(f"unknown boundary kind {kind!r}; expected one of {BOUNDARY_KINDS}")
    return BoundaryData(fn, name=kind, params=tuple(prm), lipschitz=lipschitz)


def extend_boundary(grid: GridDomain, F: BoundaryData) -> ValueField:
    """Field equal to ``F`` on BoundaryLayer nodes and NaN elsewhere."""
    values = np.full(grid.size, np.nan)
    vals = F(grid.coords[grid.layer]) if grid.layer.size else np.empty(0)
    if not np.all(np.isfinite(vals)):
        bad = grid.coords[grid.layer][~np.isfinite(vals)][0]
        raise ValueError(f"boundary data is not finite at layer node {bad}")
    values[grid.layer] = vals
    return ValueField(grid, values)


def value_at(grid: GridDomain, field: ValueField, x):
    """Multilinear interpolation of ``field`` at one point or an ``(m, n)`` array."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    idx, wts = grid.interp_stencil(np.atleast_2d(x))
    vals = field.values[idx]
    if np.any(~np.isfinite(vals[wts > 0])):
        raise ValueError("field is undefined at an interpolation corner")
    out = np.sum(wts * vals, axis=1)
    return float(out[0]) if single else out
