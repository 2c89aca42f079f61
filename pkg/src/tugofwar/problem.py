"""A discretized Dirichlet problem: lattice, weight, boundary data, game constants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import INTERIOR, BoundaryData, GridDomain, ValueField, build_grid, make_boundary, make_domain
from .params import GameParams, WeightField, make_params, make_weight
from .solver import build_operator, solve_fixed_point

# sampled difference quotients of an exactly 1-Lipschitz F may round past 1
LIPSCHITZ_LIMIT = 1.0 + 1e-9


@dataclass
class Problem:
    grid: GridDomain
    weight: WeightField
    boundary: BoundaryData
    params: GameParams

    @classmethod
    def from_catalog(cls, domain: dict, weight: dict, boundary: dict, p: float, eps: float, h: float | None = None):
        """Build from catalog dictionaries ``{"kind": ..., "params": [...]}``.

        ``h`` defaults to ``eps / 4``.
        """
        dom = make_domain(domain["kind"], domain.get("params", []))
        params = make_params(p, dom.n, eps)
        grid = build_grid(dom, params, eps / 4 if h is None else h)
        lo, hi = dom.bounds
        w = make_weight(weight["kind"], weight.get("params", []), lo, hi)
        F = make_boundary(
            boundary["kind"], boundary.get("params", []), dom.n,
            lipschitz=bool(boundary.get("lipschitz", False)),
        )
        if F.lipschitz:
            lip = F.lipschitz_constant(grid)
            if lip > LIPSCHITZ_LIMIT:
                raise ValueError(
                    f"boundary data is flagged 1-Lipschitz but its sampled Lipschitz constant is {lip:.6g} > 1"
                )
        return cls(grid, w, F, params)

    def operator(self):
        return build_operator(self.grid, self.weight, self.boundary, self.params)

    def solve(self, tol: float = 1e-8, max_iter: int = 1_000_000, **kw):
        return solve_fixed_point(self.grid, self.weight, self.boundary, self.params, tol=tol, max_iter=max_iter, **kw)

    def field_value(self, v: ValueField, x) -> np.ndarray:
        """Value of ``v`` at continuum points: interpolated in the domain, ``F`` outside."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty(len(x))
        inside = self.grid.domain.contains(x)
        if np.any(inside):
            out[inside] = v(x[inside])
        if np.any(~inside):
            out[~inside] = self.boundary(x[~inside])
        return out

    def interior_points(self) -> np.ndarray:
        return self.grid.coords[self.grid.region == INTERIOR]
