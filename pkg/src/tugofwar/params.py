"""Game constants, weight functions and the per-position move distribution."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DELTA_GRAD = 1e-12
_BOUND_RTOL = 1e-12


class WeightBoundError(ValueError):
    """Raised when a weight evaluation leaves its declared bounds."""


@dataclass(frozen=True)
class GameParams:
    p: float
    n: int
    eps: float
    alpha: float = field(init=False)
    beta: float = field(init=False)

    def __post_init__(self):
        if not np.isfinite(self.p) or self.p <= 2:
            raise ValueError(f"p must satisfy p > 2 (got p={self.p})")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"dimension n must be a positive integer (got n={self.n})")
        if not (0 < self.eps <= 1):
            raise ValueError(f"eps must lie in (0, 1] (got eps={self.eps})")
        alpha = (self.p - 2.0) / (self.p + self.n)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", 1.0 - alpha)


def make_params(p: float, n: int, eps: float) -> GameParams:
    return GameParams(float(p), n, float(eps))


def rowdot(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Row-wise ``x . a`` with a fixed per-row operation order.

    BLAS matrix-vector products may round differently depending on the
    batch size, which would make trajectories depend on how a batch is split.
    """
    out = x[:, 0] * a[0]
    for d in range(1, x.shape[1]):
        out = out + x[:, d] * a[d]
    return out


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x, x.ndim == 1


class WeightField:
    """Positive C^1 weight f with gradient and declared bounds.

    ``f_eval`` and ``grad_eval`` act on arrays of shape ``(m, n)`` and return
    shapes ``(m,)`` and ``(m, n)``.  When ``grad_eval`` is omitted the
    gradient is taken by central differences with step ``grad_step``.
    Every evaluation checks ``f_lower <= f <= f_upper``.
    """

    def __init__(
        self,
        f_eval: Callable[[np.ndarray], np.ndarray],
        f_lower: float,
        f_upper: float,
        n: int,
        grad_eval: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        grad_step: float = 1e-6,
        name: str = "custom",
        params: Sequence[float] = (),
    ):
        if not (0 < f_lower <= f_upper < np.inf):
            raise ValueError(
                f"weight bounds must satisfy 0 < f_lower <= f_upper < inf "
                f"(got {f_lower}, {f_upper})"
            )
        self._f = f_eval
        self._grad = grad_eval
        self.f_lower = float(f_lower)
        self.f_upper = float(f_upper)
        self.n = int(n)
        self.grad_step = float(grad_step)
        self.name = name
        self.params = tuple(float(c) for c in params)

    @property
    def has_closed_form_gradient(self) -> bool:
        return self._grad is not None

    def _check(self, vals):
        lo = self.f_lower * (1 - _BOUND_RTOL)
        hi = self.f_upper * (1 + _BOUND_RTOL)
        bad = ~((vals >= lo) & (vals <= hi))
        if np.any(bad):
            v = vals[np.argmax(bad)]
            raise WeightBoundError(
                f"weight {self.name} evaluated to {v!r}, outside declared bounds "
                f"[{self.f_lower}, {self.f_upper}]"
            )

    def value(self, x):
        x, single = _as_points(x)
        pts = np.atleast_2d(x)
        vals = np.asarray(self._f(pts), dtype=float).reshape(len(pts))
        self._check(vals)
        return vals[0] if single else vals

    def fd_gradient(self, x):
        x, single = _as_points(x)
        pts = np.atleast_2d(x)
        g = np.empty_like(pts)
        hg = self.grad_step
        for d in range(self.n):
            e = np.zeros(self.n)
            e[d] = hg
            g[:, d] = (self.value(pts + e) - self.value(pts - e)) / (2 * hg)
        return g[0] if single else g

    def grad(self, x):
        if self._grad is None:
            return self.fd_gradient(x)
        x, single = _as_points(x)
        pts = np.atleast_2d(x)
        self.value(pts)
        g = np.asarray(self._grad(pts), dtype=float).reshape(pts.shape)
        return g[0] if single else g

    def self_check(self, lo, hi, n_points: int = 16, rtol: float = 1e-4) -> None:
        """Compare the closed-form gradient to central differences.

        Sample points are drawn deterministically from the box ``[lo, hi]``.
        Raises ``ValueError`` on disagreement.
        """
        if self._grad is None:
            return
        rng = np.random.default_rng(12345)
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        pts = lo + (hi - lo) * rng.random((n_points, self.n))
        g = self.grad(pts)
        gfd = self.fd_gradient(pts)
        scale = self.f_upper / max(float(np.max(hi - lo)), 1e-300)
        if not np.allclose(gfd, g, rtol=rtol, atol=1e-8 * scale):
            err = np.max(np.abs(gfd - g))
            raise ValueError(
                f"closed-form gradient of weight {self.name} disagrees with "
                f"central differences (max abs error {err:.3e})"
            )


WEIGHT_KINDS = ("constant", "affine", "exponential", "sinusoidal")


def make_weight(kind: str, params: Sequence[float], lo, hi, check: bool = True) -> WeightField:
    """Build a catalog weight whose bounds hold on the box ``[lo, hi]``.

    Catalog (``a``, ``k`` are vectors of length n):

    - ``constant``: ``[c]``, f = c
    - ``affine``: ``[a_1..a_n]``, f = 1 + a.x
    - ``exponential``: ``[a_1..a_n]``, f = exp(a.x)
    - ``sinusoidal``: ``[c, k_1..k_n]``, f = c + sin(k.x)
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    n = lo.size
    # room for central-difference probes just outside the box
    pad = 1e-5 * max(float(np.linalg.norm(hi - lo)), 1e-12)
    lo, hi = lo - pad, hi + pad
    prm = np.asarray(params, dtype=float).ravel()
    corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(n, -1).T

    if kind == "constant":
        if prm.size != 1:
            raise ValueError("constant weight takes one parameter [c]")
        c = prm[0]
        f = lambda x: np.full(len(x), c)
        g = lambda x: np.zeros_like(x)
        bounds = (c, c)
    elif kind == "affine":
        if prm.size != n:
            raise ValueError(f"affine weight takes {n} parameters [a_1..a_n]")
        a = prm.copy()
        f = lambda x: 1.0 + rowdot(x, a)
        g = lambda x: np.broadcast_to(a, x.shape).copy()
        vals = 1.0 + rowdot(corners, a)
        bounds = (vals.min(), vals.max())
    elif kind == "exponential":
        if prm.size != n:
            raise ValueError(f"exponential weight takes {n} parameters [a_1..a_n]")
        a = prm.copy()
        f = lambda x: np.exp(rowdot(x, a))
        g = lambda x: np.exp(rowdot(x, a))[:, None] * a
        vals = np.exp(rowdot(corners, a))
        bounds = (vals.min(), vals.max())
    elif kind == "sinusoidal":
        if prm.size != n + 1:
            raise ValueError(f"sinusoidal weight takes {n + 1} parameters [c, k_1..k_n]")
        c, k = prm[0], prm[1:].copy()
        f = lambda x: c + np.sin(rowdot(x, k))
        g = lambda x: np.cos(rowdot(x, k))[:, None] * k
        bounds = (c - 1.0, c + 1.0) if np.any(k) else (c, c)
    else:
        raise ValueError(f"unknown weight kind {kind!r}; expected one of {WEIGHT_KINDS}")

    if not bounds[0] > 0:
        raise ValueError(
            f"weight {kind}{list(prm)} is not uniformly positive on the domain "
            f"(lower bound {bounds[0]})"
        )
    diam = float(np.linalg.norm(hi - lo))
    w = WeightField(
        f, bounds[0], bounds[1], n, grad_eval=g, grad_step=1e-6 * max(diam, 1e-12),
        name=kind, params=prm,
    )
    if check:
        w.self_check(lo, hi)
    return w


def gamma(x, w: WeightField, params: GameParams):
    """Probability that one of the classical tug-of-war-with-noise moves happens.

    Equals ``f / (|Df| / (2(p+n)) + f)``, and exactly 1 where ``|Df| < DELTA_GRAD``.
    Accepts a single point or an ``(m, n)`` array.
    """
    f = w.value(x)
    gn = np.linalg.norm(w.grad(x), axis=-1)
    g = f / (gn / (2.0 * (params.p + params.n)) + f)
    return np.where(gn < DELTA_GRAD, 1.0, g) if np.ndim(g) else (1.0 if gn < DELTA_GRAD else float(g))


def drift_target(x, w: WeightField, params: GameParams):
    """Return ``x + eps^2 Df/|Df|``, or ``None`` where the gradient vanishes."""
    x = np.asarray(x, dtype=float)
    df = w.grad(x)
    gn = float(np.linalg.norm(df))
    if gn < DELTA_GRAD:
        return None
    return x + params.eps**2 * df / gn


def drift_targets(x, w: WeightField, params: GameParams):
    """Vectorized drift: returns ``(targets, has_drift)`` for points ``(m, n)``.

    Rows without drift return the point itself.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    df = w.grad(x)
    gn = np.linalg.norm(df, axis=1)
    has = gn >= DELTA_GRAD
    safe = np.where(has, gn, 1.0)
    tgt = x + np.where(has[:, None], params.eps**2 * df / safe[:, None], 0.0)
    return tgt, has


@dataclass(frozen=True)
class MoveDistribution:
    p_player_a: float
    p_player_b: float
    p_noise: float
    p_drift: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_player_a, self.p_player_b, self.p_noise, self.p_drift])


def move_probabilities(gam, params: GameParams):
    """Array version: ``(..., 4)`` probabilities for A, B, noise, drift."""
    gam = np.asarray(gam, dtype=float)
    pa = gam * params.alpha / 2
    return np.stack([pa, pa, gam * params.beta, 1.0 - gam], axis=-1)


def move_distribution(x, w: WeightField, params: GameParams) -> MoveDistribution:
    pa, pb, pn, pd = move_probabilities(gamma(x, w, params), params)
    return MoveDistribution(float(pa), float(pb), float(pn), float(pd))
