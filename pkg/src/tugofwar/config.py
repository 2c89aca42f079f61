"""Run configuration: JSON schema, round-trip serialization and validation."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import BOUNDARY_KINDS, DOMAIN_KINDS, build_grid, make_boundary, make_domain
from .params import WEIGHT_KINDS, make_params, make_weight
from .problem import LIPSCHITZ_LIMIT

COMMANDS = ("solve", "simulate", "consistency", "moment", "oracle", "study-eps", "study-p")
TEST_FUNCTION_KINDS = ("affine", "quadratic", "separable_power")


class ConfigError(ValueError):
    """Malformed configuration: wrong structure, types or unknown keys."""


@dataclass
class CatalogEntry:
    kind: str
    params: list = field(default_factory=list)


@dataclass
class BoundaryEntry:
    kind: str
    params: list = field(default_factory=list)
    lipschitz: bool = False


@dataclass
class ProblemConfig:
    domain: CatalogEntry
    weight: CatalogEntry
    boundary: BoundaryEntry
    p: float
    eps: float
    h: Optional[float] = None

    @property
    def h_eff(self) -> float:
        return self.eps / 4 if self.h is None else self.h


@dataclass
class SolveConfig:
    tol: float = 1e-8
    max_iter: int = 1_000_000


@dataclass
class SimulateConfig:
    x0: list = field(default_factory=list)
    n_samples: int = 10_000
    seed: int = 0
    max_steps: int = 1_000_000
    record: int = 10
    eta: Optional[float] = None
    n_states: int = 200
    n_resamples: int = 4000


@dataclass
class ConsistencyConfig:
    test_function: CatalogEntry = field(default_factory=lambda: CatalogEntry("quadratic", []))
    x: list = field(default_factory=list)
    eps_list: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])


@dataclass
class MomentConfig:
    n: int = 2
    eps: float = 1.0
    quadrature_points: int = 1_000_000
    method: str = "mc"
    seed: int = 0


@dataclass
class OracleConfig:
    quad_points: int = 4000


@dataclass
class StudyEpsConfig:
    eps_list: list = field(default_factory=lambda: [0.08, 0.04, 0.02])


@dataclass
class StudyPConfig:
    p_list: list = field(default_factory=lambda: [4.0, 10.0, 25.0, 50.0])
    eps: float = 0.02


@dataclass
class RunConfig:
    problem: Optional[ProblemConfig] = None
    solve: SolveConfig = field(default_factory=SolveConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    consistency: ConsistencyConfig = field(default_factory=ConsistencyConfig)
    moment: MomentConfig = field(default_factory=MomentConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    study_eps: StudyEpsConfig = field(default_factory=StudyEpsConfig)
    study_p: StudyPConfig = field(default_factory=StudyPConfig)
    output: str = "out"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "config")

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(d)


_NESTED = {
    ("RunConfig", "problem"): ProblemConfig,
    ("RunConfig", "solve"): SolveConfig,
    ("RunConfig", "simulate"): SimulateConfig,
    ("RunConfig", "consistency"): ConsistencyConfig,
    ("RunConfig", "moment"): MomentConfig,
    ("RunConfig", "oracle"): OracleConfig,
    ("RunConfig", "study_eps"): StudyEpsConfig,
    ("RunConfig", "study_p"): StudyPConfig,
    ("ProblemConfig", "domain"): CatalogEntry,
    ("ProblemConfig", "weight"): CatalogEntry,
    ("ProblemConfig", "boundary"): BoundaryEntry,
    ("ConsistencyConfig", "test_function"): CatalogEntry,
}
_INTS = {"max_iter", "n_samples", "seed", "max_steps", "record", "n_states", "n_resamples", "n", "quadrature_points", "quad_points"}
_FLOATS = {"p", "eps", "h", "tol", "eta"}
_LISTS = {"params", "x0", "x", "eps_list", "p_list"}


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kw = {}
    for name, val in d.items():
        sub = _NESTED.get((cls.__name__, name))
        path = f"{where}.{name}"
        if sub is not None:
            kw[name] = None if val is None else _build(sub, val, path)
        else:
            kw[name] = _coerce(name, val, path)
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _coerce(name, val, path):
    if val is None:
        return None
    if name in _INTS:
        # exact test: float(val) would round large integers
        if isinstance(val, bool) or not (isinstance(val, int) or (isinstance(val, float) and val.is_integer())):
            raise ConfigError(f"{path} must be an integer")
        return int(val)
    if name in _FLOATS:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{path} must be a number")
        return float(val)
    if name in _LISTS:
        if not isinstance(val, list) or any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in val):
            raise ConfigError(f"{path} must be a list of numbers")
        return [float(c) for c in val]
    if name == "lipschitz":
        if not isinstance(val, bool):
            raise ConfigError(f"{path} must be true or false")
        return val
    if not isinstance(val, str):
        raise ConfigError(f"{path} must be a string")
    return val


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    return RunConfig.from_json(text)


def problem_dicts(pc: ProblemConfig):
    return (
        {"kind": pc.domain.kind, "params": list(pc.domain.params)},
        {"kind": pc.weight.kind, "params": list(pc.weight.params)},
        {"kind": pc.boundary.kind, "params": list(pc.boundary.params), "lipschitz": pc.boundary.lipschitz},
    )


def _problem_diagnostics(pc: ProblemConfig) -> list:
    out = []
    if not (math.isfinite(pc.p) and pc.p > 2):
        out.append(f"problem.p: p must satisfy p > 2 (got p={pc.p:g})")
    if not (0 < pc.eps <= 1):
        out.append(f"problem.eps: eps must lie in (0, 1] (got {pc.eps:g})")
    if pc.h is not None and not pc.h > 0:
        out.append(f"problem.h: grid spacing must be positive (got {pc.h:g})")
    elif 0 < pc.eps <= 1 and pc.h_eff > pc.eps / 4 * (1 + 1e-12):
        out.append(f"problem.h: resolution rule violated, h={pc.h_eff:g} exceeds eps/4={pc.eps / 4:g}")

    dom = None
    if pc.domain.kind not in DOMAIN_KINDS:
        out.append(f"problem.domain.kind: unknown domain {pc.domain.kind!r}; expected one of {list(DOMAIN_KINDS)}")
    else:
        try:
            dom = make_domain(pc.domain.kind, pc.domain.params)
        except ValueError as exc:
            out.append(f"problem.domain: {exc}")

    if pc.weight.kind not in WEIGHT_KINDS:
        out.append(f"problem.weight.kind: unknown weight {pc.weight.kind!r}; expected one of {list(WEIGHT_KINDS)}")
    elif dom is not None:
        lo, hi = dom.bounds
        try:
            make_weight(pc.weight.kind, pc.weight.params, lo, hi)
        except ValueError as exc:
            out.append(f"problem.weight: {exc}")

    F = None
    if pc.boundary.kind not in BOUNDARY_KINDS:
        out.append(f"problem.boundary.kind: unknown boundary data {pc.boundary.kind!r}; expected one of {list(BOUNDARY_KINDS)}")
    elif dom is not None:
        try:
            F = make_boundary(pc.boundary.kind, pc.boundary.params, dom.n, lipschitz=pc.boundary.lipschitz)
        except ValueError as exc:
            out.append(f"problem.boundary: {exc}")

    if out or dom is None:
        return out
    try:
        grid = build_grid(dom, make_params(pc.p, dom.n, pc.eps), pc.h_eff)
    except ValueError as exc:
        out.append(f"problem: {exc}")
        return out
    if F is not None and F.lipschitz:
        lip = F.lipschitz_constant(grid)
        if lip > LIPSCHITZ_LIMIT:
            out.append(
                f"problem.boundary: Lipschitz flag set but sampled Lipschitz constant is {lip:.6g} > 1 "
                "(boundary data must be 1-Lipschitz)"
            )
    return out


def _positive(out, path, val, integer=False):
    if val is None or not val > 0 or (not integer and not math.isfinite(val)):
        out.append(f"{path} must be positive (got {val})")


def diagnostics(cfg: RunConfig, command: Optional[str] = None) -> list:
    """All constraint violations of ``cfg``.

    With ``command`` the problem block and every block that command reads are
    checked; without one, the problem block and every explicitly set block.
    """
    out = []
    needs_problem = command in (None, "solve", "simulate", "consistency", "oracle", "study-eps", "study-p")
    if cfg.problem is None:
        if needs_problem and command is not None:
            out.append(f"problem: block is required by {command}")
    else:
        out += _problem_diagnostics(cfg.problem)
    dim = None
    if cfg.problem is not None and cfg.problem.domain.kind in DOMAIN_KINDS:
        try:
            dim = make_domain(cfg.problem.domain.kind, cfg.problem.domain.params).n
        except ValueError:
            pass

    defaults = RunConfig()
    block_of = {"solve": "solve", "simulate": "simulate", "consistency": "consistency", "moment": "moment",
                "oracle": "oracle", "study-eps": "study_eps", "study-p": "study_p"}

    def want(c):
        # without a command only blocks that differ from their defaults are checked
        if command is None:
            return getattr(cfg, block_of[c]) != getattr(defaults, block_of[c])
        return command == c

    if want("solve") or command in ("simulate", "oracle"):
        if cfg.solve.tol is None or not cfg.solve.tol >= 0:
            out.append(f"solve.tol must be nonnegative (got {cfg.solve.tol})")
        if cfg.solve.max_iter is None or cfg.solve.max_iter < 1:
            out.append(f"solve.max_iter must be at least 1 (got {cfg.solve.max_iter})")
    if want("simulate"):
        s = cfg.simulate
        _positive(out, "simulate.n_samples", s.n_samples, True)
        _positive(out, "simulate.max_steps", s.max_steps, True)
        _positive(out, "simulate.n_states", s.n_states, True)
        _positive(out, "simulate.n_resamples", s.n_resamples, True)
        if s.seed is None or s.seed < 0 or s.seed >= 2**64:
            out.append(f"simulate.seed must be an unsigned 64-bit integer (got {s.seed})")
        if s.record is None or s.record < 0:
            out.append(f"simulate.record must be nonnegative (got {s.record})")
        if s.eta is not None and not s.eta > 0:
            out.append(f"simulate.eta must be positive (got {s.eta})")
        if dim is not None and len(s.x0) != dim:
            out.append(f"simulate.x0 must have {dim} coordinates (got {len(s.x0)})")
        elif dim is not None:
            dom = make_domain(cfg.problem.domain.kind, cfg.problem.domain.params)
            if not bool(dom.contains(np.asarray(s.x0, dtype=float)[None, :])[0]):
                out.append(f"simulate.x0 {s.x0} is not inside the domain")
    if want("consistency"):
        c = cfg.consistency
        if c.test_function.kind not in TEST_FUNCTION_KINDS:
            out.append(f"consistency.test_function.kind: unknown test function {c.test_function.kind!r}; expected one of {list(TEST_FUNCTION_KINDS)}")
        if dim is not None:
            if len(c.x) != dim:
                out.append(f"consistency.x must have {dim} coordinates (got {len(c.x)})")
            if dim > 3:
                out.append("consistency: the continuum operator is implemented for n <= 3")
        if not c.eps_list or any(not (0 < e <= 1) for e in c.eps_list):
            out.append("consistency.eps_list must be a nonempty list of values in (0, 1]")
    if want("moment"):
        m = cfg.moment
        if m.n not in (1, 2, 3):
            out.append(f"moment.n must be 1, 2 or 3 (got {m.n})")
        _positive(out, "moment.eps", m.eps)
        _positive(out, "moment.quadrature_points", m.quadrature_points, True)
        if m.method not in ("mc", "grid"):
            out.append(f"moment.method must be 'mc' or 'grid' (got {m.method!r})")
    if want("oracle") or want("study-eps"):
        if command is not None and cfg.problem is not None and cfg.problem.domain.kind != "interval":
            out.append(f"{command}: the reference solution needs an interval domain (got {cfg.problem.domain.kind!r})")
        _positive(out, "oracle.quad_points", cfg.oracle.quad_points, True)
    if want("study-eps"):
        if any(not (0 < e <= 1) for e in cfg.study_eps.eps_list):
            out.append("study_eps.eps_list entries must lie in (0, 1]")
    if want("study-p"):
        sp = cfg.study_p
        if any(not (math.isfinite(p) and p > 2) for p in sp.p_list):
            out.append("study_p.p_list: every p must satisfy p > 2")
        if not (0 < sp.eps <= 1):
            out.append(f"study_p.eps must lie in (0, 1] (got {sp.eps})")
        if command is not None and cfg.problem is not None:
            if cfg.problem.boundary.kind != "affine":
                out.append("study-p: boundary data must be affine")
            elif dim is not None and len(cfg.problem.boundary.params) == dim + 1:
                slope = cfg.problem.boundary.params[1:]
                if math.sqrt(sum(a * a for a in slope)) > LIPSCHITZ_LIMIT:
                    out.append("study-p: affine boundary data must have Lipschitz constant at most 1")
            if cfg.problem.domain.kind == "lshape":
                out.append("study-p: the L-shape domain is excluded (its boundary is not C^1)")
    return out


def validate(config_path, command: Optional[str] = None) -> list:
    """Diagnostics for the config file; empty when valid.  Raises ``OSError`` if unreadable."""
    text = Path(config_path).read_text()
    try:
        cfg = RunConfig.from_json(text)
    except ConfigError as exc:
        return [str(exc)]
    return diagnostics(cfg, command)
