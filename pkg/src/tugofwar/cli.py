"""Command-line front end: ``tugofwar <command> --config <path> [--out DIR] [--workers K] [--seed S]``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .analysis import (
    OracleInstance,
    epsilon_study,
    make_test_function,
    moment_estimate,
    moment_reference,
    oracle_distance,
    p_limit_study,
    predicted_generator,
    taylor_consistency,
    weighted_p_harmonic_1d,
)
from .config import COMMANDS, ConfigError, RunConfig, diagnostics, load_config, problem_dicts
from .params import make_params
from .problem import Problem
from .simulator import estimate_value, greedy_strategies, play_game, supermartingale_check
from .solver import set_workers

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_UNCONVERGED = 3
EXIT_UNRELIABLE = 4

log = logging.getLogger("tugofwar")


def _problem(cfg: RunConfig, eps=None, p=None) -> Problem:
    pc = cfg.problem
    dom, w, F = problem_dicts(pc)
    e = pc.eps if eps is None else eps
    h = pc.h if eps is None else None
    return Problem.from_catalog(dom, w, F, pc.p if p is None else p, e, h)


def _solve(cfg, problem, out: Path):
    v, rep = problem.solve(tol=cfg.solve.tol, max_iter=cfg.solve.max_iter)
    io.write_value_field(out / "values.csv", v)
    io.write_json(out / "solve_report.json", rep.to_dict())
    return v, rep


def cmd_solve(cfg, out, args):
    _, rep = _solve(cfg, _problem(cfg), out)
    print(f"solve: {rep.iterations} sweeps, residual {io.fmt(rep.final_residual)}")
    return EXIT_OK if rep.converged else EXIT_UNCONVERGED


def cmd_simulate(cfg, out, args):
    s = cfg.simulate
    problem = _problem(cfg)
    v, rep = _solve(cfg, problem, out)
    if not rep.converged:
        return EXIT_UNCONVERGED
    x0 = np.asarray(s.x0, dtype=float)
    est = estimate_value(problem, x0, v, s.n_samples, s.seed, s.max_steps, workers=args.workers or 1)
    report = est.to_dict()
    report["x0"] = list(x0)
    report["dpp_value"] = float(problem.field_value(v, x0[None, :])[0])
    s_a, s_b = greedy_strategies(v)
    trajs = [play_game(problem, x0, s_a, s_b, s.seed, s.max_steps, index=i) for i in range(s.record)]
    io.write_trajectories(out / "trajectories.csv", trajs, problem.grid.n)
    if s.eta is not None:
        sm = supermartingale_check(problem, v, s.eta, trajs, n_states=s.n_states, n_resamples=s.n_resamples, seed=s.seed)
        io.write_json(out / "supermartingale.json", sm.to_dict())
        report["supermartingale_violations"] = sm.n_violations
    io.write_json(out / "estimate.json", report)
    print(f"simulate: mean {io.fmt(est.mean)} +- {io.fmt(est.std_error)} ({est.n_samples} games, {est.n_truncated} truncated)")
    return EXIT_UNRELIABLE if est.unreliable else EXIT_OK


def cmd_consistency(cfg, out, args):
    c = cfg.consistency
    problem = _problem(cfg)
    n = problem.grid.n
    phi = make_test_function(c.test_function.kind, c.test_function.params, n)
    x = np.asarray(c.x, dtype=float)
    phi.self_check(x[None, :])
    params = make_params(cfg.problem.p, n, max(c.eps_list))
    res = taylor_consistency(phi, x, problem.weight, params, c.eps_list)
    rows = res.rows
    io.write_table(out / "consistency.csv", ["eps", "quotient", "predicted", "deviation"], ([r["eps"], r["quotient"], r["predicted"], r["deviation"]] for r in rows))
    summary = res.to_dict()
    summary["predicted_generator"] = predicted_generator(phi, x, problem.weight, params)
    io.write_json(out / "consistency.json", summary)
    print(f"consistency: final deviation {io.fmt(res.distances[-1])}, fitted order {io.fmt(res.order)}")
    return EXIT_OK


def cmd_moment(cfg, out, args):
    m = cfg.moment
    est = moment_estimate(m.n, m.eps, m.quadrature_points, m.method, m.seed)
    ref = moment_reference(m.n, m.eps)
    report = {
        "n": m.n,
        "eps": m.eps,
        "quadrature_points": m.quadrature_points,
        "method": m.method,
        "seed": m.seed,
        "estimate": est,
        "reference": ref,
        "relative_deviation": abs(est - ref) / ref,
    }
    io.write_json(out / "moment.json", report)
    print(f"moment: estimate {io.fmt(est)}, reference {io.fmt(ref)}")
    return EXIT_OK


def _oracle_instance(cfg: RunConfig, problem: Problem) -> OracleInstance:
    a, b = (float(t) for t in cfg.problem.domain.params)
    w, F = problem.weight, problem.boundary
    fa, fb = F(np.array([a])), F(np.array([b]))
    u = weighted_p_harmonic_1d(lambda t: w.value(np.asarray(t)[:, None]), a, b, fa, fb, cfg.problem.p, cfg.oracle.quad_points)
    dom, wd, fd = problem_dicts(cfg.problem)
    return OracleInstance(dom, wd, fd, cfg.problem.p, reference=lambda pts: u(np.asarray(pts)[:, 0]), name="config")


def cmd_oracle(cfg, out, args):
    problem = _problem(cfg)
    inst = _oracle_instance(cfg, problem)
    v, rep = _solve(cfg, problem, out)
    grid = problem.grid
    pts = grid.coords[grid.interior]
    ref = inst.reference(pts)
    io.write_table(out / "oracle.csv", ["x1", "value", "reference"], ([float(p[0]), float(a), float(r)] for p, a, r in zip(pts, v.values[grid.interior], ref)))
    dist = oracle_distance(problem, v, inst.reference)
    io.write_json(out / "oracle.json", {"sup_error": dist, "h": grid.h, "eps": problem.params.eps, "converged": rep.converged})
    print(f"oracle: sup error {io.fmt(dist)}")
    return EXIT_OK if rep.converged else EXIT_UNCONVERGED


def _study_outputs(out, stem, res):
    io.write_study(out / f"{stem}.csv", res)
    summary = res.to_dict()
    summary["nonincreasing_within_10pct"] = res.nonincreasing(0.10)
    io.write_json(out / f"{stem}.json", summary)
    return EXIT_OK if all(r["converged"] for r in res.rows) else EXIT_UNCONVERGED


def cmd_study_eps(cfg, out, args):
    inst = _oracle_instance(cfg, _problem(cfg))
    res = epsilon_study(inst, cfg.study_eps.eps_list, tol=cfg.solve.tol, max_iter=cfg.solve.max_iter)
    print("study-eps: " + ", ".join(f"eps={io.fmt(e)} d={io.fmt(d)}" for e, d in zip(res.values, res.distances)))
    return _study_outputs(out, "study_eps", res)


def cmd_study_p(cfg, out, args):
    dom, wd, fd = problem_dicts(cfg.problem)
    b, *a = cfg.problem.boundary.params
    a = np.asarray(a)
    inst = OracleInstance(dom, wd, fd, cfg.problem.p, reference=lambda pts: b + np.asarray(pts) @ a, name="affine")
    res = p_limit_study(inst, cfg.study_p.p_list, eps=cfg.study_p.eps, tol=cfg.solve.tol, max_iter=cfg.solve.max_iter)
    print("study-p: " + ", ".join(f"p={io.fmt(p)} d={io.fmt(d)}" for p, d in zip(res.values, res.distances)))
    return _study_outputs(out, "study_p", res)


HANDLERS = {
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "consistency": cmd_consistency,
    "moment": cmd_moment,
    "oracle": cmd_oracle,
    "study-eps": cmd_study_eps,
    "study-p": cmd_study_p,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tugofwar", description="Weighted p-Laplace game solver and verification runs.")
    ap.add_argument("command", choices=COMMANDS + ("validate",))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", help="output directory (overrides config 'output')")
    ap.add_argument("--workers", type=int, default=None, help="cap on worker threads")
    ap.add_argument("--seed", type=int, default=None, help="seed override for simulate and moment")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(command: str, config_path, out=None, workers=None, seed=None) -> int:
    args = argparse.Namespace(command=command, config=config_path, out=out, workers=workers, seed=seed)
    try:
        cfg = load_config(config_path)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ConfigError as exc:
        print(f"error: malformed config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if seed is not None:
        cfg.simulate.seed = int(seed)
        cfg.moment.seed = int(seed)
    if workers is not None and workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    diags = diagnostics(cfg, None if command == "validate" else command)
    if diags:
        for d in diags:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_INVALID
    if command == "validate":
        print("config is valid")
        return EXIT_OK
    set_workers(workers)
    outdir = Path(out or cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        code = HANDLERS[command](cfg, outdir, args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    log.info("%s finished in %.2f s", command, time.perf_counter() - t0)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.config, args.out, args.workers, args.seed)


if __name__ == "__main__":
    sys.exit(main())
