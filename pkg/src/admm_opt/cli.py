"""Command-line entry point: run an optimization, emit trace/report, export CSV.

Exit codes: 0 success, 2 configuration error, 3 evaluator failure,
4 non-positive budget.  Verbosity comes from the ADMM_OPT_LOG environment
variable (DEBUG/INFO/WARNING/...).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from typing import Optional

from . import bo, cmab, core, evaluator as ev
from .space import SpaceError, build_space

log = logging.getLogger("admm_opt.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EVALUATOR = 3
EXIT_BUDGET = 4

DEFAULT_RHO = 1.0
DEFAULT_F_HAT = 0.7
DEFAULT_PRIOR = 10.0


class ConfigError(ValueError):
    pass


def _load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def _merge_overrides(cfg: dict, args: argparse.Namespace) -> dict:
    out = dict(cfg)
    if args.seed is not None:
        out["seed"] = args.seed
    if args.max_evals is not None:
        out.setdefault("budget", {})
        out["budget"] = dict(out["budget"], max_evals=args.max_evals)
    if args.max_seconds is not None:
        out.setdefault("budget", {})
        out["budget"] = dict(out["budget"], max_seconds=args.max_seconds)
    solvers = dict(out.get("solvers", {}))
    if args.theta_solver:
        solvers["theta"] = args.theta_solver
    if args.z_solver:
        solvers["z"] = args.z_solver
    if solvers:
        out["solvers"] = solvers
    if args.rho is not None:
        out["rho"] = args.rho
    if args.f_hat is not None:
        out["f_hat"] = args.f_hat
    if args.epsilon:
        out["epsilons"] = [float(e) for e in args.epsilon]
    if args.evaluator_cmd:
        out["evaluator"] = {"command": args.evaluator_cmd,
                            **{k: v for k, v in out.get("evaluator", {}).items()
                               if k == "timeout_seconds"}}
    outputs = dict(out.get("output", {}))
    if args.trace_out:
        outputs["trace"] = args.trace_out
    if args.report_out:
        outputs["report"] = args.report_out
    out["output"] = outputs
    return out


def _build(cfg: dict):
    if "seed" not in cfg:
        raise ConfigError("a seed is required for reproducible runs")
    seed = int(cfg["seed"])

    eval_cfg = cfg.get("evaluator")
    if not eval_cfg:
        raise ConfigError("config must name an evaluator (builtin or command)")
    epsilons = tuple(float(e) for e in cfg.get("epsilons", []))
    if any(e < 0 for e in epsilons):
        raise ConfigError("constraint thresholds must be >= 0")

    if "builtin" in eval_cfg:
        space, backend = ev.make_builtin(eval_cfg["builtin"])
    elif "command" in eval_cfg:
        if "space" not in cfg:
            raise ConfigError("a space document is required for "
                              "subprocess evaluators")
        space = build_space(cfg["space"])
        backend = ev.SubprocessEvaluator(
            eval_cfg["command"],
            timeout=float(eval_cfg.get("timeout_seconds", 300.0)))
    else:
        raise ConfigError("evaluator must have a 'builtin' name or a 'command'")

    mode = cfg.get("mode") or ("constrained" if epsilons else "unconstrained")
    problem = core.Problem(space, backend, epsilons, mode)

    budget_cfg = cfg.get("budget", {})
    max_evals = int(budget_cfg.get("max_evals", 0))
    max_seconds = budget_cfg.get("max_seconds")
    budget = core.Budget(max_evals,
                         float(max_seconds) if max_seconds else None)

    rho = float(cfg.get("rho", DEFAULT_RHO))
    f_hat = float(cfg.get("f_hat", DEFAULT_F_HAT))
    prior = float(cfg.get("priors", DEFAULT_PRIOR))
    sub = cfg.get("sub_budget", {})
    settings = core.Settings(
        rho=rho,
        theta_budget=int(sub.get("theta", 16)),
        z_budget=int(sub.get("z", 8)),
        stall_iterations=int(cfg.get("stall_iterations", 3)),
        random_init=bool(cfg.get("random_init", False)))

    solvers = cfg.get("solvers", {})
    theta_name = solvers.get("theta", "bo")
    z_name = solvers.get("z", "exhaustive")
    if theta_name == "bo":
        theta_solver = bo.BoSolver()
    elif theta_name == "random":
        theta_solver = bo.RandomSolver()
    else:
        raise ConfigError(f"unknown continuous solver {theta_name!r}")
    if z_name == "exhaustive":
        z_solver = cmab.ExhaustiveZSolver(int(cfg.get("exhaustive_cap", 4096)))
    elif z_name == "random":
        z_solver = cmab.RandomZSolver()
    elif z_name == "cmab":
        z_solver = cmab.CmabZSolver(f_hat=f_hat, prior=prior)
    else:
        raise ConfigError(f"unknown combinatorial solver {z_name!r}")

    outputs = cfg.get("output", {})
    return problem, theta_solver, z_solver, budget, settings, seed, outputs


def _report(result: core.RunResult) -> dict:
    inc = result.incumbent
    return {
        "incumbent": None if inc is None else {
            "z": inc.z_names,
            "theta_int": inc.theta_int,
            "theta_cont": inc.theta_cont,
            "loss": inc.loss,
            "feasible": inc.feasible,
            "found_at_eval": inc.found_at_eval,
            "found_at_wall_ms": inc.found_at_wall_ms,
        },
        **result.stats,
    }


def run_command(args: argparse.Namespace) -> int:
    try:
        cfg = _merge_overrides(_load_config(args.config), args)
        built = _build(cfg)
    except (ConfigError, SpaceError) as exc:
        log.error("%s", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ev.EvaluatorFailure as exc:
        print(f"evaluator error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    problem, theta_solver, z_solver, budget, settings, seed, outputs = built
    if budget.max_evals <= 0:
        print("budget error: max_evals must be positive", file=sys.stderr)
        return EXIT_BUDGET
    try:
        result = core.run(problem, theta_solver, z_solver, budget, settings,
                          seed, trace_path=outputs.get("trace"))
    except ev.EvaluatorFailure as exc:
        print(f"evaluator error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        close = getattr(problem.evaluator, "close", None)
        if close:
            close()
    report = _report(result)
    text = json.dumps(report, indent=2)
    if outputs.get("report"):
        with open(outputs["report"], "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def export_convergence(trace_path: str, out_path: str) -> tuple[int, int]:
    """Rewrite a trace as (wall_ms, incumbent_loss, feasible_incumbent_loss) CSV.

    Corrupt trace lines are skipped with a warning; returns (rows, skipped).
    """
    rows = 0
    skipped = 0
    best = None
    best_feasible = None
    with open(trace_path) as fh, open(out_path, "w", newline="") as out:
        writer = csv.writer(out)
        writer.writerow(["wall_ms", "incumbent_loss", "feasible_incumbent_loss"])
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                wall = float(rec["wall_ms"])
                loss = float(rec["loss"])
                feasible = bool(rec["feasible"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                skipped += 1
                continue
            if best is None or loss < best:
                best = loss
            if feasible and (best_feasible is None or loss < best_feasible):
                best_feasible = loss
            writer.writerow([wall, best, "" if best_feasible is None
                             else best_feasible])
            rows += 1
    if skipped:
        log.warning("skipped %d corrupt trace line(s)", skipped)
    return rows, skipped


def export_command(args: argparse.Namespace) -> int:
    if not os.path.exists(args.trace):
        print(f"config error: trace file not found: {args.trace}",
              file=sys.stderr)
        return EXIT_CONFIG
    rows, skipped = export_convergence(args.trace, args.out)
    print(f"wrote {rows} rows ({skipped} skipped) to {args.out}")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="admm-opt",
        description="Mixed continuous-integer black-box pipeline optimizer")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an optimization from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--max-evals", type=int)
    r.add_argument("--max-seconds", type=float)
    r.add_argument("--theta-solver", choices=["bo", "random"])
    r.add_argument("--z-solver", choices=["exhaustive", "random", "cmab"])
    r.add_argument("--rho", type=float, help=f"penalty (default {DEFAULT_RHO})")
    r.add_argument("--f-hat", type=float,
                   help=f"loss upper bound (default {DEFAULT_F_HAT})")
    r.add_argument("--epsilon", action="append",
                   help="constraint threshold (repeatable)")
    r.add_argument("--trace-out")
    r.add_argument("--report-out")
    r.add_argument("--evaluator-cmd")
    r.set_defaults(func=run_command)

    e = sub.add_parser("export-convergence",
                       help="export a trace to CSV for plotting")
    e.add_argument("--trace", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=export_command)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    level = os.environ.get("ADMM_OPT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
