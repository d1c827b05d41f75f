"""Alternating-direction driver for mixed algorithm/hyperparameter search.

One iteration alternates: (1) continuous minimization of the penalized
surrogate loss over the active hyperparameters (plus slack variables when
black-box constraints are enforced), (2) closed-form projection of the
inactive relaxed integers, (3) closed-form consensus update of the integer
copies, (4) combinatorial minimization over algorithm assignments, and
(5) the affine multiplier updates.

The loop is single-threaded and deterministic given a seed.  Every black-box
query is appended to the trace with the exact integers sent to the evaluator;
the evaluation budget counts queries (cache hits included), while cache hits
skip the backend.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .evaluator import CachedEvaluator, EvalOutcome, EvalRequest, EvaluatorFailure
from .space import (SearchSpace, ThetaVector, ZAssignment, midpoint_theta,
                    project_and_round, project_box)

log = logging.getLogger("admm_opt.core")

TRACE_FIELDS = ("eval_index", "wall_ms", "admm_iter", "phase", "z",
                "theta_int", "theta_cont", "loss", "constraints", "feasible",
                "incumbent_loss")


class BudgetExhausted(Exception):
    """Raised by the evaluation layer when the run budget is spent."""


@dataclass
class AdmmState:
    """Consensus bookkeeping for one run."""

    t: int
    delta: list[int]
    lam: np.ndarray
    rho: float
    mu: np.ndarray
    u: np.ndarray
    epsilons: np.ndarray
    z_current: ZAssignment
    theta_current: ThetaVector

    @property
    def n_constraints(self) -> int:
        return len(self.epsilons)


@dataclass
class CandidateConfig:
    z: ZAssignment
    theta: ThetaVector


@dataclass
class Incumbent:
    config: CandidateConfig
    z_names: dict[str, str]
    theta_int: dict[str, int]
    theta_cont: dict[str, float]
    loss: float
    feasible: bool
    found_at_eval: int
    found_at_wall_ms: float


@dataclass
class Trace:
    records: list[dict] = field(default_factory=list)
    iter_stats: list[dict] = field(default_factory=list)

    def write(self, path: str) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


@dataclass
class RunResult:
    incumbent: Optional[Incumbent]
    trace: Trace
    stats: dict


@dataclass
class Problem:
    space: SearchSpace
    evaluator: object                     # backend with .evaluate / .n_constraints
    epsilons: tuple[float, ...] = ()
    mode: str = "unconstrained"           # "constrained" enforces epsilons

    def __post_init__(self) -> None:
        if self.mode not in ("unconstrained", "constrained"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if any(e < 0 for e in self.epsilons):
            raise ValueError("constraint thresholds must be >= 0")


@dataclass
class Budget:
    max_evals: int
    max_seconds: Optional[float] = None


@dataclass
class Settings:
    rho: float = 1.0
    theta_budget: int = 16
    z_budget: int = 8
    stall_iterations: int = 3
    random_init: bool = False
    retry_limit: int = 1


# -- multiplier / penalty primitives ----------------------------------------

def theta_penalty(theta_relaxed_int: Sequence[float], state: AdmmState) -> float:
    """(rho/2) ||theta_relaxed - (delta - lambda/rho)||^2."""
    v = np.asarray(theta_relaxed_int, dtype=float)
    b = np.asarray(state.delta, dtype=float) - state.lam / state.rho
    if v.shape != b.shape:
        raise ValueError("relaxed-integer vector length mismatch")
    return 0.5 * state.rho * float(np.sum((v - b) ** 2))


def constraint_residual(gvals: Sequence[float], u: np.ndarray,
                        epsilons: np.ndarray, mu: np.ndarray,
                        rho: float) -> np.ndarray:
    g = np.asarray(gvals, dtype=float)
    if g.shape != epsilons.shape:
        raise ValueError("constraint vector length mismatch")
    return g + u - epsilons + mu / rho


def constraint_penalty(gvals: Sequence[float], state: AdmmState) -> float:
    """(rho/2) * sum_i (g_i + u_i - eps_i + mu_i/rho)^2."""
    if state.n_constraints == 0:
        return 0.0
    res = constraint_residual(gvals, state.u, state.epsilons, state.mu,
                              state.rho)
    return 0.5 * state.rho * float(np.sum(res ** 2))


def solve_inactive(state: AdmmState, inactive: Sequence[int],
                   space: SearchSpace) -> None:
    """Project b onto the relaxed interval for every inactive integer coord."""
    b = np.asarray(state.delta, dtype=float) - state.lam / state.rho
    for i in inactive:
        state.theta_current.relaxed_int[i] = project_box(
            b[i], space.int_lower[i], space.int_upper[i])


def delta_min(state: AdmmState, theta: ThetaVector,
              space: SearchSpace) -> list[int]:
    """Closed-form consensus update: clamp and round theta + lambda/rho."""
    a = np.asarray(theta.relaxed_int, dtype=float) + state.lam / state.rho
    return [project_and_round(a[i], space.int_lower[i], space.int_upper[i])
            for i in range(space.n_int)]


def update_lambda(state: AdmmState, theta: ThetaVector) -> float:
    """lambda += rho * (theta_relaxed - delta); returns the sup-norm residual."""
    diff = np.asarray(theta.relaxed_int, dtype=float) - np.asarray(
        state.delta, dtype=float)
    state.lam = state.lam + state.rho * diff
    return float(np.max(np.abs(diff))) if diff.size else 0.0


def update_mu(state: AdmmState, gvals: Sequence[float]) -> None:
    """mu_i += rho * (g_i - eps_i + u_i) for every constraint."""
    if state.n_constraints == 0:
        return
    g = np.asarray(gvals, dtype=float)
    state.mu = state.mu + state.rho * (g - state.epsilons + state.u)


# -- driver ------------------------------------------------------------------

class _Runner:
    def __init__(self, problem: Problem, theta_solver, z_solver,
                 budget: Budget, settings: Settings, seed: int,
                 trace_path: Optional[str] = None):
        if budget.max_evals <= 0:
            raise ValueError("evaluation budget must be positive")
        self.problem = problem
        self.space = problem.space
        self.cache = CachedEvaluator(problem.evaluator)
        if self.cache.n_constraints != len(problem.epsilons):
            raise ValueError(
                f"evaluator reports {self.cache.n_constraints} constraints "
                f"but {len(problem.epsilons)} thresholds were configured")
        self.enforce = (problem.mode == "constrained"
                        and len(problem.epsilons) > 0)
        self.theta_solver = theta_solver
        self.z_solver = z_solver
        self.budget = budget
        self.settings = settings
        self.trace = Trace()
        self.trace_fh = open(trace_path, "w") if trace_path else None

        ss = np.random.SeedSequence(seed)
        init_ss, theta_ss, z_ss = ss.spawn(3)
        self.init_rng = np.random.default_rng(init_ss)
        self.theta_rng = np.random.default_rng(theta_ss)
        self.z_rng = np.random.default_rng(z_ss)

        self.eval_count = 0
        self.wall_ms = 0.0
        self.started = time.monotonic()
        self.worst_loss = 1.0
        self.best_any: Optional[Incumbent] = None
        self.best_feasible: Optional[Incumbent] = None
        self.failures = 0
        self.consecutive_failures = 0

        self.state = self._initial_state()

    # -- initialization ----------------------------------------------------

    def _initial_state(self) -> AdmmState:
        sp = self.space
        eps = np.asarray(self.problem.epsilons, dtype=float)
        if self.settings.random_init:
            cont = [lo + (hi - lo) * self.init_rng.uniform()
                    for lo, hi in zip(sp.cont_lower, sp.cont_upper)]
            rint = [lo + (hi - lo) * self.init_rng.uniform()
                    for lo, hi in zip(sp.int_lower, sp.int_upper)]
            theta = ThetaVector(cont, rint)
            z = ZAssignment(tuple(int(self.init_rng.integers(0, k))
                                  for k in sp.n_algorithms))
        else:
            theta = midpoint_theta(sp)
            z = ZAssignment(tuple(0 for _ in range(sp.n_modules)))
        delta = [project_and_round(v, lo, hi) for v, lo, hi in
                 zip(theta.relaxed_int, sp.int_lower, sp.int_upper)]
        return AdmmState(
            t=0, delta=delta, lam=np.zeros(sp.n_int),
            rho=self.settings.rho, mu=np.zeros(len(eps)),
            u=eps / 2.0, epsilons=eps, z_current=z, theta_current=theta)

    # -- evaluation plumbing -------------------------------------------------

    def _request(self, z: ZAssignment, theta: ThetaVector) -> EvalRequest:
        sp = self.space
        active_c, active_i = sp.active_indices(z)
        theta_cont = {sp.cont_names[i]: float(theta.cont[i]) for i in active_c}
        theta_int = {sp.int_names[i]:
                     project_and_round(theta.relaxed_int[i], sp.int_lower[i],
                                       sp.int_upper[i])
                     for i in active_i}
        return EvalRequest(self.eval_count, sp.z_names(z), theta_int,
                           theta_cont)

    def _feasible(self, outcome: EvalOutcome) -> bool:
        if len(self.state.epsilons) == 0:
            return True
        return bool(np.all(np.asarray(outcome.constraints)
                           <= self.state.epsilons))

    def evaluate(self, z: ZAssignment, theta: ThetaVector, phase: str,
                 admm_iter: int) -> tuple[EvalOutcome, bool]:
        """Issue one budgeted query; returns (outcome, succeeded)."""
        if self.eval_count >= self.budget.max_evals:
            raise BudgetExhausted
        if (self.budget.max_seconds is not None
                and time.monotonic() - self.started > self.budget.max_seconds):
            raise BudgetExhausted
        request = self._request(z, theta)
        outcome: Optional[EvalOutcome] = None
        failure: Optional[Exception] = None
        for _ in range(self.settings.retry_limit + 1):
            try:
                outcome = self.cache.evaluate(request)
                failure = None
                break
            except EvaluatorFailure as exc:
                failure = exc
                log.warning("evaluation %d failed: %s", request.id, exc)
        ok = outcome is not None and math.isfinite(outcome.loss)
        if not ok:
            self.failures += 1
            self.consecutive_failures += 1
            imputed = self.worst_loss + 1.0
            outcome = EvalOutcome(imputed, (), 0.0, request.id)
            if failure is not None and self.consecutive_failures > 25:
                raise EvaluatorFailure("evaluator persistently failing") \
                    from failure
        else:
            self.consecutive_failures = 0
            self.worst_loss = max(self.worst_loss, outcome.loss)

        self.eval_count += 1
        self.wall_ms += outcome.wall_time * 1000.0
        feasible = ok and self._feasible(outcome)
        if ok:
            self._consider_incumbent(z, theta, request, outcome, feasible)
        incumbent = self.incumbent()
        record = {
            "eval_index": request.id,
            "wall_ms": self.wall_ms,
            "admm_iter": admm_iter,
            "phase": phase,
            "z": request.z,
            "theta_int": request.theta_int,
            "theta_cont": request.theta_cont,
            "loss": float(outcome.loss),
            "constraints": [float(g) for g in outcome.constraints] if ok else None,
            "feasible": feasible,
            "incumbent_loss": incumbent.loss if incumbent else None,
        }
        self.trace.records.append(record)
        if self.trace_fh:
            self.trace_fh.write(json.dumps(record, separators=(",", ":")) + "\n")
        return outcome, ok

    def _consider_incumbent(self, z: ZAssignment, theta: ThetaVector,
                            request: EvalRequest, outcome: EvalOutcome,
                            feasible: bool) -> None:
        cand = Incumbent(
            CandidateConfig(z, theta.copy()), request.z,
            dict(request.theta_int), dict(request.theta_cont),
            float(outcome.loss), feasible, request.id, self.wall_ms)
        if self.best_any is None or cand.loss < self.best_any.loss:
            self.best_any = cand
        if feasible and (self.best_feasible is None
                         or cand.loss < self.best_feasible.loss):
            self.best_feasible = cand

    def incumbent(self) -> Optional[Incumbent]:
        return self.best_feasible if self.best_feasible else self.best_any

    # -- the three sub-problems ----------------------------------------------

    def _theta_phase(self, admm_iter: int) -> None:
        sp = self.space
        st = self.state
        active_c, active_i = sp.active_indices(st.z_current)
        inactive = [i for i in range(sp.n_int) if i not in set(active_i)]
        solve_inactive(st, inactive, sp)

        n_u = len(st.epsilons) if self.enforce else 0
        dim = len(active_c) + len(active_i) + n_u
        if dim == 0:
            return

        # Any minimizer of loss + (rho/2)(v - b)^2 lies within
        # sqrt(2 * scale / rho) of b, since beyond that radius the quadratic
        # penalty exceeds any achievable loss improvement.  Narrowing the
        # relaxed-integer box accordingly keeps the continuous solver from
        # wasting its budget on penalty-dominated regions.
        b_full = np.asarray(st.delta, dtype=float) - st.lam / st.rho
        radius = max(2.0, math.sqrt(2.0 * 2.0 / st.rho))
        int_lo, int_hi = [], []
        for i in active_i:
            bi = project_box(b_full[i], sp.int_lower[i], sp.int_upper[i])
            int_lo.append(max(float(sp.int_lower[i]), bi - radius))
            int_hi.append(min(float(sp.int_upper[i]), bi + radius))
        lo = np.array([sp.cont_lower[i] for i in active_c] + int_lo
                      + [0.0] * n_u)
        hi = np.array([sp.cont_upper[i] for i in active_c] + int_hi
                      + [st.epsilons[i] for i in range(n_u)])

        def unpack(x: np.ndarray) -> tuple[ThetaVector, np.ndarray]:
            x = np.clip(np.asarray(x, dtype=float), lo, hi)
            theta = st.theta_current.copy()
            k = 0
            for i in active_c:
                theta.cont[i] = float(x[k]); k += 1
            for i in active_i:
                theta.relaxed_int[i] = float(x[k]); k += 1
            return theta, x[k:]

        evaluated: list[tuple[np.ndarray, float]] = []

        def penalized(x: np.ndarray) -> float:
            raw = np.asarray(x, dtype=float)
            if np.any(raw < lo - 1e-9) or np.any(raw > hi + 1e-9):
                log.warning("theta solver proposed out-of-bounds point; "
                            "projecting back")
            theta, u_trial = unpack(raw)
            outcome, ok = self.evaluate(st.z_current, theta, "theta", admm_iter)
            value = float(outcome.loss) + theta_penalty(theta.relaxed_int, st)
            if self.enforce and ok:
                res = constraint_residual(outcome.constraints, u_trial,
                                          st.epsilons, st.mu, st.rho)
                value += 0.5 * st.rho * float(np.sum(res ** 2))
            evaluated.append((np.clip(raw, lo, hi), value))
            return value

        def with_consensus_ints(x: np.ndarray) -> np.ndarray:
            out = np.array(x, dtype=float)
            for k, i in enumerate(active_i):
                out[len(active_c) + k] = project_box(
                    b_full[i], sp.int_lower[i], sp.int_upper[i])
            return out

        # When the sub-problem is unchanged from the previous iteration (same
        # assignment and same multiplier state), earlier evaluations remain
        # valid objective samples; feeding them back in lets the solver keep
        # refining instead of restarting from scratch every iteration.
        # The slack variables are search coordinates, so the objective is
        # fully determined by (z, delta, lambda, mu).
        memory_key = (st.z_current.choice, tuple(st.delta),
                      tuple(st.lam.tolist()), tuple(st.mu.tolist()))
        remembered: list[tuple[np.ndarray, float]] = []
        if getattr(self, "_theta_memory_key", None) == memory_key:
            remembered = self._theta_memory_points[-48:]

        # Warm seeds: the previous accepted point and its consensus projection.
        x0 = np.array([st.theta_current.cont[i] for i in active_c]
                      + [st.theta_current.relaxed_int[i] for i in active_i]
                      + list(st.u[:n_u]))
        x0 = np.clip(x0, lo, hi)
        candidates: list[tuple[np.ndarray, float]] = []
        seeds = [x0]
        snap = with_consensus_ints(x0)
        if active_i and not np.array_equal(snap, x0):
            seeds.append(snap)
        for s in seeds:
            candidates.append((s, penalized(s)))

        solver_budget = min(self.settings.theta_budget,
                            self.budget.max_evals - self.eval_count)
        solver_budget -= len(candidates) + (1 if active_i else 0)
        if solver_budget >= 2:
            seen: set[bytes] = set()
            known: list[tuple[np.ndarray, float]] = []
            for x, v in candidates + remembered:
                key = np.round(x, 12).tobytes()
                if key not in seen:
                    seen.add(key)
                    known.append((x, v))
            x_best, v_best = self.theta_solver.solve(
                penalized, (lo, hi), solver_budget, self.theta_rng,
                known=known)
            candidates.append((np.clip(x_best, lo, hi), v_best))

        candidates.sort(key=lambda c: c[1])
        best_x, best_v = candidates[0]

        # Consensus polish: snapping the relaxed integers to b never changes
        # the surrogate loss within a rounding cell and zeroes the penalty, so
        # try the snapped variant of the best point before accepting.
        if active_i:
            snapped = with_consensus_ints(best_x)
            if not np.array_equal(snapped, best_x):
                theta_s, _ = unpack(snapped)
                peek = self.cache.peek(self._request(st.z_current, theta_s))
                if peek is not None:
                    value = float(peek.loss) + theta_penalty(
                        theta_s.relaxed_int, st)
                    if self.enforce:
                        res = constraint_residual(
                            peek.constraints, snapped[len(active_c)
                                                      + len(active_i):],
                            st.epsilons, st.mu, st.rho)
                        value += 0.5 * st.rho * float(np.sum(res ** 2))
                else:
                    value = penalized(snapped)
                if value <= best_v:
                    best_x, best_v = snapped, value

        theta_new, u_new = unpack(best_x)
        st.theta_current = theta_new
        if n_u:
            st.u = np.asarray(u_new, dtype=float)
        self._theta_memory_key = memory_key
        self._theta_memory_points = (remembered + evaluated)[-48:]

    def _z_phase(self, admm_iter: int) -> None:
        st = self.state
        outcomes: dict[tuple[int, ...], tuple[EvalOutcome, bool]] = {}

        def z_objective(z: ZAssignment) -> float:
            outcome, ok = self.evaluate(z, st.theta_current, "z", admm_iter)
            outcomes[z.choice] = (outcome, ok)
            value = float(outcome.loss)
            if self.enforce and ok:
                value += constraint_penalty(outcome.constraints, st)
            return value

        z_new, _ = self.z_solver.solve(self.space, z_objective,
                                       self.settings.z_budget, self.z_rng)
        st.z_current = z_new
        self._accepted = outcomes.get(z_new.choice)

    def _mu_phase(self, admm_iter: int) -> None:
        st = self.state
        if not self.enforce or st.n_constraints == 0:
            return
        accepted = getattr(self, "_accepted", None)
        if accepted is not None and accepted[1]:
            update_mu(st, accepted[0].constraints)
            return
        peek = self.cache.peek(self._request(st.z_current, st.theta_current))
        if peek is not None:
            update_mu(st, peek.constraints)
            return
        outcome, ok = self.evaluate(st.z_current, st.theta_current,
                                    "multiplier", admm_iter)
        if ok:
            update_mu(st, outcome.constraints)
        else:
            log.warning("skipping multiplier update: accepted candidate "
                        "could not be evaluated")

    # -- main loop -------------------------------------------------------------

    def run(self) -> RunResult:
        st = self.state
        stop_reason = "budget"
        stall = 0
        last_found = None
        try:
            while True:
                st.t += 1
                self._accepted = None
                self._theta_phase(st.t)
                st.delta = delta_min(st, st.theta_current, self.space)
                self._z_phase(st.t)
                residual = update_lambda(st, st.theta_current)
                self._mu_phase(st.t)
                inc = self.incumbent()
                found = inc.found_at_eval if inc else None
                self.trace.iter_stats.append({
                    "admm_iter": st.t, "residual": residual,
                    "eval_count": self.eval_count,
                    "incumbent_loss": inc.loss if inc else None,
                })
                if residual == 0.0 and found is not None and found == last_found:
                    stall += 1
                else:
                    stall = 0
                last_found = found
                if stall >= self.settings.stall_iterations:
                    stop_reason = "consensus"
                    break
                if self.eval_count >= self.budget.max_evals:
                    break
        except BudgetExhausted:
            stop_reason = "budget"
        finally:
            if self.trace_fh:
                self.trace_fh.close()

        records = self.trace.records
        feasible_fraction = (sum(1 for r in records if r["feasible"])
                             / len(records)) if records else 0.0
        final_residual = (self.trace.iter_stats[-1]["residual"]
                          if self.trace.iter_stats else None)
        stats = {
            "evaluations": self.eval_count,
            "backend_invocations": self.cache.misses,
            "cache_hits": self.cache.hits,
            "failures": self.failures,
            "admm_iterations": st.t,
            "final_residual": final_residual,
            "feasible_fraction": feasible_fraction,
            "stop_reason": stop_reason,
            "wall_seconds": time.monotonic() - self.started,
            "evaluator_wall_ms": self.wall_ms,
        }
        return RunResult(self.incumbent(), self.trace, stats)


def run(problem: Problem, theta_solver, z_solver, budget: Budget,
        settings: Optional[Settings] = None, seed: int = 0,
        trace_path: Optional[str] = None) -> RunResult:
    """Run the full alternating optimization and return incumbent plus trace."""
    runner = _Runner(problem, theta_solver, z_solver, budget,
                     settings or Settings(), seed, trace_path)
    return runner.run()
