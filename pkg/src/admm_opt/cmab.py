"""Combinatorial solvers for the algorithm-selection sub-problem.

Three strategies over one-hot module assignments: exhaustive enumeration,
uniform random sampling, and Thompson sampling over a combinatorial bandit
with probabilistic rewards.  The bandit keeps one Beta-Bernoulli arm per
(module, algorithm) pair; a continuous loss is first normalized against the
loss upper bound and then resampled into a binary reward so standard
Beta-posterior updates apply.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np

from .space import SearchSpace, ZAssignment

DEFAULT_F_HAT = 0.7
DEFAULT_PRIOR = 10.0


class BanditState:
    """Cumulative pull counts and rewards, one arm per algorithm choice.

    State is owned by a single solver; rounds are sequential because every
    selection depends on the posterior of the previous update.
    """

    def __init__(self, space: SearchSpace, alpha0: float = DEFAULT_PRIOR,
                 delta0: float = DEFAULT_PRIOR, f_hat: float = DEFAULT_F_HAT):
        if f_hat <= 0:
            raise ValueError("loss upper bound must be positive")
        if alpha0 <= 0 or delta0 <= 0:
            raise ValueError("Beta priors must be positive")
        self.space = space
        self.alpha0 = alpha0
        self.delta0 = delta0
        self.f_hat = f_hat
        self.offsets = []
        off = 0
        for k in space.n_algorithms:
            self.offsets.append(off)
            off += k
        self.n_arms = off
        self.n = np.zeros(self.n_arms)
        self.r = np.zeros(self.n_arms)
        self.rounds = 0

    def arm_index(self, module: int, algorithm: int) -> int:
        return self.offsets[module] + algorithm

    def posterior_params(self) -> tuple[np.ndarray, np.ndarray]:
        return self.alpha0 + self.r, self.delta0 + (self.n - self.r)


def select_arms(space: SearchSpace, omega: np.ndarray) -> ZAssignment:
    """Pick the highest-sampled arm in every module (ties to the lowest index)."""
    choice = []
    off = 0
    for k in space.n_algorithms:
        if k < 1:
            raise ValueError("module without algorithms")
        choice.append(int(np.argmax(omega[off:off + k])))
        off += k
    return ZAssignment(tuple(choice))


def reward_from_loss(loss: float, f_hat: float) -> float:
    """Normalize a loss against its upper bound and clip into [0, 1]."""
    if f_hat <= 0:
        raise ValueError("loss upper bound must be positive")
    return 1.0 - min(max(loss / f_hat, 0.0), 1.0)


def cmab_round(state: BanditState,
               objective: Callable[[ZAssignment], float],
               rng: np.random.Generator) -> tuple[ZAssignment, float]:
    """One Thompson-sampling round; the state is updated only on success.

    Samples one Beta draw per arm, selects per-module argmax arms, observes
    the loss, converts it to a probabilistic reward, resolves the reward into
    a single Bernoulli outcome, and increments counts for the selected arms.
    """
    alpha, delta = state.posterior_params()
    omega = rng.beta(alpha, delta)
    z = select_arms(state.space, omega)
    loss = objective(z)  # an exception here leaves the state untouched
    r_tilde = reward_from_loss(loss, state.f_hat)
    reward = 1.0 if rng.uniform() < r_tilde else 0.0
    for mi, ai in enumerate(z.choice):
        arm = state.arm_index(mi, ai)
        state.n[arm] += 1.0
        state.r[arm] += reward
    state.rounds += 1
    return z, loss


def random_assignment(space: SearchSpace, rng: np.random.Generator) -> ZAssignment:
    return ZAssignment(tuple(int(rng.integers(0, k))
                             for k in space.n_algorithms))


def solve_z_min(strategy: str, space: SearchSpace,
                objective: Callable[[ZAssignment], float], budget: int,
                rng: np.random.Generator, *,
                bandit: Optional[BanditState] = None,
                exhaustive_cap: int = 4096) -> tuple[ZAssignment, float]:
    """Minimize a black-box objective over one-hot assignments.

    ``exhaustive`` enumerates every combination (true argmin, capped),
    ``random`` returns the best of ``budget`` uniform draws, and ``cmab``
    returns the best loss seen across ``budget`` Thompson-sampling rounds.
    """
    if strategy == "exhaustive":
        if space.n_combinations > exhaustive_cap:
            raise ValueError(f"{space.n_combinations} combinations exceed the "
                             f"exhaustive cap {exhaustive_cap}")
        best_z, best_v = None, math.inf
        for z in space.iter_assignments():
            v = objective(z)
            if v < best_v:
                best_z, best_v = z, v
        assert best_z is not None
        return best_z, best_v
    if budget < 1:
        raise ValueError("combinatorial budget must be >= 1")
    if strategy == "random":
        best_z, best_v = None, math.inf
        for _ in range(budget):
            z = random_assignment(space, rng)
            v = objective(z)
            if v < best_v:
                best_z, best_v = z, v
        assert best_z is not None
        return best_z, best_v
    if strategy == "cmab":
        state = bandit if bandit is not None else BanditState(space)
        best_z, best_v = None, math.inf
        for _ in range(budget):
            z, v = cmab_round(state, objective, rng)
            if v < best_v:
                best_z, best_v = z, v
        assert best_z is not None
        return best_z, best_v
    raise ValueError(f"unknown strategy {strategy!r}")


class ExhaustiveZSolver:
    def __init__(self, cap: int = 4096):
        self.cap = cap

    def solve(self, space, objective, budget, rng):
        return solve_z_min("exhaustive", space, objective, budget, rng,
                           exhaustive_cap=self.cap)


class RandomZSolver:
    def solve(self, space, objective, budget, rng):
        return solve_z_min("random", space, objective, budget, rng)


class CmabZSolver:
    """Thompson-sampling solver whose bandit state persists across calls."""

    def __init__(self, f_hat: float = DEFAULT_F_HAT,
                 prior: float = DEFAULT_PRIOR):
        self.f_hat = f_hat
        self.prior = prior
        self.state: Optional[BanditState] = None

    def solve(self, space, objective, budget, rng):
        if self.state is None or self.state.space is not space:
            self.state = BanditState(space, self.prior, self.prior, self.f_hat)
        return solve_z_min("cmab", space, objective, budget, rng,
                           bandit=self.state)
