"""
Exact battery dispatch: per-battery dynamic programming and an exhaustive oracle

The objective separates by battery, so each battery is solved on its own
SoC lattice {e0 + j*q}, q = eta * p_dispatch * dt, and the results are
stacked into one plan. Both solvers accumulate cost-to-go in the same
order and prefer actions in ACTIONS order, so they agree bit for bit.
"""
import itertools
import logging
from functools import lru_cache

import numpy as np

from .problem import ACTIONS, BOUND_TOL, DispatchPlan, HorizonProblem, build_plan, stage_costs

logger = logging.getLogger(__name__)

MAX_BRUTE_FORCE_T = 12


class HorizonTooLargeError(ValueError):
    """Exhaustive enumeration requested for more than 3^12 sequences per battery"""


def _require_valid(problem: HorizonProblem) -> None:
    problems = problem.violations()
    if problems:
        raise ValueError("invalid dispatch problem: " + "; ".join(problems))


def _lattice_feasible(problem: HorizonProblem, k: int, j: np.ndarray) -> np.ndarray:
    battery = problem.batteries[k]
    spec = battery.spec
    q = battery.quantum * problem.dt
    e = battery.e0 + j * q
    tol = BOUND_TOL * spec.capacity
    return (e >= spec.e_min - tol) & (e <= spec.e_max + tol)


def _dp_battery(problem: HorizonProblem, k: int) -> np.ndarray:
    T = problem.T
    costs = stage_costs(problem, k)
    j = np.arange(-T, T + 1)
    feasible = _lattice_feasible(problem, k, j)
    width = len(j)

    value = np.where(feasible, 0.0, np.inf)
    policy = np.zeros((T, width), dtype=int)
    for t in reversed(range(T)):
        best = np.full(width, np.inf)
        pick = np.zeros(width, dtype=int)
        for a_index, a in enumerate(ACTIONS):
            # discharge (a=+1) moves one lattice step down
            target = np.arange(width) - a
            valid = (target >= 0) & (target < width)
            tail = np.full(width, np.inf)
            tail[valid] = value[target[valid]]
            candidate = costs[t, a_index] + tail
            better = candidate < best
            best = np.where(better, candidate, best)
            pick = np.where(better, a, pick)
        value = np.where(feasible, best, np.inf)
        policy[t] = pick

    d = np.zeros(T, dtype=int)
    index = T
    for t in range(T):
        d[t] = policy[t, index]
        index -= d[t]
    return d


def dp_dispatch(problem: HorizonProblem) -> DispatchPlan:
    """
    Optimal plan by dynamic programming over each battery's SoC lattice

    Args:
        problem: Horizon forecasts, prices and batteries

    Returns:
        The cost-minimising plan; ties prefer idle, then charge, then discharge
    """
    _require_valid(problem)
    d = np.zeros((problem.T, problem.n), dtype=int)
    for k in range(problem.n):
        d[:, k] = _dp_battery(problem, k)
    plan = build_plan(problem, d)
    logger.debug(f"DP plan over {problem.T} h for {problem.n} batteries: cost {plan.cost:.6f}\n{plan.d.T}")
    return plan


@lru_cache(maxsize=None)
def _sequences(T: int) -> np.ndarray:
    """Every action-index sequence of length T, in preference-lexicographic order"""
    return np.array(list(itertools.product(range(len(ACTIONS)), repeat=T)), dtype=int).reshape(-1, T)


def _brute_force_battery(problem: HorizonProblem, k: int) -> np.ndarray:
    T = problem.T
    costs = stage_costs(problem, k)
    indices = _sequences(T)
    actions = np.array(ACTIONS, dtype=int)[indices]

    j = -np.cumsum(actions, axis=1)
    feasible = np.all(_lattice_feasible(problem, k, j), axis=1)

    total = np.zeros(len(indices))
    for t in reversed(range(T)):
        total = costs[t, indices[:, t]] + total
    total = np.where(feasible, total, np.inf)
    return actions[int(np.argmin(total))]


def brute_force_dispatch(problem: HorizonProblem) -> DispatchPlan:
    """
    Optimal plan by enumerating every command sequence of every battery

    Raises:
        HorizonTooLargeError: if T exceeds 12
    """
    if problem.T > MAX_BRUTE_FORCE_T:
        raise HorizonTooLargeError(
            f"brute force needs 3^T sequences per battery; T={problem.T} exceeds {MAX_BRUTE_FORCE_T}"
        )
    _require_valid(problem)
    d = np.zeros((problem.T, problem.n), dtype=int)
    for k in range(problem.n):
        d[:, k] = _brute_force_battery(problem, k)
    return build_plan(problem, d)
