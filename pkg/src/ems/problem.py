"""
Dispatch problem over a finite horizon: SoC dynamics, power balance and cost
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from src.models.microgrid import BatterySpec

logger = logging.getLogger(__name__)

# Action preference order; ties resolve to the earliest entry
ACTIONS: Tuple[int, ...] = (0, -1, 1)

# Relative tolerance (of capacity) on the SoC bounds
BOUND_TOL = 1e-9


class InfeasiblePlanError(ValueError):
    """Plan leaves a SoC band or uses a command outside {-1, 0, +1}"""


@dataclass(frozen=True)
class HorizonBattery:
    bus_id: int
    spec: BatterySpec
    e0: float

    @property
    def quantum(self) -> float:
        """Stored-energy change of one full step of dispatch, in Wh per hour of dt"""
        return self.spec.eta * self.spec.p_dispatch


@dataclass(frozen=True, eq=False)
class HorizonProblem:
    """Forecasts and batteries for one optimisation

    load is T x (number of load buses), pv is T x (number of PV units),
    both in W. Prices are per kWh.
    """

    T: int
    dt: float
    load: np.ndarray
    pv: np.ndarray
    price_grid: np.ndarray
    price_bess: np.ndarray
    batteries: Tuple[HorizonBattery, ...]

    @property
    def n(self) -> int:
        return len(self.batteries)

    def net_demand(self) -> np.ndarray:
        """Load minus PV per hour, in W"""
        return self.load.sum(axis=1) - self.pv.sum(axis=1)

    def violations(self) -> List[str]:
        problems = []
        if self.T < 1 or self.dt <= 0:
            problems.append(f"need T >= 1 and dt > 0, got T={self.T}, dt={self.dt}")
        for name in ('load', 'pv', 'price_grid', 'price_bess'):
            series = getattr(self, name)
            if series.shape[0] != self.T:
                problems.append(f"{name} has {series.shape[0]} rows, expected {self.T}")
        for battery in self.batteries:
            spec = battery.spec
            tol = BOUND_TOL * spec.capacity
            if not spec.e_min - tol <= battery.e0 <= spec.e_max + tol:
                problems.append(
                    f"bus {battery.bus_id}: e0 {battery.e0:.2f} Wh outside [{spec.e_min:.2f}, {spec.e_max:.2f}]"
                )
        return problems


@dataclass(frozen=True, eq=False)
class DispatchPlan:
    """d is T x n in {-1, 0, +1}; e is (T+1) x n stored energy in Wh"""

    d: np.ndarray
    p_b: np.ndarray
    p_g: np.ndarray
    e: np.ndarray
    cost: float
    bus_ids: Tuple[int, ...] = ()

    def first_row(self) -> dict:
        """Commands of the first interval by bus id"""
        return {bus_id: int(self.d[0, k]) for k, bus_id in enumerate(self.bus_ids)}

    def same_commands(self, other: "DispatchPlan") -> bool:
        return self.bus_ids == other.bus_ids and np.array_equal(self.d, other.d)


def soc_step(e: float, d: int, spec: BatterySpec, dt: float) -> float:
    """Stored energy after one interval; discharge (d=+1) lowers it"""
    return e - d * spec.eta * spec.p_dispatch * dt


def in_bounds(e: float, spec: BatterySpec) -> bool:
    tol = BOUND_TOL * spec.capacity
    return spec.e_min - tol <= e <= spec.e_max + tol


def feasible_actions(e: float, spec: BatterySpec, dt: float) -> Tuple[int, ...]:
    """
    Actions that keep the next stored energy inside the SoC band

    Returns:
        Subset of (0, -1, +1) in preference order; 0 is always present
    """
    return tuple(d for d in ACTIONS if d == 0 or in_bounds(soc_step(e, d, spec, dt), spec))


def grid_power(problem: HorizonProblem, t: int, d_row: Sequence[int]) -> float:
    """Grid exchange at hour t in W, import positive"""
    if not 0 <= t < problem.T:
        raise IndexError(f"hour {t} outside horizon of {problem.T}")
    discharge = sum(d * b.spec.p_dispatch for d, b in zip(d_row, problem.batteries))
    return float(problem.load[t].sum() - problem.pv[t].sum() - discharge)


def _cost_of(problem: HorizonProblem, p_b: np.ndarray, p_g: np.ndarray) -> float:
    # power in kW, prices per kWh
    grid = problem.price_grid * p_g
    bess = problem.price_bess * p_b.sum(axis=1) if problem.n else np.zeros(problem.T)
    return float(np.sum((grid - bess) / 1000.0 * problem.dt))


def build_plan(problem: HorizonProblem, d: np.ndarray) -> DispatchPlan:
    """Derive powers, energies and cost of a command matrix"""
    d = np.asarray(d, dtype=int).reshape(problem.T, problem.n)
    p_dispatch = np.array([b.spec.p_dispatch for b in problem.batteries], dtype=float)
    p_b = d * p_dispatch
    p_g = np.array([grid_power(problem, t, d[t]) for t in range(problem.T)], dtype=float)

    e = np.empty((problem.T + 1, problem.n))
    e[0] = [b.e0 for b in problem.batteries]
    for t in range(problem.T):
        for k, battery in enumerate(problem.batteries):
            e[t + 1, k] = soc_step(e[t, k], int(d[t, k]), battery.spec, problem.dt)

    return DispatchPlan(d=d, p_b=p_b, p_g=p_g, e=e, cost=_cost_of(problem, p_b, p_g),
                        bus_ids=tuple(b.bus_id for b in problem.batteries))


def check_plan(problem: HorizonProblem, plan: DispatchPlan) -> None:
    """
    Raises:
        InfeasiblePlanError: on a bad command or a SoC band exit at any stage
    """
    if plan.d.shape != (problem.T, problem.n):
        raise InfeasiblePlanError(f"plan shape {plan.d.shape} does not match ({problem.T}, {problem.n})")
    if not np.all(np.isin(plan.d, ACTIONS)):
        raise InfeasiblePlanError("commands must be -1, 0 or +1")
    for k, battery in enumerate(problem.batteries):
        for t in range(problem.T + 1):
            if not in_bounds(plan.e[t, k], battery.spec):
                raise InfeasiblePlanError(
                    f"bus {battery.bus_id}: stored energy {plan.e[t, k]:.2f} Wh leaves the SoC band at stage {t}"
                )


def horizon_cost(problem: HorizonProblem, plan: DispatchPlan) -> float:
    """
    Cost of a plan: grid purchases minus battery discharge remuneration

    Raises:
        InfeasiblePlanError: if the plan is not feasible
    """
    check_plan(problem, plan)
    return _cost_of(problem, plan.p_b, plan.p_g)


def stage_costs(problem: HorizonProblem, k: int) -> np.ndarray:
    """Separable cost of battery k per hour and action, shape T x len(ACTIONS)"""
    battery = problem.batteries[k]
    value = (problem.price_grid + problem.price_bess) * problem.dt / 1000.0
    return np.stack([-value * (d * battery.spec.p_dispatch) for d in ACTIONS], axis=1)


def plan_contributions(problem: HorizonProblem, plan: DispatchPlan) -> Tuple[float, List[float]]:
    """
    Split a plan's cost into the battery-independent baseline and one term per battery

    Returns:
        (baseline, contributions) whose sum equals the plan cost up to rounding
    """
    baseline = float(np.sum(problem.price_grid * problem.net_demand() / 1000.0 * problem.dt))
    contributions = []
    for k in range(problem.n):
        costs = stage_costs(problem, k)
        picks = [costs[t, ACTIONS.index(int(plan.d[t, k]))] for t in range(problem.T)]
        contributions.append(float(np.sum(picks)))
    return baseline, contributions
