"""
Two-time-scale controller: re-optimise the whole horizon, apply the first hour
"""
import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from src.models.profiles import ProfileKind, ProfileSet
from src.models.scenario import ScenarioConfig
from src.services.telemetry import telemetry
from src.services.trace_service import TraceWriter
from .dispatch import dp_dispatch
from .problem import DispatchPlan, HorizonBattery, HorizonProblem

logger = logging.getLogger(__name__)


def plan_log_columns(bess_bus_ids) -> list:
    return ['t_sim'] + [f"d_{b}" for b in bess_bus_ids] + ['p_g_forecast', 'cost_forecast', 'stale_flag']


@dataclass(frozen=True)
class BatteryReading:
    """Latest measured SoC of one battery and when its request was sent (wall ms)"""

    bus_id: int
    soc: float
    sent_ms: float


@dataclass(frozen=True)
class TickResult:
    t_sim: float
    commands: Dict[int, int]
    plan: Optional[DispatchPlan]
    stale_buses: Tuple[int, ...] = ()
    p_g_forecast: float = 0.0
    cost_forecast: float = 0.0

    @property
    def stale_flag(self) -> bool:
        return bool(self.stale_buses)


def build_problem(config: ScenarioConfig, profiles: ProfileSet, now: float,
                  e0: Mapping[int, float]) -> HorizonProblem:
    """
    Forecast the next T intervals from the day profiles (wrapping at midnight)

    Each interval uses the mean of the profile over that interval.

    Args:
        config: Scenario (spec, horizon, dt)
        profiles: Day profiles
        now: Start of the horizon in sim seconds
        e0: Stored energy in Wh of every battery to optimise, by bus id
    """
    spec = config.spec
    dt = config.dt_dispatch
    T = max(1, int(round(config.horizon_hours / dt)))
    slot = dt * 3600.0
    starts = [now + t * slot for t in range(T)]

    def series(kind: ProfileKind, bus_id: Optional[int]) -> np.ndarray:
        return np.array([profiles.mean(kind, bus_id, s, s + slot) for s in starts], dtype=float)

    load = np.stack([series(ProfileKind.LOAD, b) for b in spec.bus_ids], axis=1)
    pv_ids = [bus.bus_id for bus in spec.pv_buses]
    pv = np.stack([series(ProfileKind.PV, b) for b in pv_ids], axis=1) if pv_ids else np.zeros((T, 0))

    batteries = []
    for bus in spec.battery_buses:
        if bus.bus_id not in e0:
            continue
        value = min(max(e0[bus.bus_id], bus.bess.e_min), bus.bess.e_max)
        batteries.append(HorizonBattery(bus_id=bus.bus_id, spec=bus.bess, e0=value))

    return HorizonProblem(T=T, dt=dt, load=load, pv=pv,
                          price_grid=series(ProfileKind.PRICE_GRID, None),
                          price_bess=series(ProfileKind.PRICE_BESS, None),
                          batteries=tuple(batteries))


class RecedingHorizonController:
    """Slow loop of the EMS: one call per re-optimisation period"""

    def __init__(self, config: ScenarioConfig, staleness_limit_ms: float,
                 plan_log: Optional[TraceWriter] = None):
        self.config = config
        self.profiles = config.profile_set()
        self.staleness_limit_ms = staleness_limit_ms
        self.plan_log = plan_log
        self.bess_bus_ids = [bus.bus_id for bus in config.spec.battery_buses]
        self.previous: Dict[int, int] = {b: 0 for b in self.bess_bus_ids}
        self.ticks = 0
        self.stale_ticks = 0

    def is_stale(self, reading: Optional[BatteryReading], now_ms: float) -> bool:
        return reading is None or now_ms - reading.sent_ms > self.staleness_limit_ms

    def tick(self, now: float, readings: Mapping[int, Optional[BatteryReading]], now_ms: float) -> TickResult:
        """
        Re-optimise from the measured SoC and return the commands for the next hour

        A battery whose newest reading is older than the staleness limit keeps
        its previous command; the others are optimised as usual.

        Args:
            now: Sim time in seconds
            readings: Newest reading per battery bus (None if never received)
            now_ms: Wall time in ms, the reference for measurement age
        """
        self.ticks += 1
        stale = tuple(b for b in self.bess_bus_ids if self.is_stale(readings.get(b), now_ms))
        fresh = {
            b: readings[b].soc * self.config.spec.bus(b).bess.capacity
            for b in self.bess_bus_ids if b not in stale
        }

        problem = build_problem(self.config, self.profiles, now, fresh)
        plan = dp_dispatch(problem)

        commands = dict(self.previous)
        commands.update(plan.first_row())
        if stale:
            self.stale_ticks += 1
            ages = {b: (now_ms - readings[b].sent_ms if readings.get(b) else None) for b in stale}
            telemetry.flag('stale_measurement', f"t={now:.0f} s buses {list(stale)} ages(ms) {ages}")

        discharge = sum(commands[b] * self.config.spec.bus(b).bess.p_dispatch for b in self.bess_bus_ids)
        p_g_forecast = float(problem.net_demand()[0] - discharge)

        result = TickResult(t_sim=now, commands=commands, plan=plan, stale_buses=stale,
                            p_g_forecast=p_g_forecast, cost_forecast=plan.cost)
        self.previous = commands
        self._log(result)
        return result

    def _log(self, result: TickResult) -> None:
        logger.info(
            f"EMS tick t={result.t_sim:.0f} s: d={[result.commands[b] for b in self.bess_bus_ids]} "
            f"p_g={result.p_g_forecast:.0f} W cost={result.cost_forecast:.4f}"
            f"{' STALE ' + str(list(result.stale_buses)) if result.stale_flag else ''}"
        )
        if self.plan_log is None:
            return
        row = {'t_sim': result.t_sim, 'p_g_forecast': result.p_g_forecast,
               'cost_forecast': result.cost_forecast, 'stale_flag': int(result.stale_flag)}
        row.update({f"d_{b}": result.commands[b] for b in self.bess_bus_ids})
        self.plan_log.write(row)
