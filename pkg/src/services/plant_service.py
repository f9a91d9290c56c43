"""
Plant service: owns the plant state, applies queued commands, publishes snapshots
"""
import logging
import math
from dataclasses import replace
from typing import Dict, List, Optional

from src.models.microgrid import MicrogridSpec
from src.models.profiles import ProfileKind
from src.models.scenario import ScenarioConfig
from src.modbus.registers import REG_BREAKER, REG_COMMAND
from src.modbus.slave import COMMAND_WORDS, RegisterView
from src.plant.simulator import (
    ConverterCommand, MeasurementSnapshot, PlantState, advance_plant, apply_commands, init_plant, read_snapshot,
)
from .trace_service import TraceWriter

logger = logging.getLogger(__name__)


def plant_trace_columns(spec: MicrogridSpec) -> List[str]:
    buses = spec.bus_ids
    pv = [bus.bus_id for bus in spec.pv_buses]
    bess = [bus.bus_id for bus in spec.battery_buses]
    return (['t_sim', 'seq', 'v_dc'] + [f"v_bus_{b}" for b in buses] + [f"p_pv_{b}" for b in pv]
            + [f"p_load_{b}" for b in buses] + [f"p_bess_{b}" for b in bess] + [f"soc_{b}" for b in bess]
            + ['p_pcc', 'price_grid', 'price_bess'])


class PlantService:
    """
    The plant loop: single consumer of the command queue, single writer of
    the register view and the plant trace
    """

    def __init__(self, config: ScenarioConfig, view: Optional[RegisterView] = None,
                 trace: Optional[TraceWriter] = None):
        self.config = config
        self.profiles = config.profile_set()
        self.state: PlantState = init_plant(config)
        self.view = view if view is not None else RegisterView(config.spec)
        self.trace = trace
        self.command = ConverterCommand()
        self.commands_applied = 0
        self.seq = 0
        self._next_trace_t = 0.0

        self.snapshot = read_snapshot(self.state, self.seq)
        self.view.publish(self.snapshot)

    @property
    def t_sim(self) -> float:
        return self.state.t_sim

    def apply_writes(self) -> int:
        """Apply every register write received since the last step; returns how many"""
        writes = self.view.drain()
        for write in writes:
            if write.register == REG_COMMAND:
                d = COMMAND_WORDS[write.value]
                # a setpoint must hold the SoC band until the next re-optimisation
                self.command = apply_commands(self.state, [(write.unit_id, d)],
                                              lookahead_s=self.config.reopt_period_s, base=self.command)
                logger.debug(f"t={self.t_sim:.0f} s: bus {write.unit_id} command d={d}")
            elif write.register == REG_BREAKER:
                breakers = dict(self.command.breakers)
                breakers[write.unit_id] = bool(write.value)
                self.command = replace(self.command, breakers=breakers)
                logger.info(f"t={self.t_sim:.0f} s: bus {write.unit_id} breaker "
                            f"{'closed' if write.value else 'opened'}")
        self.commands_applied += len(writes)
        return len(writes)

    def step(self) -> MeasurementSnapshot:
        """One macro step of plant_step sim seconds; publishes the resulting snapshot"""
        config = self.config
        self.apply_writes()
        self.state = advance_plant(self.state, self.command, self.profiles, config.plant_step,
                                   dt_sim=config.dt_sim, settle_window=config.settle_window,
                                   quasi_static_w=config.quasi_static_w)
        self.seq += 1
        self.snapshot = read_snapshot(self.state, self.seq)
        self.view.publish(self.snapshot)
        self._trace(self.snapshot)
        return self.snapshot

    def _trace(self, snapshot: MeasurementSnapshot) -> None:
        # the at-rest state before the first step is not traced; rows then
        # fall on the first step at or after each multiple of trace_period
        if self.trace is None or snapshot.t_sim + 1e-9 < self._next_trace_t:
            return
        if snapshot.t_sim >= self.config.duration_s - 1e-9:
            return
        period = self.config.trace_period
        self._next_trace_t = (math.floor(snapshot.t_sim / period + 1e-9) + 1) * period
        self.trace.write(self.trace_row(snapshot))

    def trace_row(self, snapshot: MeasurementSnapshot) -> Dict[str, float]:
        t = snapshot.t_sim
        row = {'t_sim': t, 'seq': snapshot.seq, 'v_dc': snapshot.v_dc, 'p_pcc': snapshot.p_pcc,
               'price_grid': self.profiles.value(ProfileKind.PRICE_GRID, None, t),
               'price_bess': self.profiles.value(ProfileKind.PRICE_BESS, None, t)}
        for prefix, values in (('v_bus', snapshot.v_bus), ('p_pv', snapshot.p_pv), ('p_load', snapshot.p_load),
                               ('p_bess', snapshot.p_bess), ('soc', snapshot.soc)):
            row.update({f"{prefix}_{b}": value for b, value in values.items()})
        return row

    def close(self) -> None:
        if self.trace is not None:
            self.trace.close()
        logger.info(f"Plant stopped at t={self.t_sim:.0f} s after {self.seq} steps, "
                    f"{self.commands_applied} register writes applied")
