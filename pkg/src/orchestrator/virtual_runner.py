"""
Virtual-time runner: plant, link and EMS wired in memory on one event scheduler
"""
import logging
from pathlib import Path
from typing import Optional

from src.ems.receding_horizon import RecedingHorizonController, plan_log_columns
from src.models.scenario import ScenarioConfig
from src.modbus.master import MasterSession
from src.modbus.registers import unit_ids
from src.modbus.slave import ModbusSlave
from src.netem.proxy import DelayLine, direction_rng
from src.netem.stats import MASTER_TO_SLAVE, SLAVE_TO_MASTER, DelayRecorder
from src.netem.traffic import DelaySampler, TrafficClassModel, default_staleness_limit_ms
from src.services.plant_service import PlantService, plant_trace_columns
from src.services.trace_service import DELAY_STATS, PLAN_LOG, PLANT_TRACE, output_service
from src.services.virtual_clock import EventScheduler, ScheduledEvent
from .base_runner import BaseRunner
from .components import CommandSender

logger = logging.getLogger(__name__)

# same-time ordering: the plant publishes before anyone reads
PLANT_PRIORITY = 0
LINK_PRIORITY = 1
POLL_PRIORITY = 2
TICK_PRIORITY = 3


class VirtualLink:
    """Master side of the in-memory link: one request in flight through two delay lines"""

    def __init__(self, scheduler: EventScheduler, session: MasterSession, slave: ModbusSlave,
                 m2s: DelayLine, s2m: DelayLine):
        self.scheduler = scheduler
        self.session = session
        self.slave = slave
        self.m2s = m2s
        self.s2m = s2m
        self._timeout: Optional[ScheduledEvent] = None

    def pump(self) -> None:
        request = self.session.next_request(self.scheduler.now_ms)
        if request is not None:
            self._send(request)

    def _send(self, request: bytes) -> None:
        now = self.scheduler.now_ms
        release = self.m2s.schedule(len(request), now)
        self.scheduler.after_ms(release - now, lambda: self._at_slave(request, now, release),
                                LINK_PRIORITY, 'm2s')
        self.scheduler.cancel(self._timeout)
        self._timeout = self.scheduler.at(int(round(self.session.deadline_ms() * 1000)), self._on_timeout,
                                          LINK_PRIORITY, 'timeout')

    def _at_slave(self, request: bytes, arrival: float, release: float) -> None:
        self.m2s.record(len(request), arrival, release)
        response, _ = self.slave.handle_adu(request)
        if response is None:
            return
        now = self.scheduler.now_ms
        back = self.s2m.schedule(len(response), now)
        self.scheduler.after_ms(back - now, lambda: self._at_master(response, now, back), LINK_PRIORITY, 's2m')

    def _at_master(self, response: bytes, arrival: float, release: float) -> None:
        self.s2m.record(len(response), arrival, release)
        in_flight = self.session.pending
        self.session.on_response(response, self.scheduler.now_ms)
        if in_flight is not None and self.session.pending is None:
            self.scheduler.cancel(self._timeout)
            self._timeout = None
            self.pump()

    def _on_timeout(self) -> None:
        self._timeout = None
        retry = self.session.check_timeout(self.scheduler.now_ms)
        if retry is not None:
            self._send(retry)
        else:
            self.pump()


class VirtualTimeRunner(BaseRunner):
    """Deterministic run: every delay, poll and tick is an event in virtual wall microseconds"""

    mode = 'virtual'

    def execute(self, config: ScenarioConfig, out_dir: Path) -> float:
        spec = config.spec
        bess_ids = [bus.bus_id for bus in spec.battery_buses]
        scheduler = EventScheduler()

        plant_trace = output_service.open_trace(out_dir, PLANT_TRACE, plant_trace_columns(spec))
        plan_log = output_service.open_trace(out_dir, PLAN_LOG, plan_log_columns(bess_ids))
        plant = PlantService(config, trace=plant_trace)

        model = TrafficClassModel.from_scenario(config)
        recorder = DelayRecorder()
        lines = {
            direction: DelayLine(DelaySampler(model, direction_rng(config.rng_seed, 0, direction)), direction,
                                 recorder, config.wire_bytes)
            for direction in (MASTER_TO_SLAVE, SLAVE_TO_MASTER)
        }
        session = MasterSession(unit_ids(spec), bess_ids, read_count=config.read_count,
                                timeout_ms=config.request_timeout_ms, retries=config.request_retries)
        link = VirtualLink(scheduler, session, ModbusSlave(plant.view), lines[MASTER_TO_SLAVE],
                           lines[SLAVE_TO_MASTER])

        limit = default_staleness_limit_ms(config)
        controller = RecedingHorizonController(config, limit, plan_log)
        sender = CommandSender(session)
        logger.info(f"Staleness limit {limit:.1f} ms, poll period {config.poll_period:g} ms")

        end_us = int(round(config.wall_ms(config.duration_s) * 1000))
        step_us = config.wall_ms(config.plant_step) * 1000
        poll_us = config.poll_period * 1000
        tick_us = config.wall_ms(config.reopt_period_s) * 1000
        steps = int(round(config.duration_s / config.plant_step))

        def plant_step(k: int) -> None:
            plant.step()
            if k < steps:
                scheduler.at(int(round((k + 1) * step_us)), lambda: plant_step(k + 1), PLANT_PRIORITY, 'plant')

        def poll(k: int) -> None:
            if session.start_cycle():
                link.pump()
            due = int(round((k + 1) * poll_us))
            if due < end_us:
                scheduler.at(due, lambda: poll(k + 1), POLL_PRIORITY, 'poll')

        def tick(k: int) -> None:
            result = controller.tick(plant.t_sim, session.battery_readings(), scheduler.now_ms)
            if sender.send(result.commands):
                link.pump()
            due = int(round((k + 1) * tick_us + poll_us))
            if due < end_us:
                scheduler.at(due, lambda: tick(k + 1), TICK_PRIORITY, 'tick')

        scheduler.at(int(round(step_us)), lambda: plant_step(1), PLANT_PRIORITY, 'plant')
        scheduler.at(0, lambda: poll(0), POLL_PRIORITY, 'poll')
        # the first tick waits one poll period so the first cycle has landed
        scheduler.at(int(round(poll_us)), lambda: tick(0), TICK_PRIORITY, 'tick')
        scheduler.run_until(end_us)

        plant.close()
        plan_log.close()
        recorder.write_csv(out_dir / DELAY_STATS)
        logger.info(f"Virtual run done: {scheduler.fired} events, {session.cycles} poll cycles, "
                    f"{controller.ticks} EMS ticks ({controller.stale_ticks} stale)")
        return end_us / 1e6
