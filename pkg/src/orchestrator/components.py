"""
The three run components as standalone asyncio programs (used by the realtime runner)
"""
import asyncio
import logging
import signal
import sys
import time
from pathlib import Path
from typing import Mapping, Optional, Tuple

from src.config import Config
from src.ems.receding_horizon import RecedingHorizonController, plan_log_columns
from src.models.scenario import ScenarioConfig
from src.modbus.master import AsyncModbusMaster, MasterSession, wall_ms
from src.modbus.registers import unit_ids
from src.modbus.slave import serve_slave
from src.netem.proxy import forward_with_delay
from src.netem.traffic import TrafficClassModel, default_staleness_limit_ms
from src.services.plant_service import PlantService, plant_trace_columns
from src.services.trace_service import PLAN_LOG, PLANT_TRACE, output_service

logger = logging.getLogger(__name__)

HEARTBEAT = 'HEARTBEAT'


class CommandSender:
    """
    Queues a register write for every battery whose planned command differs
    from what the plant will hold

    A write only counts once the slave acknowledges it, so a command lost
    to timeouts is queued again on the next tick.
    """

    def __init__(self, session: MasterSession):
        self.session = session

    def send(self, commands: Mapping[int, int]) -> int:
        queued = 0
        for bus_id, d in commands.items():
            if self.session.expected_command(bus_id) != d:
                self.session.queue_command(bus_id, d)
                queued += 1
        return queued


def install_stop(stop: asyncio.Event) -> None:
    """Set stop on SIGTERM and SIGINT"""
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGTERM, signal.SIGINT):
        try:
            loop.add_signal_handler(sig, stop.set)
        except (NotImplementedError, RuntimeError):
            pass


async def heartbeat(stop: asyncio.Event, period_s: Optional[float] = None) -> None:
    """Print a heartbeat line on stdout for the supervisor until stop is set"""
    period_s = period_s or Config.HEARTBEAT_PERIOD_S
    while not stop.is_set():
        print(HEARTBEAT, flush=True)
        try:
            await asyncio.wait_for(stop.wait(), timeout=period_s)
        except asyncio.TimeoutError:
            pass


async def run_plant(config: ScenarioConfig, host: str, port: int, out_dir: Path,
                    stop: Optional[asyncio.Event] = None) -> PlantService:
    """
    Plant process: steps the plant in scaled wall time and serves its registers

    Stops at the end of the scenario or when stop is set.
    """
    stop = stop or asyncio.Event()
    trace = output_service.open_trace(out_dir, PLANT_TRACE, plant_trace_columns(config.spec))
    plant = PlantService(config, trace=trace)
    server = await serve_slave(plant.view, host, port)
    beat = asyncio.create_task(heartbeat(stop))

    step_s = config.wall_ms(config.plant_step) / 1000.0
    steps = int(round(config.duration_s / config.plant_step))
    loop = asyncio.get_running_loop()
    start = loop.time()
    try:
        for k in range(1, steps + 1):
            delay = start + k * step_s - loop.time()
            if delay > 0:
                try:
                    await asyncio.wait_for(stop.wait(), timeout=delay)
                except asyncio.TimeoutError:
                    pass
            if stop.is_set():
                break
            plant.step()
            if delay < -1.0:
                logger.warning(f"Plant is {-delay:.2f} s behind scaled time at t={plant.t_sim:.0f} s")
    finally:
        stop.set()
        server.close()
        await server.wait_closed()
        beat.cancel()
        plant.close()
    return plant


async def run_proxy(listen: Tuple[str, int], target: Tuple[str, int], model: TrafficClassModel,
                    stats_csv: Optional[Path], wire_bytes: int = 0, stop: Optional[asyncio.Event] = None) -> None:
    """Proxy process: delays traffic until stopped, then writes the stats CSV"""
    stop = stop or asyncio.Event()
    proxy = await forward_with_delay(listen, target, model, wire_bytes=wire_bytes)
    beat = asyncio.create_task(heartbeat(stop))
    try:
        await stop.wait()
    finally:
        beat.cancel()
        await proxy.close()
        if stats_csv is not None:
            proxy.recorder.write_csv(stats_csv)


async def run_ems(config: ScenarioConfig, host: str, port: int, out_dir: Path,
                  stop: Optional[asyncio.Event] = None) -> RecedingHorizonController:
    """
    EMS process: polls the plant through the link and re-optimises every period

    Runs for the scenario's duration in scaled wall time.
    """
    stop = stop or asyncio.Event()
    bess_ids = [bus.bus_id for bus in config.spec.battery_buses]
    session = MasterSession(unit_ids(config.spec), bess_ids, read_count=config.read_count,
                            timeout_ms=config.request_timeout_ms, retries=config.request_retries)
    master = AsyncModbusMaster(host, port, session, config.poll_period)
    plan_log = output_service.open_trace(out_dir, PLAN_LOG, plan_log_columns(bess_ids))
    controller = RecedingHorizonController(config, default_staleness_limit_ms(config), plan_log)
    sender = CommandSender(session)

    poller = asyncio.create_task(master.run(stop))
    beat = asyncio.create_task(heartbeat(stop))
    start_ms = wall_ms()
    end_ms = start_ms + config.wall_ms(config.duration_s)
    tick_ms = config.wall_ms(config.reopt_period_s)
    try:
        k = 0
        while not stop.is_set():
            due = start_ms + k * tick_ms + config.poll_period
            if due >= end_ms:
                break
            try:
                await asyncio.wait_for(stop.wait(), timeout=max(0.0, (due - wall_ms()) / 1000.0))
                break
            except asyncio.TimeoutError:
                pass
            now = wall_ms()
            # the EMS derives sim time from its own clock; solving runs off the poll loop
            result = await asyncio.to_thread(controller.tick, config.sim_seconds(now - start_ms),
                                             session.battery_readings(), now)
            sender.send(result.commands)
            k += 1
        remaining = (end_ms - wall_ms()) / 1000.0
        if remaining > 0 and not stop.is_set():
            try:
                await asyncio.wait_for(stop.wait(), timeout=remaining)
            except asyncio.TimeoutError:
                pass
    finally:
        stop.set()
        await poller
        beat.cancel()
        plan_log.close()
    logger.info(f"EMS done: {controller.ticks} ticks, {controller.stale_ticks} stale, "
                f"{master.reconnects} reconnect attempts")
    return controller


def component_main(coro) -> int:
    """Run a component coroutine with signal handling; 0 on clean exit"""

    async def wrapper():
        stop = asyncio.Event()
        install_stop(stop)
        await coro(stop)

    started = time.monotonic()
    try:
        asyncio.run(wrapper())
    except Exception as e:
        logger.error(f"Component failed after {time.monotonic() - started:.1f} s: {e}")
        print(f"{type(e).__name__}: {e}", file=sys.stderr, flush=True)
        return 3
    return 0
