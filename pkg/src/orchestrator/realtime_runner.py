"""
Realtime runner: plant, proxy and EMS as supervised child processes on real sockets
"""
import asyncio
import logging
import sys
import time
from collections import deque
from pathlib import Path
from typing import Deque, List, Optional

from src.config import Config
from src.models.scenario import ScenarioConfig, save_scenario
from src.services.trace_service import DELAY_STATS
from .base_runner import BaseRunner, ComponentCrashError

logger = logging.getLogger(__name__)

MAIN = Path(__file__).resolve().parents[2] / 'main.py'
EXCERPT_LINES = 20
STARTUP_TIMEOUT_S = 10.0
SHUTDOWN_TIMEOUT_S = 10.0


class Child:
    """One supervised component process"""

    def __init__(self, name: str, process: asyncio.subprocess.Process):
        self.name = name
        self.process = process
        self.tail: Deque[str] = deque(maxlen=EXCERPT_LINES)
        self.last_beat = time.monotonic()
        self._readers = [asyncio.create_task(self._read_stdout()), asyncio.create_task(self._read_stderr())]

    async def _read_stdout(self) -> None:
        async for line in self.process.stdout:
            if line.strip() == b'HEARTBEAT':
                self.last_beat = time.monotonic()

    async def _read_stderr(self) -> None:
        async for line in self.process.stderr:
            self.tail.append(line.decode('utf-8', 'replace').rstrip())

    @property
    def excerpt(self) -> str:
        return '\n'.join(self.tail)

    @property
    def returncode(self) -> Optional[int]:
        return self.process.returncode

    async def stop(self) -> None:
        if self.process.returncode is None:
            self.process.terminate()
            try:
                await asyncio.wait_for(self.process.wait(), timeout=SHUTDOWN_TIMEOUT_S)
            except asyncio.TimeoutError:
                logger.warning(f"{self.name} ignored SIGTERM, killing it")
                self.process.kill()
                await self.process.wait()
        await asyncio.gather(*self._readers, return_exceptions=True)


async def _spawn(name: str, args: List[str]) -> Child:
    process = await asyncio.create_subprocess_exec(
        sys.executable, str(MAIN), *args,
        stdout=asyncio.subprocess.PIPE, stderr=asyncio.subprocess.PIPE,
    )
    logger.info(f"Started {name} (pid {process.pid}): {' '.join(args)}")
    return Child(name, process)


async def _wait_for_port(child: Child, host: str, port: int) -> None:
    deadline = time.monotonic() + STARTUP_TIMEOUT_S
    while time.monotonic() < deadline:
        if child.returncode is not None:
            raise ComponentCrashError(child.name, f"exited with code {child.returncode} during startup",
                                      child.excerpt)
        try:
            _, writer = await asyncio.open_connection(host, port)
            writer.close()
            return
        except OSError:
            await asyncio.sleep(0.1)
    raise ComponentCrashError(child.name, f"did not listen on {host}:{port} within {STARTUP_TIMEOUT_S:.0f} s",
                              child.excerpt)


def proxy_args(config: ScenarioConfig, host: str, slave_port: int, proxy_port: int, stats_csv: Path) -> List[str]:
    """Command line of the proxy child; carries every delay-model field of the scenario"""
    return [
        'proxy', '--listen', f"{host}:{proxy_port}", '--target', f"{host}:{slave_port}",
        '--class', config.traffic_class.value, '--congestion', repr(config.congestion),
        '--seed', str(config.rng_seed), '--wire-bytes', str(config.wire_bytes),
        '--propagation-ms', repr(config.propagation_ms), '--background-packet', str(config.background_packet),
        '--stats-csv', str(stats_csv),
    ]


class RealtimeRunner(BaseRunner):
    """Closest to a hardware testbed: genuine sockets and wall-clock delays, not deterministic"""

    mode = 'realtime'

    def execute(self, config: ScenarioConfig, out_dir: Path) -> float:
        return asyncio.run(self._supervise(config, out_dir))

    async def _supervise(self, config: ScenarioConfig, out_dir: Path) -> float:
        scenario_file = out_dir / 'scenario.toml'
        save_scenario(config, scenario_file)
        host = Config.MODBUS_HOST
        slave_port, proxy_port = Config.SLAVE_PORT, Config.PROXY_PORT

        children: List[Child] = []
        started = time.monotonic()
        try:
            plant = await _spawn('plant', ['plant', str(scenario_file), '--port', str(slave_port),
                                           '--out', str(out_dir)])
            children.append(plant)
            await _wait_for_port(plant, host, slave_port)

            proxy = await _spawn('proxy', proxy_args(config, host, slave_port, proxy_port, out_dir / DELAY_STATS))
            children.append(proxy)
            await _wait_for_port(proxy, host, proxy_port)

            ems = await _spawn('ems', ['ems', str(scenario_file), '--endpoint', f"{host}:{proxy_port}",
                                       '--out', str(out_dir)])
            children.append(ems)
            await self._watch(children, ems)
        finally:
            for child in reversed(children):
                await child.stop()

        for child in children:
            if child.returncode not in (0, None, -15):
                raise ComponentCrashError(child.name, f"exited with code {child.returncode} at shutdown",
                                          child.excerpt)
        return time.monotonic() - started

    async def _watch(self, children: List[Child], ems: Child) -> None:
        """Return when the EMS finishes; raise if any component dies or goes silent"""
        while ems.returncode is None:
            try:
                await asyncio.wait_for(ems.process.wait(), timeout=Config.HEARTBEAT_PERIOD_S)
            except asyncio.TimeoutError:
                pass
            now = time.monotonic()
            for child in children:
                if child.returncode is not None and (child is not ems or child.returncode != 0):
                    raise ComponentCrashError(child.name, f"exited with code {child.returncode}", child.excerpt)
                if child.returncode is None and now - child.last_beat > Config.HEARTBEAT_TIMEOUT_S:
                    raise ComponentCrashError(child.name, f"no heartbeat for {now - child.last_beat:.1f} s",
                                              child.excerpt)
        logger.info("EMS finished, stopping plant and proxy")
