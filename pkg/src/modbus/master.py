"""
Modbus master used by the EMS

MasterSession holds all protocol state without doing any I/O: it builds
requests, pairs responses by transaction id, and keeps retry and timeout
bookkeeping. The asyncio poller below and the virtual-time runner both
drive the same session.
"""
import asyncio
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import AsyncIterator, Callable, Deque, Dict, Iterable, List, Optional, Tuple

from asyncio_throttle import Throttler

from src.config import Config
from src.ems.receding_horizon import BatteryReading
from src.services.telemetry import telemetry
from .framing import (
    READ_HOLDING, FrameError, ModbusExceptionError, ModbusFrame, decode_frame, encode_frame, read_adu,
    parse_read_response, parse_write_response, read_request, write_request,
)
from .registers import REG_BREAKER, REG_COMMAND, RegisterKind, decode_unit, reg_encode

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UnitReading:
    """Decoded registers of one unit with the times of the exchange that produced them (wall ms)"""

    unit_id: int
    values: Dict[str, float]
    sent_ms: float
    received_ms: float
    transaction_id: int

    @property
    def rtt_ms(self) -> float:
        return self.received_ms - self.sent_ms


@dataclass
class UnitTelemetry:
    requests: int = 0
    responses: int = 0
    timeouts: int = 0
    retries: int = 0
    exceptions: int = 0
    late_responses: int = 0
    rtt_total_ms: float = 0.0
    rtt_max_ms: float = 0.0

    @property
    def mean_rtt_ms(self) -> float:
        return self.rtt_total_ms / self.responses if self.responses else 0.0


@dataclass
class PendingRequest:
    frame: ModbusFrame
    sent_ms: float
    attempt: int = 0

    @property
    def transaction_id(self) -> int:
        return self.frame.transaction_id

    @property
    def unit_id(self) -> int:
        return self.frame.unit_id


@dataclass
class _Job:
    unit_id: int
    address: int
    count: int = 0
    values: Tuple[int, ...] = field(default_factory=tuple)
    command: Optional[int] = None

    @property
    def is_write(self) -> bool:
        return bool(self.values)


class MasterSession:
    """Strict request-response Modbus master state, one request in flight"""

    def __init__(self, units: Iterable[int], battery_units: Iterable[int] = (), read_count: int = 6,
                 timeout_ms: float = 250.0, retries: int = 1):
        self.units = list(units)
        self.battery_units = list(battery_units)
        self.read_count = read_count
        self.timeout_ms = timeout_ms
        self.retries = retries

        self.pending: Optional[PendingRequest] = None
        self._job: Optional[_Job] = None
        self.latest: Dict[int, UnitReading] = {}
        self.stats: Dict[int, UnitTelemetry] = {unit: UnitTelemetry() for unit in self.units}
        self.cycles = 0
        self.commands_sent = 0
        self._writes: Deque[_Job] = deque()
        self._reads: Deque[_Job] = deque()
        self._next_txn = 1
        # commands the slave has acknowledged, per unit
        self.acked_commands: Dict[int, int] = {}

    # Work queues

    def queue_command(self, unit_id: int, d: int) -> None:
        """Write command d (-1, 0, +1) to register 10; sent before any queued read"""
        word = reg_encode(d, RegisterKind.COMMAND, f"unit {unit_id} command")
        self._writes.append(_Job(unit_id, REG_COMMAND, values=(word,), command=d))

    def expected_command(self, unit_id: int) -> int:
        """The command the unit will hold once every queued and in-flight write lands"""
        for job in reversed(self._writes):
            if job.unit_id == unit_id and job.command is not None:
                return job.command
        if self.pending is not None and self._job.unit_id == unit_id and self._job.command is not None:
            return self._job.command
        return self.acked_commands.get(unit_id, 0)

    def queue_breaker(self, unit_id: int, closed: bool) -> None:
        self._writes.append(_Job(unit_id, REG_BREAKER, values=(1 if closed else 0,)))

    def start_cycle(self) -> bool:
        """Queue one read of every unit unless the previous cycle is still running"""
        if self._reads:
            return False
        self._reads.extend(_Job(unit, 0, count=self.read_count) for unit in self.units)
        self.cycles += 1
        return True

    @property
    def busy(self) -> bool:
        return self.pending is not None or bool(self._writes) or bool(self._reads)

    def _take_txn(self) -> int:
        txn = self._next_txn
        self._next_txn = txn % 0xFFFF + 1
        return txn

    def _build(self, job: _Job) -> ModbusFrame:
        txn = self._take_txn()
        if job.is_write:
            return write_request(txn, job.unit_id, job.address, job.values)
        return read_request(txn, job.unit_id, job.address, job.count)

    def next_request(self, now_ms: float) -> Optional[bytes]:
        """Bytes of the next request to send, or None while one is in flight or nothing is queued"""
        if self.pending is not None:
            return None
        queue = self._writes if self._writes else self._reads
        if not queue:
            return None
        job = queue.popleft()
        frame = self._build(job)
        self.pending = PendingRequest(frame, now_ms)
        self._job = job
        self.stats[job.unit_id].requests += 1
        return encode_frame(frame)

    def deadline_ms(self) -> Optional[float]:
        return None if self.pending is None else self.pending.sent_ms + self.timeout_ms

    def check_timeout(self, now_ms: float) -> Optional[bytes]:
        """
        Expire the request in flight if its deadline passed

        Returns:
            Bytes of the retry (same request, fresh transaction id), or None
        """
        pending = self.pending
        if pending is None or now_ms < pending.sent_ms + self.timeout_ms:
            return None

        unit = pending.unit_id
        stats = self.stats[unit]
        stats.timeouts += 1
        if pending.attempt < self.retries:
            stats.retries += 1
            stats.requests += 1
            frame = self._build(self._job)
            self.pending = PendingRequest(frame, now_ms, pending.attempt + 1)
            logger.debug(f"Unit {unit}: txn {pending.transaction_id} timed out, retrying as {frame.transaction_id}")
            return encode_frame(frame)

        self.pending = None
        what = 'command_lost' if self._job.is_write else 'request_timeout'
        telemetry.flag(what, f"unit {unit} after {pending.attempt + 1} attempts")
        return None

    def on_response(self, data: bytes, now_ms: float) -> Optional[UnitReading]:
        """
        Pair a response with the request in flight

        A response whose transaction id is not the one in flight is counted
        and discarded.

        Returns:
            The decoded reading for a read response, otherwise None
        """
        try:
            frame = decode_frame(data)
        except FrameError as e:
            telemetry.flag('malformed_response', str(e))
            return None

        pending = self.pending
        if pending is None or frame.transaction_id != pending.transaction_id or frame.unit_id != pending.unit_id:
            if frame.unit_id in self.stats:
                self.stats[frame.unit_id].late_responses += 1
            logger.debug(f"Discarded response txn {frame.transaction_id} (in flight: "
                          f"{pending.transaction_id if pending else None})")
            return None

        self.pending = None
        stats = self.stats[pending.unit_id]
        rtt = now_ms - pending.sent_ms
        try:
            if pending.frame.function == READ_HOLDING:
                words = parse_read_response(frame)
            else:
                parse_write_response(frame)
                self.commands_sent += 1
                if self._job.command is not None:
                    self.acked_commands[pending.unit_id] = self._job.command
                words = None
        except (ModbusExceptionError, FrameError) as e:
            stats.exceptions += 1
            logger.warning(f"Unit {pending.unit_id}: {e}")
            return None

        stats.responses += 1
        stats.rtt_total_ms += rtt
        stats.rtt_max_ms = max(stats.rtt_max_ms, rtt)
        if words is None:
            return None

        reading = UnitReading(pending.unit_id, decode_unit(words, pending.unit_id), pending.sent_ms, now_ms,
                              pending.transaction_id)
        self.latest[pending.unit_id] = reading
        return reading

    def connection_lost(self) -> None:
        """Forget the request in flight and the rest of the cycle; queued commands survive"""
        if self.pending is not None and self._job.is_write:
            self._writes.appendleft(self._job)
        self.pending = None
        self._reads.clear()

    # Views for the EMS

    def battery_readings(self) -> Dict[int, Optional[BatteryReading]]:
        readings = {}
        for unit in self.battery_units:
            latest = self.latest.get(unit)
            readings[unit] = None if latest is None else BatteryReading(unit, latest.values['soc'], latest.sent_ms)
        return readings

    def stale_units(self, now_ms: float, limit_ms: float) -> List[int]:
        return [u for u in self.units if u not in self.latest or now_ms - self.latest[u].sent_ms > limit_ms]


def wall_ms() -> float:
    return time.monotonic() * 1000.0


class AsyncModbusMaster:
    """Drives a MasterSession over a real TCP connection"""

    def __init__(self, host: str, port: int, session: MasterSession, period_ms: float,
                 on_reading: Optional[Callable[[UnitReading], None]] = None,
                 clock: Callable[[], float] = wall_ms):
        if period_ms < 1:
            raise ValueError(f"poll period must be at least 1 ms, got {period_ms}")
        self.host = host
        self.port = port
        self.session = session
        self.period_ms = period_ms
        self.on_reading = on_reading
        self.clock = clock
        self.reconnects = 0
        self.connected = asyncio.Event()

    async def run(self, stop: asyncio.Event) -> None:
        """Poll until stop is set, reconnecting with exponential backoff"""
        backoff = Config.RECONNECT_BACKOFF_MS
        while not stop.is_set():
            try:
                reader, writer = await asyncio.open_connection(self.host, self.port)
            except OSError as e:
                self.reconnects += 1
                telemetry.flag('reconnect', f"{self.host}:{self.port} unreachable ({e}), retry in {backoff:.0f} ms")
                await _sleep_or_stop(stop, backoff / 1000.0)
                backoff = min(2 * backoff, Config.RECONNECT_BACKOFF_MAX_MS)
                continue

            backoff = Config.RECONNECT_BACKOFF_MS
            logger.info(f"Master connected to {self.host}:{self.port}")
            self.connected.set()
            try:
                await self._poll(reader, writer, stop)
            except (ConnectionError, asyncio.IncompleteReadError, FrameError) as e:
                telemetry.flag('connection_lost', f"{self.host}:{self.port}: {e}")
            finally:
                self.connected.clear()
                self.session.connection_lost()
                writer.close()

    async def _poll(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter, stop: asyncio.Event) -> None:
        inbox: asyncio.Queue = asyncio.Queue()

        async def pump():
            try:
                while True:
                    inbox.put_nowait(await read_adu(reader))
            except Exception as e:
                inbox.put_nowait(e)

        pump_task = asyncio.create_task(pump())
        throttler = Throttler(rate_limit=1, period=self.period_ms / 1000.0)
        session = self.session
        try:
            while not stop.is_set():
                async with throttler:
                    session.start_cycle()
                while session.busy and not stop.is_set():
                    request = session.next_request(self.clock())
                    if request is not None:
                        writer.write(request)
                        await writer.drain()
                    wait_s = max(0.0, (session.deadline_ms() - self.clock()) / 1000.0)
                    try:
                        item = await asyncio.wait_for(inbox.get(), timeout=wait_s)
                    except asyncio.TimeoutError:
                        retry = session.check_timeout(self.clock())
                        if retry is not None:
                            writer.write(retry)
                            await writer.drain()
                        continue
                    if isinstance(item, Exception):
                        raise ConnectionError(f"connection closed: {item}")
                    reading = session.on_response(item, self.clock())
                    if reading is not None and self.on_reading is not None:
                        self.on_reading(reading)
        finally:
            pump_task.cancel()


async def _sleep_or_stop(stop: asyncio.Event, seconds: float) -> None:
    try:
        await asyncio.wait_for(stop.wait(), timeout=seconds)
    except asyncio.TimeoutError:
        pass


async def poll_master(host: str, port: int, session: MasterSession, period_ms: float,
                      stop: Optional[asyncio.Event] = None) -> AsyncIterator[UnitReading]:
    """
    Poll every unit of the session each period and yield the readings as they arrive

    Args:
        host: Slave (or proxy) host
        port: Slave (or proxy) port
        session: Master state; its latest readings expose per-unit staleness
        period_ms: Poll period in wall milliseconds
        stop: Optional event that ends polling
    """
    stop = stop or asyncio.Event()
    readings: asyncio.Queue = asyncio.Queue()
    master = AsyncModbusMaster(host, port, session, period_ms, on_reading=readings.put_nowait)
    task = asyncio.create_task(master.run(stop))
    try:
        while not stop.is_set():
            getter = asyncio.ensure_future(readings.get())
            stopper = asyncio.ensure_future(stop.wait())
            done, _ = await asyncio.wait({getter, stopper}, return_when=asyncio.FIRST_COMPLETED)
            stopper.cancel()
            if getter in done:
                yield getter.result()
            else:
                getter.cancel()
    finally:
        stop.set()
        await task
