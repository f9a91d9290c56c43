"""
Delaying TCP proxy between the Modbus master and the plant's slave
"""
import asyncio
import itertools
import logging
import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from src.modbus.framing import MAX_PDU
from src.services.telemetry import telemetry
from .stats import MASTER_TO_SLAVE, SLAVE_TO_MASTER, DelayRecorder, stats_report
from .traffic import DelaySampler, TrafficClassModel

logger = logging.getLogger(__name__)

READ_CHUNK = 4096


def direction_rng(seed: int, connection: int, direction: str) -> np.random.Generator:
    """Independent, reproducible stream per connection and direction"""
    return np.random.default_rng([seed, connection, 0 if direction == MASTER_TO_SLAVE else 1])


class DelayLine:
    """
    One direction of a link: assigns each message its release time

    Release times never go backwards, so messages leave in arrival order.
    """

    def __init__(self, sampler: DelaySampler, direction: str, recorder: Optional[DelayRecorder] = None,
                 wire_bytes: int = 0):
        self.sampler = sampler
        self.direction = direction
        self.recorder = recorder
        self.wire_bytes = wire_bytes
        self.last_release_ms = float('-inf')

    def charge(self, n_bytes: int) -> int:
        return self.wire_bytes or n_bytes

    def schedule(self, n_bytes: int, arrival_ms: float) -> float:
        delay = self.sampler.sample(self.charge(n_bytes), arrival_ms)
        release = max(arrival_ms + delay, self.last_release_ms)
        self.last_release_ms = release
        return release

    def record(self, n_bytes: int, arrival_ms: float, release_ms: float) -> None:
        if self.recorder is not None:
            self.recorder.record(self.direction, n_bytes, arrival_ms * 1000.0, release_ms * 1000.0)


class AduSplitter:
    """
    Cuts a byte stream into Modbus ADUs using the MBAP length

    Once the stream stops parsing as MBAP it stays in degraded mode and
    every chunk is passed on as one message.
    """

    def __init__(self, name: str):
        self.name = name
        self.buffer = b''
        self.degraded = False

    def feed(self, chunk: bytes) -> List[bytes]:
        if self.degraded:
            return [chunk]
        self.buffer += chunk
        messages = []
        while len(self.buffer) >= 6:
            _, protocol_id, length = struct.unpack_from('>HHH', self.buffer)
            if protocol_id != 0 or not 2 <= length <= MAX_PDU + 1:
                self.degraded = True
                telemetry.flag('proxy_degraded', f"{self.name}: stream is not Modbus-TCP, forwarding raw chunks")
                messages.append(self.buffer)
                self.buffer = b''
                break
            if len(self.buffer) < 6 + length:
                break
            messages.append(self.buffer[:6 + length])
            self.buffer = self.buffer[6 + length:]
        return messages


@dataclass
class _Pipe:
    line: DelayLine
    splitter: AduSplitter
    queue: asyncio.Queue


class DelayProxy:
    """Running proxy: accepts masters and forwards each ADU after its sampled delay"""

    def __init__(self, target: Tuple[str, int], model: TrafficClassModel, recorder: Optional[DelayRecorder] = None,
                 wire_bytes: int = 0):
        self.target = target
        self.model = model
        self.recorder = recorder if recorder is not None else DelayRecorder()
        self.wire_bytes = wire_bytes
        self.server: Optional[asyncio.AbstractServer] = None
        self._connections = itertools.count()
        self._tasks: set = set()
        self._t0 = asyncio.get_running_loop().time()

    def now_ms(self) -> float:
        return (asyncio.get_running_loop().time() - self._t0) * 1000.0

    async def _handle(self, client_reader: asyncio.StreamReader, client_writer: asyncio.StreamWriter) -> None:
        peer = client_writer.get_extra_info('peername')
        index = next(self._connections)
        try:
            target_reader, target_writer = await asyncio.open_connection(*self.target)
        except OSError as e:
            logger.error(f"Proxy target {self.target[0]}:{self.target[1]} unreachable for {peer}: {e}")
            client_writer.close()
            return

        logger.info(f"Proxy connection {index}: {peer} -> {self.target[0]}:{self.target[1]}")
        pipes = []
        for direction in (MASTER_TO_SLAVE, SLAVE_TO_MASTER):
            sampler = DelaySampler(self.model, direction_rng(self.model.seed, index, direction))
            line = DelayLine(sampler, direction, self.recorder, self.wire_bytes)
            pipes.append(_Pipe(line, AduSplitter(f"connection {index} {direction}"), asyncio.Queue()))

        tasks = [
            asyncio.create_task(self._receive(client_reader, pipes[0])),
            asyncio.create_task(self._release(pipes[0], target_writer)),
            asyncio.create_task(self._receive(target_reader, pipes[1])),
            asyncio.create_task(self._release(pipes[1], client_writer)),
        ]
        self._tasks.update(tasks)
        try:
            await asyncio.gather(*tasks, return_exceptions=True)
        finally:
            self._tasks.difference_update(tasks)
            for writer in (client_writer, target_writer):
                writer.close()
            logger.info(f"Proxy connection {index} closed")

    async def _receive(self, reader: asyncio.StreamReader, pipe: _Pipe) -> None:
        try:
            while True:
                chunk = await reader.read(READ_CHUNK)
                if not chunk:
                    break
                arrival = self.now_ms()
                for message in pipe.splitter.feed(chunk):
                    release = pipe.line.schedule(len(message), arrival)
                    pipe.queue.put_nowait((message, arrival, release))
        except ConnectionError:
            pass
        finally:
            if pipe.splitter.buffer:
                telemetry.flag('partial_frame_dropped',
                               f"{pipe.splitter.name}: {len(pipe.splitter.buffer)} bytes at disconnect")
            pipe.queue.put_nowait(None)

    async def _release(self, pipe: _Pipe, writer: asyncio.StreamWriter) -> None:
        while True:
            item = await pipe.queue.get()
            if item is None:
                break
            message, arrival, release = item
            wait = (release - self.now_ms()) / 1000.0
            if wait > 0:
                await asyncio.sleep(wait)
            try:
                writer.write(message)
                await writer.drain()
            except ConnectionError:
                break
            pipe.line.record(len(message), arrival, self.now_ms())
        writer.close()

    def stats(self):
        return stats_report(self.recorder)

    async def close(self) -> None:
        if self.server is not None:
            self.server.close()
        for task in list(self._tasks):
            task.cancel()
        if self.server is not None:
            await self.server.wait_closed()


async def forward_with_delay(listen: Tuple[str, int], target: Tuple[str, int], model: TrafficClassModel,
                             recorder: Optional[DelayRecorder] = None, wire_bytes: int = 0) -> DelayProxy:
    """
    Start a proxy that delays every Modbus ADU by the class model

    Args:
        listen: (host, port) to accept masters on; port 0 picks a free port
        target: (host, port) of the slave
        model: Traffic class, congestion and seed
        recorder: Where arrival and release times go (a new one if None)
        wire_bytes: Size every ADU is charged as; 0 charges the actual size

    Returns:
        The running proxy; its server attribute exposes the bound sockets
    """
    model.check()
    proxy = DelayProxy(target, model, recorder, wire_bytes)
    proxy.server = await asyncio.start_server(proxy._handle, *listen)
    bound = proxy.server.sockets[0].getsockname()
    logger.info(f"Proxy {bound[0]}:{bound[1]} -> {target[0]}:{target[1]} "
                f"({model.traffic_class.value} at {model.congestion:.0%} congestion, seed {model.seed})")
    return proxy
