"""
Modbus slave embedded in the plant process
"""
import asyncio
import logging
import struct
import threading
from collections import deque
from dataclasses import dataclass
from typing import Deque, Dict, List, Optional, Tuple

from src.models.microgrid import PCC_UNIT_ID, MicrogridSpec
from src.services.telemetry import telemetry
from .framing import (
    ILLEGAL_ADDRESS, ILLEGAL_FUNCTION, ILLEGAL_VALUE, MBAP_SIZE, READ_HOLDING, WRITE_MULTIPLE,
    FrameError, ModbusFrame, decode_frame, encode_frame, exception_response, read_adu, read_response,
    write_response,
)
from .registers import REG_BREAKER, REG_COMMAND, REGISTER_COUNT, WRITABLE, images_for, unit_ids

logger = logging.getLogger(__name__)

MAX_READ_COUNT = 125
MAX_WRITE_COUNT = 123
COMMAND_WORDS = {0x0000: 0, 0x0001: 1, 0xFFFF: -1}


@dataclass(frozen=True)
class SlaveWrite:
    """One accepted register write, waiting for the plant to consume it"""

    unit_id: int
    register: int
    value: int


class RegisterView:
    """
    Register images of every unit, swapped as a whole when the plant publishes

    Reads take one reference to the current images, so a multi-register read
    always sees a single snapshot. Writes go to a multi-producer queue drained
    by the plant loop.
    """

    def __init__(self, spec: MicrogridSpec):
        self.spec = spec
        self.units = unit_ids(spec)
        self.battery_units = {bus.bus_id for bus in spec.battery_buses}
        self._images: Dict[int, List[int]] = {unit: [0] * REGISTER_COUNT for unit in self.units}
        self._commands: Dict[int, int] = {}
        self._queue: Deque[SlaveWrite] = deque()
        self._lock = threading.Lock()
        self.published = 0

    def publish(self, snapshot) -> None:
        """Replace every unit's image with one built from a MeasurementSnapshot"""
        with self._lock:
            commands = dict(self._commands)
        images = images_for(snapshot, self.spec, commands)
        with self._lock:
            self._images = images
            self.published += 1

    def read(self, unit_id: int, address: int, count: int) -> List[int]:
        with self._lock:
            images = self._images
        return list(images[unit_id][address:address + count])

    def submit(self, writes: List[SlaveWrite]) -> None:
        with self._lock:
            for write in writes:
                if write.register == REG_COMMAND:
                    self._commands[write.unit_id] = COMMAND_WORDS[write.value]
                self._queue.append(write)

    def drain(self) -> List[SlaveWrite]:
        """Everything written since the last drain, in arrival order"""
        with self._lock:
            writes = list(self._queue)
            self._queue.clear()
        return writes

    def pending(self) -> int:
        with self._lock:
            return len(self._queue)


class ModbusSlave:
    """Answers 0x03 reads from the register view and queues 0x10 writes"""

    def __init__(self, view: RegisterView):
        self.view = view
        self.requests = 0
        self.exceptions = 0

    def handle_adu(self, data: bytes) -> Tuple[Optional[bytes], bool]:
        """
        Process one request ADU

        Args:
            data: Complete request bytes

        Returns:
            (response bytes or None, whether to close the connection)
        """
        self.requests += 1
        try:
            request = decode_frame(data)
        except FrameError as e:
            logger.warning(f"Malformed request ({len(data)} bytes): {e}")
            if len(data) < MBAP_SIZE + 1:
                return None, True
            transaction_id, _, _, unit_id = struct.unpack_from('>HHHB', data)
            stub = ModbusFrame(transaction_id, unit_id, data[MBAP_SIZE])
            return self._exception(stub, ILLEGAL_VALUE), True

        if request.function == READ_HOLDING:
            response = self._read(request)
        elif request.function == WRITE_MULTIPLE:
            response = self._write(request)
        else:
            logger.debug(f"Unsupported function 0x{request.function:02x} from unit {request.unit_id}")
            return self._exception(request, ILLEGAL_FUNCTION), False

        if isinstance(response, int):
            return self._exception(request, response), False
        return encode_frame(response), False

    def _exception(self, request: ModbusFrame, code: int) -> bytes:
        self.exceptions += 1
        return encode_frame(exception_response(request, code))

    def _read(self, request: ModbusFrame):
        if len(request.payload) != 4:
            return ILLEGAL_VALUE
        address, count = struct.unpack('>HH', request.payload)
        if not 1 <= count <= MAX_READ_COUNT:
            return ILLEGAL_VALUE
        if request.unit_id not in self.view.units or address + count > REGISTER_COUNT:
            return ILLEGAL_ADDRESS
        return read_response(request, self.view.read(request.unit_id, address, count))

    def _write(self, request: ModbusFrame):
        payload = request.payload
        if len(payload) < 5:
            return ILLEGAL_VALUE
        address, count, byte_count = struct.unpack_from('>HHB', payload)
        if not 1 <= count <= MAX_WRITE_COUNT or byte_count != 2 * count or len(payload) != 5 + byte_count:
            return ILLEGAL_VALUE

        unit = request.unit_id
        registers = range(address, address + count)
        if unit == PCC_UNIT_ID or unit not in self.view.units or any(r not in WRITABLE for r in registers):
            return ILLEGAL_ADDRESS
        if REG_COMMAND in registers and unit not in self.view.battery_units:
            return ILLEGAL_ADDRESS

        values = struct.unpack_from(f'>{count}H', payload, 5)
        writes = []
        for register, value in zip(registers, values):
            if register == REG_COMMAND and value not in COMMAND_WORDS:
                return ILLEGAL_VALUE
            if register == REG_BREAKER and value not in (0, 1):
                return ILLEGAL_VALUE
            writes.append(SlaveWrite(unit, register, value))

        self.view.submit(writes)
        logger.debug(f"Unit {unit}: queued writes {[(w.register, w.value) for w in writes]}")
        return write_response(request, address, count)


async def _serve_connection(slave: ModbusSlave, reader: asyncio.StreamReader,
                            writer: asyncio.StreamWriter) -> None:
    peer = writer.get_extra_info('peername')
    logger.info(f"Master connected from {peer}")
    try:
        while True:
            try:
                data = await read_adu(reader)
            except FrameError as e:
                telemetry.flag('malformed_frame', f"{peer}: {e}")
                if e.data:
                    response, _ = slave.handle_adu(e.data)
                    if response is not None:
                        writer.write(response)
                        await writer.drain()
                break
            response, close = slave.handle_adu(data)
            if response is not None:
                writer.write(response)
                await writer.drain()
            if close:
                break
    except (asyncio.IncompleteReadError, ConnectionError):
        pass
    except Exception as e:
        logger.error(f"Slave connection {peer} failed: {e}")
    finally:
        writer.close()
        logger.info(f"Master {peer} disconnected")


async def serve_slave(view: RegisterView, host: str, port: int) -> asyncio.AbstractServer:
    """
    Start the Modbus-TCP server; every connection is served independently

    Returns:
        The running asyncio server (close() and wait_closed() to stop it)
    """
    slave = ModbusSlave(view)
    server = await asyncio.start_server(lambda r, w: _serve_connection(slave, r, w), host, port)
    bound = server.sockets[0].getsockname() if server.sockets else (host, port)
    logger.info(f"Modbus slave listening on {bound[0]}:{bound[1]} for units {view.units}")
    return server
