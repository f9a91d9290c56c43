"""
Modbus-TCP application data units: MBAP header plus PDU
"""
import asyncio
import logging
import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence

logger = logging.getLogger(__name__)

MBAP = struct.Struct('>HHHB')
MBAP_SIZE = MBAP.size          # 7 bytes including the unit id
MAX_PDU = 253

READ_HOLDING = 0x03
WRITE_MULTIPLE = 0x10
SUPPORTED_FUNCTIONS = (READ_HOLDING, WRITE_MULTIPLE)
EXCEPTION_BIT = 0x80

ILLEGAL_FUNCTION = 0x01
ILLEGAL_ADDRESS = 0x02
ILLEGAL_VALUE = 0x03

EXCEPTION_MESSAGES = {
    1: 'Illegal Function',
    2: 'Illegal Data Address',
    3: 'Illegal Data Value',
    4: 'Slave Device Failure',
    5: 'Acknowledge',
    6: 'Slave Device Busy',
    10: 'Gateway Path Unavailable',
    11: 'Gateway Target Device Failed To Respond',
}


class FrameError(ValueError):
    """Bytes that do not form a valid Modbus-TCP ADU; data holds what was read of it"""

    def __init__(self, message: str, data: bytes = b''):
        super().__init__(message)
        self.data = data


class ModbusExceptionError(Exception):
    """Exception response from a slave"""

    def __init__(self, function: int, code: int):
        super().__init__(f"function 0x{function:02x}: exception 0x{code:02x} "
                         f"({EXCEPTION_MESSAGES.get(code, 'Unknown')})")
        self.function = function
        self.code = code


@dataclass(frozen=True)
class ModbusFrame:
    transaction_id: int
    unit_id: int
    function: int
    payload: bytes = b''
    protocol_id: int = 0

    @property
    def length(self) -> int:
        """MBAP length field: unit id + function + payload"""
        return 2 + len(self.payload)

    @property
    def is_exception(self) -> bool:
        return bool(self.function & EXCEPTION_BIT)


def encode_frame(frame: ModbusFrame) -> bytes:
    """
    Serialise a frame to its on-wire bytes

    Raises:
        FrameError: if a field does not fit its wire width
    """
    if not 0 <= frame.transaction_id <= 0xFFFF:
        raise FrameError(f"transaction id {frame.transaction_id} does not fit 16 bits")
    if frame.protocol_id != 0:
        raise FrameError(f"protocol id must be 0, got {frame.protocol_id}")
    if not 0 <= frame.unit_id <= 0xFF or not 0 <= frame.function <= 0xFF:
        raise FrameError(f"unit id {frame.unit_id} and function {frame.function} must fit 8 bits")
    if len(frame.payload) + 1 > MAX_PDU:
        raise FrameError(f"PDU of {len(frame.payload) + 1} bytes exceeds {MAX_PDU}")
    return MBAP.pack(frame.transaction_id, frame.protocol_id, frame.length, frame.unit_id) + \
        bytes([frame.function]) + frame.payload


def adu_length(buffer: bytes) -> Optional[int]:
    """Total ADU size announced by the MBAP header, or None if the header is incomplete"""
    if len(buffer) < 6:
        return None
    _, _, length = struct.unpack_from('>HHH', buffer)
    return 6 + length


def decode_frame(data: bytes) -> ModbusFrame:
    """
    Parse one complete ADU

    Raises:
        FrameError: short buffer, protocol id other than 0, or length mismatch
    """
    if len(data) < MBAP_SIZE + 1:
        raise FrameError(f"short buffer: {len(data)} bytes, need at least {MBAP_SIZE + 1}")
    transaction_id, protocol_id, length, unit_id = MBAP.unpack_from(data)
    if protocol_id != 0:
        raise FrameError(f"protocol id must be 0, got {protocol_id}")
    if length != len(data) - 6:
        raise FrameError(f"MBAP length {length} does not match {len(data) - 6} bytes after the header")
    return ModbusFrame(transaction_id=transaction_id, unit_id=unit_id, function=data[MBAP_SIZE],
                       payload=bytes(data[MBAP_SIZE + 1:]))


async def read_adu(reader: asyncio.StreamReader) -> bytes:
    """Read exactly one ADU from a stream (raises IncompleteReadError at EOF)"""
    header = await reader.readexactly(6)
    length = adu_length(header)
    if length - 6 < 2 or length - 6 > MAX_PDU + 1:
        # unit id and function code, when announced, let the slave answer with an exception
        head = await reader.readexactly(2) if length - 6 >= 2 else b''
        raise FrameError(f"MBAP length {length - 6} out of range", header + head)
    return header + await reader.readexactly(length - 6)


# PDU builders

def read_request(transaction_id: int, unit_id: int, address: int, count: int) -> ModbusFrame:
    return ModbusFrame(transaction_id, unit_id, READ_HOLDING, struct.pack('>HH', address, count))


def write_request(transaction_id: int, unit_id: int, address: int, values: Sequence[int]) -> ModbusFrame:
    payload = struct.pack('>HHB', address, len(values), 2 * len(values)) + \
        struct.pack(f'>{len(values)}H', *values)
    return ModbusFrame(transaction_id, unit_id, WRITE_MULTIPLE, payload)


def read_response(request: ModbusFrame, values: Sequence[int]) -> ModbusFrame:
    payload = bytes([2 * len(values)]) + struct.pack(f'>{len(values)}H', *values)
    return ModbusFrame(request.transaction_id, request.unit_id, READ_HOLDING, payload)


def write_response(request: ModbusFrame, address: int, count: int) -> ModbusFrame:
    return ModbusFrame(request.transaction_id, request.unit_id, WRITE_MULTIPLE, struct.pack('>HH', address, count))


def exception_response(request: ModbusFrame, code: int) -> ModbusFrame:
    return ModbusFrame(request.transaction_id, request.unit_id, (request.function | EXCEPTION_BIT) & 0xFF,
                       bytes([code]))


def parse_read_response(frame: ModbusFrame) -> List[int]:
    """
    Register values of a 0x03 response

    Raises:
        ModbusExceptionError: for an exception response
        FrameError: if the byte count does not match
    """
    if frame.is_exception:
        raise ModbusExceptionError(frame.function & 0x7F, frame.payload[0] if frame.payload else 0)
    if frame.function != READ_HOLDING or not frame.payload:
        raise FrameError(f"not a read response: function 0x{frame.function:02x}")
    byte_count = frame.payload[0]
    if byte_count != len(frame.payload) - 1 or byte_count % 2:
        raise FrameError(f"byte count {byte_count} does not match payload of {len(frame.payload) - 1}")
    return list(struct.unpack(f'>{byte_count // 2}H', frame.payload[1:]))


def parse_write_response(frame: ModbusFrame) -> tuple:
    if frame.is_exception:
        raise ModbusExceptionError(frame.function & 0x7F, frame.payload[0] if frame.payload else 0)
    if frame.function != WRITE_MULTIPLE or len(frame.payload) != 4:
        raise FrameError(f"not a write response: function 0x{frame.function:02x}")
    return struct.unpack('>HH', frame.payload)
