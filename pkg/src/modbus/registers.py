"""
Register map: fixed-point encodings and per-unit register images

Every unit exposes registers 0..11:

    0 v_bus (0.1 V)   1 p_pv (W)   2 p_load (W)   3 p_bess (W, signed)
    4 soc (0.01 %)    5 e (Wh)     6 snapshot sequence (low 16 bits)
    7..9 reserved     10 command d (signed, writable)   11 breaker (writable)

Unit 1 is the PCC: register 0 holds v_dc and register 3 p_pcc (signed).
"""
import logging
from enum import Enum
from typing import Dict, List, Mapping, Optional

from src.models.microgrid import PCC_UNIT_ID
from src.services.telemetry import telemetry

logger = logging.getLogger(__name__)

REG_V = 0
REG_P_PV = 1
REG_P_LOAD = 2
REG_P_BESS = 3
REG_SOC = 4
REG_E = 5
REG_SEQ = 6
REG_COMMAND = 10
REG_BREAKER = 11
REGISTER_COUNT = 12
WRITABLE = (REG_COMMAND, REG_BREAKER)


class RegisterKind(Enum):
    """(scale, signed, low, high) of each physical quantity"""

    VOLTAGE = (10.0, False, 0, 0xFFFF)
    POWER = (1.0, False, 0, 0xFFFF)
    SIGNED_POWER = (1.0, True, -0x8000, 0x7FFF)
    SOC = (10000.0, False, 0, 10000)
    ENERGY = (1.0, False, 0, 0xFFFF)
    COMMAND = (1.0, True, -1, 1)
    FLAG = (1.0, False, 0, 1)
    COUNTER = (1.0, False, 0, 0xFFFF)

    @property
    def scale(self) -> float:
        return self.value[0]

    @property
    def signed(self) -> bool:
        return self.value[1]


UNIT_KINDS = {
    REG_V: RegisterKind.VOLTAGE,
    REG_P_PV: RegisterKind.POWER,
    REG_P_LOAD: RegisterKind.POWER,
    REG_P_BESS: RegisterKind.SIGNED_POWER,
    REG_SOC: RegisterKind.SOC,
    REG_E: RegisterKind.ENERGY,
    REG_SEQ: RegisterKind.COUNTER,
    REG_COMMAND: RegisterKind.COMMAND,
    REG_BREAKER: RegisterKind.FLAG,
}


def reg_encode(value: float, kind: RegisterKind, where: str = "") -> int:
    """
    Physical value to a 16-bit register word

    Out-of-range values saturate at the kind's limit and raise a telemetry
    flag; they never wrap.
    """
    _, signed, low, high = kind.value
    if kind is RegisterKind.COUNTER:
        return int(value) & 0xFFFF

    scaled = round(value * kind.scale)
    if scaled < low or scaled > high:
        telemetry.flag('register_saturated', f"{where or kind.name}: {value} outside range")
        scaled = min(max(scaled, low), high)
    return scaled & 0xFFFF if signed else scaled


def reg_decode(word: int, kind: RegisterKind) -> float:
    """Register word back to the physical value"""
    if not 0 <= word <= 0xFFFF:
        raise ValueError(f"register word {word} does not fit 16 bits")
    if kind.signed and word & 0x8000:
        word -= 0x10000
    if kind.scale == 1.0:
        return word
    return word / kind.scale


def register_image(snapshot, unit_id: int, command: int = 0, breaker_closed: bool = True) -> List[int]:
    """All registers of one unit for a snapshot (a MeasurementSnapshot)"""
    image = [0] * REGISTER_COUNT
    image[REG_SEQ] = reg_encode(snapshot.seq, RegisterKind.COUNTER)
    where = f"unit {unit_id}"

    if unit_id == PCC_UNIT_ID:
        image[REG_V] = reg_encode(snapshot.v_dc, RegisterKind.VOLTAGE, f"{where} v_dc")
        image[REG_P_BESS] = reg_encode(snapshot.p_pcc, RegisterKind.SIGNED_POWER, f"{where} p_pcc")
        return image

    image[REG_V] = reg_encode(snapshot.v_bus.get(unit_id, 0.0), RegisterKind.VOLTAGE, f"{where} v_bus")
    image[REG_P_PV] = reg_encode(snapshot.p_pv.get(unit_id, 0.0), RegisterKind.POWER, f"{where} p_pv")
    image[REG_P_LOAD] = reg_encode(snapshot.p_load.get(unit_id, 0.0), RegisterKind.POWER, f"{where} p_load")
    image[REG_P_BESS] = reg_encode(snapshot.p_bess.get(unit_id, 0.0), RegisterKind.SIGNED_POWER, f"{where} p_bess")
    image[REG_SOC] = reg_encode(snapshot.soc.get(unit_id, 0.0), RegisterKind.SOC, f"{where} soc")
    image[REG_E] = reg_encode(snapshot.e.get(unit_id, 0.0), RegisterKind.ENERGY, f"{where} e")
    image[REG_COMMAND] = reg_encode(command, RegisterKind.COMMAND, f"{where} command")
    image[REG_BREAKER] = reg_encode(1 if breaker_closed else 0, RegisterKind.FLAG, f"{where} breaker")
    return image


def decode_unit(words: List[int], unit_id: int, start: int = 0) -> Dict[str, float]:
    """Physical values of a block of registers read from one unit"""
    names = {REG_V: 'v_dc' if unit_id == PCC_UNIT_ID else 'v_bus', REG_P_PV: 'p_pv', REG_P_LOAD: 'p_load',
             REG_P_BESS: 'p_pcc' if unit_id == PCC_UNIT_ID else 'p_bess', REG_SOC: 'soc', REG_E: 'e',
             REG_SEQ: 'seq', REG_COMMAND: 'command', REG_BREAKER: 'breaker'}
    values = {}
    for offset, word in enumerate(words):
        address = start + offset
        kind = UNIT_KINDS.get(address)
        if kind is not None:
            values[names[address]] = reg_decode(word, kind)
    return values


def unit_ids(spec) -> List[int]:
    """PCC first, then the prosumer buses in spec order"""
    return [PCC_UNIT_ID] + list(spec.bus_ids)


def images_for(snapshot, spec, commands: Optional[Mapping[int, int]] = None) -> Dict[int, List[int]]:
    commands = commands or {}
    return {
        unit: register_image(snapshot, unit, commands.get(unit, 0), snapshot.breakers.get(unit, True))
        for unit in unit_ids(spec)
    }
