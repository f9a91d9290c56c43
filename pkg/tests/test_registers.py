import pytest

from src.modbus.registers import (
    REG_COMMAND,
    REG_SEQ,
    REG_SOC,
    REG_V,
    REGISTER_COUNT,
    RegisterKind,
    decode_unit,
    reg_decode,
    reg_encode,
    register_image,
    unit_ids,
)
from src.plant.simulator import solve_equilibrium
from src.services.telemetry import telemetry


@pytest.mark.parametrize('value, kind, word', [
    (-1, RegisterKind.COMMAND, 0xFFFF),
    (1, RegisterKind.COMMAND, 0x0001),
    (400.0, RegisterKind.VOLTAGE, 4000),
    (0.9531, RegisterKind.SOC, 9531),
    (-800.0, RegisterKind.SIGNED_POWER, 0xFCE0),
    (70000, RegisterKind.COUNTER, 70000 & 0xFFFF),
])
def test_encode(value, kind, word):
    assert reg_encode(value, kind) == word


def test_decode_signed():
    assert reg_decode(0xFFFF, RegisterKind.COMMAND) == -1
    assert reg_decode(0xFCE0, RegisterKind.SIGNED_POWER) == -800
    assert reg_decode(9531, RegisterKind.SOC) == pytest.approx(0.9531)


def test_decode_rejects_wide_word():
    with pytest.raises(ValueError):
        reg_decode(0x10000, RegisterKind.POWER)


def test_saturates_instead_of_wrapping():
    assert reg_encode(40000.0, RegisterKind.SIGNED_POWER) == 0x7FFF
    assert reg_encode(-40000.0, RegisterKind.SIGNED_POWER) == 0x8000
    assert reg_encode(1.2, RegisterKind.SOC) == 10000
    assert telemetry.count('register_saturated') == 3


def test_unit_images(spec):
    snapshot = solve_equilibrium(spec, pv=[0.0, 0.0], load=[160.0, 240.0, 110.0, 210.0])
    pcc = register_image(snapshot, 1)
    assert pcc[REG_V] == 4000
    assert reg_decode(pcc[3], RegisterKind.SIGNED_POWER) == 720
    assert len(pcc) == REGISTER_COUNT

    bus = register_image(snapshot, 2, command=-1)
    assert bus[REG_COMMAND] == 0xFFFF
    assert bus[REG_SOC] == 0
    assert bus[7:10] == [0, 0, 0]


def test_decode_unit_names_pcc_fields():
    values = decode_unit([4000, 0, 0, 0xFFB0], 1)
    assert values['v_dc'] == 400.0
    assert values['p_pcc'] == -80
    values = decode_unit([9531, 500, 7], 3, start=REG_SOC)
    assert values == {'soc': pytest.approx(0.9531), 'e': 500, 'seq': 7}


def test_unit_ids_pcc_first(spec):
    assert unit_ids(spec) == [1, 2, 3, 4, 5]
    assert REG_SEQ == 6
