import asyncio

import numpy as np
import pytest

from src.modbus.framing import decode_frame, encode_frame, exception_response, read_response, write_response
from src.modbus.master import MasterSession, poll_master
from src.modbus.registers import decode_unit
from src.modbus.slave import ModbusSlave, serve_slave
from src.orchestrator.components import CommandSender
from src.services.plant_service import PlantService
from src.services.telemetry import telemetry


def session(**kwargs):
    return MasterSession([1, 2, 3], battery_units=[2, 3], **kwargs)


def answer(request: bytes, values):
    return encode_frame(read_response(decode_frame(request), values))


def test_cycle_reads_every_unit_in_order():
    s = session(read_count=6)
    assert s.start_cycle()
    sent = []
    now = 0.0
    while s.busy:
        request = s.next_request(now)
        frame = decode_frame(request)
        sent.append((frame.unit_id, frame.transaction_id))
        s.on_response(answer(request, [4000, 0, 100, 0, 5000, 500]), now + 5.0)
        now += 10.0
    assert sent == [(1, 1), (2, 2), (3, 3)]
    assert s.latest[2].values['soc'] == pytest.approx(0.5)
    assert s.latest[2].rtt_ms == pytest.approx(5.0)


def test_one_request_in_flight():
    s = session()
    s.start_cycle()
    assert s.next_request(0.0) is not None
    assert s.next_request(1.0) is None


def test_overlapping_cycle_skipped():
    s = session()
    assert s.start_cycle()
    assert not s.start_cycle()
    assert s.cycles == 1


def test_commands_jump_the_read_queue():
    s = session()
    s.start_cycle()
    first = s.next_request(0.0)
    s.queue_command(2, -1)
    s.on_response(answer(first, [4000]), 1.0)
    frame = decode_frame(s.next_request(2.0))
    assert frame.function == 0x10
    assert frame.payload[-2:] == b'\xff\xff'
    s.on_response(encode_frame(write_response(frame, 10, 1)), 3.0)
    assert s.commands_sent == 1
    assert decode_frame(s.next_request(4.0)).unit_id == 2


def test_timeout_retries_with_new_transaction():
    s = session(timeout_ms=250.0, retries=1)
    s.start_cycle()
    first = decode_frame(s.next_request(0.0))
    assert s.check_timeout(100.0) is None
    retry = decode_frame(s.check_timeout(250.0))
    assert retry.unit_id == first.unit_id
    assert retry.transaction_id != first.transaction_id
    assert s.stats[1].retries == 1

    assert s.check_timeout(500.0) is None
    assert s.pending is None
    assert s.stats[1].timeouts == 2
    assert telemetry.count('request_timeout') == 1


def test_late_response_discarded():
    s = session(timeout_ms=250.0, retries=1)
    s.start_cycle()
    first = s.next_request(0.0)
    s.check_timeout(300.0)
    assert s.on_response(answer(first, [4000]), 310.0) is None
    assert s.stats[1].late_responses == 1
    assert s.pending is not None


def test_reordered_responses_never_cross_transactions():
    rng = np.random.default_rng(5)
    s = session(timeout_ms=250.0, retries=1)
    words = {}
    in_transit = []
    accepted = 0

    def send(request, now):
        frame = decode_frame(request)
        # values tied to the transaction that asked for them
        words[frame.transaction_id] = [frame.transaction_id % 8000, 0, frame.unit_id, 0,
                                       int(rng.integers(0, 10000)), 0]
        in_transit.append((now + float(rng.exponential(150.0)), answer(request, words[frame.transaction_id])))
        in_transit.sort(key=lambda item: item[0])

    for now in np.arange(0.0, 20_000.0, 1.0):
        if now % 100.0 == 0.0:
            s.start_cycle()
        while in_transit and in_transit[0][0] <= now:
            _, response = in_transit.pop(0)
            expected = s.pending.transaction_id if s.pending else None
            reading = s.on_response(response, now)
            if reading is not None:
                accepted += 1
                assert reading.transaction_id == expected
                assert reading.values == decode_unit(words[expected], reading.unit_id)
        retry = s.check_timeout(now)
        if retry is not None:
            send(retry, now)
        request = s.next_request(now)
        if request is not None:
            send(request, now)

    assert accepted > 100
    assert sum(stats.late_responses for stats in s.stats.values()) > 0


def test_exception_response_counted():
    s = session()
    s.start_cycle()
    request = decode_frame(s.next_request(0.0))
    s.on_response(encode_frame(exception_response(request, 2)), 1.0)
    assert s.stats[1].exceptions == 1
    assert s.pending is None


def test_battery_readings_carry_send_time():
    s = session()
    assert s.battery_readings() == {2: None, 3: None}
    s.start_cycle()
    for now in (0.0, 10.0):
        request = s.next_request(now)
        s.on_response(answer(request, [4000, 0, 0, 0, 9000, 900]), now + 3.0)
    readings = s.battery_readings()
    assert readings[2].soc == pytest.approx(0.9)
    assert readings[2].sent_ms == 10.0
    assert readings[3] is None
    assert s.stale_units(20.0, 100.0) == [3]


def test_connection_lost_keeps_command():
    s = session()
    s.queue_command(3, 1)
    s.start_cycle()
    assert decode_frame(s.next_request(0.0)).function == 0x10
    s.connection_lost()
    assert not s._reads
    assert decode_frame(s.next_request(1.0)).function == 0x10


def test_lost_command_is_sent_again():
    s = session(timeout_ms=250.0, retries=1)
    sender = CommandSender(s)
    assert sender.send({2: 1}) == 1
    s.next_request(0.0)
    assert s.check_timeout(250.0) is not None
    assert s.check_timeout(500.0) is None
    assert telemetry.count('command_lost') == 1
    assert not s.busy

    assert sender.send({2: 1}) == 1
    frame = decode_frame(s.next_request(600.0))
    assert (frame.unit_id, frame.function) == (2, 0x10)


def test_command_counts_once_acknowledged():
    s = session()
    sender = CommandSender(s)
    assert sender.send({2: 1, 3: 0}) == 1
    # queued but not yet answered: no duplicate
    assert sender.send({2: 1}) == 0
    frame = decode_frame(s.next_request(0.0))
    assert s.expected_command(2) == 1
    assert s.acked_commands == {}
    s.on_response(encode_frame(write_response(frame, 10, 1)), 5.0)
    assert s.acked_commands == {2: 1}
    assert sender.send({2: 1}) == 0


def test_newer_plan_overrides_write_in_flight():
    s = session()
    sender = CommandSender(s)
    sender.send({2: 1})
    s.next_request(0.0)
    assert sender.send({2: 0}) == 1
    assert s.expected_command(2) == 0


def test_rejected_command_not_acknowledged():
    s = session()
    CommandSender(s).send({3: -1})
    frame = decode_frame(s.next_request(0.0))
    s.on_response(encode_frame(exception_response(frame, 2)), 1.0)
    assert s.expected_command(3) == 0


def test_transaction_ids_wrap():
    s = session()
    s._next_txn = 0xFFFF
    s.start_cycle()
    assert decode_frame(s.next_request(0.0)).transaction_id == 0xFFFF
    s.pending = None
    assert decode_frame(s.next_request(0.0)).transaction_id == 1


async def test_poll_master_over_tcp(scenario):
    plant = PlantService(scenario)
    server = await serve_slave(plant.view, '127.0.0.1', 0)
    port = server.sockets[0].getsockname()[1]
    s = MasterSession([1, 2], battery_units=[2], timeout_ms=500.0)
    stop = asyncio.Event()
    units = []
    try:
        async for reading in poll_master('127.0.0.1', port, s, period_ms=20.0, stop=stop):
            units.append(reading.unit_id)
            if len(units) == 4:
                stop.set()
    finally:
        server.close()
        await server.wait_closed()
    assert units == [1, 2, 1, 2]
    assert s.latest[1].values['v_dc'] == pytest.approx(400.0)
    assert s.battery_readings()[2].soc == pytest.approx(0.5)


def test_slave_and_session_agree(scenario):
    plant = PlantService(scenario)
    slave = ModbusSlave(plant.view)
    s = MasterSession([1, 2, 3, 4, 5], battery_units=[2, 3, 4, 5])
    s.start_cycle()
    while s.busy:
        response, _ = slave.handle_adu(s.next_request(0.0))
        s.on_response(response, 1.0)
    assert {u: r.values['soc'] for u, r in s.latest.items() if u != 1} == {2: 0.5, 3: 0.5, 4: 0.5, 5: 0.5}
