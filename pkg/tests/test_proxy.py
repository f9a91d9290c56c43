import asyncio

import numpy as np
import pytest

from src.modbus.framing import decode_frame, encode_frame, parse_read_response, read_request
from src.modbus.slave import serve_slave
from src.netem.proxy import AduSplitter, DelayLine, direction_rng, forward_with_delay
from src.netem.stats import MASTER_TO_SLAVE, SLAVE_TO_MASTER, DelayRecorder
from src.netem.traffic import DelaySampler, TrafficClassModel
from src.services.plant_service import PlantService
from src.services.telemetry import telemetry


class FixedSampler:
    def __init__(self, delays):
        self.delays = list(delays)

    def sample(self, n_bytes, at_ms=None):
        return self.delays.pop(0)


def test_delay_line_keeps_order():
    line = DelayLine(FixedSampler([10.0, 1.0, 1.0]), MASTER_TO_SLAVE)
    releases = [line.schedule(12, t) for t in (0.0, 2.0, 20.0)]
    assert releases == [10.0, 10.0, 21.0]


def test_delay_line_charges_wire_bytes():
    m = TrafficClassModel.for_class('DS0')
    line = DelayLine(DelaySampler(m), MASTER_TO_SLAVE, wire_bytes=178)
    assert line.schedule(12, 0.0) == pytest.approx(24.25)


def test_direction_streams_differ():
    a = direction_rng(1, 0, MASTER_TO_SLAVE).random()
    b = direction_rng(1, 0, SLAVE_TO_MASTER).random()
    c = direction_rng(1, 1, MASTER_TO_SLAVE).random()
    assert len({a, b, c}) == 3
    assert direction_rng(1, 0, MASTER_TO_SLAVE).random() == a


def test_splitter_reassembles_adus():
    first = encode_frame(read_request(1, 2, 0, 6))
    second = encode_frame(read_request(2, 3, 0, 6))
    splitter = AduSplitter('test')
    data = first + second
    assert splitter.feed(data[:5]) == []
    assert splitter.feed(data[5:15]) == [first]
    assert splitter.feed(data[15:]) == [second]
    assert splitter.buffer == b''


def test_splitter_degrades_on_foreign_stream():
    splitter = AduSplitter('test')
    assert splitter.feed(b'GET / HTTP/1.1\r\n') == [b'GET / HTTP/1.1\r\n']
    assert splitter.degraded
    assert splitter.feed(b'more') == [b'more']
    assert telemetry.count('proxy_degraded') == 1


async def test_proxy_delays_modbus_traffic(scenario):
    plant = PlantService(scenario)
    slave = await serve_slave(plant.view, '127.0.0.1', 0)
    slave_port = slave.sockets[0].getsockname()[1]
    recorder = DelayRecorder()
    model = TrafficClassModel.for_class('DS0', congestion=0.0, seed=1)
    proxy = await forward_with_delay(('127.0.0.1', 0), ('127.0.0.1', slave_port), model, recorder)
    proxy_port = proxy.server.sockets[0].getsockname()[1]
    try:
        reader, writer = await asyncio.open_connection('127.0.0.1', proxy_port)
        for txn in range(1, 4):
            writer.write(encode_frame(read_request(txn, 1, 0, 1)))
            await writer.drain()
            header = await asyncio.wait_for(reader.readexactly(6), timeout=5.0)
            body = await reader.readexactly(int.from_bytes(header[4:6], 'big'))
            frame = decode_frame(header + body)
            assert frame.transaction_id == txn
            assert parse_read_response(frame) == [4000]
        writer.close()
        await asyncio.sleep(0.05)
    finally:
        await proxy.close()
        slave.close()
        await slave.wait_closed()

    frame = recorder.to_frame()
    requests = frame[frame['direction'] == MASTER_TO_SLAVE]
    responses = frame[frame['direction'] == SLAVE_TO_MASTER]
    assert len(requests) == 3 and len(responses) == 3
    # 2 ms propagation plus 12 bytes (request) and 11 bytes (response) at 64 kbit/s
    assert np.all(requests['delay_us'] >= 3500 - 1)
    assert np.all(responses['delay_us'] >= 3375 - 1)
    assert requests['bytes'].tolist() == [12, 12, 12]
    report = proxy.stats()
    assert report[MASTER_TO_SLAVE].count == 3


async def test_proxy_with_unreachable_target():
    model = TrafficClassModel.for_class('DS3')
    proxy = await forward_with_delay(('127.0.0.1', 0), ('127.0.0.1', 1), model)
    port = proxy.server.sockets[0].getsockname()[1]
    try:
        reader, writer = await asyncio.open_connection('127.0.0.1', port)
        assert await asyncio.wait_for(reader.read(), timeout=5.0) == b''
        writer.close()
    finally:
        await proxy.close()
