import numpy as np
import pytest

from src.models.scenario import TrafficClass
from src.netem.traffic import (
    LINK_RATES,
    DelaySampler,
    ModelError,
    TrafficClassModel,
    default_staleness_limit_ms,
    mean_delay_md1,
    sample_delay,
    serialization_delay,
)
from src.orchestrator.calibration import calibrate_netem


def model(traffic_class, congestion=0.0, seed=0):
    return TrafficClassModel.for_class(traffic_class, congestion=congestion, seed=seed)


def test_serialization_delay():
    assert serialization_delay(178, model('DS0')) == pytest.approx(22.25)
    assert serialization_delay(178, model('DS1')) == pytest.approx(0.922, abs=1e-3)
    with pytest.raises(ValueError):
        serialization_delay(-1, model('DS0'))


def md1_mean_ms(traffic_class, congestion, n_bytes=178):
    service = n_bytes * 8 / LINK_RATES[TrafficClass(traffic_class)] * 1000.0
    return 2.0 + service + congestion * service / (2 * (1 - congestion))


@pytest.mark.parametrize('traffic_class, congestion, expected', [
    ('DS0', 0.0, 24.25),
    ('DS0', 0.75, 57.625),
    ('E1', 0.75, 3.73828125),
])
def test_mean_delay(traffic_class, congestion, expected):
    assert mean_delay_md1(178, model(traffic_class, congestion)) == pytest.approx(expected)


@pytest.mark.parametrize('traffic_class', [c.value for c in TrafficClass])
@pytest.mark.parametrize('congestion', [0.0, 0.25, 0.5, 0.75])
def test_mean_delay_from_link_rate(traffic_class, congestion):
    assert mean_delay_md1(178, model(traffic_class, congestion)) == pytest.approx(md1_mean_ms(traffic_class, congestion))


def test_mean_delay_grows_with_congestion():
    for traffic_class in TrafficClass:
        delays = [mean_delay_md1(178, model(traffic_class, rho)) for rho in (0.0, 0.25, 0.5, 0.75)]
        assert delays == sorted(delays)


def test_unstable_queue_rejected():
    with pytest.raises(ModelError):
        mean_delay_md1(178, model('DS3', 1.0))
    with pytest.raises(ModelError):
        DelaySampler(model('DS3', 1.2))


def test_link_rates():
    assert LINK_RATES[TrafficClass.DS0] == 64_000.0
    assert LINK_RATES[TrafficClass.E3] == 34_368_000.0


def test_no_congestion_is_deterministic():
    delays = DelaySampler(model('DS1')).sample_many(100, 178)
    assert np.all(delays == delays[0])
    assert delays[0] == pytest.approx(2.0 + 0.922, abs=1e-3)


def test_sampler_is_seeded():
    a = DelaySampler(model('DS0', 0.5, seed=4)).sample_many(500, 178)
    b = DelaySampler(model('DS0', 0.5, seed=4)).sample_many(500, 178)
    c = DelaySampler(model('DS0', 0.5, seed=5)).sample_many(500, 178)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_delays_never_below_floor():
    m = model('DS0', 0.75, seed=1)
    delays = DelaySampler(m).sample_many(2000, 178)
    assert delays.min() >= 2.0 + 22.25 - 1e-9


def test_sample_many_mean_close_to_analytic():
    m = model('DS0', 0.5, seed=2)
    delays = DelaySampler(m).sample_many(20_000, 178)
    assert delays.mean() == pytest.approx(mean_delay_md1(178, m), rel=0.03)


def test_stream_sampling_mean_close_to_analytic():
    m = model('E1', 0.5, seed=3)
    sampler = DelaySampler(m)
    delays = [sampler.sample(178, at_ms=10.0 * k) for k in range(5000)]
    assert np.mean(delays) == pytest.approx(mean_delay_md1(178, m), rel=0.05)


@pytest.mark.parametrize('traffic_class', [c.value for c in TrafficClass])
def test_sampled_mean_matches_analytic_per_class(traffic_class):
    m = model(traffic_class, 0.5, seed=11)
    delays = DelaySampler(m).sample_many(20_000, 178)
    assert delays.mean() == pytest.approx(mean_delay_md1(178, m), rel=0.03)


def test_sample_delay_returns_generator():
    m = model('DS3', 0.25, seed=9)
    first, rng = sample_delay(178, m)
    again, _ = sample_delay(178, m)
    assert first == again
    assert isinstance(rng, np.random.Generator)


def test_staleness_limit(scenario):
    config = scenario.with_overrides(traffic_class='DS0', poll_period=100.0, wire_bytes=178)
    assert default_staleness_limit_ms(config) == pytest.approx(200.0 + 2 * 24.25)
    assert default_staleness_limit_ms(config.with_overrides(staleness_limit_ms=50.0)) == 50.0


@pytest.mark.slow
def test_calibration_close_to_reference():
    table = calibrate_netem(messages=50_000, seed=0)
    assert table['rel_error'].abs().max() < 0.05
