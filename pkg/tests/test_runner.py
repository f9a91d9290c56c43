import pandas as pd
import pytest

from src.models.scenario import ScenarioError
from src.orchestrator.metrics import read_metrics
from src.orchestrator.realtime_runner import RealtimeRunner
from src.orchestrator.runner_factory import runner_factory
from src.orchestrator.virtual_runner import VirtualTimeRunner
from src.services.trace_service import DELAY_STATS, METRICS, PLAN_LOG, PLANT_TRACE


@pytest.fixture(scope='module')
def short_run(tmp_path_factory, bundled):
    out = tmp_path_factory.mktemp('short')
    return out, VirtualTimeRunner().run(bundled.with_overrides(duration_hours=0.25, trace_period=60.0), out)


def test_factory_modes():
    assert isinstance(runner_factory.get_runner('virtual'), VirtualTimeRunner)
    assert isinstance(runner_factory.get_runner('realtime'), RealtimeRunner)
    assert runner_factory.get_runner('warp') is None
    assert set(runner_factory.get_supported_modes()) == {'virtual', 'realtime'}


def test_short_run_writes_every_file(short_run):
    out, _ = short_run
    for name in (PLANT_TRACE, PLAN_LOG, DELAY_STATS, METRICS):
        assert (out / name).exists(), name


def test_short_run_holds_invariants(short_run, short_scenario):
    out, metrics = short_run
    assert metrics.invariant_violations() == []
    assert metrics.ticks >= 1
    assert metrics.stale_ticks == 0
    assert metrics.delay_count > 0
    assert 380.0 <= metrics.v_dc_min <= metrics.v_dc_max <= 420.0
    assert read_metrics(out / METRICS) == metrics


def test_short_run_trace_rows(short_run, short_scenario):
    out, metrics = short_run
    trace = pd.read_csv(out / PLANT_TRACE)
    # first row after the first plant step, then one per trace period
    assert trace['t_sim'].iloc[0] == pytest.approx(short_scenario.plant_step)
    assert trace['t_sim'].iloc[1] == pytest.approx(short_scenario.trace_period)
    assert trace['t_sim'].max() < short_scenario.duration_s
    assert len(trace) == metrics.samples == int(short_scenario.duration_s / short_scenario.trace_period)
    assert trace['seq'].is_monotonic_increasing


def test_plan_log_one_row_per_tick(short_run):
    out, metrics = short_run
    plan = pd.read_csv(out / PLAN_LOG)
    assert len(plan) == metrics.ticks
    assert set(plan['stale_flag']) <= {0, 1}


def test_same_seed_same_run(tmp_path, short_scenario, short_run):
    first_dir, first = short_run
    second = VirtualTimeRunner().run(short_scenario, tmp_path)
    a, b = first.to_dict(), second.to_dict()
    a.pop('wall_time')
    b.pop('wall_time')
    assert a == b
    for name in (PLANT_TRACE, PLAN_LOG, DELAY_STATS):
        assert (first_dir / name).read_bytes() == (tmp_path / name).read_bytes(), name


def test_invalid_scenario_is_rejected_before_running(tmp_path, short_scenario):
    bad = short_scenario.model_copy(update={'poll_period': -1.0})
    with pytest.raises(ScenarioError, match='poll_period'):
        VirtualTimeRunner().run(bad, tmp_path / 'never')
    assert not (tmp_path / 'never').exists()


@pytest.mark.slow
def test_full_day_zero_violations(tmp_path, scenario):
    metrics = VirtualTimeRunner().run(scenario, tmp_path)
    assert metrics.invariant_violations() == []
    assert metrics.ticks == int(24 * 60 / scenario.reopt_period)


@pytest.mark.slow
def test_congested_slow_link_goes_stale(tmp_path, scenario):
    fast = VirtualTimeRunner().run(scenario.with_overrides(traffic_class='DS3', congestion=0.0), tmp_path / 'ds3')
    slow = VirtualTimeRunner().run(scenario.with_overrides(traffic_class='DS0', congestion=0.75), tmp_path / 'ds0')
    assert fast.stale_ticks == 0
    assert slow.stale_ticks > 0
    assert slow.delay_mean_ms > fast.delay_mean_ms
