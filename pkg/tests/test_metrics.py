import pandas as pd
import pytest

from src.orchestrator.metrics import (
    ScenarioMismatchError,
    compare_runs,
    compute_metrics,
    format_comparison,
    read_metrics,
    write_metrics,
)
from src.services.plant_service import plant_trace_columns


def constant_trace(spec, rows=24, period=3600.0, soc=0.5, p_pcc=720.0):
    """Flat day: 720 W of load met entirely by the grid at 0.1 per kWh"""
    loads = {2: 160.0, 3: 240.0, 4: 110.0, 5: 210.0}
    data = []
    for k in range(rows):
        row = {'t_sim': k * period, 'seq': k, 'v_dc': 400.0, 'p_pcc': p_pcc, 'price_grid': 0.1, 'price_bess': 0.02}
        for b in spec.bus_ids:
            row[f"v_bus_{b}"] = 399.5
            row[f"p_load_{b}"] = loads[b]
        for bus in spec.pv_buses:
            row[f"p_pv_{bus.bus_id}"] = 0.0
        for bus in spec.battery_buses:
            row[f"p_bess_{bus.bus_id}"] = 0.0
            row[f"soc_{bus.bus_id}"] = soc
        data.append(row)
    return pd.DataFrame(data, columns=plant_trace_columns(spec))


def test_constant_day_cost(spec):
    metrics = compute_metrics(constant_trace(spec), spec, trace_period=3600.0)
    assert metrics.total_cost == pytest.approx(1.728)
    assert metrics.pcc_energy_import == pytest.approx(17.28)
    assert metrics.pcc_energy_export == 0.0
    assert metrics.invariant_violations() == []
    assert metrics.samples == 24


def test_soc_outside_band_counted(spec):
    trace = constant_trace(spec)
    trace.loc[5, 'soc_3'] = 0.96
    metrics = compute_metrics(trace, spec, trace_period=3600.0)
    assert metrics.soc_violations == 1
    assert metrics.invariant_violations() == ["1 SoC samples outside the battery band"]


def test_voltage_band(spec):
    trace = constant_trace(spec)
    trace.loc[0, 'v_dc'] = 379.0
    trace.loc[1, 'v_bus_5'] = 0.0
    metrics = compute_metrics(trace, spec, trace_period=3600.0)
    assert metrics.voltage_violations == 1
    assert metrics.v_dc_min == 379.0
    assert metrics.v_bus_min == 399.5


def test_power_balance(spec):
    trace = constant_trace(spec)
    trace.loc[2, 'p_pcc'] = 700.0
    metrics = compute_metrics(trace, spec, trace_period=3600.0)
    assert metrics.balance_violations == 1


def test_battery_discharge_is_paid(spec):
    trace = constant_trace(spec, p_pcc=320.0)
    trace['p_bess_3'] = 400.0
    metrics = compute_metrics(trace, spec, trace_period=3600.0)
    assert metrics.total_cost == pytest.approx(24 * (0.1 * 0.32 - 0.02 * 0.4))


def test_plan_log_and_delays(spec):
    plan = pd.DataFrame({'t_sim': [0, 300, 600], 'stale_flag': [0, 1, 0]})
    delays = pd.DataFrame({'direction': ['m2s', 's2m', 'm2s', 's2m'], 'msg_index': [0, 0, 1, 1],
                           'bytes': [178] * 4, 'arrival_us': [0, 3000, 10000, 13000],
                           'release_us': [2000, 5000, 12000, 16000], 'delay_us': [2000, 2000, 2000, 3000]})
    metrics = compute_metrics(constant_trace(spec), spec, 3600.0, plan_log=plan, delay_frame=delays)
    assert (metrics.ticks, metrics.stale_ticks) == (3, 1)
    assert metrics.delay_count == 4
    assert metrics.delay_mean_ms == pytest.approx(2.25)
    assert metrics.delay_by_direction['s2m']['jitter_us'] == pytest.approx(1000.0)


def test_missing_column(spec):
    with pytest.raises(KeyError):
        compute_metrics(constant_trace(spec).drop(columns=['soc_2']), spec, 3600.0)


def test_metrics_file_round_trip(spec, tmp_path):
    metrics = compute_metrics(constant_trace(spec), spec, 3600.0, fingerprint='abc', traffic_class='DS3',
                              congestion=0.5)
    write_metrics(metrics, tmp_path / 'metrics.toml')
    assert read_metrics(tmp_path) == metrics


def test_read_metrics_rejects_foreign_file(tmp_path):
    (tmp_path / 'metrics.toml').write_text('colour = "blue"\n')
    with pytest.raises(ValueError):
        read_metrics(tmp_path)
    with pytest.raises(FileNotFoundError):
        read_metrics(tmp_path / 'nothing')


def test_compare_runs(spec):
    a = compute_metrics(constant_trace(spec), spec, 3600.0, fingerprint='abc', traffic_class='DS3')
    b = compute_metrics(constant_trace(spec, p_pcc=800.0), spec, 3600.0, fingerprint='abc', traffic_class='DS0',
                        congestion=0.75)
    report = compare_runs(a, b)
    assert report.loc['total_cost', 'delta'] == pytest.approx(24 * 0.1 * 0.08)
    text = format_comparison(report, a, b)
    assert 'DS0 @ 75%' in text

    c = compute_metrics(constant_trace(spec), spec, 3600.0, fingerprint='xyz')
    with pytest.raises(ScenarioMismatchError):
        compare_runs(a, c)
