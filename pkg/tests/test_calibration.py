import pandas as pd
import pytest

from src.models.scenario import TrafficClass
from src.netem.traffic import CONGESTION_LEVELS
from src.orchestrator.calibration import CALIBRATION_COLUMNS, calibrate_netem, delay_table


@pytest.fixture(scope='module')
def table():
    return calibrate_netem(messages=500, seed=3)


def test_one_row_per_class_and_level(table):
    assert list(table.columns) == CALIBRATION_COLUMNS
    assert len(table) == len(TrafficClass) * len(CONGESTION_LEVELS)
    assert (table['messages'] == 500).all()


def test_analytic_mean_tracks_reference(table):
    assert ((table['analytic_ms'] - table['reference_ms']).abs() / table['reference_ms']).max() < 0.05


def test_idle_link_is_deterministic(table):
    idle = table[table['congestion'] == 0.0]
    assert (idle['jitter_us'] == 0.0).all()
    assert idle['mean_ms'].to_numpy() == pytest.approx(idle['analytic_ms'].to_numpy())


def test_slow_link_jitter_grows_with_congestion(table):
    ds0 = table[table['traffic_class'] == 'DS0'].sort_values('congestion')
    assert ds0['jitter_us'].iloc[-1] > ds0['jitter_us'].iloc[1] > 0.0
    assert ds0['mean_ms'].is_monotonic_increasing


def test_delay_table_layout(table):
    pivot = delay_table(table)
    assert list(pivot.columns) == [c.value for c in TrafficClass]
    assert list(pivot.index) == list(CONGESTION_LEVELS)
    assert pivot.loc[0.0, 'DS0'] == pytest.approx(24.25)


def test_same_seed_same_table():
    a = calibrate_netem(messages=50, seed=7)
    b = calibrate_netem(messages=50, seed=7)
    pd.testing.assert_frame_equal(a, b)


def test_writes_csv(tmp_path):
    out = tmp_path / 'calib' / 'netem.csv'
    table = calibrate_netem(out, messages=20, seed=0)
    assert out.exists()
    pd.testing.assert_frame_equal(pd.read_csv(out), table, check_dtype=False)


def test_jitter_ordered_by_link_rate(table):
    jitter = delay_table(table, 'jitter_us')
    for congestion in CONGESTION_LEVELS[1:]:
        row = jitter.loc[congestion]
        assert row['DS3'] < row['DS1'] < row['DS0']
