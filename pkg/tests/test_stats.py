import pandas as pd
import pytest

from src.netem.stats import (
    STATS_COLUMNS,
    DelayRecorder,
    InsufficientSamplesError,
    combined_stats,
    delay_stats,
    read_stats_csv,
    stats_report,
)


def test_mean_and_jitter():
    stats = delay_stats([5.0, 7.0])
    assert stats.mean_ms == 6.0
    assert stats.jitter_us == pytest.approx(2000.0)
    assert stats.histogram == {5.0: 1, 7.0: 1}


def test_jitter_uses_message_order():
    assert delay_stats([1.0, 3.0, 1.0]).jitter_us == pytest.approx(2000.0)
    assert delay_stats([1.0, 1.0, 3.0]).jitter_us == pytest.approx(1000.0)


def test_needs_two_samples():
    with pytest.raises(InsufficientSamplesError):
        delay_stats([4.0])
    with pytest.raises(InsufficientSamplesError):
        stats_report(DelayRecorder())


def recorder():
    rec = DelayRecorder()
    rec.record('m2s', 12, 0.0, 2500.0)
    rec.record('s2m', 25, 2500.0, 5000.0)
    rec.record('m2s', 12, 10000.0, 13000.0)
    rec.record('s2m', 25, 13000.0, 15500.0)
    return rec


def test_recorder_frame():
    frame = recorder().to_frame()
    assert list(frame.columns) == STATS_COLUMNS
    assert frame['msg_index'].tolist() == [0, 0, 1, 1]
    assert frame['delay_us'].tolist() == [2500, 2500, 3000, 2500]


def test_report_per_direction():
    report = stats_report(recorder())
    assert report['m2s'].mean_ms == pytest.approx(2.75)
    assert report['m2s'].jitter_us == pytest.approx(500.0)
    assert report['s2m'].jitter_us == 0.0


def test_combined_in_arrival_order():
    stats = combined_stats(recorder())
    assert stats.count == 4
    assert stats.jitter_us == pytest.approx(1000.0 / 3)


def test_csv_round_trip(tmp_path):
    path = recorder().write_csv(tmp_path / 'delay_stats.csv')
    frame = read_stats_csv(path)
    assert stats_report(frame)['m2s'].mean_ms == pytest.approx(2.75)


def test_csv_missing_column(tmp_path):
    path = tmp_path / 'bad.csv'
    pd.DataFrame({'direction': ['m2s']}).to_csv(path, index=False)
    with pytest.raises(KeyError):
        read_stats_csv(path)
