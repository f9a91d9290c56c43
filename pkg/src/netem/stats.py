"""
Delay and jitter statistics of delayed messages
"""
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

STATS_COLUMNS = ['direction', 'msg_index', 'bytes', 'arrival_us', 'release_us', 'delay_us']
HISTOGRAM_BIN_MS = 0.1

MASTER_TO_SLAVE = 'm2s'
SLAVE_TO_MASTER = 's2m'


class InsufficientSamplesError(ValueError):
    """Fewer than two messages recorded, so jitter is undefined"""


@dataclass(frozen=True)
class DelayStats:
    count: int
    mean_ms: float
    jitter_us: float
    min_ms: float
    max_ms: float
    histogram: Dict[float, int] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, float]:
        return {'count': self.count, 'mean_ms': self.mean_ms, 'jitter_us': self.jitter_us,
                'min_ms': self.min_ms, 'max_ms': self.max_ms}


def delay_stats(delays_ms: Iterable[float]) -> DelayStats:
    """
    Summarise a sequence of one-way delays in message order

    Jitter is the mean absolute difference of successive delays.

    Raises:
        InsufficientSamplesError: with fewer than two delays
    """
    delays = np.asarray(list(delays_ms), dtype=float)
    if len(delays) < 2:
        raise InsufficientSamplesError(f"need at least 2 delays for jitter, got {len(delays)}")

    bins, counts = np.unique(np.floor(delays / HISTOGRAM_BIN_MS + 1e-9).astype(np.int64), return_counts=True)
    histogram = {round(float(b) * HISTOGRAM_BIN_MS, 1): int(c) for b, c in zip(bins, counts)}
    return DelayStats(
        count=len(delays),
        mean_ms=float(np.mean(delays)),
        jitter_us=float(np.mean(np.abs(np.diff(delays)))) * 1000.0,
        min_ms=float(delays.min()),
        max_ms=float(delays.max()),
        histogram=histogram,
    )


class DelayRecorder:
    """Arrival and release times of every delayed message, per direction"""

    def __init__(self):
        self._rows: List[tuple] = []
        self._counters: Dict[str, int] = {}
        self._lock = threading.Lock()

    def record(self, direction: str, n_bytes: int, arrival_us: float, release_us: float) -> None:
        with self._lock:
            index = self._counters.get(direction, 0)
            self._counters[direction] = index + 1
            self._rows.append((direction, index, int(n_bytes), int(round(arrival_us)), int(round(release_us))))

    def __len__(self) -> int:
        with self._lock:
            return len(self._rows)

    def to_frame(self) -> pd.DataFrame:
        with self._lock:
            rows = list(self._rows)
        frame = pd.DataFrame(rows, columns=STATS_COLUMNS[:-1])
        frame['delay_us'] = frame['release_us'] - frame['arrival_us']
        return frame[STATS_COLUMNS]

    def delays_ms(self, direction: Optional[str] = None) -> np.ndarray:
        frame = self.to_frame()
        if direction is not None:
            frame = frame[frame['direction'] == direction]
        return frame.sort_values('msg_index', kind='stable')['delay_us'].to_numpy(dtype=float) / 1000.0

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        logger.info(f"Wrote {len(self)} delay records to {path}")
        return path


def read_stats_csv(path: Union[str, Path]) -> pd.DataFrame:
    """
    Raises:
        KeyError: if a stats column is missing
    """
    frame = pd.read_csv(path)
    missing = [c for c in STATS_COLUMNS if c not in frame.columns]
    if missing:
        raise KeyError(f"{Path(path).name}: missing stats columns {missing}")
    return frame


def stats_report(source: Union[DelayRecorder, pd.DataFrame]) -> Dict[str, DelayStats]:
    """
    DelayStats per direction

    Args:
        source: A recorder or a frame with the stats CSV columns

    Raises:
        InsufficientSamplesError: if a direction has fewer than two messages
    """
    frame = source.to_frame() if isinstance(source, DelayRecorder) else source
    if frame.empty:
        raise InsufficientSamplesError("no messages recorded")
    report = {}
    for direction, rows in frame.groupby('direction', sort=True):
        rows = rows.sort_values('msg_index', kind='stable')
        report[str(direction)] = delay_stats(rows['delay_us'].to_numpy(dtype=float) / 1000.0)
    return report


def combined_stats(source: Union[DelayRecorder, pd.DataFrame]) -> Optional[DelayStats]:
    """Both directions pooled in arrival order, or None with too few messages"""
    frame = source.to_frame() if isinstance(source, DelayRecorder) else source
    if len(frame) < 2:
        return None
    frame = frame.sort_values(['arrival_us', 'direction', 'msg_index'], kind='stable')
    return delay_stats(frame['delay_us'].to_numpy(dtype=float) / 1000.0)
