"""
Calibration sweep of the delay model against the reference delay table
"""
import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from src.models.scenario import TrafficClass
from src.netem.stats import delay_stats
from src.netem.traffic import (
    CONGESTION_LEVELS, REFERENCE_DELAY_MS, REFERENCE_JITTER_US, DelaySampler, TrafficClassModel, mean_delay_md1,
)

logger = logging.getLogger(__name__)

CALIBRATION_BYTES = 178
CALIBRATION_COLUMNS = ['traffic_class', 'congestion', 'messages', 'mean_ms', 'analytic_ms', 'reference_ms',
                       'rel_error', 'jitter_us', 'reference_jitter_us']


def calibrate_netem(out_path: Optional[Union[str, Path]] = None, messages: int = 10_000, seed: int = 0,
                    n_bytes: int = CALIBRATION_BYTES) -> pd.DataFrame:
    """
    Sweep every traffic class over the reference congestion levels

    Each cell draws `messages` independent delays of n_bytes messages.

    Args:
        out_path: CSV to write; nothing is written when None
        messages: Draws per cell
        seed: Base seed; each cell gets its own stream
        n_bytes: Message size

    Returns:
        One row per (class, congestion) with measured and reference values
    """
    rows = []
    for c_index, traffic_class in enumerate(TrafficClass):
        for r_index, congestion in enumerate(CONGESTION_LEVELS):
            model = TrafficClassModel.for_class(traffic_class, congestion=congestion, seed=seed)
            sampler = DelaySampler(model, np.random.default_rng([seed, c_index, r_index]))
            stats = delay_stats(sampler.sample_many(messages, n_bytes))
            reference = REFERENCE_DELAY_MS[traffic_class][r_index]
            rows.append({
                'traffic_class': traffic_class.value,
                'congestion': congestion,
                'messages': messages,
                'mean_ms': stats.mean_ms,
                'analytic_ms': mean_delay_md1(n_bytes, model),
                'reference_ms': reference,
                'rel_error': (stats.mean_ms - reference) / reference,
                'jitter_us': stats.jitter_us,
                'reference_jitter_us': REFERENCE_JITTER_US[traffic_class][r_index],
            })
            logger.info(f"{traffic_class.value} @ {congestion:.0%}: mean {stats.mean_ms:.3f} ms "
                        f"(reference {reference} ms, {rows[-1]['rel_error']:+.2%}), jitter {stats.jitter_us:.3f} us")

    table = pd.DataFrame(rows, columns=CALIBRATION_COLUMNS)
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(out_path, index=False)
        logger.info(f"Calibration table written to {out_path}")
    return table


def delay_table(table: pd.DataFrame, value: str = 'mean_ms') -> pd.DataFrame:
    """Pivot to the reference layout: congestion rows, one column per class"""
    order = [c.value for c in TrafficClass]
    return table.pivot(index='congestion', columns='traffic_class', values=value)[order]
