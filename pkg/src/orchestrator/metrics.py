"""
Run metrics: realised cost, band checks and delay statistics from the trace files
"""
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
import tomli_w

from src.models.microgrid import MicrogridSpec
from src.netem.stats import InsufficientSamplesError, combined_stats, stats_report
from src.services.trace_service import DELAY_STATS, METRICS, PLAN_LOG, PLANT_TRACE, output_service

logger = logging.getLogger(__name__)

VOLTAGE_BAND = 0.05
BALANCE_TOLERANCE = 0.005
SOC_TOLERANCE = 1e-9


class ScenarioMismatchError(ValueError):
    """Two runs that do not share scenario, seeds and profiles"""


@dataclass(frozen=True)
class RunMetrics:
    total_cost: float
    soc_violations: int
    v_dc_min: float
    v_dc_max: float
    v_bus_min: float
    v_bus_max: float
    pcc_energy_import: float
    pcc_energy_export: float
    stale_ticks: int
    ticks: int
    balance_violations: int
    voltage_violations: int
    samples: int
    wall_time: float
    delay_mean_ms: float = 0.0
    delay_jitter_us: float = 0.0
    delay_count: int = 0
    delay_by_direction: Dict[str, Dict[str, float]] = field(default_factory=dict)
    fingerprint: str = ''
    traffic_class: str = ''
    congestion: float = 0.0

    def invariant_violations(self) -> List[str]:
        problems = []
        if self.soc_violations:
            problems.append(f"{self.soc_violations} SoC samples outside the battery band")
        if self.voltage_violations:
            problems.append(f"{self.voltage_violations} voltage samples outside 400 V +/- 5 %")
        if self.balance_violations:
            problems.append(f"{self.balance_violations} samples break the power balance")
        return problems

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _columns(frame: pd.DataFrame, prefix: str) -> List[str]:
    return [c for c in frame.columns if c.startswith(prefix)]


def required_trace_columns(spec: MicrogridSpec) -> List[str]:
    bess = [bus.bus_id for bus in spec.battery_buses]
    return (['t_sim', 'v_dc', 'p_pcc', 'price_grid', 'price_bess']
            + [f"p_load_{b}" for b in spec.bus_ids] + [f"p_bess_{b}" for b in bess] + [f"soc_{b}" for b in bess])


def compute_metrics(plant_trace: pd.DataFrame, spec: MicrogridSpec, trace_period: float,
                    plan_log: Optional[pd.DataFrame] = None, delay_frame: Optional[pd.DataFrame] = None,
                    wall_time: float = 0.0, **labels) -> RunMetrics:
    """
    Reduce a run's traces to its metrics

    Cost is integrated with a rectangle rule: each trace row stands for the
    interval up to the next row (the last one for one trace period).

    Args:
        plant_trace: Plant trace rows
        spec: Microgrid the run simulated (battery bands, bus ids)
        trace_period: Sim seconds between trace rows
        plan_log: EMS tick rows (stale ticks); None counts no ticks
        delay_frame: Proxy stats rows; None leaves delay fields at 0
        wall_time: Seconds the run took
        labels: fingerprint, traffic_class, congestion

    Raises:
        KeyError: if the trace lacks a required column
    """
    missing = [c for c in required_trace_columns(spec) if c not in plant_trace.columns]
    if missing:
        raise KeyError(f"plant trace is missing columns {missing}")
    if plant_trace.empty:
        raise KeyError("plant trace has no rows")

    t = plant_trace['t_sim'].to_numpy(dtype=float)
    hours = np.diff(t, append=t[-1] + trace_period) / 3600.0
    p_pcc = plant_trace['p_pcc'].to_numpy(dtype=float)
    p_bess = plant_trace[_columns(plant_trace, 'p_bess_')].to_numpy(dtype=float).sum(axis=1)
    p_pv = plant_trace[_columns(plant_trace, 'p_pv_')].to_numpy(dtype=float).sum(axis=1)
    p_load = plant_trace[_columns(plant_trace, 'p_load_')].to_numpy(dtype=float).sum(axis=1)

    price_grid = plant_trace['price_grid'].to_numpy(dtype=float)
    price_bess = plant_trace['price_bess'].to_numpy(dtype=float)
    cost = float(np.sum((price_grid * p_pcc - price_bess * p_bess) / 1000.0 * hours))

    soc_violations = 0
    for bus in spec.battery_buses:
        soc = plant_trace[f"soc_{bus.bus_id}"].to_numpy(dtype=float)
        outside = (soc < bus.bess.soc_min - SOC_TOLERANCE) | (soc > bus.bess.soc_max + SOC_TOLERANCE)
        soc_violations += int(np.count_nonzero(outside))

    low, high = spec.v_nominal * (1 - VOLTAGE_BAND), spec.v_nominal * (1 + VOLTAGE_BAND)
    v_dc = plant_trace['v_dc'].to_numpy(dtype=float)
    v_bus = plant_trace[_columns(plant_trace, 'v_bus_')].to_numpy(dtype=float)
    # an open breaker reads 0 V
    energised = v_bus[v_bus > 0]
    voltage_violations = int(np.count_nonzero((v_dc < low) | (v_dc > high)))
    voltage_violations += int(np.count_nonzero((energised < low) | (energised > high)))

    residual = p_pcc - (p_load - p_pv - p_bess)
    balance_violations = int(np.count_nonzero(np.abs(residual) >= BALANCE_TOLERANCE * np.maximum(p_load, 1e-9)))

    ticks = stale_ticks = 0
    if plan_log is not None:
        if 'stale_flag' not in plan_log.columns:
            raise KeyError("plan log is missing column 'stale_flag'")
        ticks = len(plan_log)
        stale_ticks = int(plan_log['stale_flag'].astype(int).sum())

    delay = {}
    if delay_frame is not None and len(delay_frame) >= 2:
        pooled = combined_stats(delay_frame)
        try:
            by_direction = {name: s.as_dict() for name, s in stats_report(delay_frame).items()}
        except InsufficientSamplesError:
            by_direction = {}
        delay = {'delay_mean_ms': pooled.mean_ms, 'delay_jitter_us': pooled.jitter_us,
                 'delay_count': pooled.count, 'delay_by_direction': by_direction}

    return RunMetrics(
        total_cost=cost,
        soc_violations=soc_violations,
        v_dc_min=float(v_dc.min()),
        v_dc_max=float(v_dc.max()),
        v_bus_min=float(energised.min()) if energised.size else 0.0,
        v_bus_max=float(energised.max()) if energised.size else 0.0,
        pcc_energy_import=float(np.sum(np.maximum(p_pcc, 0.0) * hours) / 1000.0),
        pcc_energy_export=float(np.sum(np.maximum(-p_pcc, 0.0) * hours) / 1000.0),
        stale_ticks=stale_ticks,
        ticks=ticks,
        balance_violations=balance_violations,
        voltage_violations=voltage_violations,
        samples=len(plant_trace),
        wall_time=wall_time,
        **delay,
        **labels,
    )


def metrics_from_run_dir(run_dir: Union[str, Path], spec: MicrogridSpec, trace_period: float,
                         wall_time: float = 0.0, **labels) -> RunMetrics:
    """compute_metrics over the trace files a runner left in run_dir"""
    run_dir = Path(run_dir)
    plant = output_service.read_trace(run_dir / PLANT_TRACE, required_trace_columns(spec))
    plan_path = run_dir / PLAN_LOG
    delay_path = run_dir / DELAY_STATS
    plan = output_service.read_trace(plan_path, ['stale_flag']) if plan_path.exists() else None
    delay = output_service.read_trace(delay_path) if delay_path.exists() else None
    return compute_metrics(plant, spec, trace_period, plan_log=plan, delay_frame=delay,
                           wall_time=wall_time, **labels)


def write_metrics(metrics: RunMetrics, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as file:
        tomli_w.dump(metrics.to_dict(), file)
    return path


def read_metrics(path: Union[str, Path]) -> RunMetrics:
    """
    Read a metrics.toml file, or the one inside a run directory

    Raises:
        FileNotFoundError: if there is no metrics file
        ValueError: if the file does not hold run metrics
    """
    path = Path(path)
    if path.is_dir():
        path = path / METRICS
    with open(path, 'rb') as file:
        data = tomllib.load(file)
    known = {f.name for f in fields(RunMetrics)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown metric fields {sorted(unknown)}")
    try:
        return RunMetrics(**data)
    except TypeError as e:
        raise ValueError(f"{path}: {e}")


COMPARED_FIELDS = ('stale_ticks', 'total_cost', 'soc_violations', 'voltage_violations', 'balance_violations',
                   'v_dc_min', 'v_dc_max', 'pcc_energy_import', 'pcc_energy_export',
                   'delay_mean_ms', 'delay_jitter_us')


def compare_runs(a: RunMetrics, b: RunMetrics) -> pd.DataFrame:
    """
    Side-by-side metrics of two runs of the same scenario

    Returns:
        One row per metric with columns a, b and delta (b - a)

    Raises:
        ScenarioMismatchError: if the runs simulated different scenarios
    """
    if a.fingerprint and b.fingerprint and a.fingerprint != b.fingerprint:
        raise ScenarioMismatchError(f"runs simulate different scenarios ({a.fingerprint} vs {b.fingerprint})")
    rows = [{'metric': name, 'a': getattr(a, name), 'b': getattr(b, name),
             'delta': getattr(b, name) - getattr(a, name)} for name in COMPARED_FIELDS]
    return pd.DataFrame(rows).set_index('metric')


def format_comparison(report: pd.DataFrame, a: RunMetrics, b: RunMetrics) -> str:
    header = (f"a: {a.traffic_class or '?'} @ {a.congestion:.0%}    "
              f"b: {b.traffic_class or '?'} @ {b.congestion:.0%}")
    return header + '\n' + report.to_string(float_format=lambda v: f"{v:.4f}")
