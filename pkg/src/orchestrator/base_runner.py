"""
Base runner class for both clock modes
"""
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional, Union

from src.models.scenario import ScenarioConfig, ScenarioError, scenario_fingerprint, validate_scenario
from src.services.telemetry import telemetry
from src.services.trace_service import METRICS, output_service
from .metrics import RunMetrics, metrics_from_run_dir, write_metrics

logger = logging.getLogger(__name__)


class ComponentCrashError(RuntimeError):
    """A component of the run failed; carries the tail of its log"""

    def __init__(self, component: str, message: str, excerpt: str = ''):
        super().__init__(f"{component} failed: {message}")
        self.component = component
        self.excerpt = excerpt


class BaseRunner(ABC):
    """Runs one scenario end to end and reduces its traces to metrics"""

    mode: str = ''

    @abstractmethod
    def execute(self, config: ScenarioConfig, out_dir: Path) -> float:
        """
        Run the plant, the link and the EMS for the scenario's duration

        Args:
            config: Validated scenario
            out_dir: Directory for the trace files

        Returns:
            Wall time of the run in seconds
        """
        pass

    def run(self, config: ScenarioConfig, out_dir: Optional[Union[str, Path]] = None) -> RunMetrics:
        """
        Run a scenario and write its traces and metrics.toml into out_dir

        Raises:
            ScenarioError: if the scenario has violations
            ComponentCrashError: if a component fails mid-run
        """
        problems = validate_scenario(config)
        if problems:
            raise ScenarioError("invalid scenario: " + "; ".join(problems))

        out_dir = output_service.run_dir(out_dir, name=f"{config.traffic_class.value}_{config.congestion:g}")
        telemetry.reset()
        logger.info(f"Starting {self.mode} run: {config.duration_hours:g} h at {config.time_scale:g}x, "
                    f"{config.traffic_class.value} @ {config.congestion:.0%}, seed {config.rng_seed} -> {out_dir}")

        wall_time = self.execute(config, out_dir)
        metrics = metrics_from_run_dir(
            out_dir, config.spec, config.trace_period, wall_time=wall_time,
            fingerprint=scenario_fingerprint(config), traffic_class=config.traffic_class.value,
            congestion=config.congestion,
        )
        write_metrics(metrics, out_dir / METRICS)

        logger.info(f"Run finished: cost {metrics.total_cost:.4f}, stale ticks {metrics.stale_ticks}/{metrics.ticks}, "
                    f"v_dc [{metrics.v_dc_min:.1f}, {metrics.v_dc_max:.1f}] V, telemetry {telemetry.counts()}")
        for problem in metrics.invariant_violations():
            logger.warning(f"Invariant violated: {problem}")
        return metrics
