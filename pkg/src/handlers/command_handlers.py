"""
Command handlers for the command-line interface
"""
import argparse
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from src.models.scenario import ScenarioConfig, ScenarioError, load_scenario
from src.netem.traffic import ModelError, TrafficClassModel
from src.orchestrator.base_runner import ComponentCrashError
from src.orchestrator.calibration import calibrate_netem, delay_table
from src.orchestrator.components import component_main, run_ems, run_plant, run_proxy
from src.orchestrator.metrics import (RunMetrics, ScenarioMismatchError, compare_runs, format_comparison,
                                      read_metrics)
from src.orchestrator.runner_factory import runner_factory
from src.services.trace_service import DELAY_STATS, METRICS, PLAN_LOG, PLANT_TRACE, output_service

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_USAGE = 2
EXIT_CRASH = 3


@dataclass
class RunResult:
    """Outcome of a `run` command"""

    exit_code: int
    out_dir: Optional[Path] = None
    metrics: Optional[RunMetrics] = None
    violations: List[str] = field(default_factory=list)
    files: Dict[str, dict] = field(default_factory=dict)


def parse_endpoint(text: str) -> Tuple[str, int]:
    """'host:port' to (host, port)"""
    host, sep, port = text.rpartition(':')
    if not sep or not host:
        raise argparse.ArgumentTypeError(f"expected host:port, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise argparse.ArgumentTypeError(f"port must be an integer in {text!r}")


def _scenario_from_args(args: argparse.Namespace) -> ScenarioConfig:
    config = load_scenario(args.scenario)
    overrides = {
        'clock_mode': getattr(args, 'mode', None),
        'traffic_class': getattr(args, 'traffic_class', None),
        'congestion': getattr(args, 'congestion', None),
        'rng_seed': getattr(args, 'seed', None),
        'time_scale': getattr(args, 'time_scale', None),
        'trace_period': getattr(args, 'trace_period', None),
        'duration_hours': getattr(args, 'hours', None),
    }
    return config.with_overrides(**overrides)


def execute_run(args: argparse.Namespace) -> RunResult:
    """Run a scenario and report where the outputs went"""
    try:
        config = _scenario_from_args(args)
        runner = runner_factory.get_runner(config.clock_mode)
        if runner is None:
            raise ScenarioError(f"unsupported clock mode {config.clock_mode}; "
                                f"choose from {runner_factory.get_supported_modes()}")
        out_dir = output_service.run_dir(args.out, name=f"{config.traffic_class.value}_{config.congestion:g}")
        metrics = runner.run(config, out_dir)
    except (ScenarioError, ValueError) as e:
        logger.error(f"Configuration error: {e}")
        print(f"Configuration error: {e}")
        return RunResult(EXIT_USAGE)
    except ComponentCrashError as e:
        logger.error(f"{e}")
        print(f"{e}\n--- last log lines of {e.component} ---\n{e.excerpt}")
        return RunResult(EXIT_CRASH)

    files = {name: output_service.get_file_info(out_dir / name)
             for name in (PLANT_TRACE, PLAN_LOG, DELAY_STATS, METRICS)}
    violations = metrics.invariant_violations()
    return RunResult(EXIT_VIOLATIONS if violations else EXIT_OK, out_dir, metrics, violations, files)


def handle_run(args: argparse.Namespace) -> int:
    result = execute_run(args)
    if result.metrics is None:
        return result.exit_code

    m = result.metrics
    print(f"Run written to {result.out_dir}")
    for name, info in result.files.items():
        if info:
            print(f"  {name:<16} {info['size']:>10} bytes")
    print(f"Total cost:    {m.total_cost:.4f}")
    print(f"Stale ticks:   {m.stale_ticks}/{m.ticks}")
    print(f"DC bus:        {m.v_dc_min:.1f} .. {m.v_dc_max:.1f} V")
    print(f"PCC energy:    +{m.pcc_energy_import:.2f} / -{m.pcc_energy_export:.2f} kWh")
    print(f"Link delay:    {m.delay_mean_ms:.3f} ms mean, {m.delay_jitter_us:.1f} us jitter "
          f"({m.delay_count} messages)")
    for problem in result.violations:
        print(f"VIOLATION: {problem}")
    return result.exit_code


def handle_calibrate(args: argparse.Namespace) -> int:
    if args.messages < 2:
        print("Configuration error: --messages must be at least 2")
        return EXIT_USAGE
    table = calibrate_netem(args.out, messages=args.messages, seed=args.seed)
    print("Mean delay (ms)")
    print(delay_table(table, 'mean_ms').to_string(float_format=lambda v: f"{v:.3f}"))
    print("\nJitter (us)")
    print(delay_table(table, 'jitter_us').to_string(float_format=lambda v: f"{v:.3f}"))
    worst = table['rel_error'].abs().max()
    print(f"\nLargest deviation from the reference table: {worst:.2%}")
    if args.out:
        print(f"Table written to {args.out}")
    return EXIT_OK


def handle_compare(args: argparse.Namespace) -> int:
    try:
        a, b = read_metrics(args.a), read_metrics(args.b)
        report = compare_runs(a, b)
    except FileNotFoundError as e:
        print(f"Configuration error: no metrics at {e.filename}")
        return EXIT_USAGE
    except (ScenarioMismatchError, ValueError) as e:
        print(f"Configuration error: {e}")
        return EXIT_USAGE
    print(format_comparison(report, a, b))
    return EXIT_OK


def handle_plant(args: argparse.Namespace) -> int:
    try:
        config = load_scenario(args.scenario)
    except ScenarioError as e:
        print(f"Configuration error: {e}")
        return EXIT_USAGE
    out_dir = output_service.run_dir(args.out, name='plant')
    return component_main(lambda stop: run_plant(config, args.host, args.port, out_dir, stop))


def proxy_model(args: argparse.Namespace) -> TrafficClassModel:
    """Delay model of a `proxy` command line"""
    return TrafficClassModel.for_class(args.traffic_class, congestion=args.congestion,
                                       propagation_ms=args.propagation_ms,
                                       background_packet=args.background_packet, seed=args.seed)


def handle_proxy(args: argparse.Namespace) -> int:
    try:
        model = proxy_model(args)
        model.check()
    except (ModelError, ValueError) as e:
        print(f"Configuration error: {e}")
        return EXIT_USAGE
    stats_csv = Path(args.stats_csv) if args.stats_csv else None
    return component_main(lambda stop: run_proxy(args.listen, args.target, model, stats_csv,
                                                 args.wire_bytes, stop))


def handle_ems(args: argparse.Namespace) -> int:
    try:
        config = load_scenario(args.scenario)
    except ScenarioError as e:
        print(f"Configuration error: {e}")
        return EXIT_USAGE
    host, port = args.endpoint
    out_dir = output_service.run_dir(args.out, name='ems')
    return component_main(lambda stop: run_ems(config, host, port, out_dir, stop))
