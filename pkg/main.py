"""
Main entry point for the microgrid co-simulation
"""
import argparse
import logging
import sys

from src.config import Config
from src.handlers.command_handlers import (
    EXIT_USAGE,
    handle_calibrate,
    handle_compare,
    handle_ems,
    handle_plant,
    handle_proxy,
    handle_run,
    parse_endpoint,
)
from src.models.scenario import ClockMode, TrafficClass, bundled_scenario_path

# Configure logging
logging.basicConfig(
    format=Config.LOG_FORMAT,
    level=logging.DEBUG if Config.DEBUG else Config.LOG_LEVEL
)
logger = logging.getLogger(__name__)

CLASSES = [c.value for c in TrafficClass]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='main.py', description="DC microgrid co-simulation over a delayed Modbus link")
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help="run a scenario and write traces and metrics")
    run.add_argument('scenario', nargs='?', default=str(bundled_scenario_path()))
    run.add_argument('--mode', choices=[m.value for m in ClockMode])
    run.add_argument('--class', dest='traffic_class', choices=CLASSES)
    run.add_argument('--congestion', type=float)
    run.add_argument('--seed', type=int)
    run.add_argument('--out')
    run.add_argument('--time-scale', dest='time_scale', type=float)
    run.add_argument('--trace-period', dest='trace_period', type=float)
    run.add_argument('--hours', type=float, help="simulate only the first hours of the day")
    run.set_defaults(handler=handle_run)

    calibrate = commands.add_parser('calibrate', help="sweep the link model over every class and congestion level")
    calibrate.add_argument('--out')
    calibrate.add_argument('--messages', type=int, default=10_000)
    calibrate.add_argument('--seed', type=int, default=0)
    calibrate.set_defaults(handler=handle_calibrate)

    compare = commands.add_parser('compare', help="compare the metrics of two runs")
    compare.add_argument('a')
    compare.add_argument('b')
    compare.set_defaults(handler=handle_compare)

    plant = commands.add_parser('plant', help="plant process serving its registers as a Modbus slave")
    plant.add_argument('scenario')
    plant.add_argument('--host', default=Config.MODBUS_HOST)
    plant.add_argument('--port', type=int, default=Config.SLAVE_PORT)
    plant.add_argument('--out')
    plant.set_defaults(handler=handle_plant)

    proxy = commands.add_parser('proxy', help="delaying proxy between the EMS and the plant")
    proxy.add_argument('--listen', type=parse_endpoint, required=True)
    proxy.add_argument('--target', type=parse_endpoint, required=True)
    proxy.add_argument('--class', dest='traffic_class', choices=CLASSES, required=True)
    proxy.add_argument('--congestion', type=float, required=True)
    proxy.add_argument('--seed', type=int, required=True)
    proxy.add_argument('--stats-csv', dest='stats_csv')
    proxy.add_argument('--wire-bytes', dest='wire_bytes', type=int, default=0)
    proxy.add_argument('--propagation-ms', dest='propagation_ms', type=float, default=2.0)
    proxy.add_argument('--background-packet', dest='background_packet', type=int, default=178)
    proxy.set_defaults(handler=handle_proxy)

    ems = commands.add_parser('ems', help="EMS process polling the plant and re-optimising")
    ems.add_argument('scenario')
    ems.add_argument('--endpoint', type=parse_endpoint, required=True)
    ems.add_argument('--out')
    ems.set_defaults(handler=handle_ems)

    return parser


def main(argv=None) -> int:
    """Parse the command line and dispatch to its handler"""
    try:
        # Validate configuration
        Config.validate()
    except ValueError as e:
        logger.error(f"Configuration error: {e}")
        print(f"Configuration error: {e}")
        print("Check the values in your .env file (see .env.example)")
        return EXIT_USAGE

    args = build_parser().parse_args(argv)
    logger.debug(f"Command {args.command}: {vars(args)}")
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
