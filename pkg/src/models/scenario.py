"""
Scenario configuration: the single input to a reproducible run
"""
import hashlib
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from src.config import Config
from src.models.microgrid import MicrogridSpec, UnknownBusError
from src.models.profiles import ProfileError, ProfileKind, ProfileSet, TimeSeriesProfile

logger = logging.getLogger(__name__)

BUNDLED_SCENARIO = 'reference_scenario.toml'
MAX_SEED = 2 ** 63


class ScenarioError(ValueError):
    """Scenario file cannot be read or does not describe a valid scenario"""


class TrafficClass(str, Enum):
    DS0 = 'DS0'
    DS1 = 'DS1'
    DS3 = 'DS3'
    E1 = 'E1'
    E3 = 'E3'


class ClockMode(str, Enum):
    VIRTUAL = 'virtual'
    REALTIME = 'realtime'


class ControllerGains(BaseModel):
    """PI gains of the converter current loops and the slack voltage loop"""

    model_config = ConfigDict(frozen=True)

    current_kp: float = 6.0
    current_ki: float = 1800.0
    voltage_kp: float = 8.0
    voltage_ki: float = 2400.0
    settle_tol_w: float = 0.2
    settle_tol_a: float = 1e-3
    settle_tol_v: float = 0.01


class ScenarioConfig(BaseModel):
    """Everything a run depends on: plant, profiles, timing, network, seeds"""

    model_config = ConfigDict(frozen=True)

    spec: MicrogridSpec
    profiles: Tuple[TimeSeriesProfile, ...]

    # EMS timing
    horizon_hours: int = 24
    dt_dispatch: float = 1.0
    reopt_period: float = 5.0
    poll_period: float = 100.0

    # Network
    traffic_class: TrafficClass = TrafficClass.DS3
    congestion: float = 0.0
    wire_bytes: int = 178
    propagation_ms: float = 2.0
    background_packet: int = 178

    rng_seed: int = 0
    time_scale: float = 600.0
    initial_soc: Dict[int, float] = Field(default_factory=dict)
    clock_mode: ClockMode = ClockMode.VIRTUAL
    duration_hours: float = 24.0

    # Plant integration
    dt_sim: float = 1e-4
    plant_step: float = 1.0
    settle_window: float = 0.05
    quasi_static_w: float = 5.0
    trace_period: float = 60.0
    controller: ControllerGains = Field(default_factory=ControllerGains)

    # Modbus master
    request_timeout_ms: float = Field(default_factory=lambda: Config.REQUEST_TIMEOUT_MS)
    request_retries: int = Field(default_factory=lambda: Config.REQUEST_RETRIES)
    staleness_limit_ms: Optional[float] = None
    read_count: int = 6

    def soc0(self, bus_id: int) -> float:
        return self.initial_soc.get(bus_id, 0.5)

    def profile_set(self) -> ProfileSet:
        return ProfileSet(self.profiles)

    @property
    def duration_s(self) -> float:
        return self.duration_hours * 3600.0

    @property
    def reopt_period_s(self) -> float:
        return self.reopt_period * 60.0

    def sim_seconds(self, wall_ms: float) -> float:
        """Simulated seconds that elapse during a span of wall-clock milliseconds"""
        return wall_ms / 1000.0 * self.time_scale

    def wall_ms(self, sim_s: float) -> float:
        return sim_s / self.time_scale * 1000.0

    def with_overrides(self, **overrides) -> "ScenarioConfig":
        """Copy with some fields replaced, coerced the same way a file would be"""
        data = self.model_dump()
        data.update({key: value for key, value in overrides.items() if value is not None})
        return ScenarioConfig.model_validate(data)


def validate_scenario(config: ScenarioConfig) -> List[str]:
    """
    Check every invariant of a scenario

    Args:
        config: Scenario to check

    Returns:
        Human-readable violations; empty when the scenario is valid
    """
    problems = list(config.spec.violations())
    bus_ids = set(config.spec.bus_ids)

    # Profiles
    seen = set()
    for profile in config.profiles:
        problems.extend(profile.violations())
        key = (profile.kind, profile.bus_id)
        if key in seen:
            problems.append(f"duplicate {profile.kind.value} profile for bus {profile.bus_id}")
        seen.add(key)
        if profile.kind.is_power and profile.bus_id not in bus_ids:
            problems.append(f"{profile.kind.value} profile references unknown bus {profile.bus_id}")

    if (ProfileKind.PRICE_GRID, None) not in seen:
        problems.append("scenario needs a price_grid profile")
    for bus in config.spec.buses:
        if (ProfileKind.LOAD, bus.bus_id) not in seen:
            problems.append(f"bus {bus.bus_id} has no load profile")
        if bus.has_pv and (ProfileKind.PV, bus.bus_id) not in seen:
            problems.append(f"bus {bus.bus_id} has a PV unit but no pv profile")

    # Timing
    if config.horizon_hours < 1:
        problems.append("horizon_hours must be >= 1")
    if config.dt_dispatch <= 0:
        problems.append("dt_dispatch must be > 0")
    if config.reopt_period <= 0:
        problems.append("reopt_period must be > 0")
    if config.poll_period <= 0:
        problems.append("poll_period must be > 0")
    if config.time_scale < 1:
        problems.append("time_scale must be >= 1")
    if config.duration_hours <= 0:
        problems.append("duration_hours must be > 0")

    # Network
    if not 0 <= config.congestion < 1:
        problems.append("congestion must be >= 0 and < 1" if config.congestion < 0 else "congestion must be < 1")
    if config.wire_bytes < 0 or config.background_packet <= 0 or config.propagation_ms < 0:
        problems.append("wire_bytes and propagation_ms must be >= 0, background_packet > 0")
    if not 0 <= config.rng_seed < MAX_SEED:
        problems.append(f"rng_seed must be in [0, 2^63), got {config.rng_seed}")

    # Plant integration
    if not 0 < config.dt_sim <= 1e-3:
        problems.append(f"dt_sim must be in (0, 1 ms], got {config.dt_sim}")
    if config.plant_step < config.dt_sim:
        problems.append("plant_step must be at least dt_sim")
    if config.settle_window <= 0:
        problems.append("settle_window must be > 0")
    if config.quasi_static_w <= 0:
        problems.append("quasi_static_w must be > 0")
    if config.trace_period < config.plant_step:
        problems.append("trace_period must be at least plant_step")

    # Master
    if config.request_timeout_ms <= 0 or config.request_retries < 0:
        problems.append("request_timeout_ms must be > 0 and request_retries >= 0")
    if config.staleness_limit_ms is not None and config.staleness_limit_ms <= 0:
        problems.append("staleness_limit_ms must be > 0")
    if not 1 <= config.read_count <= 12:
        problems.append("read_count must be in 1..12")

    # Initial state of charge
    for bus_id, soc in sorted(config.initial_soc.items()):
        try:
            bus = config.spec.bus(bus_id)
        except UnknownBusError:
            problems.append(f"initial_soc given for unknown bus {bus_id}")
            continue
        if bus.bess is None:
            problems.append(f"initial_soc given for bus {bus_id}, which has no battery")
            continue
    for bus in config.spec.battery_buses:
        soc = config.soc0(bus.bus_id)
        if not bus.bess.soc_min <= soc <= bus.bess.soc_max:
            problems.append(
                f"bus {bus.bus_id}: initial_soc {soc:.2f} outside [{bus.bess.soc_min}, {bus.bess.soc_max}]"
            )

    return problems


def _read_toml(path: Path) -> Dict[str, Any]:
    try:
        with open(path, 'rb') as file:
            return tomllib.load(file)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}")
    except tomllib.TOMLDecodeError as e:
        raise ScenarioError(f"{path}: {e}")


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    """Read a TOML scenario file, resolving profile sources into samples"""
    from src.profiles.base_source import SourceContext
    from src.profiles.source_factory import source_factory

    path = Path(path)
    data = _read_toml(path)

    try:
        spec = MicrogridSpec.model_validate(data.get('spec', {}))
    except ValidationError as e:
        raise ScenarioError(f"{path}: invalid [spec]: {e}")

    context = SourceContext(path.parent, spec, seed=int(data.get('rng_seed', 0)),
                            search_dirs=[Path(Config.DATA_DIR)])
    try:
        data['profiles'] = source_factory.build_all(data.get('profiles', []), context)
    except (ProfileError, UnknownBusError) as e:
        raise ScenarioError(f"{path}: {e}")

    try:
        config = ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ScenarioError(f"{path}: {e}")

    logger.info(f"Loaded scenario {path} ({len(config.profiles)} profiles, class {config.traffic_class.value})")
    return config


def save_scenario(config: ScenarioConfig, path: Union[str, Path]) -> None:
    """Write a scenario file; profiles are written with inline samples"""
    data = config.model_dump(mode='json', exclude_none=True)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as file:
        tomli_w.dump(data, file)
    logger.debug(f"Saved scenario to {path}")


def bundled_scenario_path() -> Path:
    return Path(Config.DATA_DIR) / BUNDLED_SCENARIO


def default_scenario(**overrides) -> ScenarioConfig:
    """The bundled reference scenario, optionally with fields replaced"""
    config = load_scenario(bundled_scenario_path())
    return config.with_overrides(**overrides) if overrides else config


def scenario_fingerprint(config: ScenarioConfig) -> str:
    """Hash of everything except the network settings, so runs can be compared"""
    network_fields = {'traffic_class', 'congestion', 'wire_bytes', 'propagation_ms',
                      'background_packet', 'clock_mode', 'staleness_limit_ms'}
    data = config.model_dump(mode='json', exclude=network_fields)
    encoded = json.dumps(data, sort_keys=True).encode('utf-8')
    return hashlib.sha256(encoded).hexdigest()[:16]
