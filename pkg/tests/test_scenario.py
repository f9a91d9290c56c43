import pytest

from src.models.profiles import ProfileKind
from src.models.scenario import (
    ClockMode,
    ScenarioError,
    TrafficClass,
    bundled_scenario_path,
    load_scenario,
    save_scenario,
    scenario_fingerprint,
    validate_scenario,
)


def test_bundled_scenario_is_valid(scenario):
    assert validate_scenario(scenario) == []
    assert scenario.traffic_class is TrafficClass.DS3
    assert scenario.clock_mode is ClockMode.VIRTUAL
    assert scenario.soc0(2) == 0.5


def test_bundled_profiles_resolved(scenario):
    profiles = scenario.profile_set()
    assert profiles.get(ProfileKind.PRICE_GRID) is not None
    assert profiles.value(ProfileKind.PV, 2, 12 * 3600) == pytest.approx(1450.0)
    grid_mean = profiles.get(ProfileKind.PRICE_GRID).mean_over(0.0, 86400.0)
    assert profiles.value(ProfileKind.PRICE_BESS, None, 0.0) == pytest.approx(0.2 * grid_mean)


def test_congestion_must_stay_below_one(scenario):
    problems = validate_scenario(scenario.with_overrides(congestion=1.0))
    assert "congestion must be < 1" in problems


def test_initial_soc_outside_band(scenario):
    config = scenario.with_overrides(initial_soc={2: 0.10})
    assert "bus 2: initial_soc 0.10 outside [0.15, 0.95]" in validate_scenario(config)


def test_dt_sim_above_one_millisecond(scenario):
    problems = validate_scenario(scenario.with_overrides(dt_sim=2e-3))
    assert any(p.startswith('dt_sim') for p in problems)


def test_missing_load_profile(scenario):
    profiles = tuple(p for p in scenario.profiles if not (p.kind is ProfileKind.LOAD and p.bus_id == 3))
    config = scenario.model_copy(update={'profiles': profiles})
    assert "bus 3 has no load profile" in validate_scenario(config)


def test_overrides_are_coerced(scenario):
    config = scenario.with_overrides(traffic_class='DS0', clock_mode='realtime', congestion=None)
    assert config.traffic_class is TrafficClass.DS0
    assert config.clock_mode is ClockMode.REALTIME
    assert config.congestion == scenario.congestion


def test_save_and_load_keep_the_scenario(scenario, tmp_path):
    config = scenario.with_overrides(traffic_class='E1', congestion=0.25, rng_seed=42, initial_soc={3: 0.7})
    path = tmp_path / 'scenario.toml'
    save_scenario(config, path)
    loaded = load_scenario(path)
    assert loaded == config
    assert scenario_fingerprint(loaded) == scenario_fingerprint(config)


def test_fingerprint_ignores_network_only(scenario):
    base = scenario_fingerprint(scenario)
    assert scenario_fingerprint(scenario.with_overrides(traffic_class='DS0', congestion=0.75)) == base
    assert scenario_fingerprint(scenario.with_overrides(rng_seed=9)) != base


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / 'absent.toml')


def test_unknown_profile_source(tmp_path):
    text = tmp_path / "bad.toml"
    body = bundled_scenario_path().read_text() + '\n[[profiles]]\nkind = "load"\nbus_id = 2\nsource = "weather"\n'
    text.write_text(body)
    with pytest.raises(ScenarioError, match='unknown source'):
        load_scenario(text)


def test_time_conversions(scenario):
    assert scenario.sim_seconds(100.0) == pytest.approx(60.0)
    assert scenario.wall_ms(3600.0) == pytest.approx(6000.0)
    assert scenario.reopt_period_s == 300.0
