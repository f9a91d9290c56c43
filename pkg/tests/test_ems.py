from dataclasses import replace

import numpy as np
import pytest

from src.ems.dispatch import HorizonTooLargeError, brute_force_dispatch, dp_dispatch
from src.ems.problem import (
    HorizonBattery,
    HorizonProblem,
    InfeasiblePlanError,
    build_plan,
    check_plan,
    feasible_actions,
    grid_power,
    horizon_cost,
    plan_contributions,
    soc_step,
)
from src.ems.receding_horizon import BatteryReading, RecedingHorizonController, build_problem, plan_log_columns
from src.models.microgrid import BatterySpec
from src.models.profiles import ProfileKind
from src.services.trace_service import TraceWriter


def battery(capacity=1000.0, eta=0.95, p_dispatch=400.0):
    return BatterySpec(capacity=capacity, eta=eta, p_conv_max=1.5 * capacity, p_dispatch=p_dispatch)


def two_hour_problem():
    return HorizonProblem(
        T=2, dt=1.0,
        load=np.array([[500.0], [500.0]]),
        pv=np.zeros((2, 0)),
        price_grid=np.array([0.1, 0.5]),
        price_bess=np.zeros(2),
        batteries=(HorizonBattery(2, battery(eta=1.0), 500.0),),
    )


def random_problem(rng, T, n):
    batteries = []
    for k in range(n):
        capacity = float(rng.choice([1000.0, 2000.0]))
        spec = battery(capacity=capacity, eta=float(rng.uniform(0.85, 1.0)), p_dispatch=0.4 * capacity)
        e0 = float(rng.uniform(spec.e_min, spec.e_max))
        batteries.append(HorizonBattery(k + 2, spec, e0))
    return HorizonProblem(
        T=T, dt=1.0,
        load=rng.uniform(100.0, 1100.0, (T, 4)),
        pv=rng.uniform(0.0, 1450.0, (T, 2)),
        price_grid=rng.uniform(0.02, 0.3, T),
        price_bess=rng.uniform(0.0, 0.05, T),
        batteries=tuple(batteries),
    )


def test_soc_step_quantum():
    spec = battery()
    assert soc_step(550.0, 1, spec, 1.0) == pytest.approx(170.0)
    assert soc_step(550.0, -1, spec, 1.0) == pytest.approx(930.0)
    assert soc_step(550.0, 0, spec, 1.0) == 550.0


@pytest.mark.parametrize('e, expected', [(950.0, (0, 1)), (150.0, (0, -1)), (550.0, (0, -1, 1))])
def test_feasible_actions(e, expected):
    assert feasible_actions(e, battery(), 1.0) == expected


def test_two_hour_example():
    problem = two_hour_problem()
    plan = dp_dispatch(problem)
    assert plan.d[:, 0].tolist() == [-1, 1]
    assert plan.cost == pytest.approx(0.14)
    assert plan.p_g.tolist() == pytest.approx([900.0, 100.0])
    assert plan.e[:, 0].tolist() == pytest.approx([500.0, 900.0, 500.0])


def test_grid_power_import_positive():
    problem = two_hour_problem()
    assert grid_power(problem, 0, [1]) == pytest.approx(100.0)
    with pytest.raises(IndexError):
        grid_power(problem, 2, [0])


def test_infeasible_plan_rejected():
    problem = two_hour_problem()
    plan = build_plan(problem, np.array([[1], [1]]))
    with pytest.raises(InfeasiblePlanError):
        horizon_cost(problem, plan)
    with pytest.raises(InfeasiblePlanError):
        check_plan(problem, build_plan(problem, np.array([[2], [0]])))


def test_idle_preferred_on_ties():
    problem = HorizonProblem(T=3, dt=1.0, load=np.full((3, 1), 300.0), pv=np.zeros((3, 0)),
                             price_grid=np.zeros(3), price_bess=np.zeros(3),
                             batteries=(HorizonBattery(2, battery(), 500.0),))
    plan = dp_dispatch(problem)
    assert plan.d.tolist() == [[0], [0], [0]]


def test_contributions_sum_to_cost():
    rng = np.random.default_rng(3)
    problem = random_problem(rng, 6, 4)
    plan = dp_dispatch(problem)
    baseline, parts = plan_contributions(problem, plan)
    assert baseline + sum(parts) == pytest.approx(plan.cost)
    assert len(parts) == 4


def test_dp_matches_brute_force():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        problem = random_problem(rng, T=int(rng.integers(2, 9)), n=int(rng.integers(1, 5)))
        dp = dp_dispatch(problem)
        oracle = brute_force_dispatch(problem)
        assert dp.cost == pytest.approx(oracle.cost, abs=1e-12)
        assert dp.same_commands(oracle)
        assert horizon_cost(problem, dp) == pytest.approx(dp.cost)


@pytest.mark.parametrize('seed', range(20))
def test_higher_price_never_reduces_discharge(seed):
    rng = np.random.default_rng(seed)
    problem = random_problem(rng, T=6, n=2)
    t = int(rng.integers(0, 6))
    price_grid = problem.price_grid.copy()
    price_grid[t] += 0.1
    dearer = replace(problem, price_grid=price_grid)
    assert np.all(dp_dispatch(dearer).d[t] >= dp_dispatch(problem).d[t])


@pytest.mark.parametrize('seed', range(20))
def test_dispatch_never_costs_more_than_idle(seed):
    problem = random_problem(np.random.default_rng(seed), T=24, n=4)
    idle = build_plan(problem, np.zeros((24, 4)))
    assert dp_dispatch(problem).cost <= idle.cost + 1e-12


def test_brute_force_horizon_limit():
    problem = random_problem(np.random.default_rng(0), T=13, n=1)
    with pytest.raises(HorizonTooLargeError):
        brute_force_dispatch(problem)


def test_dp_full_day_respects_band():
    problem = random_problem(np.random.default_rng(11), T=24, n=4)
    plan = dp_dispatch(problem)
    check_plan(problem, plan)
    assert plan.d.shape == (24, 4)


def test_invalid_problem():
    problem = HorizonProblem(T=2, dt=1.0, load=np.zeros((3, 1)), pv=np.zeros((2, 0)),
                             price_grid=np.zeros(2), price_bess=np.zeros(2), batteries=())
    with pytest.raises(ValueError):
        dp_dispatch(problem)


def test_build_problem_uses_interval_means(scenario):
    e0 = {bus.bus_id: 0.5 * bus.bess.capacity for bus in scenario.spec.battery_buses}
    problem = build_problem(scenario, scenario.profile_set(), 0.0, e0)
    assert problem.T == 24
    assert problem.load.shape == (24, 4)
    assert problem.pv.shape == (24, 2)
    grid = scenario.profile_set().get(ProfileKind.PRICE_GRID)
    assert problem.price_grid[0] == pytest.approx(grid.mean_over(0.0, 3600.0))
    assert [b.bus_id for b in problem.batteries] == [2, 3, 4, 5]


def test_build_problem_wraps_midnight(scenario):
    profiles = scenario.profile_set()
    e0 = {2: 500.0}
    late = build_problem(scenario, profiles, 23 * 3600.0, e0)
    early = build_problem(scenario, profiles, 0.0, e0)
    assert late.load[1] == pytest.approx(early.load[0])
    assert [b.bus_id for b in late.batteries] == [2]


def fresh_readings(scenario, soc=0.5, sent_ms=0.0):
    return {bus.bus_id: BatteryReading(bus.bus_id, soc, sent_ms) for bus in scenario.spec.battery_buses}


def test_controller_tick(scenario, tmp_path):
    log = TraceWriter(tmp_path / 'plan_log.csv', plan_log_columns([2, 3, 4, 5]))
    controller = RecedingHorizonController(scenario, staleness_limit_ms=300.0, plan_log=log)
    result = controller.tick(0.0, fresh_readings(scenario), now_ms=100.0)
    log.close()

    assert set(result.commands) == {2, 3, 4, 5}
    assert all(d in (-1, 0, 1) for d in result.commands.values())
    assert not result.stale_flag
    assert result.commands == result.plan.first_row()
    rows = (tmp_path / 'plan_log.csv').read_text().splitlines()
    assert rows[0] == 't_sim,d_2,d_3,d_4,d_5,p_g_forecast,cost_forecast,stale_flag'
    assert len(rows) == 2


def test_controller_holds_stale_battery(scenario):
    controller = RecedingHorizonController(scenario, staleness_limit_ms=300.0)
    controller.previous = {2: 1, 3: 0, 4: 0, 5: 0}
    readings = fresh_readings(scenario, sent_ms=1000.0)
    readings[2] = BatteryReading(2, 0.5, 0.0)
    result = controller.tick(0.0, readings, now_ms=1100.0)
    assert result.stale_buses == (2,)
    assert result.commands[2] == 1
    assert controller.stale_ticks == 1


def test_controller_missing_reading_is_stale(scenario):
    controller = RecedingHorizonController(scenario, staleness_limit_ms=300.0)
    result = controller.tick(0.0, {}, now_ms=0.0)
    assert result.stale_buses == (2, 3, 4, 5)
    assert result.commands == {2: 0, 3: 0, 4: 0, 5: 0}


def test_controller_repeat_tick_is_idempotent(scenario):
    controller = RecedingHorizonController(scenario, staleness_limit_ms=300.0)
    readings = fresh_readings(scenario, soc=0.4)
    first = controller.tick(7200.0, readings, now_ms=0.0)
    second = controller.tick(7200.0, readings, now_ms=0.0)
    assert first.commands == second.commands
    assert first.cost_forecast == second.cost_forecast
    e0 = {b: 0.4 * scenario.spec.bus(b).bess.capacity for b in first.commands}
    assert first.commands == dp_dispatch(build_problem(scenario, scenario.profile_set(), 7200.0, e0)).first_row()


@pytest.mark.parametrize('now', [0.0, 6 * 3600.0, 12 * 3600.0, 18 * 3600.0])
def test_empty_battery_never_discharges(scenario, now):
    soc_min = min(bus.bess.soc_min for bus in scenario.spec.battery_buses)
    controller = RecedingHorizonController(scenario, staleness_limit_ms=300.0)
    result = controller.tick(now, fresh_readings(scenario, soc=soc_min), now_ms=0.0)
    assert all(d != 1 for d in result.commands.values())
    assert np.all(result.plan.d[0] != 1)
