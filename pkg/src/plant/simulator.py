"""
Plant simulator operations: initialise, step, advance, command and measure
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.models.microgrid import MicrogridSpec, UnknownBusError
from src.models.profiles import ProfileKind, ProfileSet
from src.models.scenario import ControllerGains, ScenarioConfig, ScenarioError, validate_scenario
from src.services.telemetry import telemetry
from .dynamics import EquilibriumError, PlantInputs, PlantModel

logger = logging.getLogger(__name__)

MAX_DT_SIM = 1e-3
SETTLE_CHECK_EVERY = 10
SOC_EPS = 1e-9

PerUnit = Union[Mapping[int, float], Sequence[float]]


class PlantDivergenceError(RuntimeError):
    """Integration produced a non-finite or collapsed state"""

    def __init__(self, variable: str, value: float, t_sim: float):
        super().__init__(f"plant diverged at t={t_sim:.6f} s: {variable} = {value}")
        self.variable = variable


@dataclass(frozen=True)
class ConverterCommand:
    """Setpoints applied at a step boundary

    bess_setpoints are in W, discharge positive. pv_curtailment scales the
    PV profile (1.0 = no curtailment). breakers maps a bus to whether its
    feeder breaker is closed; buses not listed keep their current state.
    """

    bess_setpoints: Dict[int, float] = field(default_factory=dict)
    pv_curtailment: Dict[int, float] = field(default_factory=dict)
    breakers: Dict[int, bool] = field(default_factory=dict)
    saturated: Tuple[int, ...] = ()

    def violations(self, spec: MicrogridSpec) -> list:
        problems = []
        for bus_id, setpoint in self.bess_setpoints.items():
            bess = spec.bus(bus_id).bess
            if bess is None:
                problems.append(f"bus {bus_id} has no battery")
            elif abs(setpoint) > bess.p_conv_max:
                problems.append(f"bus {bus_id}: |setpoint| {abs(setpoint):.0f} W exceeds {bess.p_conv_max:.0f} W")
        for bus_id, factor in self.pv_curtailment.items():
            if not 0.0 <= factor <= 1.0:
                problems.append(f"bus {bus_id}: curtailment factor {factor} outside [0, 1]")
        return problems


@dataclass(frozen=True)
class MeasurementSnapshot:
    """What the plant exposes to the outside world at one instant"""

    t_sim: float
    v_dc: float
    v_bus: Dict[int, float]
    p_pv: Dict[int, float]
    p_load: Dict[int, float]
    p_bess: Dict[int, float]
    soc: Dict[int, float]
    e: Dict[int, float]
    p_pcc: float
    breakers: Dict[int, bool] = field(default_factory=dict)
    seq: int = 0

    def balance_residual(self) -> float:
        """p_pcc minus what the power balance says it should be"""
        expected = sum(self.p_load.values()) - sum(self.p_pv.values()) - sum(self.p_bess.values())
        return self.p_pcc - expected

    def total_load(self) -> float:
        return sum(self.p_load.values())


@dataclass(frozen=True, eq=False)
class PlantState:
    """Continuous state of the plant plus what was last applied to it"""

    model: PlantModel
    x: np.ndarray
    t_sim: float
    breaker: np.ndarray
    inputs: PlantInputs
    d_p: np.ndarray
    d_b: np.ndarray
    i_branch: np.ndarray
    steps: int = 0

    @property
    def v_dc(self) -> float:
        return float(self.x[0])

    @property
    def i_p(self) -> np.ndarray:
        return self.x[self.model.i_p]

    @property
    def i_b(self) -> np.ndarray:
        return self.x[self.model.i_b]

    @property
    def e(self) -> np.ndarray:
        return self.x[self.model.e]

    @property
    def integrators(self) -> Dict[str, np.ndarray]:
        model = self.model
        return {'z_p': self.x[model.z_p], 'z_b': self.x[model.z_b], 'z_g': self.x[model.z_g:model.z_g + 1]}

    def energy(self, bus_id: int) -> float:
        return float(self.e[self.model.bess_bus_ids.index(bus_id)])

    def soc(self, bus_id: int) -> float:
        k = self.model.bess_bus_ids.index(bus_id)
        return float(self.e[k] / self.model.capacity[k])

    def breaker_closed(self, bus_id: int) -> bool:
        return bool(self.breaker[self.model.bus_ids.index(bus_id)])


def _with_vector(state: PlantState, x: np.ndarray, t_sim: float, inputs: PlantInputs,
                 breaker: np.ndarray, steps: int) -> PlantState:
    model = state.model
    _, d_p, _ = model.pv_duty(x, inputs)
    _, d_b, _ = model.bess_duty(x, inputs)
    return replace(state, x=x, t_sim=t_sim, inputs=inputs, breaker=breaker,
                   d_p=d_p, d_b=d_b, i_branch=model.branch_currents(x, inputs), steps=steps)


def _check_finite(model: PlantModel, x: np.ndarray, t_sim: float) -> None:
    bad = np.flatnonzero(~np.isfinite(x))
    if bad.size:
        index = int(bad[0])
        raise PlantDivergenceError(model.state_names()[index], float(x[index]), t_sim)
    if x[0] <= 0.0:
        raise PlantDivergenceError('v_dc', float(x[0]), t_sim)


def init_plant(config: ScenarioConfig) -> PlantState:
    """
    Plant at rest: nominal bus voltage, zero inductor currents and integrators

    Raises:
        ScenarioError: if the scenario has violations
    """
    problems = validate_scenario(config)
    if problems:
        raise ScenarioError("invalid scenario: " + "; ".join(problems))

    model = PlantModel(config.spec, config.controller)
    e0 = np.array([config.soc0(b) * model.capacity[k] for k, b in enumerate(model.bess_bus_ids)], dtype=float)
    x = model.initial_vector(config.spec.v_nominal, e0)
    breaker = np.ones(len(model.bus_ids), dtype=bool)
    inputs = plant_inputs(model, ConverterCommand(), config.profile_set(), 0.0, breaker)

    state = PlantState(model=model, x=x, t_sim=0.0, breaker=breaker, inputs=inputs,
                       d_p=np.zeros(model.n_p), d_b=np.zeros(model.n_b),
                       i_branch=np.zeros(len(model.bus_ids)))
    _, d_p, _ = model.pv_duty(x, inputs)
    _, d_b, _ = model.bess_duty(x, inputs)
    logger.info(f"Plant initialised: {model.n_p} PV units, {model.n_b} batteries, e0={e0.tolist()} Wh")
    return replace(state, d_p=d_p, d_b=d_b)


def _breakers_after(model: PlantModel, breaker: np.ndarray, command: ConverterCommand) -> np.ndarray:
    if not command.breakers:
        return breaker
    updated = breaker.copy()
    for bus_id, closed in command.breakers.items():
        try:
            updated[model.bus_ids.index(bus_id)] = bool(closed)
        except ValueError:
            raise UnknownBusError(f"bus {bus_id} is not part of the microgrid")
    return updated


def plant_inputs(model: PlantModel, command: ConverterCommand, profiles: ProfileSet, t: float,
                 breaker: np.ndarray) -> PlantInputs:
    """Converter references and load conductances at time t"""
    v_nom = model.spec.v_nominal
    pv_ref = np.array([
        profiles.value(ProfileKind.PV, b, t) * command.pv_curtailment.get(b, 1.0) for b in model.pv_bus_ids
    ], dtype=float)
    bess_ref = np.array([command.bess_setpoints.get(b, 0.0) for b in model.bess_bus_ids], dtype=float)
    bess_ref = np.clip(bess_ref, -model.p_conv_max, model.p_conv_max)
    load_g = np.array([profiles.value(ProfileKind.LOAD, b, t) for b in model.bus_ids], dtype=float) / (v_nom * v_nom)

    connected = breaker.astype(bool)
    return PlantInputs(
        pv_ref=np.where(connected[model.pv_pos], pv_ref, 0.0),
        bess_ref=np.where(connected[model.bess_pos], bess_ref, 0.0),
        load_g=np.where(connected, load_g, 0.0),
        connected=connected,
    )


def step_plant(state: PlantState, command: ConverterCommand, profiles: ProfileSet, dt_sim: float) -> PlantState:
    """
    Advance every ODE state by one RK4 step

    Args:
        state: Current plant state
        command: Setpoints and breaker positions to apply
        profiles: PV and load profiles evaluated at the start of the step
        dt_sim: Step size in seconds, at most 1 ms

    Returns:
        The state dt_sim seconds later
    """
    if not 0.0 < dt_sim <= MAX_DT_SIM:
        raise ValueError(f"dt_sim must be in (0, {MAX_DT_SIM}] s, got {dt_sim}")

    model = state.model
    breaker = _breakers_after(model, state.breaker, command)
    inputs = plant_inputs(model, command, profiles, state.t_sim, breaker)
    x = model.rk4_step(state.x, inputs, dt_sim)
    t_next = state.t_sim + dt_sim
    _check_finite(model, x, t_next)
    return _with_vector(state, x, t_next, inputs, breaker, state.steps + 1)


def _guard_soc(model: PlantModel, x: np.ndarray, inputs: PlantInputs, duration: float) -> PlantInputs:
    """Zero any battery setpoint that would cross a SoC bound within duration"""
    projected = x[model.e] - model.eta * inputs.bess_ref * duration / 3600.0
    crossing = ((inputs.bess_ref > 0) & (projected < model.e_min - SOC_EPS)) | \
               ((inputs.bess_ref < 0) & (projected > model.e_max + SOC_EPS))
    if not np.any(crossing):
        return inputs
    for k in np.flatnonzero(crossing):
        telemetry.flag('soc_guard', f"bus {model.bess_bus_ids[k]} setpoint {inputs.bess_ref[k]:.0f} W zeroed")
    return replace(inputs, bess_ref=np.where(crossing, 0.0, inputs.bess_ref))


def advance_plant(state: PlantState, command: ConverterCommand, profiles: ProfileSet, duration: float,
                  dt_sim: float = 1e-4, settle_window: float = 0.05,
                  quasi_static_w: float = 5.0) -> PlantState:
    """
    Multi-rate macro step over `duration` seconds with inputs held constant

    When the new inputs move the steady state by more than quasi_static_w,
    RK4 runs until the bus has settled (at most settle_window). The rest of
    the step is advanced quasi-statically: the state sits on the steady
    state and stored energy is integrated analytically. Without a steady
    state (slack saturated) the whole step is integrated.
    """
    model = state.model
    breaker = _breakers_after(model, state.breaker, command)
    inputs = _guard_soc(model, state.x, plant_inputs(model, command, profiles, state.t_sim, breaker), duration)

    t0 = state.t_sim
    x = state.x
    steps = state.steps

    try:
        eq = model.equilibrium_vector(x, inputs)
    except EquilibriumError as e:
        telemetry.flag('slack_saturated', str(e))
        eq = None

    needs_transient = eq is None or abs(x[0] - eq[0]) > 1.0 or model.power_deviation(x, eq) > quasi_static_w
    elapsed_steps = 0
    if needs_transient:
        max_steps = int(round(duration / dt_sim)) if eq is None else \
            int(round(min(settle_window, duration) / dt_sim))
        while elapsed_steps < max_steps:
            x = model.rk4_step(x, inputs, dt_sim)
            elapsed_steps += 1
            if elapsed_steps % SETTLE_CHECK_EVERY == 0:
                _check_finite(model, x, t0 + elapsed_steps * dt_sim)
                if eq is not None:
                    eq = model.equilibrium_vector(x, inputs)
                    if model.settled(x, eq):
                        break
        _check_finite(model, x, t0 + elapsed_steps * dt_sim)
        steps += elapsed_steps

    remaining = duration - elapsed_steps * dt_sim
    if eq is not None and remaining > 0:
        eq = model.equilibrium_vector(x, inputs)
        e = eq[model.e] - model.eta * inputs.bess_ref * remaining / 3600.0
        x = eq.copy()
        x[model.e] = e

    return _with_vector(state, x, t0 + duration, inputs, breaker, steps)


def apply_commands(state: PlantState, raw: Iterable[Tuple[int, int]], lookahead_s: float = 300.0,
                   base: Optional[ConverterCommand] = None) -> ConverterCommand:
    """
    Turn dispatcher integers into battery setpoints

    Args:
        state: Current plant state (for the SoC check)
        raw: (bus_id, d) pairs with d in {-1, 0, +1}
        lookahead_s: Horizon over which a setpoint must keep SoC in bounds
        base: Command whose other fields (curtailment, breakers, other buses) carry over

    Returns:
        Command with setpoint d * p_dispatch, or 0 where that would leave the SoC band
    """
    model = state.model
    base = base or ConverterCommand()
    setpoints = dict(base.bess_setpoints)
    saturated = []

    for bus_id, d in raw:
        d = int(d)
        if d not in (-1, 0, 1):
            raise ValueError(f"bus {bus_id}: command {d} is not one of -1, 0, +1")
        bess = model.spec.bus(bus_id).bess
        if bess is None:
            raise UnknownBusError(f"bus {bus_id} has no battery")

        setpoint = d * bess.p_dispatch
        if setpoint != 0.0:
            projected = state.energy(bus_id) - bess.eta * setpoint * lookahead_s / 3600.0
            if projected < bess.e_min - SOC_EPS or projected > bess.e_max + SOC_EPS:
                telemetry.flag('command_saturated', f"bus {bus_id} d={d} at soc {state.soc(bus_id):.4f}")
                saturated.append(bus_id)
                setpoint = 0.0
        setpoints[bus_id] = setpoint

    return ConverterCommand(bess_setpoints=setpoints, pv_curtailment=dict(base.pv_curtailment),
                            breakers=dict(base.breakers), saturated=tuple(saturated))


def read_snapshot(state: PlantState, seq: int = 0) -> MeasurementSnapshot:
    """Measurements of the current state; bus voltages include the feeder drop"""
    model = state.model
    x, inputs = state.x, state.inputs
    v = float(x[0])
    i_g, _, _ = model.slack_current(x)

    p_pv = state.d_p * x[model.i_p] * v * inputs.connected[model.pv_pos]
    p_bess = state.d_b * x[model.i_b] * v * inputs.connected[model.bess_pos]
    p_load = inputs.load_g * v * v
    v_bus = np.where(state.breaker, v - model.r_feeder * state.i_branch, 0.0)
    e = x[model.e]

    return MeasurementSnapshot(
        t_sim=state.t_sim,
        v_dc=v,
        v_bus={b: float(v_bus[k]) for k, b in enumerate(model.bus_ids)},
        p_pv={b: float(p_pv[k]) for k, b in enumerate(model.pv_bus_ids)},
        p_load={b: float(p_load[k]) for k, b in enumerate(model.bus_ids)},
        p_bess={b: float(p_bess[k]) for k, b in enumerate(model.bess_bus_ids)},
        soc={b: float(e[k] / model.capacity[k]) for k, b in enumerate(model.bess_bus_ids)},
        e={b: float(e[k]) for k, b in enumerate(model.bess_bus_ids)},
        p_pcc=v * i_g,
        breakers={b: bool(state.breaker[k]) for k, b in enumerate(model.bus_ids)},
        seq=seq,
    )


def _per_unit(values: Optional[PerUnit], bus_ids: Sequence[int], what: str) -> Dict[int, float]:
    if values is None:
        return {}
    if isinstance(values, Mapping):
        unknown = set(values) - set(bus_ids)
        if unknown:
            raise UnknownBusError(f"{what} given for unknown bus {sorted(unknown)}")
        return {int(b): float(v) for b, v in values.items()}
    values = list(values)
    if len(values) != len(bus_ids):
        raise ValueError(f"expected {len(bus_ids)} {what} values, got {len(values)}")
    return {b: float(v) for b, v in zip(bus_ids, values)}


def solve_equilibrium(spec: MicrogridSpec, pv: Optional[PerUnit], load: Optional[PerUnit],
                      bess_setpoints: Optional[PerUnit] = None,
                      gains: Optional[ControllerGains] = None) -> MeasurementSnapshot:
    """
    Algebraic steady state with all breakers closed

    Args:
        spec: Microgrid description
        pv: W per PV unit (sequence in bus order, or mapping by bus id)
        load: W per bus
        bess_setpoints: W per battery, discharge positive

    Raises:
        EquilibriumError: if the slack branch cannot balance the bus
    """
    model = PlantModel(spec, gains or ControllerGains())
    pv_w = _per_unit(pv, model.pv_bus_ids, 'pv')
    load_w = _per_unit(load, model.bus_ids, 'load')
    bess_w = _per_unit(bess_setpoints, model.bess_bus_ids, 'bess')

    v_nom = spec.v_nominal
    inputs = PlantInputs(
        pv_ref=np.array([pv_w.get(b, 0.0) for b in model.pv_bus_ids], dtype=float),
        bess_ref=np.array([bess_w.get(b, 0.0) for b in model.bess_bus_ids], dtype=float),
        load_g=np.array([load_w.get(b, 0.0) for b in model.bus_ids], dtype=float) / (v_nom * v_nom),
        connected=np.ones(len(model.bus_ids), dtype=bool),
    )
    eq = model.equilibrium_vector(model.initial_vector(v_nom, np.zeros(model.n_b)), inputs)
    breaker = np.ones(len(model.bus_ids), dtype=bool)
    _, d_p, _ = model.pv_duty(eq, inputs)
    _, d_b, _ = model.bess_duty(eq, inputs)
    state = PlantState(model=model, x=eq, t_sim=0.0, breaker=breaker, inputs=inputs, d_p=d_p, d_b=d_b,
                       i_branch=model.branch_currents(eq, inputs))
    return read_snapshot(state)
