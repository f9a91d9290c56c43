"""
Averaged converter and DC-bus dynamics with PI current and voltage loops

State vector layout (n_p PV units, n_b batteries):

    [v_dc | i_p (n_p) | z_p (n_p) | i_b (n_b) | z_b (n_b) | z_g | e (n_b)]

i_b is battery-side current, positive when discharging. z_* are PI
integrator states, e is stored energy in Wh.
"""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from src.models.microgrid import MicrogridSpec
from src.models.scenario import ControllerGains

logger = logging.getLogger(__name__)

# Guards the duty computation against division by a collapsed bus
V_FLOOR = 1.0


class EquilibriumError(ValueError):
    """Steady state does not exist for the given inputs (slack limit exceeded)"""


@dataclass(frozen=True, eq=False)
class PlantInputs:
    """Inputs held constant over an integration interval"""

    pv_ref: np.ndarray      # W per PV unit
    bess_ref: np.ndarray    # W per battery, discharge positive
    load_g: np.ndarray      # S per bus
    connected: np.ndarray   # bool per bus


class PlantModel:
    """Parameters and vector layout of one microgrid"""

    def __init__(self, spec: MicrogridSpec, gains: ControllerGains):
        self.spec = spec
        self.gains = gains

        self.bus_ids: List[int] = spec.bus_ids
        self.pv_bus_ids: List[int] = [bus.bus_id for bus in spec.pv_buses]
        self.bess_bus_ids: List[int] = [bus.bus_id for bus in spec.battery_buses]
        self.n_p = len(self.pv_bus_ids)
        self.n_b = len(self.bess_bus_ids)

        position = {bus_id: k for k, bus_id in enumerate(self.bus_ids)}
        self.pv_pos = np.array([position[b] for b in self.pv_bus_ids], dtype=int)
        self.bess_pos = np.array([position[b] for b in self.bess_bus_ids], dtype=int)

        pv_buses = spec.pv_buses
        batteries = [bus.bess for bus in spec.battery_buses]
        self.v_pv = np.array([bus.pv_voltage for bus in pv_buses], dtype=float)
        self.l_p = np.array([bus.pv_inductance for bus in pv_buses], dtype=float)
        self.v_b = np.array([b.v_terminal for b in batteries], dtype=float)
        self.l_b = np.array([b.l_conv for b in batteries], dtype=float)
        self.eta = np.array([b.eta for b in batteries], dtype=float)
        self.capacity = np.array([b.capacity for b in batteries], dtype=float)
        self.e_min = np.array([b.e_min for b in batteries], dtype=float)
        self.e_max = np.array([b.e_max for b in batteries], dtype=float)
        self.p_conv_max = np.array([b.p_conv_max for b in batteries], dtype=float)
        self.r_feeder = np.array([spec.feeder_for(bus).r for bus in spec.buses], dtype=float)

        n_p, n_b = self.n_p, self.n_b
        self.i_p = slice(1, 1 + n_p)
        self.z_p = slice(1 + n_p, 1 + 2 * n_p)
        self.i_b = slice(1 + 2 * n_p, 1 + 2 * n_p + n_b)
        self.z_b = slice(1 + 2 * n_p + n_b, 1 + 2 * n_p + 2 * n_b)
        self.z_g = 1 + 2 * n_p + 2 * n_b
        self.e = slice(self.z_g + 1, self.z_g + 1 + n_b)
        self.size = self.z_g + 1 + n_b

    def state_names(self) -> List[str]:
        """Human-readable name of every vector entry, for diagnostics"""
        names = ['v_dc']
        names += [f"i_p[bus {b}]" for b in self.pv_bus_ids]
        names += [f"z_p[bus {b}]" for b in self.pv_bus_ids]
        names += [f"i_b[bus {b}]" for b in self.bess_bus_ids]
        names += [f"z_b[bus {b}]" for b in self.bess_bus_ids]
        names += ['z_g']
        names += [f"e[bus {b}]" for b in self.bess_bus_ids]
        return names

    def initial_vector(self, v_dc: float, e0: np.ndarray) -> np.ndarray:
        x = np.zeros(self.size)
        x[0] = v_dc
        x[self.e] = e0
        return x

    # Controllers

    def pv_duty(self, x: np.ndarray, inputs: PlantInputs) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Duty ratios of the PV converters, unclamped and clamped, plus current error"""
        v = max(x[0], V_FLOOR)
        error = inputs.pv_ref / self.v_pv - x[self.i_p]
        u = self.gains.current_kp * error + self.gains.current_ki * x[self.z_p]
        raw = (self.v_pv - u) / v
        return raw, np.clip(raw, 0.0, 1.0), error

    def bess_duty(self, x: np.ndarray, inputs: PlantInputs) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        v = max(x[0], V_FLOOR)
        error = inputs.bess_ref / self.v_b - x[self.i_b]
        u = self.gains.current_kp * error + self.gains.current_ki * x[self.z_b]
        raw = (self.v_b - u) / v
        return raw, np.clip(raw, -1.0, 1.0), error

    def slack_current(self, x: np.ndarray) -> Tuple[float, float, float]:
        """Grid current (clamped), its unclamped value and the voltage error"""
        error = self.spec.v_nominal - x[0]
        raw = self.gains.voltage_kp * error + self.gains.voltage_ki * x[self.z_g]
        limit = self.spec.grid_current_max
        return min(max(raw, -limit), limit), raw, error

    # Dynamics

    def derivative(self, x: np.ndarray, inputs: PlantInputs) -> np.ndarray:
        dx = np.empty_like(x)
        v = x[0]
        i_p, i_b = x[self.i_p], x[self.i_b]

        raw_p, d_p, err_p = self.pv_duty(x, inputs)
        raw_b, d_b, err_b = self.bess_duty(x, inputs)
        i_g, raw_g, err_g = self.slack_current(x)

        dx[self.i_p] = (self.v_pv - d_p * v) / self.l_p
        dx[self.i_b] = (self.v_b - d_b * v) / self.l_b

        # conditional integration: freeze an integrator while its output is
        # clamped and the error would drive it further into the clamp
        wind_p = ((raw_p < 0.0) & (err_p > 0.0)) | ((raw_p > 1.0) & (err_p < 0.0))
        wind_b = ((raw_b < -1.0) & (err_b > 0.0)) | ((raw_b > 1.0) & (err_b < 0.0))
        dx[self.z_p] = np.where(wind_p, 0.0, err_p)
        dx[self.z_b] = np.where(wind_b, 0.0, err_b)
        limit = self.spec.grid_current_max
        dx[self.z_g] = 0.0 if (raw_g > limit and err_g > 0) or (raw_g < -limit and err_g < 0) else err_g

        injected = (np.sum(d_p * i_p * inputs.connected[self.pv_pos])
                    + np.sum(d_b * i_b * inputs.connected[self.bess_pos]))
        drawn = np.sum(inputs.load_g) * v
        dx[0] = (injected - drawn + i_g) / self.spec.c_dc

        dx[self.e] = -self.eta * self.v_b * i_b / 3600.0
        return dx

    def rk4_step(self, x: np.ndarray, inputs: PlantInputs, dt: float) -> np.ndarray:
        k1 = self.derivative(x, inputs)
        k2 = self.derivative(x + 0.5 * dt * k1, inputs)
        k3 = self.derivative(x + 0.5 * dt * k2, inputs)
        k4 = self.derivative(x + dt * k3, inputs)
        return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    # Steady state

    def grid_current_at_rest(self, inputs: PlantInputs) -> float:
        """Slack current that balances the bus at nominal voltage"""
        v = self.spec.v_nominal
        drawn = np.sum(inputs.load_g) * v * v
        injected = (np.sum(inputs.pv_ref * inputs.connected[self.pv_pos])
                    + np.sum(inputs.bess_ref * inputs.connected[self.bess_pos]))
        return float((drawn - injected) / v)

    def equilibrium_vector(self, x: np.ndarray, inputs: PlantInputs) -> np.ndarray:
        """
        Steady state for the given inputs, keeping the stored energies of x

        Raises:
            EquilibriumError: if the slack branch cannot carry the imbalance
        """
        i_g = self.grid_current_at_rest(inputs)
        if abs(i_g) > self.spec.grid_current_max:
            raise EquilibriumError(
                f"grid current {i_g:.1f} A exceeds the slack limit of {self.spec.grid_current_max:.1f} A"
            )
        eq = np.zeros(self.size)
        eq[0] = self.spec.v_nominal
        eq[self.i_p] = inputs.pv_ref / self.v_pv
        eq[self.i_b] = inputs.bess_ref / self.v_b
        eq[self.z_g] = i_g / self.gains.voltage_ki
        eq[self.e] = x[self.e]
        return eq

    def settled(self, x: np.ndarray, eq: np.ndarray) -> bool:
        """Whether x is within the settle tolerances of the steady state eq"""
        gains = self.gains
        if abs(x[0] - eq[0]) > gains.settle_tol_v:
            return False
        if np.any(np.abs(x[self.i_p] - eq[self.i_p]) > gains.settle_tol_a):
            return False
        if np.any(np.abs(x[self.i_b] - eq[self.i_b]) > gains.settle_tol_a):
            return False
        p_now = x[0] * self.slack_current(x)[0]
        p_eq = eq[0] * eq[self.z_g] * gains.voltage_ki
        return abs(p_now - p_eq) <= gains.settle_tol_w

    def power_deviation(self, x: np.ndarray, eq: np.ndarray) -> float:
        """Largest converter or PCC power difference between x and eq, in W"""
        deviations = [abs(x[0] * self.slack_current(x)[0] - eq[0] * eq[self.z_g] * self.gains.voltage_ki)]
        if self.n_p:
            deviations.append(float(np.max(np.abs(self.v_pv * (x[self.i_p] - eq[self.i_p])))))
        if self.n_b:
            deviations.append(float(np.max(np.abs(self.v_b * (x[self.i_b] - eq[self.i_b])))))
        return max(deviations)

    def branch_currents(self, x: np.ndarray, inputs: PlantInputs) -> np.ndarray:
        """Current drawn from the common bus through each feeder, per bus"""
        v = x[0]
        _, d_p, _ = self.pv_duty(x, inputs)
        _, d_b, _ = self.bess_duty(x, inputs)
        current = inputs.load_g * v
        np.subtract.at(current, self.pv_pos, d_p * x[self.i_p])
        np.subtract.at(current, self.bess_pos, d_b * x[self.i_b])
        return np.where(inputs.connected, current, 0.0)
