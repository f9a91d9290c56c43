"""
Static description of the DC microgrid plant
"""
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict

# Modbus unit id 1 is the PCC; prosumer buses use their own id as unit id
PCC_UNIT_ID = 1
PROSUMER_BUS_COUNT = 4


class UnknownBusError(KeyError):
    """Raised when a bus id is not part of the microgrid"""


class BatterySpec(BaseModel):
    """Battery energy storage unit behind a bidirectional converter

    Energies are in Wh, powers in W. p_conv_max is the physical converter
    limit (1.5C), p_dispatch the hourly quantum the dispatcher moves per
    charge/discharge command.
    """

    model_config = ConfigDict(frozen=True)

    capacity: float
    soc_min: float = 0.15
    soc_max: float = 0.95
    eta: float = 0.95
    p_conv_max: float
    p_dispatch: float
    l_conv: float = 5e-3
    v_terminal: float = 200.0

    @classmethod
    def from_capacity(cls, capacity: float, **overrides) -> "BatterySpec":
        """Battery with the default 1.5C converter limit and 0.4C dispatch quantum"""
        values = {
            'capacity': capacity,
            'p_conv_max': 1.5 * capacity,
            'p_dispatch': 0.4 * capacity,
        }
        values.update(overrides)
        return cls(**values)

    @property
    def e_min(self) -> float:
        return self.soc_min * self.capacity

    @property
    def e_max(self) -> float:
        return self.soc_max * self.capacity

    def violations(self, where: str) -> List[str]:
        problems = []
        if self.capacity <= 0:
            problems.append(f"{where}: battery capacity must be > 0")
        if not 0 <= self.soc_min < self.soc_max <= 1:
            problems.append(f"{where}: need 0 <= soc_min < soc_max <= 1, got [{self.soc_min}, {self.soc_max}]")
        if not 0 < self.eta <= 1:
            problems.append(f"{where}: eta must be in (0, 1], got {self.eta}")
        if not 0 < self.p_dispatch <= self.p_conv_max:
            problems.append(
                f"{where}: need 0 < p_dispatch <= p_conv_max, got {self.p_dispatch} / {self.p_conv_max}"
            )
        if self.l_conv <= 0 or self.v_terminal <= 0:
            problems.append(f"{where}: converter inductance and terminal voltage must be > 0")
        return problems


class FeederSpec(BaseModel):
    """Line between a prosumer bus and the common DC bus"""

    model_config = ConfigDict(frozen=True)

    r: float
    l: float


class BusSpec(BaseModel):
    """One prosumer bus: optional PV, optional battery, one variable load"""

    model_config = ConfigDict(frozen=True)

    bus_id: int
    pv_rating: float = 0.0
    bess: Optional[BatterySpec] = None
    load_max: float
    load_min: float
    feeder_index: int
    pv_voltage: float = 200.0
    pv_inductance: float = 5e-3

    @property
    def has_pv(self) -> bool:
        return self.pv_rating > 0

    def violations(self, feeder_count: int) -> List[str]:
        where = f"bus {self.bus_id}"
        problems = []
        if self.pv_rating < 0:
            problems.append(f"{where}: pv_rating must be >= 0")
        if self.load_min < 0 or self.load_max <= 0:
            problems.append(f"{where}: load ratings must be positive")
        if self.load_min > self.load_max:
            problems.append(f"{where}: load_min {self.load_min} exceeds load_max {self.load_max}")
        if not 0 <= self.feeder_index < feeder_count:
            problems.append(f"{where}: feeder_index {self.feeder_index} does not name a feeder")
        if self.pv_voltage <= 0 or self.pv_inductance <= 0:
            problems.append(f"{where}: PV source voltage and inductance must be > 0")
        if self.bess is not None:
            problems.extend(self.bess.violations(where))
        return problems


class MicrogridSpec(BaseModel):
    """Bus layout, converter ratings and feeders of the microgrid"""

    model_config = ConfigDict(frozen=True)

    buses: Tuple[BusSpec, ...]
    v_nominal: float = 400.0
    c_dc: float = 4.7e-3
    feeders: Tuple[FeederSpec, ...]
    grid_current_max: float = 50.0

    def bus(self, bus_id: int) -> BusSpec:
        for bus in self.buses:
            if bus.bus_id == bus_id:
                return bus
        raise UnknownBusError(f"bus {bus_id} is not part of the microgrid")

    @property
    def bus_ids(self) -> List[int]:
        return [bus.bus_id for bus in self.buses]

    @property
    def battery_buses(self) -> List[BusSpec]:
        return [bus for bus in self.buses if bus.bess is not None]

    @property
    def pv_buses(self) -> List[BusSpec]:
        return [bus for bus in self.buses if bus.has_pv]

    def feeder_for(self, bus: BusSpec) -> FeederSpec:
        return self.feeders[bus.feeder_index]

    def without_batteries(self) -> "MicrogridSpec":
        buses = tuple(bus.model_copy(update={'bess': None}) for bus in self.buses)
        return self.model_copy(update={'buses': buses})

    def violations(self) -> List[str]:
        problems = []
        if len(self.buses) != PROSUMER_BUS_COUNT:
            problems.append(f"microgrid must have exactly {PROSUMER_BUS_COUNT} prosumer buses, got {len(self.buses)}")

        ids = self.bus_ids
        if len(set(ids)) != len(ids):
            problems.append(f"bus ids must be unique, got {ids}")
        for bus_id in ids:
            if bus_id == PCC_UNIT_ID or not 1 < bus_id < 248:
                problems.append(f"bus id {bus_id} must be a Modbus unit id in 2..247")

        if self.v_nominal <= 0:
            problems.append("v_nominal must be > 0")
        if self.c_dc <= 0:
            problems.append("c_dc must be > 0")
        if self.grid_current_max <= 0:
            problems.append("grid_current_max must be > 0")

        for index, feeder in enumerate(self.feeders):
            if feeder.r <= 0 or feeder.l <= 0:
                problems.append(f"feeder f{index + 1}: r and l must be > 0")

        for bus in self.buses:
            problems.extend(bus.violations(len(self.feeders)))
        return problems


def reference_testbed() -> MicrogridSpec:
    """The four-bus microgrid of the reference testbed (two PV units, four batteries)"""
    feeders = (
        FeederSpec(r=1.257, l=0.031),
        FeederSpec(r=1.150, l=0.030),
        FeederSpec(r=0.868, l=0.028),
        FeederSpec(r=0.469, l=0.035),
    )
    buses = (
        BusSpec(bus_id=2, pv_rating=1450.0, bess=BatterySpec.from_capacity(1000.0),
                load_max=160.0, load_min=130.0, feeder_index=0),
        BusSpec(bus_id=3, bess=BatterySpec.from_capacity(2000.0),
                load_max=720.0, load_min=240.0, feeder_index=1),
        BusSpec(bus_id=4, pv_rating=450.0, bess=BatterySpec.from_capacity(1000.0),
                load_max=700.0, load_min=110.0, feeder_index=2),
        BusSpec(bus_id=5, bess=BatterySpec.from_capacity(2000.0),
                load_max=1100.0, load_min=210.0, feeder_index=3),
    )
    return MicrogridSpec(buses=buses, feeders=feeders)
