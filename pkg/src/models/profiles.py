"""
Daily time-series profiles for PV, load and price data
"""
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

logger = logging.getLogger(__name__)

DAY_S = 86400.0


class ProfileError(ValueError):
    """Invalid profile data; `line` is set when the problem comes from a file"""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ProfileKind(str, Enum):
    PV = 'pv'
    LOAD = 'load'
    PRICE_GRID = 'price_grid'
    PRICE_BESS = 'price_bess'

    @property
    def is_power(self) -> bool:
        return self in (ProfileKind.PV, ProfileKind.LOAD)


class TimeSeriesProfile(BaseModel):
    """Samples of one quantity over a day: (seconds-of-day, value) pairs

    Power profiles are linearly interpolated, price profiles are held
    constant until the next sample. Both wrap around midnight.
    """

    model_config = ConfigDict(frozen=True)

    kind: ProfileKind
    bus_id: Optional[int] = None
    samples: Tuple[Tuple[float, float], ...]

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples], dtype=float)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.samples], dtype=float)

    @property
    def holds_steps(self) -> bool:
        return not self.kind.is_power

    def violations(self) -> List[str]:
        where = self.kind.value if self.bus_id is None else f"{self.kind.value} profile of bus {self.bus_id}"
        if not self.samples:
            return [f"{where}: profile has no samples"]

        problems = []
        times = self.times
        if np.any(np.diff(times) <= 0):
            problems.append(f"{where}: sample times must be strictly increasing")
        if times[0] != 0.0 or times[-1] >= DAY_S:
            problems.append(f"{where}: samples must cover [0, 86400) starting at t=0")
        if self.kind.is_power and np.any(self.values < 0):
            problems.append(f"{where}: power values must be >= 0")
        if not np.all(np.isfinite(self.values)):
            problems.append(f"{where}: values must be finite")
        return problems

    def table(self) -> "ProfileTable":
        return ProfileTable(self.times, self.values, self.holds_steps)

    def value_at(self, t: float) -> float:
        """Profile value at an arbitrary time (seconds, wrapped to the day)"""
        return self.table().value_at(t)

    def integral_to(self, t: float) -> float:
        """Integral of the profile from 0 to t seconds (value-seconds)"""
        return self.table().integral_to(t)

    def mean_over(self, t0: float, t1: float) -> float:
        """Mean value over [t0, t1)"""
        return self.table().mean_over(t0, t1)

    def trapezoid_integral(self) -> float:
        """Trapezoidal integral of the samples themselves, in value-hours"""
        return float(np.trapezoid(self.values, self.times)) / 3600.0


class ProfileTable:
    """Evaluation arrays of one profile, built once and reused"""

    def __init__(self, times: np.ndarray, values: np.ndarray, holds_steps: bool):
        if len(times) == 0:
            raise ProfileError("profile has no samples")
        self.times = times
        self.values = values
        self.holds_steps = holds_steps

        # breakpoints over one day and cumulative integral at each of them
        self._ext_t = np.append(times, DAY_S)
        if holds_steps:
            self._ext_v = np.append(values, values[-1])
            areas = values * np.diff(self._ext_t)
        else:
            self._ext_v = np.append(values, values[0])
            areas = 0.5 * (self._ext_v[:-1] + self._ext_v[1:]) * np.diff(self._ext_t)
        self._cumulative = np.concatenate(([0.0], np.cumsum(areas)))

        # linear interpolation wraps from the last sample back to the first
        self._wrap_t = np.append(times, times[0] + DAY_S)
        self._wrap_v = np.append(values, values[0])

    def value_at(self, t: float) -> float:
        tau = t % DAY_S
        if self.holds_steps:
            index = int(np.searchsorted(self.times, tau, side='right')) - 1
            return float(self.values[max(index, 0)])
        if tau < self.times[0]:
            tau += DAY_S
        return float(np.interp(tau, self._wrap_t, self._wrap_v))

    def integral_to(self, t: float) -> float:
        ext_t, ext_v = self._ext_t, self._ext_v
        days, tau = divmod(t, DAY_S)
        index = int(np.searchsorted(ext_t, tau, side='right')) - 1
        index = min(max(index, 0), len(ext_t) - 2)
        dt = tau - ext_t[index]
        if self.holds_steps:
            partial = ext_v[index] * dt
        else:
            span = ext_t[index + 1] - ext_t[index]
            v_tau = ext_v[index] + (ext_v[index + 1] - ext_v[index]) * dt / span
            partial = 0.5 * (ext_v[index] + v_tau) * dt
        return float(days * self._cumulative[-1] + self._cumulative[index] + partial)

    def mean_over(self, t0: float, t1: float) -> float:
        if t1 <= t0:
            return self.value_at(t0)
        return (self.integral_to(t1) - self.integral_to(t0)) / (t1 - t0)


class ProfileSet:
    """Lookup of a scenario's profiles by kind and bus"""

    def __init__(self, profiles: Iterable[TimeSeriesProfile]):
        self._profiles: Dict[Tuple[ProfileKind, Optional[int]], TimeSeriesProfile] = {}
        self._tables: Dict[Tuple[ProfileKind, Optional[int]], ProfileTable] = {}
        for profile in profiles:
            key = (profile.kind, profile.bus_id)
            self._profiles[key] = profile
            self._tables[key] = profile.table()

    def get(self, kind: ProfileKind, bus_id: Optional[int] = None) -> Optional[TimeSeriesProfile]:
        return self._profiles.get((kind, bus_id))

    def value(self, kind: ProfileKind, bus_id: Optional[int], t: float) -> float:
        """Value at t; a missing profile reads as zero"""
        table = self._tables.get((kind, bus_id))
        return table.value_at(t) if table is not None else 0.0

    def mean(self, kind: ProfileKind, bus_id: Optional[int], t0: float, t1: float) -> float:
        """Mean over [t0, t1); a missing profile reads as zero"""
        table = self._tables.get((kind, bus_id))
        return table.mean_over(t0, t1) if table is not None else 0.0


def _day_grid(resolution: float, extra_hours: Iterable[float]) -> np.ndarray:
    if resolution <= 0:
        raise ProfileError(f"resolution must be > 0 seconds, got {resolution}")
    grid = np.arange(0.0, DAY_S, resolution)
    extra = [h * 3600.0 for h in extra_hours if 0.0 <= h * 3600.0 < DAY_S]
    return np.unique(np.concatenate((grid, np.array(extra, dtype=float))))


def generate_pv_profile(rating: float, sunrise: float, sunset: float, resolution: float = 300.0) -> TimeSeriesProfile:
    """
    Half-sine PV output between sunrise and sunset, zero at night

    Args:
        rating: Peak output in watts, reached at the midpoint of the day
        sunrise: Hour of sunrise
        sunset: Hour of sunset
        resolution: Sample spacing in seconds

    Returns:
        PV profile (bus_id left unset; the caller attaches it to a bus)
    """
    if not 0 <= sunrise < sunset <= 24:
        raise ProfileError(f"need 0 <= sunrise < sunset <= 24, got {sunrise}..{sunset}")
    if rating < 0:
        raise ProfileError(f"PV rating must be >= 0, got {rating}")

    midpoint = 0.5 * (sunrise + sunset)
    times = _day_grid(resolution, (sunrise, midpoint, sunset))
    hours = times / 3600.0
    daylight = (hours >= sunrise) & (hours <= sunset)
    values = np.where(daylight, rating * np.sin(math.pi * (hours - sunrise) / (sunset - sunrise)), 0.0)
    values = np.clip(values, 0.0, rating)
    values[np.isclose(hours, midpoint)] = rating
    return TimeSeriesProfile(kind=ProfileKind.PV, samples=tuple(zip(times.tolist(), values.tolist())))


def generate_load_profile(bus, morning_peak: float = 8.0, evening_peak: float = 19.0, seed: int = 0,
                          resolution: float = 300.0, jitter: float = 0.03,
                          peak_width: float = 2.0) -> TimeSeriesProfile:
    """
    Two-peak daily load between the bus's minimum and maximum rating

    The profile reaches load_max exactly at both peak hours. Seeded jitter
    (a fraction of the band) is faded out towards the peaks so no other
    sample reaches the maximum.
    """
    if bus.load_min > bus.load_max:
        raise ProfileError(f"bus {bus.bus_id}: load_min exceeds load_max")

    times = _day_grid(resolution, (morning_peak, evening_peak))
    hours = times / 3600.0
    band = bus.load_max - bus.load_min

    def bump(peak: float) -> np.ndarray:
        distance = np.abs(hours - peak)
        distance = np.minimum(distance, 24.0 - distance)
        return np.exp(-0.5 * (distance / peak_width) ** 2)

    shape = np.maximum(bump(morning_peak), bump(evening_peak))
    rng = np.random.default_rng(seed)
    noise = np.clip(rng.standard_normal(len(times)), -1.0, 1.0)
    level = shape + jitter * (1.0 - shape) * noise

    values = np.clip(bus.load_min + band * level, bus.load_min, bus.load_max)
    at_peak = np.isclose(hours, morning_peak) | np.isclose(hours, evening_peak)
    values[at_peak] = bus.load_max
    return TimeSeriesProfile(kind=ProfileKind.LOAD, bus_id=bus.bus_id,
                             samples=tuple(zip(times.tolist(), values.tolist())))


def load_profile_csv(path: Union[str, Path], kind: Union[ProfileKind, str],
                     bus_id: Optional[int] = None) -> TimeSeriesProfile:
    """
    Read a two-column `time_s,value` CSV (header optional) into a profile

    Raises:
        ProfileError: on parse errors, non-monotone time or negative power,
            with the offending line number
    """
    kind = ProfileKind(kind)
    path = Path(path)
    if not path.exists():
        raise ProfileError(f"profile file not found: {path}")

    try:
        frame = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=False,
                            skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise ProfileError(f"{path}: file is empty")
    except pd.errors.ParserError as e:
        raise ProfileError(f"{path}: {e}")

    if frame.shape[1] != 2:
        raise ProfileError(f"{path}: expected 2 columns (time_s,value), found {frame.shape[1]}", line=1)

    samples: List[Tuple[float, float]] = []
    previous_t = None
    for index, (raw_t, raw_v) in enumerate(frame.itertuples(index=False, name=None)):
        line = index + 1
        if pd.isna(raw_t) and pd.isna(raw_v):
            continue
        try:
            t = float(raw_t)
            v = float(raw_v)
        except (TypeError, ValueError):
            if index == 0 and not samples:
                continue  # header
            raise ProfileError(f"{path}: cannot parse {raw_t!r},{raw_v!r} as numbers", line=line)

        if not (math.isfinite(t) and math.isfinite(v)):
            raise ProfileError(f"{path}: non-finite value", line=line)
        if not 0 <= t < DAY_S:
            raise ProfileError(f"{path}: time {t} outside [0, 86400)", line=line)
        if previous_t is not None and t <= previous_t:
            raise ProfileError(f"{path}: time {t} does not increase (previous {previous_t})", line=line)
        if kind.is_power and v < 0:
            raise ProfileError(f"{path}: negative {kind.value} value {v}", line=line)
        samples.append((t, v))
        previous_t = t

    if not samples:
        raise ProfileError(f"{path}: no samples")

    logger.debug(f"Loaded {len(samples)} {kind.value} samples from {path}")
    return TimeSeriesProfile(kind=kind, bus_id=bus_id, samples=tuple(samples))


def constant_profile(kind: ProfileKind, value: float, bus_id: Optional[int] = None) -> TimeSeriesProfile:
    return TimeSeriesProfile(kind=kind, bus_id=bus_id, samples=((0.0, float(value)),))
