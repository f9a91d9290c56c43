"""
Per-traffic-class delay model

A message on a class link waits behind Poisson background traffic of fixed
packet size (an M/D/1 queue), is serialised at the link rate and then
propagates. Measurement messages see the queue but do not load it.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from src.models.scenario import ScenarioConfig, TrafficClass

logger = logging.getLogger(__name__)

LINK_RATES: Dict[TrafficClass, float] = {
    TrafficClass.DS0: 64_000.0,
    TrafficClass.DS1: 1_544_000.0,
    TrafficClass.DS3: 44_736_000.0,
    TrafficClass.E1: 2_048_000.0,
    TrafficClass.E3: 34_368_000.0,
}

CONGESTION_LEVELS = (0.0, 0.25, 0.5, 0.75)

# Measured mean one-way delay (ms) and jitter (us) per class at CONGESTION_LEVELS
REFERENCE_DELAY_MS: Dict[TrafficClass, Tuple[float, ...]] = {
    TrafficClass.DS0: (24.25, 27.91, 35.13, 56.56),
    TrafficClass.DS1: (2.92, 3.077, 3.385, 4.307),
    TrafficClass.DS3: (2.03, 2.037, 2.048, 2.081),
    TrafficClass.E1: (2.69, 2.81, 3.04, 3.73),
    TrafficClass.E3: (2.04, 2.048, 2.059, 2.103),
}
REFERENCE_JITTER_US: Dict[TrafficClass, Tuple[float, ...]] = {
    TrafficClass.DS0: (135.0, 152.0, 401.0, 1770.0),
    TrafficClass.DS1: (1.437, 1.905, 3.693, 8.205),
    TrafficClass.DS3: (0.063, 0.0638, 0.119, 0.228),
    TrafficClass.E1: (1.14, 1.853, 2.6, 5.02),
    TrafficClass.E3: (0.138, 0.101, 0.155, 0.322),
}

# Gap (in units of S/(1-rho)^2) after which the queue is treated as regenerated
RELAXATION_FACTOR = 50.0
BATCH_DRAWS = 4096
READ_REQUEST_BYTES = 12


class ModelError(ValueError):
    """Delay model with congestion >= 1 or a non-positive link rate"""


@dataclass(frozen=True)
class TrafficClassModel:
    traffic_class: TrafficClass
    link_rate: float
    propagation_ms: float = 2.0
    congestion: float = 0.0
    background_packet: int = 178
    seed: int = 0

    @classmethod
    def for_class(cls, traffic_class, congestion: float = 0.0, propagation_ms: float = 2.0,
                  background_packet: int = 178, seed: int = 0) -> "TrafficClassModel":
        traffic_class = TrafficClass(traffic_class)
        return cls(traffic_class=traffic_class, link_rate=LINK_RATES[traffic_class],
                   propagation_ms=propagation_ms, congestion=congestion,
                   background_packet=background_packet, seed=seed)

    @classmethod
    def from_scenario(cls, config: ScenarioConfig, congestion: Optional[float] = None) -> "TrafficClassModel":
        return cls.for_class(config.traffic_class,
                             congestion=config.congestion if congestion is None else congestion,
                             propagation_ms=config.propagation_ms,
                             background_packet=config.background_packet, seed=config.rng_seed)

    def check(self) -> None:
        """
        Raises:
            ModelError: if the queue would be unstable or the link has no capacity
        """
        if self.link_rate <= 0:
            raise ModelError(f"{self.traffic_class.value}: link rate must be > 0, got {self.link_rate}")
        if not 0.0 <= self.congestion < 1.0:
            raise ModelError(f"{self.traffic_class.value}: congestion must be in [0, 1), got {self.congestion}")

    def service_ms(self, n_bytes: float) -> float:
        return 8.0 * n_bytes / self.link_rate * 1000.0

    @property
    def background_service_ms(self) -> float:
        return self.service_ms(self.background_packet)

    @property
    def arrival_rate_per_ms(self) -> float:
        """Background packet arrivals per millisecond"""
        service = self.background_service_ms
        return self.congestion / service if service > 0 else 0.0

    @property
    def relaxation_ms(self) -> float:
        return RELAXATION_FACTOR * self.background_service_ms / (1.0 - self.congestion) ** 2


def serialization_delay(n_bytes: float, model: TrafficClassModel) -> float:
    """Time in ms to clock n_bytes onto the class link"""
    if n_bytes < 0:
        raise ValueError(f"byte count must be >= 0, got {n_bytes}")
    return model.service_ms(n_bytes)


def mean_delay_md1(n_bytes: float, model: TrafficClassModel) -> float:
    """
    Analytic mean one-way delay in ms

    propagation + own serialisation + mean M/D/1 wait behind the background
    traffic; with a background packet of the same size this is
    propagation + S * (1 + rho / (2 (1 - rho))).

    Raises:
        ModelError: if congestion >= 1
    """
    model.check()
    rho = model.congestion
    wait = rho * model.background_service_ms / (2.0 * (1.0 - rho))
    return model.propagation_ms + serialization_delay(n_bytes, model) + wait


def _workload_after(w0: float, arrivals: np.ndarray, span: float, service: float) -> float:
    """Unfinished background work at the end of a span, given sorted arrival offsets in it"""
    k = np.arange(len(arrivals))
    end = w0 + len(arrivals) * service - span
    lowest = min(0.0, end)
    if len(arrivals):
        lowest = min(lowest, float(np.min(w0 + k * service - arrivals)))
    return end - lowest


class DelaySampler:
    """
    Stochastic one-way delays for a stream of messages on one class link

    The background workload is carried from one message to the next, so
    successive delays are correlated the way a real queue makes them.
    Deterministic for a given model seed and call sequence.
    """

    def __init__(self, model: TrafficClassModel, rng: Optional[np.random.Generator] = None):
        model.check()
        self.model = model
        self.rng = rng if rng is not None else np.random.default_rng(model.seed)
        self.workload_ms = 0.0
        self.last_ms: Optional[float] = None
        self.samples = 0

    def _advance(self, span: float, w0: float) -> float:
        model = self.model
        rate = model.arrival_rate_per_ms
        if rate == 0.0:
            return 0.0
        count = self.rng.poisson(rate * span)
        arrivals = np.sort(self.rng.uniform(0.0, span, count))
        return _workload_after(w0, arrivals, span, model.background_service_ms)

    def sample(self, n_bytes: float, at_ms: Optional[float] = None) -> float:
        """
        Delay in ms of a message of n_bytes arriving at at_ms

        Args:
            n_bytes: Size the message is charged as
            at_ms: Arrival time on this stream's clock; None means an
                independent draw (queue regenerated)
        """
        window = self.model.relaxation_ms
        gap = None if at_ms is None or self.last_ms is None else at_ms - self.last_ms
        if gap is None or gap >= window:
            self.workload_ms = self._advance(window, 0.0)
        elif gap > 0:
            self.workload_ms = self._advance(gap, self.workload_ms)
        if at_ms is not None:
            self.last_ms = at_ms

        self.samples += 1
        return self.model.propagation_ms + self.workload_ms + serialization_delay(n_bytes, self.model)

    def sample_many(self, count: int, n_bytes: float) -> np.ndarray:
        """count independent delays (ms) of n_bytes messages"""
        model = self.model
        base = model.propagation_ms + serialization_delay(n_bytes, model)
        if model.arrival_rate_per_ms == 0.0:
            return np.full(count, base)

        window = model.relaxation_ms
        service = model.background_service_ms
        chunks = []
        for start in range(0, count, BATCH_DRAWS):
            draws = min(BATCH_DRAWS, count - start)
            counts = self.rng.poisson(model.arrival_rate_per_ms * window, draws)
            owner = np.repeat(np.arange(draws), counts)
            offsets = self.rng.uniform(0.0, window, len(owner))
            order = np.lexsort((offsets, owner))
            offsets = offsets[order]

            first = np.concatenate(([0], np.cumsum(counts)[:-1]))
            k = np.arange(len(owner)) - first[owner]
            before = k * service - offsets

            lowest = np.full(draws, np.inf)
            busy = counts > 0
            if len(before):
                lowest[busy] = np.minimum.reduceat(before, first[busy])
            end = counts * service - window
            lowest = np.minimum(np.minimum(lowest, end), 0.0)
            chunks.append(base + end - lowest)

        self.samples += count
        return np.concatenate(chunks) if chunks else np.empty(0)


def sample_delay(n_bytes: float, model: TrafficClassModel,
                 rng: Optional[np.random.Generator] = None) -> Tuple[float, np.random.Generator]:
    """One independent delay draw; returns the delay in ms and the advanced generator"""
    rng = rng if rng is not None else np.random.default_rng(model.seed)
    sampler = DelaySampler(model, rng)
    return sampler.sample(n_bytes), sampler.rng


def default_staleness_limit_ms(config: ScenarioConfig) -> float:
    """2 poll periods plus twice the uncongested one-way delay of the configured class"""
    if config.staleness_limit_ms is not None:
        return config.staleness_limit_ms
    model = TrafficClassModel.from_scenario(config, congestion=0.0)
    return 2.0 * config.poll_period + 2.0 * mean_delay_md1(config.wire_bytes or READ_REQUEST_BYTES, model)
