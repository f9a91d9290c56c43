"""
Synthetic profiles: half-sine PV, two-peak loads, constant and derived prices
"""
import logging
from typing import Any, Dict

from src.models.profiles import (
    ProfileError,
    ProfileKind,
    TimeSeriesProfile,
    constant_profile,
    generate_load_profile,
    generate_pv_profile,
)
from .base_source import BaseProfileSource, SourceContext

logger = logging.getLogger(__name__)


class PvGeneratorSource(BaseProfileSource):
    """Half-sine PV day; the rating defaults to the bus's PV rating"""

    def __init__(self):
        super().__init__()
        self.source_names = ['pv']

    def build(self, entry: Dict[str, Any], context: SourceContext) -> TimeSeriesProfile:
        bus_id = self.bus_of(entry)
        if bus_id is None:
            raise ProfileError("pv profile needs a bus_id")
        rating = float(entry.get('rating', context.spec.bus(bus_id).pv_rating))
        profile = generate_pv_profile(
            rating,
            float(entry.get('sunrise', 6.0)),
            float(entry.get('sunset', 18.0)),
            float(entry.get('resolution', 300.0)),
        )
        return profile.model_copy(update={'bus_id': bus_id})


class LoadGeneratorSource(BaseProfileSource):
    """Two-peak load within the bus's rating band, seeded per bus"""

    def __init__(self):
        super().__init__()
        self.source_names = ['load']

    def build(self, entry: Dict[str, Any], context: SourceContext) -> TimeSeriesProfile:
        bus_id = self.bus_of(entry)
        if bus_id is None:
            raise ProfileError("load profile needs a bus_id")
        return generate_load_profile(
            context.spec.bus(bus_id),
            morning_peak=float(entry.get('morning_peak', 8.0)),
            evening_peak=float(entry.get('evening_peak', 19.0)),
            seed=int(entry.get('seed', context.seed + bus_id)),
            resolution=float(entry.get('resolution', 300.0)),
            jitter=float(entry.get('jitter', 0.03)),
        )


class ConstantSource(BaseProfileSource):
    """Flat profile, either a fixed `value` or a fraction of the mean grid price"""

    def __init__(self):
        super().__init__()
        self.source_names = ['constant']

    def build(self, entry: Dict[str, Any], context: SourceContext) -> TimeSeriesProfile:
        kind = self.kind_of(entry)
        if 'value' in entry:
            return constant_profile(kind, float(entry['value']), self.bus_of(entry))

        fraction = float(self.require(entry, 'fraction_of_grid_mean'))
        grid = context.find_built(ProfileKind.PRICE_GRID)
        if grid is None:
            raise ProfileError("fraction_of_grid_mean needs a price_grid profile listed before it")
        mean_price = grid.mean_over(0.0, 86400.0)
        logger.debug(f"{kind.value} = {fraction} x mean grid price {mean_price:.5f}")
        return constant_profile(kind, fraction * mean_price, self.bus_of(entry))


class InlineSource(BaseProfileSource):
    """Samples written directly in the scenario file"""

    def __init__(self):
        super().__init__()
        self.source_names = ['inline']

    def build(self, entry: Dict[str, Any], context: SourceContext) -> TimeSeriesProfile:
        samples = self.require(entry, 'samples')
        try:
            pairs = tuple((float(t), float(v)) for t, v in samples)
        except (TypeError, ValueError):
            raise ProfileError("inline samples must be [time_s, value] pairs")
        return TimeSeriesProfile(kind=self.kind_of(entry), bus_id=self.bus_of(entry), samples=pairs)
