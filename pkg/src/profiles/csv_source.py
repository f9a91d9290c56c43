"""
CSV-backed profiles (bundled price day, measured loads)
"""
import logging
from typing import Any, Dict

from src.models.profiles import TimeSeriesProfile, load_profile_csv
from .base_source import BaseProfileSource, SourceContext

logger = logging.getLogger(__name__)


class CsvProfileSource(BaseProfileSource):
    """Reads `time_s,value` files referenced by `path`"""

    def __init__(self):
        super().__init__()
        self.source_names = ['csv']

    def build(self, entry: Dict[str, Any], context: SourceContext) -> TimeSeriesProfile:
        path = context.resolve_path(self.require(entry, 'path'))
        profile = load_profile_csv(path, self.kind_of(entry), self.bus_of(entry))
        logger.info(f"Loaded {profile.kind.value} profile from {path} ({len(profile.samples)} samples)")
        return profile
