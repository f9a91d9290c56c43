"""
Source factory to resolve the profile tables of a scenario file
"""
import logging
from typing import Any, Dict, List, Optional

from src.models.profiles import ProfileError, TimeSeriesProfile
from .base_source import BaseProfileSource, SourceContext
from .csv_source import CsvProfileSource
from .generator_source import ConstantSource, InlineSource, LoadGeneratorSource, PvGeneratorSource

logger = logging.getLogger(__name__)


class ProfileSourceFactory:
    """Factory class to pick the source that understands a profile table"""

    def __init__(self):
        self._sources: List[BaseProfileSource] = [
            InlineSource(),
            CsvProfileSource(),
            PvGeneratorSource(),
            LoadGeneratorSource(),
            ConstantSource(),
        ]

    def get_source(self, name: str) -> Optional[BaseProfileSource]:
        """
        Get the source for a `source = "..."` value

        Args:
            name: Source name; tables with inline samples have none

        Returns:
            Source instance or None if not supported
        """
        name = name.strip()
        for source in self._sources:
            if source.is_supported(name):
                return source
        return None

    def get_supported_sources(self) -> list:
        return [name for source in self._sources for name in source.source_names]

    def build_all(self, entries: List[Dict[str, Any]], context: SourceContext) -> List[TimeSeriesProfile]:
        """Resolve every table in file order; later tables may refer to earlier profiles"""
        profiles = []
        for index, entry in enumerate(entries):
            name = entry.get('source', 'inline' if 'samples' in entry else '')
            source = self.get_source(name)
            if source is None:
                raise ProfileError(
                    f"profile #{index + 1}: unknown source {name!r}, "
                    f"expected one of {', '.join(self.get_supported_sources())}"
                )
            profile = source.build(entry, context)
            context.built.append(profile)
            profiles.append(profile)
        return profiles


# Global instance
source_factory = ProfileSourceFactory()
