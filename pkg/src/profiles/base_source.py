"""
Base class for all profile sources of a scenario file
"""
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional
import logging

from src.models.microgrid import MicrogridSpec
from src.models.profiles import ProfileError, ProfileKind, TimeSeriesProfile

logger = logging.getLogger(__name__)


class SourceContext:
    """What a source may need besides its own table: paths, the plant, earlier profiles"""

    def __init__(self, base_dir: Path, spec: MicrogridSpec, seed: int = 0,
                 search_dirs: Optional[List[Path]] = None):
        self.base_dir = Path(base_dir)
        self.spec = spec
        self.seed = seed
        self.search_dirs = [Path(d) for d in (search_dirs or [])]
        self.built: List[TimeSeriesProfile] = []

    def resolve_path(self, name: str) -> Path:
        """Find a referenced file next to the scenario first, then in the data dirs"""
        candidate = Path(name)
        if candidate.is_absolute():
            return candidate
        for directory in [self.base_dir, *self.search_dirs]:
            path = directory / candidate
            if path.exists():
                return path
        return self.base_dir / candidate

    def find_built(self, kind: ProfileKind, bus_id: Optional[int] = None) -> Optional[TimeSeriesProfile]:
        for profile in self.built:
            if profile.kind == kind and profile.bus_id == bus_id:
                return profile
        return None


class BaseProfileSource(ABC):
    """Abstract base class for all profile sources"""

    def __init__(self):
        self.source_names: List[str] = []

    @abstractmethod
    def build(self, entry: Dict[str, Any], context: SourceContext) -> TimeSeriesProfile:
        """
        Turn one `[[profiles]]` table into a profile

        Args:
            entry: The table as parsed from the scenario file
            context: Scenario-wide information (paths, plant, earlier profiles)

        Returns:
            The resolved profile with inline samples
        """
        pass

    def is_supported(self, source: str) -> bool:
        """Check if this source handles the given source name"""
        return source.lower() in self.source_names

    @staticmethod
    def kind_of(entry: Dict[str, Any]) -> ProfileKind:
        try:
            return ProfileKind(entry['kind'])
        except KeyError:
            raise ProfileError("profile table is missing 'kind'")
        except ValueError:
            raise ProfileError(f"unknown profile kind {entry.get('kind')!r}")

    @staticmethod
    def bus_of(entry: Dict[str, Any]) -> Optional[int]:
        bus_id = entry.get('bus_id')
        return int(bus_id) if bus_id is not None else None

    @staticmethod
    def require(entry: Dict[str, Any], key: str) -> Any:
        if key not in entry:
            raise ProfileError(f"profile source {entry.get('source', 'inline')!r} needs '{key}'")
        return entry[key]
