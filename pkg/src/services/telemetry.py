"""
Telemetry flags shared by the plant, the Modbus link and the proxy
"""
import logging
import threading
from collections import Counter
from typing import Dict, List, Optional, Tuple

logger = logging.getLogger(__name__)


class Telemetry:
    """Thread-safe named event counter that logs every flag it raises"""

    def __init__(self, name: str = "telemetry", keep_events: int = 1000):
        self.name = name
        self._counts: Counter = Counter()
        self._events: List[Tuple[str, str]] = []
        self._keep_events = keep_events
        self._lock = threading.Lock()

    def flag(self, event: str, detail: str = "") -> None:
        """Record a telemetry event and log it as a warning"""
        with self._lock:
            self._counts[event] += 1
            if len(self._events) < self._keep_events:
                self._events.append((event, detail))
        logger.warning(f"[{self.name}] {event}{': ' + detail if detail else ''}")

    def count(self, event: Optional[str] = None) -> int:
        """Count of one event, or of all events when no name is given"""
        with self._lock:
            if event is None:
                return sum(self._counts.values())
            return self._counts.get(event, 0)

    def counts(self) -> Dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def events(self) -> List[Tuple[str, str]]:
        with self._lock:
            return list(self._events)

    def reset(self) -> None:
        with self._lock:
            self._counts.clear()
            self._events.clear()


# Global instance
telemetry = Telemetry()
