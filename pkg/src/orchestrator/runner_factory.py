"""
Runner factory: picks the runner for a clock mode
"""
import logging
from typing import Dict, Optional

from src.models.scenario import ClockMode
from .base_runner import BaseRunner
from .realtime_runner import RealtimeRunner
from .virtual_runner import VirtualTimeRunner

logger = logging.getLogger(__name__)


class RunnerFactory:
    """Factory class to create the runner for each clock mode"""

    def __init__(self):
        self._runners: Dict[ClockMode, BaseRunner] = {
            ClockMode.VIRTUAL: VirtualTimeRunner(),
            ClockMode.REALTIME: RealtimeRunner(),
        }

    def get_runner(self, mode) -> Optional[BaseRunner]:
        """
        Get the runner for a clock mode

        Args:
            mode: ClockMode or its string value

        Returns:
            Runner instance or None if the mode is unknown
        """
        try:
            return self._runners.get(ClockMode(mode))
        except ValueError:
            return None

    def get_supported_modes(self) -> list:
        return [mode.value for mode in self._runners]


# Global instance
runner_factory = RunnerFactory()
