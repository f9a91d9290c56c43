"""
Deterministic discrete-event scheduler on a virtual wall clock
"""
import heapq
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, List, Optional

logger = logging.getLogger(__name__)

US_PER_MS = 1000


@dataclass(order=True)
class ScheduledEvent:
    """
    Heap ordering:
    1. due time (virtual wall microseconds)
    2. priority (lower runs first)
    3. submission order
    """

    due_us: int
    priority: int
    seq_no: int
    name: str = field(compare=False)
    action: Callable[[], Any] = field(compare=False)
    cancelled: bool = field(default=False, compare=False)


class EventScheduler:
    """Runs callbacks in (time, priority, submission) order; time only moves when an event fires"""

    def __init__(self, start_us: int = 0):
        if start_us < 0:
            raise ValueError("start_us must be non-negative")
        self._now_us = start_us
        self._queue: List[ScheduledEvent] = []
        self._next_seq = 1
        self.fired = 0

    @property
    def now_us(self) -> int:
        return self._now_us

    @property
    def now_ms(self) -> float:
        return self._now_us / US_PER_MS

    def at(self, due_us: int, action: Callable[[], Any], priority: int = 0, name: str = '') -> ScheduledEvent:
        due_us = int(due_us)
        if due_us < self._now_us:
            raise ValueError(f"cannot schedule {name or 'event'} in the past ({due_us} < {self._now_us})")
        event = ScheduledEvent(due_us, priority, self._next_seq, name, action)
        self._next_seq += 1
        heapq.heappush(self._queue, event)
        return event

    def after_ms(self, delay_ms: float, action: Callable[[], Any], priority: int = 0,
                 name: str = '') -> ScheduledEvent:
        """Schedule delay_ms from now, rounded up to the next microsecond"""
        delay_us = max(0, -int(-delay_ms * US_PER_MS // 1))
        return self.at(self._now_us + delay_us, action, priority, name)

    def cancel(self, event: Optional[ScheduledEvent]) -> None:
        if event is not None:
            event.cancelled = True

    def has_pending(self) -> bool:
        return any(not e.cancelled for e in self._queue)

    def peek_next_us(self) -> Optional[int]:
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].due_us if self._queue else None

    def step(self) -> bool:
        """Fire the next event; False when nothing is left"""
        while self._queue:
            event = heapq.heappop(self._queue)
            if event.cancelled:
                continue
            self._now_us = event.due_us
            self.fired += 1
            event.action()
            return True
        return False

    def run_until(self, end_us: int) -> None:
        """Fire every event due at or before end_us, then leave the clock at end_us"""
        while True:
            due = self.peek_next_us()
            if due is None or due > end_us:
                break
            self.step()
        self._now_us = max(self._now_us, int(end_us))
