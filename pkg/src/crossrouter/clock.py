"""Virtual time and the event queue that drives a simulation."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Callable

from .errors import PastEvent


class VirtualClock:
    """Simulated microseconds. Only moves forward, and only when events run."""

    def __init__(self, start: float = 0):
        self._now = start

    @property
    def now(self) -> float:
        return self._now

    def _advance_to(self, t: float) -> None:
        if t < self._now:
            raise PastEvent(f"clock cannot move back from {self._now} to {t}")
        self._now = t


@dataclass(order=True)
class Event:
    time: float
    seq: int
    action: Callable[[], Any] = field(compare=False)


class EventQueue:
    """Min-heap of events ordered by ``(time, insertion sequence)``."""

    def __init__(self, clock: VirtualClock | None = None):
        self.clock = clock or VirtualClock()
        self._heap: list[Event] = []
        self._seq = itertools.count()

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, time: float, action: Callable[[], Any]) -> Event:
        if time < self.clock.now:
            raise PastEvent(f"event at {time} is before now={self.clock.now}")
        ev = Event(time, next(self._seq), action)
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self.clock._advance_to(ev.time)
        return ev

    def run(self, until: float | None = None) -> int:
        """Execute events in order; returns how many ran."""
        count = 0
        while self._heap and (until is None or self._heap[0].time <= until):
            self.pop().action()
            count += 1
        return count
