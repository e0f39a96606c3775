"""Timing for the closed-loop executive.

The runner counts simulator ticks, not video frames. Two things happen on a schedule:

- re-estimation: every 'reestimate_interval' ticks the runner observes, predicts progress and
  selects the next skill
- chunk boundaries: every 'horizon' ticks a new action chunk starts

Both are ClockedEvents hanging off one TickCounter, so they stay in lock step with the sim tick.

The clocked events maintain:
- period: the number of ticks required to clock this event
- event_count: the number of times this event has been clocked
- event_name: the name of the event (copied from the dict key so a printed event names itself)
"""
from __future__ import annotations
from dataclasses import dataclass, field


@dataclass
class ClockedEvent:
    """Trigger an event every time some number of ticks elapses.

    API:
        is_period: True when it is time for the event to happen.

    Internal API:
        update(): ClockedEvents are updated by their TickCounter. The TickCounter calls 'update()'
        on all of its clocked events.
    """
    tick_counter:   TickCounter                         # How the ClockedEvent gets the tick_count
    period:         int                                 # Number of ticks
    event_count:    int = 0                             # Number of times event has happened
    event_name:     str = "NameMe"                      # Auto-populated by TickCounter.add_event()

    def __post_init__(self) -> None:
        if self.period < 1:
            raise ValueError(f"ClockedEvent period must be >= 1, got {self.period}")

    def __str__(self) -> str:
        return (f"\"{self.event_name}\": "
                f"event_count={self.event_count} "
                f"(clocked every {self.period} ticks)"
                )

    @property
    def tick_count(self) -> int:
        """The number of ticks counted by the TickCounter."""
        return self.tick_counter.tick_count

    @property
    def is_period(self) -> bool:
        """True when a whole number of periods has elapsed."""
        return (self.tick_count % self.period) == 0

    def update(self) -> None:
        """Update the event counter if a whole number of periods has elapsed."""
        if self.is_period:
            self.event_count += 1


@dataclass
class TickCounter:
    """Count simulator ticks for clocking the executive.

    The counter starts at the world's tick: tick 0 is itself a period boundary, which is where
    the first estimate happens.

    >>> ticks = TickCounter()
    >>> estimate = ticks.add_event("estimate", period=2)
    >>> estimate.is_period
    True
    >>> for i in range(4):
    ...     ticks.update()
    ...     print(f"tick_count: {ticks.tick_count} is_period: {estimate.is_period}")
    ...     print(f"\\t{estimate}")
    tick_count: 1 is_period: False
        "estimate": event_count=0 (clocked every 2 ticks)
    tick_count: 2 is_period: True
        "estimate": event_count=1 (clocked every 2 ticks)
    tick_count: 3 is_period: False
        "estimate": event_count=1 (clocked every 2 ticks)
    tick_count: 4 is_period: True
        "estimate": event_count=2 (clocked every 2 ticks)

    A counter can be paused, for example while the runner holds after Complete:
    >>> ticks.toggle_pause()
    >>> ticks.update()
    >>> ticks.tick_count
    4
    """
    tick_count:     int = 0
    is_paused:      bool = False
    clocked_events: dict[str, ClockedEvent] = field(default_factory=dict)

    def add_event(self, name: str, period: int) -> ClockedEvent:
        """Create, register and return a ClockedEvent named 'name'."""
        event = ClockedEvent(self, period=period, event_name=name)
        self.clocked_events[name] = event
        return event

    def update(self) -> None:
        """Update the tick count and the clocked events."""
        if not self.is_paused:
            self.tick_count += 1
            for clocked_event in self.clocked_events.values():
                clocked_event.update()

    def toggle_pause(self) -> None:
        """Toggle is_paused."""
        self.is_paused = not self.is_paused
