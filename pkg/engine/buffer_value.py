"""Buffer values.

BufferValue works like a shift register that holds one value:
- The input is free to change at any time, but this does not affect the output.
- The output holds its previous value until the input is clocked in.

Usage:
    The runner uses a BufferValue to pin the skill ordering it is following. Every cycle the
    nearest ordering is loaded, but it is only clocked in when it beats the pinned ordering by a
    margin (or when nothing is pinned yet). This keeps the executive from chattering between two
    orderings whose progress trajectories pass close to each other.

        pinned: BufferValue[int] = BufferValue()
        ...
        pinned.load(nearest_index)
        if pinned.is_empty or nearest_distance < pinned_distance - margin:
            pinned.clock()
        ordering = library.trajectories[pinned.value].ordering
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Generic, TypeVar

T = TypeVar("T")


@dataclass
class BufferValue(Generic[T]):
    """Buffer a value of any type.

    >>> buffer: BufferValue[int] = BufferValue()
    >>> buffer.is_empty
    True
    >>> buffer.load(42)
    >>> buffer
    BufferValue(_value=None, _value_next=42)
    >>> buffer.clock()
    >>> buffer.value
    42
    >>> buffer.load(7)
    >>> buffer.value
    42
    """
    _value: T | None = None
    _value_next: T | None = None

    @property
    def is_empty(self) -> bool:
        """True until a value has been clocked in."""
        return self._value is None

    @property
    def value(self) -> T:
        """Return the most recently clocked-in value."""
        assert self._value is not None, "Nothing has been clocked in yet"
        return self._value

    def load(self, val: T) -> None:
        """Load value 'val' to be clocked in on next clock."""
        self._value_next = val

    def clock(self) -> None:
        """Clock in the loaded value."""
        self._value = self._value_next
