"""Text reports for command summaries.

Report collects lines the way a HUD does and is printed once at the end of a command. Values are
laid out as a tree:

    Episode
    |
    +- outcome: success
    |
    +- execution time: 912 ticks

Usage:
    report = Report("Episode")
    report.item(f"outcome: {outcome}")
    report.table(["skill", "done"], [["flip", "yes"], ["pick", "yes"]])
    print(report)
"""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Sequence


@dataclass
class Report:
    """Lines of text for a command summary.

    >>> report = Report("Demos")
    >>> report.item("written: 4")
    >>> report.item("skipped: 1")
    >>> print(report)
    Demos
    |
    +- written: 4
    |
    +- skipped: 1

    >>> report = Report("Metrics")
    >>> report.table(["cell", "skill", "rate"],
    ...              [["gc/bl", "flip", "10/10"], ["gc/bl", "push", "9/10"]])
    >>> print(report)
    Metrics
    cell   skill  rate
    -----  -----  -----
    gc/bl  flip   10/10
    gc/bl  push   9/10
    """
    title:  str
    _text:  list[str] = field(default_factory=list)   # The text that is displayed

    def __post_init__(self) -> None:
        self._text = [self.title]

    def __str__(self) -> str:
        return "\n".join(self._text)

    @property
    def lines(self) -> list[str]:
        """Return the report as a list of lines."""
        return list(self._text)

    def print(self, text: str) -> None:
        """Append text to the report."""
        self._text.extend(text.split("\n"))

    def item(self, text: str) -> None:
        """Append a tree item."""
        self.print(f"|\n+- {text}")

    def table(self, headers: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
        """Append a left-aligned table."""
        widths = [len(h) for h in headers]
        for row in rows:
            widths = [max(w, len(cell)) for w, cell in zip(widths, row)]

        def line(cells: Sequence[str]) -> str:
            return "  ".join(f"{c:<{w}}" for c, w in zip(cells, widths)).rstrip()
        self.print(line(headers))
        self.print(line(["-"*w for w in widths]))
        for row in rows:
            self.print(line(row))

    def reset(self) -> None:
        """Clear everything but the title."""
        self._text = [self.title]
