"""Monthly period arithmetic, including Japanese-fiscal-year bookkeeping.

The Japanese fiscal year (JFY) k runs from April of calendar year k through
March of calendar year k+1; quota limits are annual per JFY while the
second-stage aggregation runs on calendar years.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

_PERIOD_RE = re.compile(r"^(\d{4})-(\d{2})$")


@dataclass(frozen=True, order=True)
class Month:
    """A calendar month, serialized as ``YYYY-MM``."""

    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month out of range: {self.month}")

    @classmethod
    def parse(cls, text: str) -> "Month":
        m = _PERIOD_RE.match(text.strip())
        if m is None:
            raise ValueError(f"period not in YYYY-MM form: {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"

    @property
    def index(self) -> int:
        """Months since 0000-01; supports ordering and gap arithmetic."""
        return self.year * 12 + (self.month - 1)

    @classmethod
    def from_index(cls, idx: int) -> "Month":
        return cls(idx // 12, idx % 12 + 1)

    @property
    def jfy(self) -> int:
        """Japanese fiscal year containing this month (April start)."""
        return self.year if self.month >= 4 else self.year - 1

    def shift(self, n: int) -> "Month":
        return Month.from_index(self.index + n)


def month_range(start: Month, end: Month) -> list[Month]:
    """Inclusive list of months from ``start`` through ``end``."""
    if end < start:
        raise ValueError(f"empty range {start}..{end}")
    return [Month.from_index(i) for i in range(start.index, end.index + 1)]
