"""Effective tariff computation under ad valorem, gate-price, and quota regimes.

The engine resolves, for every (country, item, month), a single applicable
rate from a priority-ordered schedule, walks annual quota ledgers month by
month to decide in- versus out-quota treatment, and converts the resolved
duties into the log tariff factor that enters the estimation panel.

Schedules and quota limits are plain CSV data (see ``RateSchedule.read_csv``
and ``read_quota_csv``); the repository ships a small demo schedule, not a
full historical one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ScheduleError, SequencingError
from .periods import Month

CARCASS_SCALE = 0.75

#: Non-carcass pork gate-price boundary in force since JFY2000 (JPY/kg).
BASELINE_PORK_GPS_PARAMS = dict(gate=524.0, threshold=64.35, floor=546.35,
                                duty=482.0, rate=0.043)


@dataclass(frozen=True)
class GpsBoundary:
    """Piecewise-levy parameters of a gate price system.

    Parameters
    ----------
    gate : float
        Gate price G (JPY/kg). Above it the levy is max of ad valorem and
        the floor gap.
    threshold : float
        Threshold price B (JPY/kg). Below it a fixed per-kg duty applies.
    floor : float
        Floor price F (JPY/kg); must equal ``duty + threshold``.
    duty : float
        Specific duty D (JPY/kg) charged below the threshold.
    rate : float
        Ad valorem fraction r used above the gate price.
    carcass_scaled : bool
        Marks boundaries already reduced for carcass items; guards against
        scaling twice.
    """

    gate: float
    threshold: float
    floor: float
    duty: float
    rate: float
    carcass_scaled: bool = False

    def __post_init__(self):
        if abs(self.floor - (self.duty + self.threshold)) > 1e-9:
            raise ValueError(
                f"floor must equal duty + threshold: "
                f"{self.floor} != {self.duty} + {self.threshold}")
        if not 0.0 < self.threshold < self.gate:
            raise ValueError("need 0 < threshold < gate")
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"ad valorem rate out of range: {self.rate}")


#: Baseline boundary used by the demo schedule and the tests.
BASELINE_PORK_GPS = GpsBoundary(**BASELINE_PORK_GPS_PARAMS)


def gps_duty(c: float, b: GpsBoundary) -> float:
    """Per-kg duty for a pre-tariff price ``c`` (JPY/kg) under boundary ``b``.

    Below the threshold the specific duty applies; between threshold and
    gate the levy tops the price up to the floor; at or above the gate the
    greater of the ad valorem tax and the floor gap applies.
    """
    if c <= 0:
        raise ValueError(f"pre-tariff price must be positive, got {c}")
    if c < b.threshold:
        return b.duty
    if c < b.gate:
        return b.floor - c
    return max(b.rate * c, b.floor - c)


def scale_for_carcass(b: GpsBoundary) -> GpsBoundary:
    """Reduce all boundary values to 3/4 for carcass items; rate unchanged."""
    if b.carcass_scaled:
        raise ValueError("boundary already carcass-scaled")
    return GpsBoundary(
        gate=b.gate * CARCASS_SCALE,
        threshold=b.threshold * CARCASS_SCALE,
        floor=b.floor * CARCASS_SCALE,
        duty=b.duty * CARCASS_SCALE,
        rate=b.rate,
        carcass_scaled=True,
    )


@dataclass(frozen=True)
class Rate:
    """A resolved tariff treatment for one (country, item, month).

    ``kind`` is one of ``ad_valorem`` (fraction ``rate``), ``gps``
    (boundary ``gps``), ``specific`` (``duty_per_kg`` JPY/kg), or
    ``exempt``.
    """

    kind: str
    rate: float = 0.0
    duty_per_kg: float = 0.0
    gps: GpsBoundary | None = None

    KINDS = ("ad_valorem", "gps", "specific", "exempt")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown rate kind {self.kind!r}")
        if self.kind == "gps" and self.gps is None:
            raise ValueError("gps rate requires a boundary")

    def duty_at(self, c: float) -> float:
        """Per-kg duty at pre-tariff price ``c`` (JPY/kg)."""
        if self.kind == "ad_valorem":
            return self.rate * c
        if self.kind == "gps":
            return gps_duty(c, self.gps)
        if self.kind == "specific":
            return self.duty_per_kg
        return 0.0

    def describe(self) -> str:
        if self.kind == "ad_valorem":
            return f"ad_valorem({self.rate:g})"
        if self.kind == "gps":
            return f"gps(G={self.gps.gate:g})"
        if self.kind == "specific":
            return f"specific({self.duty_per_kg:g})"
        return "exempt"


def effective_T(c: float, rate: Rate) -> float:
    """Log tariff factor T = ln(post-tariff price) - ln(pre-tariff price).

    Ad valorem duties give ``ln(1+r)`` independent of the price level;
    gate-price and specific duties give ``ln((c+d)/c)`` with the per-kg
    duty ``d`` evaluated at ``c``; exemption gives 0.
    """
    if c <= 0:
        raise ValueError(f"pre-tariff price must be positive, got {c}")
    if rate.kind == "ad_valorem":
        return math.log1p(rate.rate)
    if rate.kind == "exempt":
        return 0.0
    return math.log((c + rate.duty_at(c)) / c)


def parse_rate(kind: str, params: str) -> Rate:
    """Build a ``Rate`` from the CSV ``kind``/``params`` columns.

    ``params`` is ``;``-separated ``key=value`` pairs: ``r`` for
    ``ad_valorem``; ``G,B,F,D,r`` (plus optional ``carcass=1``) for
    ``gps``; ``d`` for ``specific``; empty for ``exempt``.
    """
    kind = kind.strip()
    kv: dict[str, str] = {}
    for part in params.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"malformed rate parameter {part!r}")
        k, v = part.split("=", 1)
        kv[k.strip()] = v.strip()
    if kind == "exempt":
        return Rate("exempt")
    if kind == "ad_valorem":
        return Rate("ad_valorem", rate=float(kv["r"]))
    if kind == "specific":
        return Rate("specific", duty_per_kg=float(kv["d"]))
    if kind == "gps":
        boundary = GpsBoundary(
            gate=float(kv["G"]), threshold=float(kv["B"]),
            floor=float(kv["F"]), duty=float(kv["D"]), rate=float(kv["r"]))
        if kv.get("carcass", "0") in ("1", "true", "yes"):
            boundary = scale_for_carcass(boundary)
        return Rate("gps", gps=boundary)
    raise ValueError(f"unknown rate kind {kind!r}")


def _parse_countries(selector: str) -> frozenset[str] | None:
    selector = selector.strip()
    if selector == "*":
        return None
    return frozenset(p.strip() for p in selector.split("|") if p.strip())


def _parse_items(selector: str) -> frozenset[int] | None:
    selector = selector.strip()
    if selector == "*":
        return None
    items: set[int] = set()
    for part in selector.split("|"):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            items.update(range(int(lo), int(hi) + 1))
        else:
            items.add(int(part))
    return frozenset(items)


@dataclass(frozen=True)
class ScheduleEntry:
    """One row of the tariff schedule.

    ``countries``/``items`` of ``None`` are wildcards. Smaller ``priority``
    wins; ties among applicable entries are a schedule data error.
    """

    label: str
    countries: frozenset[str] | None
    items: frozenset[int] | None
    start: Month
    end: Month
    rate: Rate
    priority: int

    def applies(self, country: str, item: int, month: Month) -> bool:
        if self.countries is not None and country not in self.countries:
            return False
        if self.items is not None and item not in self.items:
            return False
        return self.start <= month <= self.end


class RateSchedule:
    """Priority-resolved collection of schedule entries."""

    def __init__(self, entries: Sequence[ScheduleEntry]):
        self.entries = list(entries)

    def resolve(self, country: str, item: int, month: Month) -> ScheduleEntry:
        """Return the single applicable entry for (country, item, month)."""
        hits = [e for e in self.entries if e.applies(country, item, month)]
        if not hits:
            raise ScheduleError(
                f"no schedule entry matches country={country!r} "
                f"item={item} month={month}")
        best = min(e.priority for e in hits)
        top = [e for e in hits if e.priority == best]
        if len(top) > 1:
            labels = [e.label for e in top]
            raise ScheduleError(
                f"ambiguous schedule for country={country!r} item={item} "
                f"month={month}: entries {labels} share priority {best}")
        return top[0]

    @classmethod
    def read_csv(cls, path: str | Path) -> "RateSchedule":
        """Load a schedule CSV.

        Columns: ``country_selector,item_selector,from,to,kind,params,
        priority`` plus an optional trailing ``label``. Selectors are ``*``
        or ``|``-separated values; item ranges like ``28-48`` are allowed.
        """
        entries = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            required = {"country_selector", "item_selector", "from", "to",
                        "kind", "params", "priority"}
            missing = required - set(reader.fieldnames or [])
            if missing:
                raise ScheduleError(f"schedule CSV missing columns {sorted(missing)}")
            for n, row in enumerate(reader, start=2):
                label = (row.get("label") or "").strip() or f"row{n}:{row['kind'].strip()}"
                entries.append(ScheduleEntry(
                    label=label,
                    countries=_parse_countries(row["country_selector"]),
                    items=_parse_items(row["item_selector"]),
                    start=Month.parse(row["from"]),
                    end=Month.parse(row["to"]),
                    rate=parse_rate(row["kind"], row["params"]),
                    priority=int(row["priority"]),
                ))
        return cls(entries)


@dataclass(frozen=True)
class QuotaYear:
    jfy: int
    limit_kg: float
    in_quota: Rate

    def __post_init__(self):
        if self.limit_kg < 0:
            raise ValueError("quota limit must be nonnegative")


@dataclass
class QuotaSchedule:
    """Annual quota limits for one partner's tagged item set.

    A partner may hold several schemes (one per meat); each has its own
    ledger. Monthly volumes of the tagged items count against the JFY
    limit; while the pre-month cumulative stays under the limit the
    per-year in-quota rate applies to the tagged items, otherwise
    resolution falls back to the ordinary schedule. A JFY missing from
    ``years`` yields no concession for that year.
    """

    partner: str
    items: frozenset[int]
    years: dict[int, QuotaYear]
    name: str = ""

    def __post_init__(self):
        if not self.name:
            self.name = f"{self.partner}:{min(self.items)}-{max(self.items)}"

    def year(self, jfy: int) -> QuotaYear | None:
        return self.years.get(jfy)


@dataclass
class QuotaDecision:
    in_quota: bool
    cumulative_before: float
    limit_kg: float
    crossed_this_month: bool


class QuotaLedger:
    """Cumulative registered volume per JFY for a single quota scheme.

    Single-writer state: months must be fed in strictly increasing order.
    The cumulative resets at every fiscal-year boundary (April).
    """

    def __init__(self, partner: str):
        self.partner = partner
        self.jfy: int | None = None
        self.cumulative: float = 0.0
        self.last_month: Month | None = None
        self.crossings: dict[int, Month] = {}

    def advance(self, month: Month, volume_kg: float, limit_kg: float) -> QuotaDecision:
        if self.last_month is not None and month <= self.last_month:
            raise SequencingError(
                f"quota ledger for {self.partner!r} fed {month} after {self.last_month}")
        if volume_kg < 0:
            raise ValueError("volume must be nonnegative")
        if self.jfy != month.jfy:
            self.jfy = month.jfy
            self.cumulative = 0.0
        before = self.cumulative
        in_quota = before < limit_kg
        self.cumulative = before + volume_kg
        if not in_quota:
            self.crossings.setdefault(self.jfy, month)
        self.last_month = month
        return QuotaDecision(in_quota, before, limit_kg,
                             in_quota and self.cumulative >= limit_kg)


def trq_resolve(ledger: QuotaLedger, schedule: QuotaSchedule, month: Month,
                month_volume_kg: float) -> QuotaDecision:
    """Decide in/out-quota for one month and register its volume.

    The decision uses the cumulative volume BEFORE the month: a month that
    starts under the limit is charged in-quota in full, so the in-quota
    overshoot is bounded by a single month's volume. The ledger is updated
    in place.
    """
    if ledger.partner != schedule.partner:
        raise ValueError("ledger/schedule partner mismatch")
    year = schedule.year(month.jfy)
    limit = year.limit_kg if year is not None else 0.0
    return ledger.advance(month, month_volume_kg, limit)


def read_quota_csv(path: str | Path) -> list[QuotaSchedule]:
    """Load quota limits.

    Columns: ``country,jfy,limit_kg,item_tags,kind,params``. ``item_tags``
    is an item selector (``30-36|39-48``); ``kind``/``params`` give the
    in-quota rate for that fiscal year. Rows sharing (country, item_tags)
    form one scheme; a country may carry several disjoint schemes.
    """
    by_scheme: dict[tuple[str, frozenset[int]], dict] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"country", "jfy", "limit_kg", "item_tags", "kind", "params"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ScheduleError(f"quota CSV missing columns {sorted(missing)}")
        for row in reader:
            partner = row["country"].strip()
            items = _parse_items(row["item_tags"])
            if items is None:
                raise ScheduleError(f"quota for {partner!r} may not use wildcard items")
            rec = by_scheme.setdefault((partner, items), {"years": {}})
            jfy = int(row["jfy"])
            rec["years"][jfy] = QuotaYear(
                jfy=jfy, limit_kg=float(row["limit_kg"]),
                in_quota=parse_rate(row["kind"], row["params"]))
    return [QuotaSchedule(partner=p, items=items, years=rec["years"])
            for (p, items), rec in sorted(by_scheme.items(),
                                          key=lambda kv: (kv[0][0], min(kv[0][1])))]


@dataclass
class ResolvedMonth:
    """Per-item treatments for one (country, month) after quota resolution."""

    rates: dict[int, Rate]
    labels: dict[int, str]
    quota: QuotaDecision | None = None


class TariffCalculator:
    """Stateful resolver combining the rate schedule with quota ledgers.

    Feed each country's months in chronological order; the calculator
    maintains one ledger per quota scheme. A scheme's ledger only advances
    in months where its tagged items actually trade, which keeps schemes
    for different meats independent when meats are processed in separate
    chronological passes.
    """

    def __init__(self, schedule: RateSchedule, quotas: Iterable[QuotaSchedule] = ()):
        self.schedule = schedule
        self.quotas = list(quotas)
        self._ledgers = {q.name: QuotaLedger(q.partner) for q in self.quotas}

    def resolve_month(self, country: str, month: Month,
                      item_volumes: Mapping[int, float]) -> ResolvedMonth:
        """Resolve every item traded by ``country`` in ``month``.

        ``item_volumes`` maps item id to kg; tagged-item volume is charged
        to the scheme's ledger even in months where the quota is already
        exhausted.
        """
        decision = None
        in_quota_items: dict[int, tuple[Rate, str]] = {}
        for quota in self.quotas:
            if quota.partner != country or not quota.items & set(item_volumes):
                continue
            tagged_volume = sum(v for g, v in item_volumes.items() if g in quota.items)
            decision = trq_resolve(self._ledgers[quota.name], quota, month, tagged_volume)
            year = quota.year(month.jfy)
            if decision.in_quota and year is not None:
                label = f"quota:{quota.name}:JFY{month.jfy}"
                for g in quota.items:
                    in_quota_items[g] = (year.in_quota, label)
        rates: dict[int, Rate] = {}
        labels: dict[int, str] = {}
        for item in sorted(item_volumes):
            if item in in_quota_items:
                rates[item], labels[item] = in_quota_items[item]
            else:
                entry = self.schedule.resolve(country, item, month)
                rates[item] = entry.rate
                labels[item] = entry.label
        return ResolvedMonth(rates=rates, labels=labels, quota=decision)


def blended_T(cif_price: float, item_values: Mapping[int, float],
              item_quantities: Mapping[int, float],
              rates: Mapping[int, Rate]) -> float:
    """Value-weighted log tariff factor for a bundle of items.

    Ad valorem duties charge ``r`` on each item's value; gate-price and
    specific duties charge their per-kg amount, evaluated at the bundle's
    aggregate CIF price, on each item's quantity. The result is
    ``ln(post-tariff value / CIF value)`` and collapses to ``effective_T``
    for a single-item bundle.
    """
    total_value = sum(item_values.values())
    if total_value <= 0:
        raise ValueError("bundle has no positive CIF value")
    duty_value = 0.0
    for item, v in item_values.items():
        rate = rates[item]
        if rate.kind == "ad_valorem":
            duty_value += rate.rate * v
        else:
            duty_value += rate.duty_at(cif_price) * item_quantities[item]
    return math.log((total_value + duty_value) / total_value)
