"""Monthly transaction ingestion and estimation-panel assembly.

Item-level import incidents are aggregated to one observation per
(country, month) for each meat type. The panel carries, in logs: value
share S, post-tariff price P, CIF price C, tariff factor T (P = C + T by
construction), and the exchange rate E used as instrument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import pandas as pd

from .errors import EmptyPanelError, MalformedRecordError, MissingDataError
from .periods import Month

SHARE_SUM_TOL = 1e-12


class Meat(str, Enum):
    BEEF = "beef"
    PORK = "pork"
    CHICKEN = "chicken"


#: Default item-id groups; ids key into the 78-item HS-code list.
DEFAULT_GROUPS = {
    Meat.BEEF: frozenset(range(1, 17)),
    Meat.PORK: frozenset(range(28, 49)),
    Meat.CHICKEN: frozenset(range(68, 75)),
}

#: Non-carcass pork item ids; the complement within the pork group takes
#: carcass-scaled gate-price boundaries.
PORK_NON_CARCASS = frozenset(range(30, 37)) | frozenset(range(39, 49))
PORK_CARCASS = DEFAULT_GROUPS[Meat.PORK] - PORK_NON_CARCASS


@dataclass(frozen=True)
class TransactionRecord:
    """One monthly import incident: JPY value and kg quantity of one item."""

    period: Month
    country: str
    item: int
    value: float
    quantity: float

    def __post_init__(self):
        if self.value < 0:
            raise MalformedRecordError(
                f"negative value {self.value} for {self.country} {self.period}")
        if self.quantity < 0:
            raise MalformedRecordError(
                f"negative quantity {self.quantity} for {self.country} {self.period}")


@dataclass(frozen=True)
class MeatGroup:
    meat: Meat
    items: frozenset[int]

    @classmethod
    def default(cls, meat: Meat | str) -> "MeatGroup":
        meat = Meat(meat)
        return cls(meat=meat, items=DEFAULT_GROUPS[meat])


@dataclass(frozen=True)
class ItemAggregate:
    """Summed value/quantity for one (country, month) within a meat group."""

    value: float
    quantity: float

    @property
    def cif(self) -> float:
        """CIF unit price in JPY/kg."""
        return self.value / self.quantity


def aggregate_items(records: Iterable[TransactionRecord], group: MeatGroup,
                    ) -> dict[tuple[str, Month], ItemAggregate]:
    """Sum item-level incidents to (country, month) totals for one meat.

    Records outside ``group.items`` are ignored; zero-value zero-quantity
    records are skipped. A positive value with zero quantity signals data
    corruption. Pairs whose total quantity or total value is zero carry no
    usable price and are absent from the output.
    """
    totals: dict[tuple[str, Month], tuple[list[float], list[float]]] = {}
    for rec in records:
        if rec.item not in group.items:
            continue
        if rec.quantity == 0:
            if rec.value > 0:
                raise MalformedRecordError(
                    f"zero quantity with value {rec.value} at "
                    f"({rec.country}, {rec.period}) item {rec.item}")
            continue
        values, quantities = totals.setdefault((rec.country, rec.period), ([], []))
        values.append(rec.value)
        quantities.append(rec.quantity)
    # fsum: correctly-rounded totals, exactly invariant to record order
    out = {}
    for key, (values, quantities) in totals.items():
        v, x = math.fsum(values), math.fsum(quantities)
        if x > 0 and v > 0:
            out[key] = ItemAggregate(value=v, quantity=x)
    return out


def aggregate_item_quantities(records: Iterable[TransactionRecord], group: MeatGroup,
                              ) -> dict[tuple[str, Month], dict[int, tuple[float, float]]]:
    """Per-(country, month) item breakdown {item: (value, quantity)}.

    Companion to :func:`aggregate_items` for tariff evaluation, which needs
    item-level volumes for quota ledgers and item-level values for blended
    duties.
    """
    out: dict[tuple[str, Month], dict[int, tuple[float, float]]] = {}
    for rec in records:
        if rec.item not in group.items or rec.quantity == 0:
            continue
        bucket = out.setdefault((rec.country, rec.period), {})
        v, x = bucket.get(rec.item, (0.0, 0.0))
        bucket[rec.item] = (v + rec.value, x + rec.quantity)
    return out


def compute_shares(post_tariff_values: Mapping[str, float]) -> dict[str, float]:
    """Value shares s_i = w_i / sum_j w_j for one period.

    ``post_tariff_values`` maps country to p*x in JPY. Shares sum to one
    within 1e-12.
    """
    if not post_tariff_values:
        raise EmptyPanelError("no observations in period")
    total = sum(post_tariff_values.values())
    if total <= 0:
        raise EmptyPanelError("period has no positive post-tariff value")
    shares = {i: w / total for i, w in post_tariff_values.items()}
    assert abs(sum(shares.values()) - 1.0) < SHARE_SUM_TOL
    return shares


@dataclass(frozen=True)
class PanelObservation:
    """One (country, month) estimation row; S, P, C, T, E are logs.

    ``E`` may be NaN when the exchange rate is unavailable; such rows are
    usable by least squares but dropped from instrumented fits.
    """

    country: str
    period: Month
    S: float
    P: float
    C: float
    T: float
    E: float
    x: float
    w: float


@dataclass
class PanelDataset:
    """Observations keyed (country, period) for one meat type."""

    meat: str
    observations: list[PanelObservation]

    def __post_init__(self):
        self.observations.sort(key=lambda o: (o.country, o.period))
        seen = set()
        for obs in self.observations:
            key = (obs.country, obs.period)
            if key in seen:
                raise ValueError(f"duplicate observation {key}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def countries(self) -> list[str]:
        return sorted({o.country for o in self.observations})

    @property
    def periods(self) -> list[Month]:
        return sorted({o.period for o in self.observations})

    def counts_by_country(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for o in self.observations:
            counts[o.country] = counts.get(o.country, 0) + 1
        return counts

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "country": [o.country for o in self.observations],
            "period": [str(o.period) for o in self.observations],
            "S": [o.S for o in self.observations],
            "P": [o.P for o in self.observations],
            "C": [o.C for o in self.observations],
            "T": [o.T for o in self.observations],
            "E": [o.E for o in self.observations],
            "x": [o.x for o in self.observations],
            "w": [o.w for o in self.observations],
        })

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, meat: str) -> "PanelDataset":
        obs = [PanelObservation(
            country=str(r.country), period=Month.parse(r.period),
            S=float(r.S), P=float(r.P), C=float(r.C), T=float(r.T),
            E=float(r.E), x=float(r.x), w=float(r.w))
            for r in frame.itertuples(index=False)]
        return cls(meat=meat, observations=obs)

    def write_csv(self, path: str | Path) -> None:
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def read_csv(cls, path: str | Path, meat: str) -> "PanelDataset":
        return cls.from_frame(pd.read_csv(path), meat=meat)


def build_panel(meat: str,
                aggregates: Mapping[tuple[str, Month], ItemAggregate],
                tariffs: Mapping[tuple[str, Month], float],
                fx: Mapping[tuple[str, Month], float]) -> PanelDataset:
    """Assemble the estimation panel from aggregates, tariffs, and FX rates.

    ``tariffs`` maps (country, month) to the log tariff factor T and must
    cover every aggregate; ``fx`` maps to JPY per local currency unit and
    may have gaps (those rows get E = NaN). Shares are computed per period
    over the full country set, before any sparse filtering.
    """
    missing = [k for k in aggregates if k not in tariffs]
    if missing:
        missing.sort(key=lambda k: (k[1], k[0]))
        shown = ", ".join(f"({c}, {m})" for c, m in missing[:5])
        raise MissingDataError(
            f"tariff coverage incomplete for {len(missing)} observations: {shown}"
            + ("..." if len(missing) > 5 else ""))

    by_period: dict[Month, dict[str, float]] = {}
    for (country, month), agg in aggregates.items():
        w = agg.value * math.exp(tariffs[(country, month)])
        by_period.setdefault(month, {})[country] = w

    observations = []
    for month, values in by_period.items():
        shares = compute_shares(values)
        for country, w in values.items():
            agg = aggregates[(country, month)]
            C = math.log(agg.cif)
            P = C + tariffs[(country, month)]
            rate = fx.get((country, month))
            E = math.log(rate) if rate is not None and rate > 0 else float("nan")
            observations.append(PanelObservation(
                country=country, period=month,
                # T re-derived from rounded P so P - C - T is exactly zero
                S=math.log(shares[country]), P=P, C=C, T=P - C, E=E,
                x=agg.quantity, w=w))
    if not observations:
        raise EmptyPanelError(f"no observations for meat {meat!r}")
    return PanelDataset(meat=meat, observations=observations)


def filter_sparse(panel: PanelDataset, min_obs: int = 9) -> PanelDataset:
    """Drop countries observed in ``min_obs`` or fewer months.

    Shares are NOT recomputed: dropped countries leave the regression, not
    the share denominator.
    """
    if min_obs < 0:
        raise ValueError("min_obs must be nonnegative")
    counts = panel.counts_by_country()
    keep = {c for c, n in counts.items() if n > min_obs}
    if not keep:
        raise EmptyPanelError(
            f"all {len(counts)} countries have <= {min_obs} observations")
    obs = [o for o in panel.observations if o.country in keep]
    return PanelDataset(meat=panel.meat, observations=obs)


def split_pork(panel: PanelDataset, threshold_kjpy: float = 0.8,
               ) -> tuple[PanelDataset, PanelDataset]:
    """Partition observations into (regular, prime) by CIF price.

    Regular means a CIF price strictly under ``threshold_kjpy`` (KJPY/kg,
    i.e. thousands of JPY); the boundary itself is prime. The comparison
    runs in logs so a price exactly at the threshold lands in prime even
    after the log/exp round trip. Shares are kept as computed on the full
    panel.
    """
    log_cutoff = math.log(threshold_kjpy * 1000.0)
    regular = [o for o in panel.observations if o.C < log_cutoff]
    prime = [o for o in panel.observations if o.C >= log_cutoff]
    return (PanelDataset(meat=f"{panel.meat} (regular)", observations=regular),
            PanelDataset(meat=f"{panel.meat} (prime)", observations=prime))


def read_transactions_csv(path: str | Path) -> list[TransactionRecord]:
    """Load the transactions CSV: ``period,country,item_id,value_jpy,quantity_kg``."""
    frame = pd.read_csv(path, dtype={"country": str})
    required = ["period", "country", "item_id", "value_jpy", "quantity_kg"]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise MissingDataError(f"transactions CSV missing columns {missing}")
    return [TransactionRecord(
        period=Month.parse(str(r.period)), country=str(r.country),
        item=int(r.item_id), value=float(r.value_jpy), quantity=float(r.quantity_kg))
        for r in frame.itertuples(index=False)]


def read_fx_csv(path: str | Path) -> dict[tuple[str, Month], float]:
    """Load the exchange-rate CSV: ``period,country,jpy_per_lcu``."""
    frame = pd.read_csv(path, dtype={"country": str})
    required = ["period", "country", "jpy_per_lcu"]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise MissingDataError(f"exchange-rate CSV missing columns {missing}")
    return {(str(r.country), Month.parse(str(r.period))): float(r.jpy_per_lcu)
            for r in frame.itertuples(index=False)}
