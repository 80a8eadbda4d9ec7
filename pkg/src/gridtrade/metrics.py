"""Benefit of peer-to-peer prices over the wholesale alternatives."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from typing import Iterable

from .auction import Role
from .hierarchy import SettlementReport
from .market import SCALE, Tariff, to_pence

WH_PER_KWH = 1000


def _check_band(price: float, tariff: Tariff) -> None:
    lo, hi = to_pence(tariff.sell_price_gs), to_pence(tariff.buy_price_gb)
    if not lo <= price <= hi:
        raise ValueError(f"price {price} p/kWh outside tariff band [{lo}, {hi}]")


def producer_benefit(price: float, tariff: Tariff) -> float:
    """Percentage gain of selling at ``price`` (p/kWh) over the grid sell price."""
    _check_band(price, tariff)
    gs = to_pence(tariff.sell_price_gs)
    return 100.0 * (price - gs) / gs


def consumer_benefit(price: float, tariff: Tariff) -> float:
    """Percentage saving of buying at ``price`` (p/kWh) over the grid buy price."""
    _check_band(price, tariff)
    gb = to_pence(tariff.buy_price_gb)
    return 100.0 * (gb - price) / gb


@dataclass
class _Tally:
    energy: int = 0
    cash: int = 0  # price units * Wh
    benefit: int = 0  # price units * Wh
    trades: int = 0
    pct_sum: float = 0.0

    def mean_price(self) -> float | None:
        return self.cash / self.energy / SCALE if self.energy else None


@dataclass
class BenefitReport:
    """Scenario totals.

    Benefit percentages are volume weighted; the ``*_per_trade`` variants are
    plain means over agent-period trades.  ``total_benefit`` is in pence and
    ``main_grid_energy`` in Wh over every simulated grid.
    """

    label: str
    producer_benefit_pct: float
    consumer_benefit_pct: float
    total_benefit: float
    main_grid_energy: int
    producer_benefit_per_trade: float = 0.0
    consumer_benefit_per_trade: float = 0.0
    producer_energy: int = 0
    consumer_energy: int = 0
    inter_grid_energy: int = 0
    involved: tuple[str, ...] = ()
    per_grid: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["involved"] = list(self.involved)
        return d

    def rows(self) -> list[tuple[str, str, str]]:
        scalar = [
            "producer_benefit_pct",
            "consumer_benefit_pct",
            "producer_benefit_per_trade",
            "consumer_benefit_per_trade",
            "total_benefit",
            "main_grid_energy",
            "inter_grid_energy",
            "producer_energy",
            "consumer_energy",
        ]
        out = [(self.label, name, repr(getattr(self, name))) for name in scalar]
        for grid, values in sorted(self.per_grid.items()):
            out.extend((self.label, f"{grid}.{k}", repr(v)) for k, v in sorted(values.items()))
        return out


def _summarise(sellers: _Tally, buyers: _Tally, tariff: Tariff) -> dict:
    p_price, c_price = sellers.mean_price(), buyers.mean_price()
    return {
        "producer_benefit_pct": producer_benefit(p_price, tariff) if p_price is not None else 0.0,
        "consumer_benefit_pct": consumer_benefit(c_price, tariff) if c_price is not None else 0.0,
        "producer_benefit_per_trade": sellers.pct_sum / sellers.trades if sellers.trades else 0.0,
        "consumer_benefit_per_trade": buyers.pct_sum / buyers.trades if buyers.trades else 0.0,
        "total_benefit": (sellers.benefit + buyers.benefit) / SCALE / WH_PER_KWH,
        "producer_energy": sellers.energy,
        "consumer_energy": buyers.energy,
    }


def scenario_report(
    settlements: Iterable[SettlementReport],
    label: str,
    tariff: Tariff,
    involved: Iterable[str] | None = None,
) -> BenefitReport:
    """Aggregate a run into a :class:`BenefitReport`.

    Only grids in ``involved`` (all grids when None) count towards the
    benefit figures; main-grid energy always covers every grid.
    """
    settlements = list(settlements)
    all_grids = sorted({g.grid for s in settlements for g in s.grids})
    involved = tuple(sorted(involved)) if involved is not None else tuple(all_grids)
    sellers, buyers = _Tally(), _Tally()
    per_sellers = {g: _Tally() for g in all_grids}
    per_buyers = {g: _Tally() for g in all_grids}
    per_main = {g: 0 for g in all_grids}
    main_energy = inter_energy = 0

    for s in settlements:
        main_energy += s.main_energy
        inter_energy += s.inter_energy
        for g in s.grids:
            per_main[g.grid] += g.main_import + g.main_export
            for a in g.agents:
                if a.role is Role.SELLER:
                    gain = a.payment - tariff.sell_price_gs * a.energy
                    pct = producer_benefit(a.effective_price, tariff)
                    tallies = [per_sellers[g.grid]] + ([sellers] if g.grid in involved else [])
                else:
                    gain = tariff.buy_price_gb * a.energy - a.payment
                    pct = consumer_benefit(a.effective_price, tariff)
                    tallies = [per_buyers[g.grid]] + ([buyers] if g.grid in involved else [])
                for t in tallies:
                    t.energy += a.energy
                    t.cash += a.payment
                    t.benefit += gain
                    t.trades += 1
                    t.pct_sum += pct

    totals = _summarise(sellers, buyers, tariff)
    per_grid = {}
    for g in all_grids:
        per_grid[g] = _summarise(per_sellers[g], per_buyers[g], tariff)
        per_grid[g]["main_grid_energy"] = per_main[g]
    return BenefitReport(
        label=label,
        main_grid_energy=main_energy,
        inter_grid_energy=inter_energy,
        involved=involved,
        per_grid=per_grid,
        **totals,
    )


def reports_csv(reports: Iterable[BenefitReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scenario", "metric", "value"])
    for report in reports:
        writer.writerows(report.rows())
    return buf.getvalue()
