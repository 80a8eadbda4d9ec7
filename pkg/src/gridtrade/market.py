"""Uniform-price double auction primitives.

Prices are integers in milli-pence per kWh (``SCALE`` units per p/kWh) so
midpoints of tick-aligned bids and every payment stay exact.  Quantities are
integer Wh.  Payments are integers in price units times Wh.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, Mapping

from .errors import EmptySide

SCALE = 1000
TICK = 100  # 0.1 p/kWh


def to_units(pence_per_kwh: float | str | Decimal) -> int:
    """Convert a p/kWh value to integer price units (round half even)."""
    value = Decimal(str(pence_per_kwh)) * SCALE
    return int(value.quantize(Decimal(1), rounding=ROUND_HALF_EVEN))


def to_pence(units: int | float) -> float:
    return units / SCALE


def quantize(units: float) -> int:
    """Round a raw price onto the tick grid."""
    return int(round(units / TICK)) * TICK


class Side(str, enum.Enum):
    BUY = "buy"
    SELL = "sell"


@dataclass(frozen=True)
class Tariff:
    """Main-grid prices bounding every peer-to-peer price.

    Attributes:
        buy_price_gb: price agents pay the main grid, in price units.
        sell_price_gs: price the main grid pays agents, in price units.
    """

    buy_price_gb: int
    sell_price_gs: int

    def __post_init__(self):
        if not self.buy_price_gb > self.sell_price_gs > 0:
            raise ValueError(
                f"tariff needs buy > sell > 0, got {self.buy_price_gb} / {self.sell_price_gs}"
            )

    @classmethod
    def from_pence(cls, buy: float, sell: float) -> "Tariff":
        return cls(to_units(buy), to_units(sell))

    @property
    def midpoint(self) -> float:
        return (self.buy_price_gb + self.sell_price_gs) / 2

    @property
    def min_bid(self) -> int:
        """Lowest price strictly inside the band on the tick grid."""
        return self.sell_price_gs + TICK

    @property
    def max_bid(self) -> int:
        return self.buy_price_gb - TICK

    def clamp(self, units: int) -> int:
        return min(max(units, self.min_bid), self.max_bid)


@dataclass(frozen=True)
class Order:
    owner: str
    side: Side
    price: int
    quantity: int

    def __post_init__(self):
        if self.quantity <= 0:
            raise ValueError(f"order quantity must be positive, got {self.quantity}")

    def check(self, tariff: Tariff) -> None:
        if self.side is Side.BUY and not self.price < tariff.buy_price_gb:
            raise ValueError(f"buy order {self.owner} at {self.price} not below grid buy price")
        if self.side is Side.SELL and not self.price > tariff.sell_price_gs:
            raise ValueError(f"sell order {self.owner} at {self.price} not above grid sell price")


def _buy_key(order: Order):
    return (-order.price, order.owner)


def _sell_key(order: Order):
    return (order.price, order.owner)


class OrderBook:
    """Buys kept in descending price order, sells ascending; ties by owner."""

    def __init__(self, tariff: Tariff, orders: Iterable[Order] = ()):
        self.tariff = tariff
        self.buys: list[Order] = []
        self.sells: list[Order] = []
        for order in orders:
            self.add(order)

    def add(self, order: Order) -> None:
        order.check(self.tariff)
        if order.side is Side.BUY:
            self.buys.append(order)
            self.buys.sort(key=_buy_key)
        else:
            self.sells.append(order)
            self.sells.sort(key=_sell_key)

    @property
    def best_buy(self) -> int:
        if not self.buys:
            raise EmptySide("order book has no buy orders")
        return self.buys[0].price

    @property
    def best_sell(self) -> int:
        if not self.sells:
            raise EmptySide("order book has no sell orders")
        return self.sells[0].price

    @property
    def demand(self) -> int:
        return sum(o.quantity for o in self.buys)

    @property
    def supply(self) -> int:
        return sum(o.quantity for o in self.sells)

    def __repr__(self) -> str:
        return f"OrderBook(buys={self.buys!r}, sells={self.sells!r})"


@dataclass(frozen=True)
class Allocation:
    buyer: str
    seller: str
    quantity: int
    price: int


@dataclass(frozen=True)
class ClearingResult:
    mcp: int
    allocations: tuple[Allocation, ...]
    unmatched_demand: int
    unmatched_supply: int
    fills: Mapping[str, int] = field(default_factory=dict)

    @property
    def matched(self) -> int:
        return sum(a.quantity for a in self.allocations)

    def filled(self, owner: str) -> int:
        return self.fills.get(owner, 0)


def compute_mcp(book: OrderBook, rule: str = "prose") -> int:
    """Market clearing price of a book.

    ``rule="prose"`` splits the difference between the highest buy and the
    lowest sell.  ``rule="formula"`` uses the lowest buy and the highest sell
    instead.  Odd sums of price units round toward negative infinity; with
    tick-aligned prices the result is always exact.
    """
    if not book.buys or not book.sells:
        raise EmptySide("cannot compute a clearing price with an empty side")
    if rule == "prose":
        return (book.buys[0].price + book.sells[0].price) // 2
    if rule == "formula":
        return (book.buys[-1].price + book.sells[-1].price) // 2
    raise ValueError(f"unknown mcp rule {rule!r}")


def pro_rata(total: int, weights: Mapping[str, int]) -> dict[str, int]:
    """Split ``total`` integer units in proportion to ``weights``.

    Shares are rounded down and the remainder is handed out one unit at a
    time in ascending key order, never exceeding a recipient's weight when
    ``total`` does not exceed the weight sum.
    """
    keys = sorted(weights)
    weight_sum = sum(weights[k] for k in keys)
    if total < 0 or weight_sum <= 0:
        if total == 0:
            return {k: 0 for k in keys}
        raise ValueError(f"cannot split {total} over weights summing to {weight_sum}")
    shares = {k: total * weights[k] // weight_sum for k in keys}
    remainder = total - sum(shares.values())
    capped = total <= weight_sum
    while remainder:
        progressed = False
        for k in keys:
            if not remainder:
                break
            if capped and shares[k] >= weights[k]:
                continue
            shares[k] += 1
            remainder -= 1
            progressed = True
        if not progressed:  # pragma: no cover - weights exhausted
            raise ValueError("remainder could not be placed")
    return shares


def _fill_side(orders: list[Order], target: int) -> list[tuple[str, int]]:
    """Fill orders in priority order; the marginal price level shares pro rata."""
    fills: list[tuple[str, int]] = []
    remaining = target
    i = 0
    while i < len(orders) and remaining > 0:
        j = i
        while j < len(orders) and orders[j].price == orders[i].price:
            j += 1
        level = orders[i:j]
        level_total = sum(o.quantity for o in level)
        if level_total <= remaining:
            fills.extend((o.owner, o.quantity) for o in level)
            remaining -= level_total
        else:
            shares = pro_rata(remaining, {o.owner: o.quantity for o in level})
            fills.extend((o.owner, shares[o.owner]) for o in level if shares[o.owner])
            remaining = 0
        i = j
    return fills


def clear_uniform(book: OrderBook, mcp: int) -> ClearingResult:
    """Match every buy priced at or above ``mcp`` with sells at or below it.

    The matched quantity is the smaller of eligible demand and eligible supply.
    The shorter side fills completely; the longer side fills by price priority
    with a pro-rata split at its marginal price level.  Every allocation
    settles at ``mcp``.
    """
    if mcp <= 0:
        raise ValueError(f"clearing price must be positive, got {mcp}")
    buys = [o for o in book.buys if o.price >= mcp]
    sells = [o for o in book.sells if o.price <= mcp]
    matched = min(sum(o.quantity for o in buys), sum(o.quantity for o in sells))

    buy_fills = _fill_side(buys, matched)
    sell_fills = _fill_side(sells, matched)

    allocations = []
    bi = si = 0
    b_left = buy_fills[0][1] if buy_fills else 0
    s_left = sell_fills[0][1] if sell_fills else 0
    while bi < len(buy_fills) and si < len(sell_fills):
        qty = min(b_left, s_left)
        allocations.append(Allocation(buy_fills[bi][0], sell_fills[si][0], qty, mcp))
        b_left -= qty
        s_left -= qty
        if b_left == 0:
            bi += 1
            b_left = buy_fills[bi][1] if bi < len(buy_fills) else 0
        if s_left == 0:
            si += 1
            s_left = sell_fills[si][1] if si < len(sell_fills) else 0

    fills = dict(buy_fills)
    fills.update(sell_fills)
    return ClearingResult(
        mcp=mcp,
        allocations=tuple(allocations),
        unmatched_demand=book.demand - matched,
        unmatched_supply=book.supply - matched,
        fills=fills,
    )
