"""Routing of unmatched energy between microgrids and to the main grid.

After every microgrid has cleared internally, each grid's leftover becomes a
single position.  Connected grids trade leftovers among themselves in a
uniform-price auction where every grid bids as one agent; whatever remains
goes to the main grid at tariff prices.  The cost of externally routed energy
is then spread uniformly over the members on the side that needed it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import networkx as nx

from .auction import AgentState, AuctionParams, Role, run_consensus
from .errors import ImbalancedSettlement
from .market import (
    SCALE,
    ClearingResult,
    Order,
    OrderBook,
    Side,
    Tariff,
    clear_uniform,
    pro_rata,
    quantize,
)
from .seeding import rng_for


@dataclass(frozen=True)
class Topology:
    """Microgrids and the point-of-common-coupling links between them.

    In the default mode energy only moves along a direct link.  With
    ``relay`` set, any two grids in the same connected component can trade.
    """

    grids: frozenset[str]
    edges: frozenset[frozenset[str]]
    main_grid: Tariff
    relay: bool = False

    def __post_init__(self):
        for edge in self.edges:
            if len(edge) != 2:
                raise ValueError(f"edge {sorted(edge)} is a self-loop or malformed")
            unknown = set(edge) - set(self.grids)
            if unknown:
                raise ValueError(f"edge references unknown grids {sorted(unknown)}")

    @classmethod
    def build(
        cls,
        grids: Iterable[str],
        edges: Iterable[Sequence[str]],
        tariff: Tariff,
        relay: bool = False,
    ) -> "Topology":
        edge_set = set()
        for edge in edges:
            a, b = edge
            if a == b:
                raise ValueError(f"self-loop on grid {a}")
            edge_set.add(frozenset((a, b)))
        return cls(frozenset(grids), frozenset(edge_set), tariff, relay)

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(sorted(self.grids))
        g.add_edges_from(sorted(tuple(sorted(e)) for e in self.edges))
        return g

    def components(self) -> list[list[str]]:
        comps = [sorted(c) for c in nx.connected_components(self.graph())]
        return sorted(comps)

    def linked(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.edges


@dataclass(frozen=True)
class GridPosition:
    grid: str
    residual: int  # positive: surplus supply, negative: unmet demand
    internal_mcp: int | None

    @classmethod
    def from_result(cls, grid: str, result: ClearingResult | None, members: Sequence[AgentState]):
        if result is None:
            return cls(grid, sum(m.net_energy for m in members), None)
        # Leftovers on both sides of one grid net off against each other.
        return cls(grid, result.unmatched_supply - result.unmatched_demand, result.mcp)


@dataclass(frozen=True)
class InterGridTrade:
    seller: str
    buyer: str
    quantity: int
    price: int


@dataclass(frozen=True)
class MainGridTrade:
    grid: str
    side: Side  # the grid's side: BUY imports from the main grid
    energy: int
    price: int


def _grid_agents(positions: Sequence[GridPosition], tariff: Tariff):
    agents, bids = [], {}
    neutral = tariff.clamp(quantize(tariff.midpoint))
    for p in positions:
        selling = p.residual > 0
        agents.append(
            AgentState(
                id=p.grid,
                role=Role.SELLER if selling else Role.BUYER,
                limit_price=tariff.min_bid if selling else tariff.max_bid,
                aggressiveness=0.0,
                net_energy=p.residual,
            )
        )
        bids[p.grid] = neutral if p.internal_mcp is None else tariff.clamp(p.internal_mcp)
    return agents, bids


def _edge_flow(sellers, buyers, topology: Topology) -> list[tuple[str, str, int]]:
    g = nx.DiGraph()
    g.add_node("__source__")
    for p in sellers:
        g.add_edge("__source__", ("s", p.grid), capacity=p.residual)
    for p in buyers:
        g.add_edge(("b", p.grid), "__sink__", capacity=-p.residual)
    for s in sellers:
        for b in buyers:
            if topology.linked(s.grid, b.grid):
                g.add_edge(("s", s.grid), ("b", b.grid))
    if "__sink__" not in g:
        return []
    _, flow = nx.maximum_flow(g, "__source__", "__sink__")
    flows = []
    for s in sellers:
        for node, qty in sorted(flow.get(("s", s.grid), {}).items()):
            if qty:
                flows.append((s.grid, node[1], int(qty)))
    return flows


def inter_grid_auction(
    positions: Sequence[GridPosition], topology: Topology, params: AuctionParams
) -> tuple[list[InterGridTrade], list[GridPosition]]:
    """Trade grid leftovers within each connected component.

    Each surplus grid sells and each deficit grid buys, opening at its
    internal clearing price; the consensus loop settles one price per
    component.  A grid's true alternative is the main-grid tariff, so its
    limit sits at the edge of the tariff band and it accepts any component
    price: the traded quantity is the maximum feasible flow along links (or
    the smaller of total surplus and deficit in relay mode).
    """
    tariff = topology.main_grid
    by_grid = {p.grid: p for p in positions}
    trades: list[InterGridTrade] = []
    moved = {p.grid: 0 for p in positions}

    for comp in topology.components():
        active = [by_grid[g] for g in comp if g in by_grid and by_grid[g].residual != 0]
        sellers = [p for p in active if p.residual > 0]
        buyers = [p for p in active if p.residual < 0]
        if not sellers or not buyers:
            continue
        agents, bids = _grid_agents(active, tariff)
        rng = rng_for(params.rng_seed, "inter-grid", *comp)
        outcome = run_consensus(agents, tariff, params, initial_bids=bids, rng=rng)
        price = outcome.mcp_history[-1]

        if topology.relay:
            book = OrderBook(
                tariff, [Order(a.id, a.role.side, a.limit_price, a.quantity) for a in agents]
            )
            flows = [(a.seller, a.buyer, a.quantity) for a in clear_uniform(book, price).allocations]
        else:
            flows = _edge_flow(sellers, buyers, topology)

        for seller, buyer, qty in flows:
            trades.append(InterGridTrade(seller, buyer, qty, price))
            moved[seller] -= qty
            moved[buyer] += qty

    residuals = [replace(p, residual=p.residual + moved[p.grid]) for p in positions]
    return trades, residuals


def settle_main_grid(residuals: Iterable[GridPosition], tariff: Tariff) -> list[MainGridTrade]:
    """Buy every remaining deficit at the grid buy price, sell every surplus at the sell price."""
    trades = []
    for p in residuals:
        if p.residual < 0:
            trades.append(MainGridTrade(p.grid, Side.BUY, -p.residual, tariff.buy_price_gb))
        elif p.residual > 0:
            trades.append(MainGridTrade(p.grid, Side.SELL, p.residual, tariff.sell_price_gs))
    return trades


@dataclass(frozen=True)
class AgentSettlement:
    """Final position of one agent for one period.

    ``payment`` is what a buyer pays or a seller receives, in price units
    times Wh; it is always nonnegative.
    """

    agent: str
    grid: str
    role: Role
    energy: int
    internal_energy: int
    external_energy: int
    payment: int

    @property
    def effective_price(self) -> float:
        """Effective price in p/kWh."""
        return self.payment / self.energy / SCALE


@dataclass(frozen=True)
class GridSettlement:
    grid: str
    internal_mcp: int | None
    agents: tuple[AgentSettlement, ...]
    external_cash: int = 0
    neighbor_import: int = 0
    neighbor_export: int = 0
    main_import: int = 0
    main_export: int = 0
    main_cash: int = 0  # paid to the main grid, minus received from it

    @property
    def internal_energy(self) -> int:
        return sum(a.internal_energy for a in self.agents)


def apply_price_correction(
    grid_result: ClearingResult | None,
    external_trades: Iterable[tuple[int, int]],
    members: Sequence[AgentState],
    grid: str = "",
) -> GridSettlement:
    """Settle a grid's members after external routing.

    Args:
        grid_result: internal clearing, or None when the grid held no auction.
        external_trades: (energy Wh, price units) pairs covering everything
            the grid imported or exported this period.
        members: the period's bidders.
        grid: identifier recorded on the settlement.

    The side that needed external energy pays (or receives) one uniform
    volume-weighted price over its internal and external energy; the other
    side settles at the internal clearing price.
    """
    members = sorted(members, key=lambda m: m.id)
    external_trades = list(external_trades)
    mcp = grid_result.mcp if grid_result is not None else None
    internal = {m.id: grid_result.filled(m.id) if grid_result else 0 for m in members}
    unmatched = {m.id: m.quantity - internal[m.id] for m in members}
    buyers = [m for m in members if m.role is Role.BUYER]
    sellers = [m for m in members if m.role is Role.SELLER]
    open_buy = {m.id: unmatched[m.id] for m in buyers if unmatched[m.id] > 0}
    open_sell = {m.id: unmatched[m.id] for m in sellers if unmatched[m.id] > 0}

    netted = min(sum(open_buy.values()), sum(open_sell.values()))
    if netted:
        if mcp is None:
            raise ImbalancedSettlement(f"grid {grid}: netting leftovers without a clearing price")
        for side in (open_buy, open_sell):
            for agent_id, share in pro_rata(netted, side).items():
                internal[agent_id] += share

    residual = sum(m.net_energy for m in members)
    ext_energy = sum(e for e, _ in external_trades)
    if ext_energy != abs(residual):
        raise ImbalancedSettlement(
            f"grid {grid}: external trades cover {ext_energy} Wh, residual is {residual} Wh"
        )
    ext_cash = sum(e * p for e, p in external_trades)

    payments = {m.id: (mcp or 0) * internal[m.id] for m in members}
    routed = buyers if residual < 0 else sellers if residual > 0 else []
    if routed:
        side_cash = sum(payments[m.id] for m in routed) + ext_cash
        payments.update(pro_rata(side_cash, {m.id: m.quantity for m in routed}))

    agents = tuple(
        AgentSettlement(
            agent=m.id,
            grid=grid,
            role=m.role,
            energy=m.quantity,
            internal_energy=internal[m.id],
            external_energy=m.quantity - internal[m.id],
            payment=payments[m.id],
        )
        for m in members
    )
    paid = sum(a.payment for a in agents if a.role is Role.BUYER)
    received = sum(a.payment for a in agents if a.role is Role.SELLER)
    expected = ext_cash if residual < 0 else -ext_cash
    if paid - received != expected:
        raise ImbalancedSettlement(
            f"grid {grid}: members paid {paid}, received {received}, external cash {expected}"
        )
    return GridSettlement(grid=grid, internal_mcp=mcp, agents=agents, external_cash=expected)


@dataclass(frozen=True)
class SettlementReport:
    period_index: int
    grids: tuple[GridSettlement, ...]
    inter_trades: tuple[InterGridTrade, ...] = field(default=())
    main_trades: tuple[MainGridTrade, ...] = field(default=())

    @property
    def agents(self) -> list[AgentSettlement]:
        return [a for g in self.grids for a in g.agents]

    @property
    def main_energy(self) -> int:
        return sum(t.energy for t in self.main_trades)

    @property
    def inter_energy(self) -> int:
        return sum(t.quantity for t in self.inter_trades)

    def check(self, tariff: Tariff) -> None:
        """Raise :class:`ImbalancedSettlement` if any bookkeeping identity fails."""
        for a in self.agents:
            if a.internal_energy + a.external_energy != a.energy or a.external_energy < 0:
                raise ImbalancedSettlement(f"agent {a.agent}: energy split does not add up")
            if not tariff.sell_price_gs * a.energy <= a.payment <= tariff.buy_price_gb * a.energy:
                raise ImbalancedSettlement(f"agent {a.agent}: effective price outside tariff band")
        for g in self.grids:
            ext = sum(a.external_energy for a in g.agents)
            routed = g.neighbor_import + g.neighbor_export + g.main_import + g.main_export
            if ext != routed:
                raise ImbalancedSettlement(f"grid {g.grid}: {ext} Wh external, {routed} Wh routed")
        if sum(g.neighbor_import for g in self.grids) != sum(g.neighbor_export for g in self.grids):
            raise ImbalancedSettlement("inter-grid imports and exports differ")
        paid = sum(a.payment for a in self.agents if a.role is Role.BUYER)
        received = sum(a.payment for a in self.agents if a.role is Role.SELLER)
        if paid - received != sum(g.main_cash for g in self.grids):
            raise ImbalancedSettlement("member payments do not reconcile with main-grid cash")


def route_period(
    period: int,
    grids: Mapping[str, tuple[Sequence[AgentState], ClearingResult | None]],
    topology: Topology,
    params: AuctionParams,
) -> SettlementReport:
    """Inter-grid auction, main-grid settlement and price correction for one period."""
    tariff = topology.main_grid
    positions = [
        GridPosition.from_result(g, result, members)
        for g, (members, result) in sorted(grids.items())
    ]
    inter, residuals = inter_grid_auction(positions, topology, params)
    main = settle_main_grid(residuals, tariff)

    settlements = []
    for g, (members, result) in sorted(grids.items()):
        external = [(t.quantity, t.price) for t in inter if g in (t.seller, t.buyer)]
        mains = [t for t in main if t.grid == g]
        external += [(t.energy, t.price) for t in mains]
        s = apply_price_correction(result, external, members, grid=g)
        settlements.append(
            replace(
                s,
                neighbor_import=sum(t.quantity for t in inter if t.buyer == g),
                neighbor_export=sum(t.quantity for t in inter if t.seller == g),
                main_import=sum(t.energy for t in mains if t.side is Side.BUY),
                main_export=sum(t.energy for t in mains if t.side is Side.SELL),
                main_cash=sum(
                    t.energy * t.price * (1 if t.side is Side.BUY else -1) for t in mains
                ),
            )
        )
    report = SettlementReport(period, tuple(settlements), tuple(inter), tuple(main))
    report.check(tariff)
    return report
