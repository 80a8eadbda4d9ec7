import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridtrade.auction import AgentState, AuctionParams, Role, run_consensus
from gridtrade.errors import ImbalancedSettlement
from gridtrade.hierarchy import (
    GridPosition,
    Topology,
    apply_price_correction,
    inter_grid_auction,
    route_period,
    settle_main_grid,
)
from gridtrade.market import OrderBook, Order, Side, Tariff, clear_uniform, to_units

TARIFF = Tariff.from_pence(18.9, 3.2)
PARAMS = AuctionParams(rng_seed=7)


def positions(**residuals):
    return [GridPosition(g, r, None) for g, r in sorted(residuals.items())]


def brute_force_flow(residuals: dict, edges) -> int:
    """Largest total flow along direct links, by enumerating every integer flow."""
    sellers = {g: r for g, r in residuals.items() if r > 0}
    buyers = {g: -r for g, r in residuals.items() if r < 0}
    links = [(s, b) for s in sellers for b in buyers if frozenset((s, b)) in edges]
    best = 0
    ranges = [range(min(sellers[s], buyers[b]) + 1) for s, b in links]
    for flows in itertools.product(*ranges):
        out = {s: 0 for s in sellers}
        inn = {b: 0 for b in buyers}
        for (s, b), x in zip(links, flows):
            out[s] += x
            inn[b] += x
        if all(out[s] <= sellers[s] for s in sellers) and all(inn[b] <= buyers[b] for b in buyers):
            best = max(best, sum(flows))
    return best


def test_offsetting_pair_clears_fully():
    topo = Topology.build(["A", "B"], [("A", "B")], TARIFF)
    trades, residuals = inter_grid_auction(positions(A=120, B=-120), topo, PARAMS)
    assert sum(t.quantity for t in trades) == 120
    assert all(p.residual == 0 for p in residuals)
    assert all(TARIFF.sell_price_gs <= t.price <= TARIFF.buy_price_gb for t in trades)


def test_no_edges_keeps_residuals():
    topo = Topology.build(["A", "B", "C"], [], TARIFF)
    pos = positions(A=100, B=-40, C=-70)
    trades, residuals = inter_grid_auction(pos, topo, PARAMS)
    assert trades == [] and residuals == pos


def test_three_grid_example():
    edges = [("A", "C"), ("B", "C")]
    topo = Topology.build(["A", "B", "C"], edges, TARIFF)
    res = {"A": 100, "B": 50, "C": -80}
    trades, residuals = inter_grid_auction(positions(**res), topo, PARAMS)
    matched = sum(t.quantity for t in trades)
    assert matched == brute_force_flow(res, topo.edges) == 80
    assert sum(p.residual for p in residuals if p.residual > 0) == 70
    assert len({t.price for t in trades}) == 1


def test_edge_mode_needs_direct_link():
    topo = Topology.build(["A", "B", "C"], [("A", "B"), ("B", "C")], TARIFF)
    pos = positions(A=60, B=0, C=-60)
    trades, residuals = inter_grid_auction(pos, topo, PARAMS)
    assert trades == [] and residuals == pos
    relay = Topology.build(["A", "B", "C"], [("A", "B"), ("B", "C")], TARIFF, relay=True)
    trades, residuals = inter_grid_auction(pos, relay, PARAMS)
    assert sum(t.quantity for t in trades) == 60
    assert all(p.residual == 0 for p in residuals)


def test_topology_validation():
    with pytest.raises(ValueError):
        Topology.build(["A"], [("A", "A")], TARIFF)
    with pytest.raises(ValueError):
        Topology.build(["A"], [("A", "Z")], TARIFF)


@settings(max_examples=150, deadline=None)
@given(
    res=st.lists(st.integers(-6, 6), min_size=3, max_size=4),
    mask=st.lists(st.booleans(), min_size=6, max_size=6),
)
def test_edge_flow_matches_brute_force(res, mask):
    grids = [f"G{i}" for i in range(len(res))]
    pairs = list(itertools.combinations(grids, 2))
    edges = [p for p, on in zip(pairs, mask) if on]
    topo = Topology.build(grids, edges, TARIFF)
    residual = dict(zip(grids, res))
    trades, after = inter_grid_auction(positions(**residual), topo, PARAMS)
    assert sum(t.quantity for t in trades) == brute_force_flow(residual, topo.edges)
    assert sum(p.residual for p in after) == sum(res)
    for before, p in zip(positions(**residual), after):
        assert abs(p.residual) <= abs(before.residual)
        assert p.residual * before.residual >= 0

    # more links never increase reliance on the main grid
    full = Topology.build(grids, pairs, TARIFF)
    _, after_full = inter_grid_auction(positions(**residual), full, PARAMS)
    main = lambda ps: sum(t.energy for t in settle_main_grid(ps, TARIFF))
    assert main(after_full) <= main(after)


def test_settle_main_grid_examples():
    [buy] = settle_main_grid([GridPosition("A", -500, None)], TARIFF)
    assert (buy.side, buy.energy, buy.price) == (Side.BUY, 500, to_units(18.9))
    [sell] = settle_main_grid([GridPosition("A", 500, None)], TARIFF)
    assert (sell.side, sell.energy, sell.price) == (Side.SELL, 500, to_units(3.2))
    assert settle_main_grid([GridPosition("A", 0, None)], TARIFF) == []


def _grid(buy_qty, sell_qty, buy_price=12.0, sell_price=8.0):
    members = [
        AgentState("b", Role.BUYER, to_units(15.0), 0.0, -buy_qty),
        AgentState("s", Role.SELLER, to_units(5.0), 0.0, sell_qty),
    ]
    book = OrderBook(
        TARIFF,
        [Order("b", Side.BUY, to_units(buy_price), buy_qty), Order("s", Side.SELL, to_units(sell_price), sell_qty)],
    )
    return members, clear_uniform(book, to_units(10.0))


def test_correction_identity():
    members, result = _grid(80, 80)
    s = apply_price_correction(result, [], members, grid="A")
    assert all(a.effective_price == pytest.approx(10.0) for a in s.agents)
    assert s.external_cash == 0


def test_correction_half_from_main_grid():
    members, result = _grid(100, 50)
    s = apply_price_correction(result, [(50, to_units(18.9))], members, grid="A")
    by_id = {a.agent: a for a in s.agents}
    # (50 * 10.0 + 50 * 18.9) / 100
    assert by_id["b"].payment == 50 * 10_000 + 50 * 18_900
    assert by_id["b"].effective_price == pytest.approx(14.45, abs=1e-12)
    assert by_id["s"].effective_price == pytest.approx(10.0)
    assert s.external_cash == 50 * 18_900


def test_correction_surplus_to_main_grid():
    members, result = _grid(50, 100)
    s = apply_price_correction(result, [(50, to_units(3.2))], members, grid="A")
    seller = next(a for a in s.agents if a.agent == "s")
    assert 3.2 <= seller.effective_price < 10.0
    assert seller.effective_price == pytest.approx(6.6)


def test_correction_rejects_unbalanced_external():
    members, result = _grid(100, 50)
    with pytest.raises(ImbalancedSettlement):
        apply_price_correction(result, [(40, to_units(18.9))], members, grid="A")


def test_correction_nets_leftovers_at_mcp():
    # both sides keep leftovers when bids do not cross at the chosen price
    members, _ = _grid(60, 60)
    book = OrderBook(
        TARIFF, [Order("b", Side.BUY, to_units(9.0), 60), Order("s", Side.SELL, to_units(11.0), 60)]
    )
    result = clear_uniform(book, to_units(10.0))
    assert result.matched == 0
    s = apply_price_correction(result, [], members, grid="A")
    assert all(a.internal_energy == 60 and a.effective_price == pytest.approx(10.0) for a in s.agents)


def _population(grid, buyers, sellers):
    out = [AgentState(f"{grid}-b{i}", Role.BUYER, to_units(15.0), 0.0, -q) for i, q in enumerate(buyers)]
    out += [AgentState(f"{grid}-s{i}", Role.SELLER, to_units(5.0), 0.0, q) for i, q in enumerate(sellers)]
    return out


@pytest.mark.parametrize("relay", [False, True])
def test_route_period_reconciles(relay):
    pops = {
        "A": _population("A", [100, 40], [300, 90]),
        "B": _population("B", [250, 120], [60]),
        "C": _population("C", [80], []),
    }
    grids = {}
    for g, members in pops.items():
        roles = {m.role for m in members}
        outcome = run_consensus(members, TARIFF, PARAMS) if len(roles) == 2 else None
        grids[g] = (members, outcome.result if outcome else None)
    topo = Topology.build(pops, [("A", "B"), ("A", "C")], TARIFF, relay=relay)
    report = route_period(0, grids, topo, PARAMS)
    report.check(TARIFF)
    total = sum(abs(m.net_energy) for ms in pops.values() for m in ms)
    internal = sum(a.internal_energy for a in report.agents)
    assert internal + 2 * report.inter_energy + report.main_energy == total
    net = sum(m.net_energy for ms in pops.values() for m in ms)
    imports = sum(t.energy for t in report.main_trades if t.side is Side.BUY)
    exports = sum(t.energy for t in report.main_trades if t.side is Side.SELL)
    assert exports - imports == net
