import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridtrade.auction import AgentState, Role
from gridtrade.data_io import generate_synthetic_week
from gridtrade.errors import MissingTrace
from gridtrade.market import TICK
from gridtrade.microgrid import (
    Microgrid,
    TraceSample,
    bidders_for_period,
    grids_from_traces,
    index_traces,
    net_energy,
    sample_limits,
)


def sample(agent, prod, cons, period=0, grid="MG1"):
    return TraceSample(agent, grid, period, prod, cons)


def test_net_energy_examples():
    assert net_energy(sample("a", 500, 200)) == 300
    assert net_energy(sample("a", 0, 450)) == -450
    assert net_energy(sample("a", 300, 300)) == 0


def test_negative_trace_rejected():
    with pytest.raises(ValueError):
        sample("a", -1, 0)


def test_roles_follow_sign(tariff):
    traces = [sample("a", 500, 200), sample("b", 0, 450), sample("c", 300, 300)]
    grid = grids_from_traces(traces)["MG1"]
    bidders = bidders_for_period(grid, traces, 0, {}, tariff, seed=1)
    assert [(b.id, b.role, b.net_energy) for b in bidders] == [
        ("a", Role.SELLER, 300),
        ("b", Role.BUYER, -450),
    ]


def test_all_balanced_gives_no_bidders(tariff):
    traces = [sample(x, 200, 200) for x in "abc"]
    grid = grids_from_traces(traces)["MG1"]
    assert bidders_for_period(grid, traces, 0, {}, tariff, seed=0) == []


def test_aggressiveness_carries_over(tariff):
    traces = [sample("a", 500, 200), sample("b", 0, 450)]
    grid = grids_from_traces(traces)["MG1"]
    prior = {"a": AgentState("a", Role.SELLER, 5000, 0.6, 10)}
    bidders = {b.id: b for b in bidders_for_period(grid, traces, 0, prior, tariff, seed=0)}
    assert bidders["a"].aggressiveness == 0.6
    assert bidders["b"].aggressiveness == 0.0


def test_limits_inside_band(tariff):
    for day in range(30):
        buy, sell = sample_limits("agent", day, tariff, seed=4)
        assert tariff.midpoint <= buy < tariff.buy_price_gb
        assert tariff.sell_price_gs < sell <= tariff.midpoint
        assert buy % TICK == 0 and sell % TICK == 0
    assert sample_limits("agent", 2, tariff, 4) == sample_limits("agent", 2, tariff, 4)


def test_limits_fixed_within_a_day(tariff):
    traces = [sample("a", 500, 0, period=p) for p in range(24)] + [
        sample("b", 0, 500, period=p) for p in range(24)
    ]
    grid = grids_from_traces(traces)["MG1"]
    index = index_traces(traces)
    limits = {bidders_for_period(grid, index, p, {}, tariff, 0)[0].limit_price for p in range(24)}
    assert len(limits) == 1


def test_noon_sellers_majority(tariff):
    traces = generate_synthetic_week(0)
    grid = grids_from_traces(traces)["MG1"]
    bidders = bidders_for_period(grid, traces, 12, {}, tariff, 0)
    sellers = [b for b in bidders if b.role is Role.SELLER]
    assert len(sellers) > len(bidders) / 2


def test_order_independent(tariff):
    traces = generate_synthetic_week(3)
    grid = grids_from_traces(traces)["MG2"]
    forward = bidders_for_period(grid, traces, 40, {}, tariff, 3)
    backward = bidders_for_period(grid, list(reversed(traces)), 40, {}, tariff, 3)
    assert forward == backward


def test_missing_trace(tariff):
    traces = [sample("a", 500, 200), sample("b", 0, 450, period=1)]
    grid = Microgrid("MG1", frozenset({"a", "b"}), "chain-MG1")
    with pytest.raises(MissingTrace) as exc:
        bidders_for_period(grid, traces, 0, {}, tariff, 0)
    assert exc.value.agent == "b" and exc.value.period == 0
    assert "[microgrid]" in str(exc.value)


def test_agent_in_two_grids_rejected():
    with pytest.raises(ValueError):
        grids_from_traces([sample("a", 1, 0, grid="MG1"), sample("a", 1, 0, period=1, grid="MG2")])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5000), st.integers(0, 5000)), min_size=1, max_size=12))
def test_role_matches_sign_property(pairs):
    from gridtrade.market import Tariff

    tariff = Tariff.from_pence(18.9, 3.2)
    traces = [sample(f"h{i}", p, c) for i, (p, c) in enumerate(pairs)]
    grid = grids_from_traces(traces)["MG1"]
    bidders = bidders_for_period(grid, traces, 0, {}, tariff, 0)
    assert len(bidders) == sum(1 for p, c in pairs if p != c)
    for b in bidders:
        assert (b.role is Role.SELLER) == (b.net_energy > 0)
        assert b.quantity == abs(b.net_energy)
