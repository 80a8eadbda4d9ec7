"""Microgrids and the per-period bidder population built from meter traces."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

from .auction import AgentState, Role
from .errors import MissingTrace
from .market import TICK, Tariff
from .seeding import rng_for

HOURS_PER_DAY = 24


@dataclass(frozen=True)
class TraceSample:
    agent: str
    grid: str
    period_index: int
    production: int
    consumption: int

    def __post_init__(self):
        if self.production < 0 or self.consumption < 0:
            raise ValueError(f"negative energy in trace of {self.agent} at {self.period_index}")


@dataclass(frozen=True)
class Microgrid:
    id: str
    members: frozenset[str]
    chain: str

    def __post_init__(self):
        if not self.members:
            raise ValueError(f"microgrid {self.id} has no members")


def net_energy(trace: TraceSample) -> int:
    """Production minus consumption in Wh; positive means a seller."""
    return trace.production - trace.consumption


def grids_from_traces(traces: Iterable[TraceSample]) -> dict[str, Microgrid]:
    members: dict[str, set[str]] = {}
    owner: dict[str, str] = {}
    for t in traces:
        if owner.setdefault(t.agent, t.grid) != t.grid:
            raise ValueError(f"agent {t.agent} appears in grids {owner[t.agent]} and {t.grid}")
        members.setdefault(t.grid, set()).add(t.agent)
    return {g: Microgrid(g, frozenset(m), chain=f"chain-{g}") for g, m in sorted(members.items())}


def index_traces(traces: Iterable[TraceSample]) -> dict[tuple[str, int], TraceSample]:
    return {(t.agent, t.period_index): t for t in traces}


def sample_limits(agent: str, day: int, tariff: Tariff, seed: int) -> tuple[int, int]:
    """(buy limit, sell limit) of ``agent`` for ``day``.

    Buy limits are uniform on the tick grid from the band midpoint up to one
    tick below the grid buy price; sell limits from one tick above the grid
    sell price up to the midpoint.
    """
    rng = rng_for(seed, "limits", agent, day)
    mid = tariff.midpoint
    buy_lo, buy_hi = math.ceil(mid / TICK), tariff.max_bid // TICK
    sell_lo, sell_hi = tariff.min_bid // TICK, math.floor(mid / TICK)
    buy = int(rng.integers(buy_lo, buy_hi + 1)) * TICK
    sell = int(rng.integers(sell_lo, sell_hi + 1)) * TICK
    return buy, sell


def bidders_for_period(
    grid: Microgrid,
    traces: Iterable[TraceSample] | Mapping[tuple[str, int], TraceSample],
    period: int,
    prior: Mapping[str, AgentState],
    tariff: Tariff,
    seed: int,
) -> list[AgentState]:
    """Active bidders of ``grid`` in ``period``, sorted by agent id.

    Aggressiveness carries over from ``prior`` (0 for agents not in it);
    limit prices are drawn once per agent per day from ``seed``.
    """
    index = traces if isinstance(traces, Mapping) else index_traces(traces)
    day = period // HOURS_PER_DAY
    bidders = []
    for agent_id in sorted(grid.members):
        sample = index.get((agent_id, period))
        if sample is None:
            raise MissingTrace(agent_id, period)
        delta = net_energy(sample)
        if delta == 0:
            continue
        buy_limit, sell_limit = sample_limits(agent_id, day, tariff, seed)
        role = Role.BUYER if delta < 0 else Role.SELLER
        previous = prior.get(agent_id)
        bidders.append(
            AgentState(
                id=agent_id,
                role=role,
                limit_price=buy_limit if role is Role.BUYER else sell_limit,
                aggressiveness=previous.aggressiveness if previous else 0.0,
                net_energy=delta,
            )
        )
    return bidders
