"""End-to-end pipeline: traces -> microgrid auctions -> routing -> ledger -> metrics."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

from .auction import AgentState, AuctionOutcome, Role, run_consensus
from .data_io import ScenarioConfig
from .hierarchy import SettlementReport, route_period
from .ledger import EventKind, Ledger, digest
from .metrics import BenefitReport, scenario_report
from .microgrid import HOURS_PER_DAY, TraceSample, bidders_for_period, grids_from_traces, index_traces
from .seeding import derive_seed

log = logging.getLogger(__name__)

SECONDS_PER_PERIOD = 3600


@dataclass(frozen=True)
class Scenario:
    """Which grids trade with each other.

    ``edges`` are the links active in this run; ``involved`` the grids whose
    agents count towards the benefit figures.
    """

    label: str
    edges: tuple[tuple[str, str], ...]
    involved: tuple[str, ...]


def grid_scenario(config: ScenarioConfig) -> Scenario:
    return Scenario("Grid", (), tuple(config.grids))


def all_scenario(config: ScenarioConfig) -> Scenario:
    return Scenario("All", tuple(tuple(e) for e in config.edges), tuple(config.grids))


def pair_scenario(config: ScenarioConfig, a: str, b: str) -> Scenario:
    if a not in config.grids or b not in config.grids or a == b:
        raise ValueError(f"pair {a},{b} is not a pair of configured grids")
    return Scenario(f"{a}+{b}", ((a, b),), tuple(sorted((a, b))))


def scenario_matrix(config: ScenarioConfig) -> list[Scenario]:
    """Grid, every linked pair, then All; just Grid when there are no links."""
    pairs = sorted({tuple(sorted(e)) for e in config.edges})
    if not pairs:
        return [grid_scenario(config)]
    return [grid_scenario(config)] + [pair_scenario(config, a, b) for a, b in pairs] + [
        all_scenario(config)
    ]


@dataclass
class SimulationResult:
    scenario: Scenario
    settlements: list[SettlementReport]
    ledger: Ledger
    report: BenefitReport
    auctions: int = 0


def _record_auction(ledger: Ledger, chain: str, outcome: AuctionOutcome, t0: float, step: float):
    for k, (bids, mcp) in enumerate(zip(outcome.bid_rounds, outcome.mcp_history)):
        t = t0 + k * step
        for agent_id in sorted(bids):
            ledger.record_event(chain, EventKind.BID, digest([agent_id, bids[agent_id]]), t)
        ledger.record_event(chain, EventKind.CLEARING_COMMIT, digest(["round", k, mcp]), t)
        ledger.anchor(chain, t)


def simulate(
    config: ScenarioConfig,
    scenario: Scenario,
    samples: Sequence[TraceSample] | None = None,
    workers: int = 1,
) -> SimulationResult:
    """Run ``scenario`` over ``config.period_count`` periods.

    Microgrid auctions of one period are independent and may run on
    ``workers`` threads; routing and ledger appends happen after all of them
    finish, in grid order, so output does not depend on ``workers``.
    """
    samples = list(samples) if samples is not None else config.load_samples()
    index = index_traces(samples)
    grids = grids_from_traces(samples)
    topology = config.topology(scenario.edges)
    tariff = config.tariff
    ledger = Ledger(config.ledger, seed=config.seed)
    prior: dict[str, AgentState] = {}
    settlements = []
    auctions = 0

    def clear_grid(grid_id: str, period: int):
        grid = grids[grid_id]
        members = bidders_for_period(grid, index, period, prior, tariff, config.seed)
        roles = {m.role for m in members}
        if roles != {Role.BUYER, Role.SELLER}:
            return members, None
        params = replace(config.auction, rng_seed=derive_seed(config.seed, "auction", grid_id, period))
        return members, run_consensus(members, tariff, params)

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for period in range(config.period_count):
            if config.reset_daily and period % HOURS_PER_DAY == 0:
                prior.clear()
            order = sorted(grids)
            if pool is not None:
                cleared = dict(zip(order, pool.map(lambda g: clear_grid(g, period), order)))
            else:
                cleared = {g: clear_grid(g, period) for g in order}

            t0 = float(period * SECONDS_PER_PERIOD)
            per_grid = {}
            for g in order:
                members, outcome = cleared[g]
                if outcome is not None:
                    auctions += 1
                    prior.update({a.id: a for a in outcome.agents})
                    _record_auction(ledger, grids[g].chain, outcome, t0, config.round_interval)
                per_grid[g] = (members, outcome.result if outcome else None)

            params = replace(config.auction, rng_seed=derive_seed(config.seed, "inter", period))
            report = route_period(period, per_grid, topology, params)
            settlements.append(report)

            t_settle = t0 + (config.auction.max_rounds + 1) * config.round_interval
            for gs in report.grids:
                if not gs.agents:
                    continue
                chain = grids[gs.grid].chain
                for a in gs.agents:
                    payload = [period, a.agent, a.energy, a.internal_energy, a.payment]
                    ledger.record_event(chain, EventKind.SETTLEMENT, digest(payload), t_settle)
                ledger.anchor(chain, t_settle)
    finally:
        if pool is not None:
            pool.shutdown()

    report = scenario_report(settlements, scenario.label, tariff, scenario.involved)
    log.info(
        "%s: %d periods, %d auctions, main grid %d Wh",
        scenario.label,
        config.period_count,
        auctions,
        report.main_grid_energy,
    )
    return SimulationResult(scenario, settlements, ledger, report, auctions)


def run_matrix(config: ScenarioConfig, samples: Sequence[TraceSample] | None = None):
    samples = list(samples) if samples is not None else config.load_samples()
    return [simulate(config, s, samples) for s in scenario_matrix(config)]
