"""Price-consensus loop with aggressiveness-driven bidding.

Each round every agent bids, a clearing price is computed, agents adjust
their aggressiveness (forced towards 1 when supply and demand leave them no
freedom, randomly otherwise) and re-aim their bids.  The loop ends once the
clearing price moves by at most ``convergence_epsilon`` or the round budget
is spent, and the last book is cleared at the last price.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptySide
from .market import (
    TICK,
    ClearingResult,
    Order,
    OrderBook,
    Side,
    Tariff,
    clear_uniform,
    compute_mcp,
    quantize,
)

_E2M1 = math.expm1(2.0)


class Role(str, enum.Enum):
    BUYER = "buyer"
    SELLER = "seller"

    @property
    def side(self) -> Side:
        return Side.BUY if self is Role.BUYER else Side.SELL


@dataclass(frozen=True)
class AgentState:
    """One bidder for one trading period.

    Attributes:
        id: agent identifier, unique across the scenario.
        role: buyer when ``net_energy`` is negative, seller when positive.
        limit_price: buy limit for buyers, sell limit for sellers (price units).
        aggressiveness: r in [-1, 1]; -1 is fully passive, 1 fully aggressive.
        net_energy: signed Wh, negative for a deficit.
    """

    id: str
    role: Role
    limit_price: int
    aggressiveness: float
    net_energy: int

    def __post_init__(self):
        if not -1.0 <= self.aggressiveness <= 1.0:
            raise ValueError(f"aggressiveness {self.aggressiveness} outside [-1, 1]")
        if self.net_energy == 0:
            raise ValueError(f"agent {self.id} has no net energy and cannot bid")
        expected = Role.BUYER if self.net_energy < 0 else Role.SELLER
        if self.role is not expected:
            raise ValueError(f"agent {self.id}: role {self.role.value} contradicts net energy")

    @property
    def quantity(self) -> int:
        return abs(self.net_energy)

    def check(self, tariff: Tariff) -> None:
        if not tariff.sell_price_gs < self.limit_price < tariff.buy_price_gb:
            raise ValueError(f"agent {self.id}: limit {self.limit_price} outside tariff band")


@dataclass(frozen=True)
class AuctionParams:
    """Knobs of the consensus loop.

    ``convergence_epsilon`` is in price units.  ``mcp_rule``,
    ``verbatim_alg1`` and ``formula_literal`` select the alternative readings
    of the clearing price, the seller learning condition and the bid curve.
    """

    max_rounds: int = 10
    aggressiveness_step: float = 0.3
    convergence_epsilon: int = 50
    rng_seed: int = 0
    mcp_rule: str = "prose"
    verbatim_alg1: bool = False
    formula_literal: bool = False

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if not 0 < self.aggressiveness_step <= 1:
            raise ValueError("aggressiveness_step must lie in (0, 1]")
        if self.convergence_epsilon < 0:
            raise ValueError("convergence_epsilon must be nonnegative")
        if self.mcp_rule not in ("prose", "formula"):
            raise ValueError(f"unknown mcp_rule {self.mcp_rule!r}")


def _shape(r: float) -> float:
    """Exponential weight in [0, 1], 0 at r = 0 and 1 at |r| = 1."""
    return math.expm1(2.0 * abs(r)) / _E2M1


def bid_curve(role: Role, r: float, mcp: float, limit: float, tariff: Tariff) -> float:
    """Unrounded target bid.

    Buyers move from the grid sell price (r = -1) through ``mcp`` (r = 0) to
    their limit (r = 1); sellers from the grid buy price through ``mcp`` to
    their limit.
    """
    if role is Role.BUYER:
        far = tariff.sell_price_gs if r < 0 else limit
    else:
        far = tariff.buy_price_gb if r < 0 else limit
    return mcp + (far - mcp) * _shape(r)


def literal_bid_curve(role: Role, r: float, mcp: float, limit: float, tariff: Tariff) -> float:
    """Literal two-branch bid curve, split at r < 0 and r >= 0.

    The literal curves mention both a sell limit ``c`` and a buy limit ``l``;
    the counterpart limit an agent does not own is taken as the tariff bound.
    """
    if role is Role.BUYER:
        c, l = tariff.sell_price_gs, limit
        if r < 0:
            return c + (mcp - c) * (math.expm1(-2.0 * r) / _E2M1)
        return mcp + (l - mcp) * (1.0 - math.expm1(2.0 * r) / _E2M1)
    c, l = limit, tariff.buy_price_gb
    if r < 0:
        return mcp + (l - mcp) * (1.0 - math.expm1(-2.0 * r) / _E2M1)
    return c + (mcp - c) * (math.expm1(2.0 * r) / _E2M1)


def target_bid_price(
    agent: AgentState, mcp: int, tariff: Tariff, formula_literal: bool = False
) -> int:
    """Next bid of ``agent`` given the current clearing price.

    The raw curve value is capped at the agent's limit (a buyer never bids
    above it, a seller never below), kept strictly inside the tariff band and
    rounded onto the tick grid.
    """
    curve = literal_bid_curve if formula_literal else bid_curve
    raw = curve(agent.role, agent.aggressiveness, mcp, agent.limit_price, tariff)
    if agent.role is Role.BUYER:
        raw = min(raw, agent.limit_price)
    else:
        raw = max(raw, agent.limit_price)
    return tariff.clamp(quantize(raw))


def more_aggressive(r: float, step: float) -> float:
    return min(1.0, r + step * (1.0 - r))


def less_aggressive(r: float, step: float) -> float:
    return max(-1.0, r - step * (1.0 + r))


def is_forced(
    agent: AgentState, demand: int, supply: int, mcp: int, bid: int, verbatim_alg1: bool = False
) -> bool:
    """Whether supply and demand leave ``agent`` no freedom this round."""
    if agent.role is Role.BUYER:
        return demand < supply and bid < mcp
    if verbatim_alg1:
        return demand > supply and bid < mcp
    return demand > supply and bid > mcp


def apply_learning_rules(
    agents: Sequence[AgentState],
    demand: int,
    supply: int,
    mcp: int,
    bids: Mapping[str, int],
    params: AuctionParams,
    rng: np.random.Generator | None = None,
) -> list[AgentState]:
    """One aggressiveness update for every agent.

    Forced agents step towards r = 1.  Free agents pick uniformly between
    holding, stepping up and stepping down.  Agents are visited in id order
    so the random draws do not depend on input order.
    """
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)
    step = params.aggressiveness_step
    updated = {}
    for agent in sorted(agents, key=lambda a: a.id):
        r = agent.aggressiveness
        if is_forced(agent, demand, supply, mcp, bids[agent.id], params.verbatim_alg1):
            r = more_aggressive(r, step)
        else:
            choice = int(rng.integers(3))
            if choice == 1:
                r = more_aggressive(r, step)
            elif choice == 2:
                r = less_aggressive(r, step)
        updated[agent.id] = replace(agent, aggressiveness=r)
    return [updated[a.id] for a in agents]


def place_initial_bids(
    agents: Sequence[AgentState], tariff: Tariff, seed: int | np.random.Generator
) -> dict[str, Order]:
    """Uniform random opening bids on the tick grid.

    Buyers draw from the open interval (grid sell price, min(limit, grid buy
    price)); sellers from (max(limit, grid sell price), grid buy price).
    Quantity is the agent's absolute net energy.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    orders = {}
    for agent in sorted(agents, key=lambda a: a.id):
        if agent.role is Role.BUYER:
            lo = tariff.sell_price_gs + TICK
            hi = min(agent.limit_price, tariff.buy_price_gb) - TICK
        else:
            lo = max(agent.limit_price, tariff.sell_price_gs) + TICK
            hi = tariff.buy_price_gb - TICK
        lo_tick, hi_tick = -(-lo // TICK), hi // TICK
        if hi_tick < lo_tick:
            price = agent.limit_price
        else:
            price = int(rng.integers(lo_tick, hi_tick + 1)) * TICK
        orders[agent.id] = Order(agent.id, agent.role.side, price, agent.quantity)
    return orders


@dataclass(frozen=True)
class AuctionOutcome:
    """Everything a consensus run produces.

    ``bid_rounds`` holds the prices bid in each round and ``mcp_history`` the
    clearing price of each round; ``agents`` carry the updated aggressiveness.
    """

    result: ClearingResult
    agents: tuple[AgentState, ...]
    bid_rounds: tuple[Mapping[str, int], ...]
    mcp_history: tuple[int, ...]
    converged: bool = field(default=False)

    @property
    def rounds(self) -> int:
        return len(self.mcp_history)


def _book(agents: Sequence[AgentState], bids: Mapping[str, int], tariff: Tariff) -> OrderBook:
    return OrderBook(tariff, [Order(a.id, a.role.side, bids[a.id], a.quantity) for a in agents])


def run_consensus(
    agents: Sequence[AgentState],
    tariff: Tariff,
    params: AuctionParams,
    initial_bids: Mapping[str, int] | None = None,
    rng: np.random.Generator | None = None,
) -> AuctionOutcome:
    """Run the bidding loop and clear the final book.

    Args:
        agents: bidders; at least one buyer and one seller.
        tariff: main-grid price band.
        params: loop settings; ``params.rng_seed`` seeds the run unless
            ``rng`` is given.
        initial_bids: opening prices by agent id; drawn at random if omitted.
        rng: optional random stream shared with the caller.
    """
    agents = sorted(agents, key=lambda a: a.id)
    if not any(a.role is Role.BUYER for a in agents):
        raise EmptySide("auction has no buyers")
    if not any(a.role is Role.SELLER for a in agents):
        raise EmptySide("auction has no sellers")
    for agent in agents:
        agent.check(tariff)
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)

    if initial_bids is None:
        bids = {k: o.price for k, o in place_initial_bids(agents, tariff, rng).items()}
    else:
        bids = {a.id: int(initial_bids[a.id]) for a in agents}
    demand = sum(a.quantity for a in agents if a.role is Role.BUYER)
    supply = sum(a.quantity for a in agents if a.role is Role.SELLER)

    history: list[int] = []
    bid_rounds: list[dict[str, int]] = []
    converged = False
    while True:
        book = _book(agents, bids, tariff)
        mcp = compute_mcp(book, params.mcp_rule)
        bid_rounds.append(dict(bids))
        history.append(mcp)
        if len(history) > 1 and abs(history[-1] - history[-2]) <= params.convergence_epsilon:
            converged = True
            break
        if len(history) >= params.max_rounds:
            break
        agents = apply_learning_rules(agents, demand, supply, mcp, bids, params, rng)
        bids = {a.id: target_bid_price(a, mcp, tariff, params.formula_literal) for a in agents}

    return AuctionOutcome(
        result=clear_uniform(book, mcp),
        agents=tuple(agents),
        bid_rounds=tuple(bid_rounds),
        mcp_history=tuple(history),
        converged=converged,
    )


def run_auction(agents: Sequence[AgentState], tariff: Tariff, params: AuctionParams) -> ClearingResult:
    """Clearing result of :func:`run_consensus`."""
    return run_consensus(agents, tariff, params).result
