"""Peer-to-peer energy trading across interconnected microgrids.

Uniform-price double auctions inside each microgrid, hierarchical routing of
leftovers to linked grids and the main grid, and an accounting model of
per-grid chains anchored into a shared DAG ledger.
"""

__version__ = "0.1.0"

from .auction import AgentState, AuctionParams, Role, run_auction, run_consensus, target_bid_price
from .market import SCALE, TICK, ClearingResult, Order, OrderBook, Side, Tariff, clear_uniform, compute_mcp

__all__ = [
    "AgentState",
    "AuctionParams",
    "ClearingResult",
    "Order",
    "OrderBook",
    "Role",
    "SCALE",
    "Side",
    "TICK",
    "Tariff",
    "clear_uniform",
    "compute_mcp",
    "run_auction",
    "run_consensus",
    "target_bid_price",
]
