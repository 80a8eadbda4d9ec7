"""Accounting model of per-microgrid chains anchored into a shared DAG.

Every microgrid owns one chain that records bids, clearing commits and
settlements.  At each round boundary a chain folds its new events into a
hash chained to its previous anchor and appends that digest to the shared
DAG, approving two earlier records.  Confirmation is modelled as a seeded
log-normal latency; there is no consensus protocol here.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import threading
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import NothingToAnchor, TimeRegression
from .seeding import rng_for

_Z95 = 1.6448536269514722


class EventKind(str, enum.Enum):
    BID = "bid"
    CLEARING_COMMIT = "clearing_commit"
    SETTLEMENT = "settlement"


def digest(payload) -> str:
    """SHA-256 of a JSON-serialisable payload in canonical form."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class LedgerCosts:
    """Per-transaction accounting constants.

    Attributes:
        energy_per_tx: Wh spent per transaction.
        fee_per_bid: tokens charged per bid.
        confirm_latency_mean: mean confirmation delay in seconds.
        confirm_latency_p95: 95th percentile of the delay in seconds.
    """

    energy_per_tx: float = 3.93e-9
    fee_per_bid: float = 1.0
    confirm_latency_mean: float = 12.0
    confirm_latency_p95: float = 20.0

    def __post_init__(self):
        if min(self.energy_per_tx, self.fee_per_bid, self.confirm_latency_mean) < 0:
            raise ValueError("ledger costs must be nonnegative")

    def lognormal(self) -> tuple[float, float]:
        """(mu, sigma) of a log-normal with the configured mean and p95."""
        m, q = self.confirm_latency_mean, self.confirm_latency_p95
        if m <= 0:
            return -math.inf, 0.0
        if q <= m:
            return math.log(m), 0.0
        # ln q - ln m = z*sigma - sigma^2/2, smaller root
        gap = math.log(q) - math.log(m)
        disc = _Z95 * _Z95 - 2 * gap
        sigma = _Z95 - math.sqrt(disc) if disc >= 0 else _Z95
        return math.log(m) - sigma * sigma / 2, sigma


@dataclass(frozen=True)
class ChainEvent:
    chain: str
    sequence: int
    kind: EventKind
    payload_digest: str
    sim_time: float
    confirm_time: float

    @property
    def latency(self) -> float:
        return self.confirm_time - self.sim_time

    def canonical(self) -> str:
        return f"{self.chain}|{self.sequence}|{self.kind.value}|{self.payload_digest}|{self.sim_time!r}"


@dataclass(frozen=True)
class AnchorRecord:
    record_id: int
    chain: str | None
    state_digest: str
    tangle_refs: tuple[int, ...]
    sim_time: float
    prev_digest: str = ""
    first_sequence: int = 0
    last_sequence: int = 0


def fold_digest(prev_digest: str, events: Iterable[ChainEvent]) -> str:
    h = hashlib.sha256(prev_digest.encode())
    for e in events:
        h.update(b"\n")
        h.update(e.canonical().encode())
    return h.hexdigest()


class Chain:
    """Single-writer event log of one microgrid."""

    def __init__(self, chain_id: str, costs: LedgerCosts, seed: int):
        self.id = chain_id
        self.costs = costs
        self.events: list[ChainEvent] = []
        self.anchors: list[AnchorRecord] = []
        self._anchored_upto = 0
        self._mu, self._sigma = costs.lognormal()
        self._rng = rng_for(seed, "latency", chain_id)

    @property
    def last_digest(self) -> str:
        return self.anchors[-1].state_digest if self.anchors else ""

    def _latency(self) -> float:
        if self.costs.confirm_latency_mean <= 0:
            return 0.0
        return float(self._rng.lognormal(self._mu, self._sigma))

    def record(self, kind: EventKind, payload_digest: str, sim_time: float) -> ChainEvent:
        if self.events and sim_time < self.events[-1].sim_time:
            raise TimeRegression(self.id, sim_time, self.events[-1].sim_time)
        event = ChainEvent(
            chain=self.id,
            sequence=len(self.events) + 1,
            kind=EventKind(kind),
            payload_digest=payload_digest,
            sim_time=float(sim_time),
            confirm_time=float(sim_time) + self._latency(),
        )
        self.events.append(event)
        return event

    def pending(self) -> list[ChainEvent]:
        return self.events[self._anchored_upto:]

    def mark_anchored(self, record: AnchorRecord) -> None:
        self.anchors.append(record)
        self._anchored_upto = record.last_sequence


class Tangle:
    """Shared DAG of anchor records; appends are serialised by a lock."""

    def __init__(self, seed: int = 0):
        self._lock = threading.Lock()
        self._rng = rng_for(seed, "tangle")
        self.records: list[AnchorRecord] = []
        self._tips: list[int] = []
        for i in range(2):
            self.records.append(
                AnchorRecord(i, None, hashlib.sha256(f"genesis-{i}".encode()).hexdigest(), (), 0.0)
            )
            self._tips.append(i)

    def snapshot(self) -> list[AnchorRecord]:
        with self._lock:
            return list(self.records)

    @property
    def tips(self) -> list[int]:
        with self._lock:
            return list(self._tips)

    def append(self, make_record) -> AnchorRecord:
        """Append ``make_record(record_id, refs)`` approving two earlier records.

        Two distinct tips are picked uniformly when available; a lone tip is
        paired with a uniformly chosen older record.
        """
        with self._lock:
            tips = sorted(self._tips)
            if len(tips) >= 2:
                picks = self._rng.choice(len(tips), size=2, replace=False)
                refs = tuple(sorted(tips[int(i)] for i in picks))
            else:
                others = [r.record_id for r in self.records if r.record_id != tips[0]]
                other = others[int(self._rng.integers(len(others)))]
                refs = tuple(sorted((tips[0], other)))
            record = make_record(len(self.records), refs)
            self.records.append(record)
            self._tips = [t for t in self._tips if t not in refs] + [record.record_id]
            return record


class Ledger:
    """Chains plus the tangle they anchor into."""

    def __init__(self, costs: LedgerCosts | None = None, seed: int = 0):
        self.costs = costs or LedgerCosts()
        self.seed = seed
        self.chains: dict[str, Chain] = {}
        self.tangle = Tangle(seed)
        self._chains_lock = threading.Lock()

    def chain(self, chain_id: str) -> Chain:
        with self._chains_lock:
            if chain_id not in self.chains:
                self.chains[chain_id] = Chain(chain_id, self.costs, self.seed)
            return self.chains[chain_id]

    def record_event(self, chain: str, kind, payload_digest: str, sim_time: float) -> ChainEvent:
        return self.chain(chain).record(kind, payload_digest, sim_time)

    def anchor(self, chain: str, sim_time: float) -> AnchorRecord:
        c = self.chain(chain)
        pending = c.pending()
        if not pending:
            raise NothingToAnchor(f"chain {chain!r} has no unanchored events")
        prev = c.last_digest
        state = fold_digest(prev, pending)

        def make(record_id, refs):
            return AnchorRecord(
                record_id=record_id,
                chain=chain,
                state_digest=state,
                tangle_refs=refs,
                sim_time=float(sim_time),
                prev_digest=prev,
                first_sequence=pending[0].sequence,
                last_sequence=pending[-1].sequence,
            )

        record = self.tangle.append(make)
        c.mark_anchored(record)
        return record

    def verify_anchor(self, record: AnchorRecord) -> bool:
        c = self.chains[record.chain]
        events = c.events[record.first_sequence - 1 : record.last_sequence]
        return fold_digest(record.prev_digest, events) == record.state_digest

    def verify(self) -> bool:
        """Every anchor matches its events and links to the previous anchor."""
        for c in self.chains.values():
            prev = ""
            for record in c.anchors:
                if record.prev_digest != prev or not self.verify_anchor(record):
                    return False
                prev = record.state_digest
        return True

    def events(self) -> list[ChainEvent]:
        return [e for cid in sorted(self.chains) for e in self.chains[cid].events]

    def export_jsonl(self, path: str | Path) -> None:
        """One JSON object per event, then one per anchor record."""
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.jsonl_lines():
                fh.write(line + "\n")

    def jsonl_lines(self) -> list[str]:
        lines = []
        for e in self.events():
            row = {"type": "event", **asdict(e), "kind": e.kind.value}
            lines.append(json.dumps(row, sort_keys=True))
        for r in self.tangle.snapshot():
            row = {"type": "anchor", **asdict(r), "tangle_refs": list(r.tangle_refs)}
            lines.append(json.dumps(row, sort_keys=True))
        return lines


@dataclass(frozen=True)
class LedgerMetrics:
    tx_count: int
    bid_count: int
    anchor_count: int
    total_fee: float
    total_energy_wh: float
    latency_mean: float
    latency_p95: float

    def as_dict(self) -> dict:
        return asdict(self)


def ledger_metrics(log: Ledger | Iterable[ChainEvent], costs: LedgerCosts | None = None) -> LedgerMetrics:
    """Transaction totals and the confirmation-latency summary of a log."""
    if isinstance(log, Ledger):
        costs = costs or log.costs
        events = log.events()
        anchors = len(log.tangle.snapshot()) - 2
    else:
        events = list(log)
        anchors = 0
    costs = costs or LedgerCosts()
    bids = sum(1 for e in events if e.kind is EventKind.BID)
    latencies = np.array([e.latency for e in events], dtype=float)
    return LedgerMetrics(
        tx_count=len(events),
        bid_count=bids,
        anchor_count=anchors,
        total_fee=bids * costs.fee_per_bid,
        total_energy_wh=len(events) * costs.energy_per_tx,
        latency_mean=float(latencies.mean()) if len(latencies) else 0.0,
        latency_p95=float(np.percentile(latencies, 95)) if len(latencies) else 0.0,
    )


def tamper(ledger: Ledger, chain: str, sequence: int, payload_digest: str) -> None:
    """Overwrite an archived event in place (test and audit helper)."""
    c = ledger.chains[chain]
    c.events[sequence - 1] = replace(c.events[sequence - 1], payload_digest=payload_digest)
