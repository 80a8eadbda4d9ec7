"""Trace files, the synthetic photovoltaic week and scenario configuration.

Trace CSV schema (UTF-8, comma separated, integer Wh)::

    agent_id,grid_id,period,production_wh,consumption_wh

Scenario files are TOML; see ``ScenarioConfig.from_dict`` for the keys.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .auction import AuctionParams
from .errors import ConfigError, DataError, GapError, ParseError, SchemaError
from .hierarchy import Topology
from .ledger import LedgerCosts
from .market import Tariff, to_units
from .microgrid import HOURS_PER_DAY, TraceSample
from .seeding import rng_for

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

COLUMNS = ("agent_id", "grid_id", "period", "production_wh", "consumption_wh")


def load_traces(path: str | Path) -> list[TraceSample]:
    """Read a trace CSV, validating schema, values and period coverage."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"trace file not found: {path}")
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in COLUMNS:
            if col not in header:
                raise SchemaError(col)
        for row in reader:
            line = reader.line_num
            try:
                sample = TraceSample(
                    agent=row["agent_id"].strip(),
                    grid=row["grid_id"].strip(),
                    period_index=int(row["period"]),
                    production=int(row["production_wh"]),
                    consumption=int(row["consumption_wh"]),
                )
            except (TypeError, ValueError, AttributeError) as exc:
                raise ParseError(str(exc), line) from None
            if not sample.agent or not sample.grid:
                raise ParseError("empty agent or grid id", line)
            samples.append(sample)

    periods: dict[str, set[int]] = {}
    for s in samples:
        seen = periods.setdefault(s.agent, set())
        if s.period_index in seen:
            raise DataError(f"duplicate sample for agent {s.agent!r} in period {s.period_index}")
        seen.add(s.period_index)
    if periods:
        lo = min(min(p) for p in periods.values())
        hi = max(max(p) for p in periods.values())
        for agent in sorted(periods):
            for t in range(lo, hi + 1):
                if t not in periods[agent]:
                    raise GapError(agent, t)
    return samples


def write_traces(samples: Iterable[TraceSample], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for s in sorted(samples, key=lambda s: (s.grid, s.agent, s.period_index)):
            writer.writerow([s.agent, s.grid, s.period_index, s.production, s.consumption])


# Household-scale profile constants, Wh per hour.
PV_PEAK = {"producer": (300, 2800), "consumer": (150, 1100)}
BASE_LOAD = (150, 550)
MORNING_PEAK = (350, 650)
EVENING_PEAK = (700, 1200)
SUNRISE, SUNSET = 6, 18


def _daylight(hour: float) -> float:
    if not SUNRISE < hour < SUNSET:
        return 0.0
    return math.sin(math.pi * (hour - SUNRISE) / (SUNSET - SUNRISE))


def _household(hour: float) -> tuple[float, float]:
    morning = math.exp(-0.5 * ((hour - 7.5) / 1.2) ** 2)
    evening = math.exp(-0.5 * ((hour - 19.0) / 1.8) ** 2)
    return morning, evening


def generate_synthetic_week(
    seed: int,
    grids: Sequence[str] = ("MG1", "MG2", "MG3"),
    agents_per_grid: int = 5,
    shifted_grid: str | None = "MG3",
    consumer_grid: str | None = "MG2",
    days: int = 7,
) -> list[TraceSample]:
    """Hourly production and consumption traces for a week.

    Production is a half-sine between 06:00 and 18:00 scaled by a per-agent
    peak and a per-day cloud factor; ``shifted_grid`` has its production
    rotated by 12 hours so it peaks around midnight.  Consumption is a base
    load plus morning and evening peaks with hourly jitter.
    ``consumer_grid`` gets smaller arrays and a heavier load.
    """
    samples = []
    for g in grids:
        heavy = g == consumer_grid
        for k in range(1, agents_per_grid + 1):
            agent = f"{g}-H{k}"
            rng = rng_for(seed, "trace", agent)
            peak = rng.uniform(*PV_PEAK["consumer" if heavy else "producer"])
            base = rng.uniform(*BASE_LOAD) * (1.6 if heavy else 1.0)
            morning = rng.uniform(*MORNING_PEAK) * (1.6 if heavy else 1.0)
            evening = rng.uniform(*EVENING_PEAK) * (1.6 if heavy else 1.0)
            for day in range(days):
                cloud = rng.uniform(0.55, 1.05)
                for hour in range(HOURS_PER_DAY):
                    solar_hour = (hour + 12) % HOURS_PER_DAY if g == shifted_grid else hour
                    prod = peak * cloud * _daylight(solar_hour) * rng.uniform(0.9, 1.1)
                    m, e = _household(hour)
                    cons = (base + morning * m + evening * e) * rng.uniform(0.85, 1.15)
                    samples.append(
                        TraceSample(
                            agent=agent,
                            grid=g,
                            period_index=day * HOURS_PER_DAY + hour,
                            production=int(round(prod)),
                            consumption=int(round(cons)),
                        )
                    )
    return samples


@dataclass
class ScenarioConfig:
    tariff: Tariff
    auction: AuctionParams
    ledger: LedgerCosts
    grids: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]
    traces: str = "synthetic"
    agents_per_grid: int = 5
    shifted_grid: str | None = "MG3"
    consumer_grid: str | None = "MG2"
    period_count: int = 168
    seed: int = 0
    relay: bool = False
    reset_daily: bool = True
    round_interval: float = 30.0
    base_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        if self.period_count < 1:
            raise ConfigError("period_count must be at least 1")
        for a, b in self.edges:
            if a not in self.grids or b not in self.grids:
                raise ConfigError(f"edge {a}-{b} references a grid that is not configured")

    @property
    def mode_flags(self) -> dict:
        return {
            "mcp_rule": self.auction.mcp_rule,
            "verbatim_alg1": self.auction.verbatim_alg1,
            "formula_literal": self.auction.formula_literal,
            "relay": self.relay,
        }

    def topology(self, edges: Iterable[Sequence[str]] | None = None) -> Topology:
        return Topology.build(
            self.grids, self.edges if edges is None else edges, self.tariff, relay=self.relay
        )

    def load_samples(self) -> list[TraceSample]:
        if self.traces == "synthetic":
            return generate_synthetic_week(
                self.seed,
                self.grids,
                self.agents_per_grid,
                self.shifted_grid,
                self.consumer_grid,
                days=-(-self.period_count // HOURS_PER_DAY),
            )
        path = Path(self.traces)
        if not path.is_absolute():
            path = self.base_dir / path
        samples = load_traces(path)
        known = {s.grid for s in samples}
        missing = set(self.grids) - known
        if missing:
            raise ConfigError(f"grids {sorted(missing)} have no traces in {path}")
        return [s for s in samples if s.grid in self.grids]

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "ScenarioConfig":
        """Build a config from parsed TOML.

        Top-level keys ``seed`` and ``period_count``; tables ``[tariff]``
        (``buy_price_gb``, ``sell_price_gs`` in p/kWh), ``[auction]``
        (``max_rounds``, ``aggressiveness_step``, ``convergence_epsilon`` in
        p/kWh), ``[ledger]`` (``energy_per_tx_nwh``, ``fee_per_bid``,
        ``confirm_latency_mean``, ``confirm_latency_p95``, ``round_interval``),
        ``[traces]`` (``source``, ``grids``, ``agents_per_grid``,
        ``shifted_grid``, ``consumer_grid``), ``[topology]`` (``edges``) and
        ``[modes]`` (``mcp_rule``, ``verbatim_alg1``, ``formula_literal``,
        ``relay``, ``reset_daily``).
        """
        try:
            tariff_d = data.get("tariff", {})
            auction_d = data.get("auction", {})
            ledger_d = data.get("ledger", {})
            traces_d = data.get("traces", {})
            modes = data.get("modes", {})
            seed = int(data.get("seed", 0))
            tariff = Tariff.from_pence(
                tariff_d.get("buy_price_gb", 18.9), tariff_d.get("sell_price_gs", 3.2)
            )
            auction = AuctionParams(
                max_rounds=int(auction_d.get("max_rounds", 10)),
                aggressiveness_step=float(auction_d.get("aggressiveness_step", 0.3)),
                convergence_epsilon=to_units(auction_d.get("convergence_epsilon", 0.05)),
                rng_seed=seed,
                mcp_rule=str(modes.get("mcp_rule", "prose")),
                verbatim_alg1=bool(modes.get("verbatim_alg1", False)),
                formula_literal=bool(modes.get("formula_literal", False)),
            )
            costs = LedgerCosts(
                energy_per_tx=float(ledger_d.get("energy_per_tx_nwh", 3.93)) * 1e-9,
                fee_per_bid=float(ledger_d.get("fee_per_bid", 1.0)),
                confirm_latency_mean=float(ledger_d.get("confirm_latency_mean", 12.0)),
                confirm_latency_p95=float(ledger_d.get("confirm_latency_p95", 20.0)),
            )
            grids = tuple(traces_d.get("grids", ("MG1", "MG2", "MG3")))
            edges = tuple(tuple(e) for e in data.get("topology", {}).get("edges", ()))
            for e in edges:
                if len(e) != 2 or e[0] == e[1]:
                    raise ConfigError(f"malformed edge {list(e)}")
            return cls(
                tariff=tariff,
                auction=auction,
                ledger=costs,
                grids=grids,
                edges=edges,
                traces=str(traces_d.get("source", "synthetic")),
                agents_per_grid=int(traces_d.get("agents_per_grid", 5)),
                shifted_grid=traces_d.get("shifted_grid", "MG3") or None,
                consumer_grid=traces_d.get("consumer_grid", "MG2") or None,
                period_count=int(data.get("period_count", 168)),
                seed=seed,
                relay=bool(modes.get("relay", False)),
                reset_daily=bool(modes.get("reset_daily", True)),
                round_interval=float(ledger_d.get("round_interval", 30.0)),
                base_dir=base_dir or Path.cwd(),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return ScenarioConfig.from_dict(data, base_dir=path.parent)


def with_seed(config: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(config, seed=seed, auction=replace(config.auction, rng_seed=seed))
