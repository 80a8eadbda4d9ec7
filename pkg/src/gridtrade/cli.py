"""Command line scenario runner.

Exit codes: 0 ok, 1 configuration error, 2 data error, 3 internal invariant
failure.  Progress goes to stderr; results only to files.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import __version__
from .data_io import ScenarioConfig, generate_synthetic_week, load_config, with_seed, write_traces
from .errors import ConfigError, DataError, GridTradeError
from .ledger import ledger_metrics
from .metrics import reports_csv
from .simulation import (
    SimulationResult,
    all_scenario,
    grid_scenario,
    pair_scenario,
    scenario_matrix,
    simulate,
)

log = logging.getLogger("gridtrade")

OUT_ENV = "GRIDTRADE_OUT"
REPORT_FILES = (
    "benefit_report.csv",
    "benefit_summary.json",
    "ledger_metrics.json",
    "settlements.jsonl",
)
MODE_NAMES = ("mcp_rule", "verbatim_alg1", "formula_literal", "relay")


@dataclass
class RunManifest:
    config_digest: str
    seed: int
    code_version: str
    started: str
    finished: str = ""
    scenarios: list[str] = field(default_factory=list)
    modes: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def atomic_write(path: Path, text: str) -> None:
    """Write ``text`` to a temp file beside ``path`` and rename it into place."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def apply_modes(config: ScenarioConfig, modes: list[str]) -> ScenarioConfig:
    """Apply ``name`` or ``name=value`` mode toggles."""
    auction, relay = config.auction, config.relay
    for item in modes:
        name, _, value = item.partition("=")
        name = name.strip()
        if name not in MODE_NAMES:
            raise ConfigError(f"unknown mode {name!r}; expected one of {', '.join(MODE_NAMES)}")
        if name == "mcp_rule":
            if value not in ("prose", "formula"):
                raise ConfigError("mcp_rule must be prose or formula")
            auction = replace(auction, mcp_rule=value)
            continue
        flag = value.lower() not in ("0", "false", "no", "off") if value else True
        if name == "relay":
            relay = flag
        else:
            auction = replace(auction, **{name: flag})
    return replace(config, auction=auction, relay=relay)


def parse_scenarios(config: ScenarioConfig, selection: str):
    if selection == "grid":
        return [grid_scenario(config)]
    if selection == "all":
        return [all_scenario(config)]
    if selection == "matrix":
        return scenario_matrix(config)
    if selection.startswith("pair:"):
        parts = [p.strip() for p in selection[5:].split(",")]
        if len(parts) != 2:
            raise ConfigError(f"pair scenario needs two grids, got {selection!r}")
        try:
            return [pair_scenario(config, *parts)]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown scenario {selection!r}")


def _settlement_lines(result: SimulationResult) -> list[str]:
    lines = []
    for s in result.settlements:
        row = {
            "scenario": result.scenario.label,
            "period": s.period_index,
            "grids": [
                {
                    "grid": g.grid,
                    "internal_mcp": g.internal_mcp,
                    "neighbor_import_wh": g.neighbor_import,
                    "neighbor_export_wh": g.neighbor_export,
                    "main_import_wh": g.main_import,
                    "main_export_wh": g.main_export,
                    "agents": [
                        {
                            "agent": a.agent,
                            "role": a.role.value,
                            "energy_wh": a.energy,
                            "internal_wh": a.internal_energy,
                            "external_wh": a.external_energy,
                            "payment": a.payment,
                            "effective_price": a.effective_price,
                        }
                        for a in g.agents
                    ],
                }
                for g in s.grids
            ],
            "inter_trades": [
                {"seller": t.seller, "buyer": t.buyer, "wh": t.quantity, "price": t.price}
                for t in s.inter_trades
            ],
            "main_trades": [
                {"grid": t.grid, "side": t.side.value, "wh": t.energy, "price": t.price}
                for t in s.main_trades
            ],
        }
        lines.append(json.dumps(row, sort_keys=True))
    return lines


def write_outputs(results: list[SimulationResult], out: Path, ledger_log: bool = False) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    reports = [r.report for r in results]
    texts = {
        "benefit_report.csv": reports_csv(reports),
        "benefit_summary.json": _dumps({r.label: r.as_dict() for r in reports}),
        "ledger_metrics.json": _dumps(
            {
                r.scenario.label: {**ledger_metrics(r.ledger).as_dict(), "verified": r.ledger.verify()}
                for r in results
            }
        ),
        "settlements.jsonl": "".join(line + "\n" for r in results for line in _settlement_lines(r)),
    }
    if ledger_log:
        texts["ledger_log.jsonl"] = "".join(
            json.dumps({"scenario": r.scenario.label, **json.loads(line)}, sort_keys=True) + "\n"
            for r in results
            for line in r.ledger.jsonl_lines()
        )
    for name, text in texts.items():
        atomic_write(out / name, text)
    return {name: str(out / name) for name in texts}


def execute(
    config_path: str | Path,
    output_dir: str | Path,
    scenario: str = "all",
    seed: int | None = None,
    modes: list[str] | None = None,
    workers: int = 1,
    ledger_log: bool = False,
) -> RunManifest:
    started = dt.datetime.now(dt.timezone.utc).isoformat()
    config = load_config(config_path)
    if seed is not None:
        config = with_seed(config, seed)
    config = apply_modes(config, modes or [])
    scenarios = parse_scenarios(config, scenario)
    samples = config.load_samples()

    results = []
    for sc in scenarios:
        log.info("running scenario %s", sc.label)
        results.append(simulate(config, sc, samples, workers=workers))

    out = Path(output_dir)
    outputs = write_outputs(results, out, ledger_log=ledger_log)
    manifest = RunManifest(
        config_digest=file_digest(config_path),
        seed=config.seed,
        code_version=__version__,
        started=started,
        scenarios=[s.label for s in scenarios],
        modes=config.mode_flags,
        outputs={name: {"path": p, "sha256": file_digest(p)} for name, p in outputs.items()},
    )
    manifest.finished = dt.datetime.now(dt.timezone.utc).isoformat()
    atomic_write(out / "manifest.json", _dumps(manifest.__dict__))
    return manifest


def run(config_path, output_dir, overrides: dict | None = None) -> int:
    """Run one scenario selection and map errors to exit codes."""
    overrides = overrides or {}
    try:
        execute(config_path, output_dir, **overrides)
    except ConfigError as exc:
        log.error("%s", exc)
        return 1
    except DataError as exc:
        log.error("%s", exc)
        return 2
    except GridTradeError as exc:
        log.error("%s", exc)
        return 3
    except OSError as exc:
        log.error("[cli] %s", exc)
        return 2
    return 0


def run_matrix(config_path, output_dir, overrides: dict | None = None) -> int:
    return run(config_path, output_dir, {**(overrides or {}), "scenario": "matrix"})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridtrade", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario TOML file")
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV})")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument(
            "--mode",
            action="append",
            default=[],
            metavar="NAME[=VALUE]",
            help="mcp_rule=prose|formula, verbatim_alg1, formula_literal, relay",
        )
        p.add_argument("--workers", type=int, default=1, help="threads for microgrid auctions")
        p.add_argument("--ledger-log", action="store_true", help="also export the ledger event log")
        p.add_argument("--verbose", action="store_true")

    p_run = sub.add_parser("run", help="run one scenario")
    common(p_run)
    p_run.add_argument("--scenario", default="all", help="grid | pair:A,B | all | matrix")

    p_matrix = sub.add_parser("matrix", help="run Grid, every linked pair and All")
    common(p_matrix)

    p_gen = sub.add_parser("generate", help="write the synthetic week as a trace CSV")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True, help="CSV path")
    p_gen.add_argument("--shifted-grid", default="MG3")
    p_gen.add_argument("--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command == "generate":
        write_traces(generate_synthetic_week(args.seed, shifted_grid=args.shifted_grid), args.out)
        return 0

    out = args.out or os.environ.get(OUT_ENV)
    if not out:
        log.error("[cli] no output directory: pass --out or set %s", OUT_ENV)
        return 1
    overrides = {
        "seed": args.seed,
        "modes": args.mode,
        "workers": args.workers,
        "ledger_log": args.ledger_log,
        "scenario": "matrix" if args.command == "matrix" else args.scenario,
    }
    return run(args.config, out, overrides)


if __name__ == "__main__":
    sys.exit(main())
