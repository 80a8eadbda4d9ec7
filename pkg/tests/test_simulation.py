from dataclasses import replace

import pytest

from gridtrade.data_io import ScenarioConfig
from gridtrade.simulation import all_scenario, grid_scenario, pair_scenario, scenario_matrix, simulate


@pytest.fixture(scope="module")
def config():
    return ScenarioConfig.from_dict(
        {
            "seed": 2,
            "period_count": 48,
            "topology": {"edges": [["MG1", "MG2"], ["MG2", "MG3"], ["MG1", "MG3"]]},
        }
    )


def test_matrix_labels(config):
    assert [s.label for s in scenario_matrix(config)] == [
        "Grid",
        "MG1+MG2",
        "MG1+MG3",
        "MG2+MG3",
        "All",
    ]
    with pytest.raises(ValueError):
        pair_scenario(config, "MG1", "MG1")


@pytest.mark.parametrize("seed", [0, 2, 5])
def test_more_links_never_raise_main_grid_energy(config, seed):
    config = replace(config, seed=seed)
    samples = config.load_samples()
    runs = {s.label: simulate(config, s, samples) for s in scenario_matrix(config)}
    for period in range(config.period_count):
        main = {label: r.settlements[period].main_energy for label, r in runs.items()}
        for label in ("MG1+MG2", "MG1+MG3", "MG2+MG3"):
            assert main["All"] <= main[label] <= main["Grid"]


def test_internal_auctions_independent_of_topology(config):
    samples = config.load_samples()
    grid = simulate(config, grid_scenario(config), samples)
    every = simulate(config, all_scenario(config), samples)
    for a, b in zip(grid.settlements, every.settlements):
        assert [g.internal_mcp for g in a.grids] == [g.internal_mcp for g in b.grids]
    assert grid.auctions == every.auctions > 0


def test_workers_match_sequential(config):
    samples = config.load_samples()
    one = simulate(config, all_scenario(config), samples)
    many = simulate(config, all_scenario(config), samples, workers=4)
    assert one.settlements == many.settlements
    assert one.ledger.jsonl_lines() == many.ledger.jsonl_lines()


def test_pair_scopes_benefit(config):
    samples = config.load_samples()
    pair = simulate(config, pair_scenario(config, "MG1", "MG3"), samples)
    assert pair.report.involved == ("MG1", "MG3")
    assert pair.report.producer_energy == sum(
        pair.report.per_grid[g]["producer_energy"] for g in ("MG1", "MG3")
    )
    assert pair.ledger.verify()


def test_persisting_aggressiveness_changes_later_days(config):
    samples = config.load_samples()
    reset = simulate(config, grid_scenario(config), samples)
    carry = simulate(replace(config, reset_daily=False), grid_scenario(config), samples)
    assert reset.settlements[:24] == carry.settlements[:24]
    assert reset.settlements[24:] != carry.settlements[24:]
