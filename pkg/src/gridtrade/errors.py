"""Exception hierarchy.

Errors are grouped by the exit code the command line maps them to:
configuration problems, data problems and internal invariant failures.
"""


class GridTradeError(Exception):
    """Base class for every error raised by this package."""

    module = "gridtrade"

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


class ConfigError(GridTradeError):
    module = "data-io"


class DataError(GridTradeError):
    module = "data-io"


class ParseError(DataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(DataError):
    def __init__(self, column: str):
        super().__init__(f"missing column {column!r}")
        self.column = column


class GapError(DataError):
    def __init__(self, agent: str, period: int):
        super().__init__(f"agent {agent!r} has no sample for period {period}")
        self.agent = agent
        self.period = period


class MissingTrace(DataError):
    module = "microgrid"

    def __init__(self, agent: str, period: int):
        super().__init__(f"no trace for agent {agent!r} in period {period}")
        self.agent = agent
        self.period = period


class EmptySide(GridTradeError):
    """An order book or bidder population lacks buyers or sellers."""

    module = "market-core"


class InvariantError(GridTradeError):
    """A bookkeeping check that should be unreachable has failed."""


class ImbalancedSettlement(InvariantError):
    module = "hierarchy-router"


class TimeRegression(GridTradeError):
    module = "ledger-sim"

    def __init__(self, chain: str, sim_time: float, last: float):
        super().__init__(f"chain {chain!r}: time {sim_time} precedes last event at {last}")
        self.chain = chain


class NothingToAnchor(GridTradeError):
    module = "ledger-sim"
