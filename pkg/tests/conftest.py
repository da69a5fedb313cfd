from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixtures import DblpEnv, dblp_graph, make_env  # noqa: E402

from kgsparql.testing import FixtureEndpoint  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def dblp_env(tmp_path) -> DblpEnv:
    with FixtureEndpoint(graph=dblp_graph()) as ep:
        yield make_env(tmp_path / "data", ep)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_lines() -> list[str]:
    return ACCEPTANCE_LINES
