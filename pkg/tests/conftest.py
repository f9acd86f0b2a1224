import json
from pathlib import Path

import pytest

from chaintest.model import parse_model

FIXTURES = Path(__file__).parent / "fixtures"

# acceptance criterion results, filled by tests/test_acceptance.py
CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def corpus_raw():
    return json.loads((FIXTURES / "corpus.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def corpus(corpus_raw):
    return parse_model(corpus_raw)


@pytest.fixture(scope="session")
def wait_fn(corpus):
    return corpus.get("once_cell::imp::wait")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        if n not in CRITERIA:
            why = "live smoke test, set CHAINTEST_LIVE=1" if n == 10 else "not collected in this run"
            terminalreporter.write_line(f"criterion {n:>2}: SKIP  {why}")
            continue
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
