from pathlib import Path

import pytest

from osforma import parse_model

CORPUS = Path(__file__).resolve().parent.parent / "corpus"

# filled by test_acceptance; printed once at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def corpus_doc():
    def load(name: str):
        return parse_model((CORPUS / f"{name}.model").read_text())

    return load


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
