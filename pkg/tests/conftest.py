import random

import pytest

from apimisuse.bench import PATTERNS, gen_corpus
from apimisuse.models import train

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def pattern_corpus():
    return gen_corpus(PATTERNS, 500, seed=0)


@pytest.fixture(scope="session")
def pattern_bundle(pattern_corpus):
    return train(pattern_corpus)


@pytest.fixture
def rng():
    return random.Random(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
