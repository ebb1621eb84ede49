import hashlib

import numpy as np
import pytest

from adsteg.channel import MarkovChannel, UniformChannel


def markov8() -> MarkovChannel:
    """Fixed 8-state chain used across the suites; token 7 is end-of-text."""
    rng = np.random.default_rng(20240601)
    rows = rng.dirichlet(np.full(8, 0.8), size=8)
    rows /= rows.sum(axis=1, keepdims=True)
    initial = rng.dirichlet(np.ones(8))
    initial /= initial.sum()
    # renormalising can leave ~1e-16 drift; push it into the largest entry
    for r in [*rows, initial]:
        r[np.argmax(r)] += 1.0 - sum(r.tolist())
    return MarkovChannel(rows, initial, end_of_text=7)


@pytest.fixture
def key():
    return hashlib.sha256(b"adsteg test key").digest()


@pytest.fixture
def other_key():
    return hashlib.sha256(b"adsteg other key").digest()


@pytest.fixture
def uniform16():
    return UniformChannel(16)


@pytest.fixture
def uniform256():
    return UniformChannel(256)


@pytest.fixture(name="markov8")
def markov8_fixture():
    return markov8()


@pytest.fixture
def onehot():
    return MarkovChannel([[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0])


# -- acceptance reporting --------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
