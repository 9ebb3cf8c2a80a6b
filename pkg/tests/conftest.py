import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from acvar.markov import MarkovChain, generate_random_chain, linear_reward_profile, make_streams

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("thorough", parent=settings.get_profile("default"), max_examples=500)
settings.load_profile(os.environ.get("ACVAR_HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def iid2():
    """Two-state chain with i.i.d. fair transitions and rewards (0, 1)."""
    return MarkovChain(np.full((2, 2), 0.5), np.array([0.0, 1.0]))


@pytest.fixture(scope="session")
def chain40():
    """Seed-0 forty-state random chain with linear rewards on [0, 3]."""
    streams = make_streams(0)
    return MarkovChain(generate_random_chain(40, streams["chain"]), linear_reward_profile(40, 3.0))


@st.composite
def small_chains(draw, min_states=2, max_states=6, positive=True):
    """Random small chains; strictly positive kernels unless ``positive`` is False."""
    s = draw(st.integers(min_states, max_states))
    entry = st.floats(0.05, 1.0) if positive else st.one_of(st.just(0.0), st.floats(1e-3, 1.0))
    raw = np.array(draw(st.lists(entry, min_size=s * s, max_size=s * s))).reshape(s, s)
    if not positive:
        # keep the chain irreducible and aperiodic: a positive cycle plus self-loops
        raw = raw + 0.05 * (np.eye(s) + np.roll(np.eye(s), 1, axis=1))
    P = raw / raw.sum(axis=1, keepdims=True)
    g = np.array(draw(st.lists(st.floats(-2.0, 2.0), min_size=s, max_size=s)))
    return MarkovChain(P, g)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    def _report(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
