import numpy as np
import pytest

from factored_rl.model import make_spec

ACCEPTANCE_RESULTS = {}


def bandit_spec(means=(0.4, 0.9), H=3, bernoulli=False):
    """One state, one action factor, self-loop."""
    A = len(means)
    return make_spec((1,), (A,), H, [((0, 1), list(means), [bernoulli] * A)], [((0, 1), [[1.0]] * A)])


def uniform_two_factor(V=None, H=1):
    rows = [[0.5, 0.5]]
    return make_spec((2, 2), (), H, [((0,), [0.0, 0.0], [False, False])],
                     [((0,), rows * 2), ((1,), rows * 2)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
