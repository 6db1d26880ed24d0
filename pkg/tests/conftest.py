import numpy as np
import pytest

from llrood.seqdata import EncodedSequence, IN

# transition matrix of a learnable order-1 chain over ACGT
MARKOV_T = np.array([
    [0.70, 0.10, 0.10, 0.10],
    [0.05, 0.05, 0.80, 0.10],
    [0.25, 0.25, 0.25, 0.25],
    [0.10, 0.60, 0.10, 0.20],
])


def stationary(t):
    w, v = np.linalg.eig(t.T)
    pi = np.real(v[:, np.argmin(np.abs(w - 1))])
    return pi / pi.sum()


def chain_entropy(t):
    """Analytic conditional entropy (nats/symbol) of a stationary order-1 chain."""
    pi = stationary(t)
    return float(-(pi[:, None] * t * np.log(t)).sum())


def sample_chain(t, n_seq, length, rng):
    pi = stationary(t)
    cdf = np.cumsum(t, axis=1)
    x = np.empty((n_seq, length), dtype=np.int64)
    x[:, 0] = rng.choice(4, size=n_seq, p=pi)
    for d in range(1, length):
        u = rng.random(n_seq)
        x[:, d] = np.minimum((u[:, None] > cdf[x[:, d - 1]]).sum(axis=1), 3)
    return [EncodedSequence(f"m{i}", x[i], 0, IN) for i in range(n_seq)]


@pytest.fixture(scope="session")
def markov_data():
    rng = np.random.default_rng(2024)
    return sample_chain(MARKOV_T, 200, 500, rng), sample_chain(MARKOV_T, 40, 500, rng)


# acceptance criteria report one line each; shown in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
