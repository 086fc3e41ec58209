import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def random_density(s, seed, weight=None):
    """Random full-rank unit-trace state; Haar eigenvectors, Dirichlet spectrum unless ``weight`` is given."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((s, s)) + 1j * rng.standard_normal((s, s))
    q, _ = np.linalg.qr(a)
    if weight is None:
        lam = rng.dirichlet(np.ones(s))
    else:
        lam = np.r_[weight, np.full(s - 1, (1 - weight) / (s - 1))]
    return (q * lam) @ q.conj().T


def random_ket(s, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(s) + 1j * rng.standard_normal(s)
    return v / np.linalg.norm(v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
