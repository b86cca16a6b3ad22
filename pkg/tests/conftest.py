import numpy as np
import pytest

from pmse_mimo.harness import generate_channel
from pmse_mimo.model import SystemConfig


def random_config(rng, max_users=3, max_tx=6, noise=None):
    """Random resolvable configuration with L <= M and L_k <= N_k."""
    while True:
        K = int(rng.integers(1, max_users + 1))
        M = int(rng.integers(1, max_tx + 1))
        n_rx = tuple(int(n) for n in rng.integers(1, 4, size=K))
        n_streams = tuple(int(rng.integers(1, n + 1)) for n in n_rx)
        if sum(n_streams) <= M:
            break
    if noise is None:
        noise = float(10 ** (-rng.uniform(-0.5, 2.0)))
    return SystemConfig(K, M, n_rx, n_streams, noise, 1.0)


def random_unit_columns(rng, rows, cols):
    X = rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
    return X / np.linalg.norm(X, axis=0)


def random_instance(rng, **kw):
    cfg = random_config(rng, **kw)
    ch = generate_channel(cfg, rng)
    U = random_unit_columns(rng, cfg.n_tx, cfg.total_streams)
    V = tuple(random_unit_columns(rng, n, l) for n, l in zip(cfg.n_rx, cfg.n_streams))
    q = rng.dirichlet(np.ones(cfg.total_streams)) * cfg.p_max * rng.uniform(0.5, 1.0)
    return cfg, ch, U, V, q


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
