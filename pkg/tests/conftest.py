"""Shared fixtures and random plant builders for the delqg tests."""

import numpy as np
import pytest

from delqg import corpus
from delqg.model import Dims, PlantModel


def random_psd(rng, n, floor=0.1):
    X = rng.standard_normal((n, n))
    return X @ X.T / n + floor * np.eye(n)


def random_nested_plant(rng, n1=1, n2=1, m1=1, m2=1, N=3, output=None, p2=1):
    """Random nested plant; ``output`` in {None, 'output', 'partial'} adds C and W."""
    n, m = n1 + n2, m1 + m2
    A = 0.6 * rng.standard_normal((n, n))
    A[:n1, n1:] = 0
    B = rng.standard_normal((n, m))
    B[:n1, m1:] = 0
    kw = dict(V=random_psd(rng, n), Q=random_psd(rng, n), Rw=random_psd(rng, m, 0.5),
              S=random_psd(rng, n), cov0=random_psd(rng, n))
    if output == "partial":
        C = np.zeros((n1 + p2, n))
        C[:n1, :n1] = np.eye(n1)
        C[n1:] = rng.standard_normal((p2, n))
        C[n1:, n1:] += np.eye(p2, n2)
        W = np.zeros((n1 + p2, n1 + p2))
        W[n1:, n1:] = random_psd(rng, p2, 0.3)
        dims = Dims(n1, n2, m1, m2, n1, p2)
        return PlantModel(dims, A, B, N=N, C=C, W=W, **kw)
    if output == "output":
        C = rng.standard_normal((n, n)) + 2 * np.eye(n)
        dims = Dims(n1, n2, m1, m2, n1, n2)
        return PlantModel(dims, A, B, N=N, C=C, W=random_psd(rng, n, 0.3), **kw)
    return PlantModel(Dims(n1, n2, m1, m2), A, B, N=N, **kw)


@pytest.fixture(params=corpus.NAMES)
def scenario(request):
    return corpus.load(request.param)


@pytest.fixture
def nested_2x2():
    return corpus.load("nested_2x2")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {name}: {detail}")
