import numpy as np
import pytest

from dpmask.dataset import gen_gaussian_mixture, normalize_max_norm, toy_mixture_spec


def toy(n=100, classes=(0, 1), seed=0):
    """Normalized toy mixture draw."""
    ds, _ = normalize_max_norm(gen_gaussian_mixture(toy_mixture_spec(n, classes), seed))
    return ds


@pytest.fixture
def toy_binary():
    return toy(100, (0, 1), 0)


@pytest.fixture
def toy3():
    return toy(100, (0, 1, 2), 0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[k])
