import numpy as np
import pytest

from ktrecon.volume import ComplexVolume, Domain


def random_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_volume(rng, shape, domain=Domain.IMAGE_TIME):
    return ComplexVolume(random_complex(rng, shape), domain)


def naive_centered_dft(x):
    """Centered orthonormal DFT along a 1-D array, evaluated from the sum."""
    n = x.shape[0]
    idx = np.arange(n) - n // 2
    k = idx[:, None]
    m = idx[None, :]
    return np.exp(-2j * np.pi * k * m / n) @ x / np.sqrt(n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
