import numpy as np
import pytest

from gmesim import _kernels as K
from gmesim.params import load_params

KERNEL_NAMES = ("reduce128", "mul128", "mod_mult", "mod_mult_scalar", "mod_add", "mod_sub", "mod_neg",
                "ntt_forward", "ntt_inverse", "lru_serve")
BACKENDS = sorted(K.backends())


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route every kernel call in the package through one backend."""
    mod = K.backends()[request.param]
    for name in KERNEL_NAMES:
        monkeypatch.setattr(K, name, getattr(mod, name))
    return request.param


@pytest.fixture(scope="session")
def paper():
    return load_params("paper")


@pytest.fixture(scope="session")
def desk():
    return load_params("desk")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
