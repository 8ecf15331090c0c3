import importlib

import numpy as np
import pytest

from ctcssl import _kernels_slow, ctc, kernels


def random_post(rng, T, K, scale=2.0):
    return ctc.log_softmax(rng.normal(size=(T, K)) * scale)


def random_target(rng, K, max_len, blank=0):
    L = int(rng.integers(0, max_len + 1))
    labels = [k for k in range(K) if k != blank]
    return tuple(int(rng.choice(labels)) for _ in range(L))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["compiled", "numpy"])
def backend(request, monkeypatch):
    """Run a test against each kernel implementation."""
    if request.param == "compiled":
        if kernels.fast is None:
            pytest.skip("compiled kernels not built")
        impl = kernels.fast
    else:
        impl = _kernels_slow
    for name in ("ctc_forward", "ctc_occupancy", "edit_counts"):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
