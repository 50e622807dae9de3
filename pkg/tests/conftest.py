import os

import numpy as np
import pytest
from hypothesis import settings

from holstein_ring.ansatz import MultiD2State

settings.register_profile("default", deadline=None, max_examples=100)
settings.register_profile("quick", deadline=None, max_examples=20)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_state(rng, M, N, lam_scale=0.5, Nq=None):
    """Normalized random multi-D2 state with |lam| of order ``lam_scale``."""
    Nq = N if Nq is None else Nq
    psi = rng.normal(size=(M, N)) + 1j * rng.normal(size=(M, N))
    lam = lam_scale * (rng.normal(size=(M, Nq)) + 1j * rng.normal(size=(M, Nq))) / np.sqrt(2)
    s = MultiD2State(psi, lam)
    from holstein_ring.ansatz import normalized

    return normalized(s)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
