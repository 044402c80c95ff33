import numpy as np
import pytest
from hypothesis import strategies as st

from pairlab.polarization import NoiseParams


def random_density_matrix(rng, rank=None):
    rank = rank or rng.integers(1, 5)
    g = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


angles = st.floats(-360.0, 360.0, allow_nan=False)
radians = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)
probabilities = st.floats(0.0, 1.0, allow_nan=False)

noise_params = st.builds(
    NoiseParams,
    phase_sigma=st.floats(0.0, 5.0, allow_nan=False),
    rot_signal=radians,
    rot_idler=radians,
    white_noise_p=probabilities,
)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE = {}


def record(number: int, name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number} [{name}]: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
