import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairlab.errors import ParameterError, PhysicalityError
from pairlab.polarization import (
    PSI_PLUS,
    STANDARD_SETTINGS,
    AnalyzerSetting,
    NoiseParams,
    analyzer_projector,
    apply_noise,
    bell_psi,
    check_density_matrix,
    coincidence_probability,
    fidelity,
    purity,
    werner,
)

from conftest import angles, noise_params, random_density_matrix

HV, VH = 1, 2
D = np.array([1, 1]) / np.sqrt(2)
A = np.array([1, -1]) / np.sqrt(2)


def test_bell_psi_elements():
    rho = bell_psi()
    expected = np.zeros((4, 4))
    expected[HV, HV] = expected[VH, VH] = expected[HV, VH] = expected[VH, HV] = 0.5
    np.testing.assert_allclose(rho, expected, atol=1e-15)
    check_density_matrix(rho)


def test_bell_psi_is_pure_and_self_faithful():
    assert purity(bell_psi()) == pytest.approx(1.0, abs=1e-12)
    assert fidelity(bell_psi(), PSI_PLUS) == pytest.approx(1.0, abs=1e-12)


def test_identity_channel():
    np.testing.assert_allclose(apply_noise(bell_psi(), NoiseParams()), bell_psi(), atol=1e-15)


def test_full_depolarization():
    np.testing.assert_allclose(apply_noise(bell_psi(), NoiseParams(white_noise_p=1.0)), np.eye(4) / 4, atol=1e-15)


def test_dephasing_scales_coherence():
    rho = apply_noise(bell_psi(), NoiseParams(phase_sigma=1.0))
    # 0.5 * exp(-1/2)
    assert rho[HV, VH].real == pytest.approx(0.30326532985631671, abs=1e-15)
    assert rho[VH, HV].real == pytest.approx(0.30326532985631671, abs=1e-15)
    assert rho[HV, HV].real == pytest.approx(0.5)


@pytest.mark.parametrize("bad", [NoiseParams(phase_sigma=-0.1), NoiseParams(white_noise_p=1.5),
                                 NoiseParams(white_noise_p=-0.01), NoiseParams(rot_signal=np.nan)])
def test_invalid_noise_params(bad):
    with pytest.raises(ParameterError):
        apply_noise(bell_psi(), bad)


def test_fidelity_values():
    assert fidelity(np.eye(4) / 4, PSI_PLUS) == pytest.approx(0.25)
    # Werner weight 0.9 by direct 4x4 evaluation: (1 + 3*0.9)/4
    assert fidelity(werner(0.1), PSI_PLUS) == pytest.approx(0.925, abs=1e-12)


def test_fidelity_rejects_unnormalized_target():
    with pytest.raises(ParameterError):
        fidelity(bell_psi(), 2 * PSI_PLUS)


def test_analyzer_projectors():
    np.testing.assert_allclose(analyzer_projector(0, 0, "transmit"), np.diag([1, 0]), atol=1e-15)
    np.testing.assert_allclose(analyzer_projector(22.5, 0, "transmit"), np.outer(D, D), atol=1e-15)
    circ = analyzer_projector(0, 45, "transmit")
    # circular: equal populations, purely imaginary coherence of magnitude 1/2
    np.testing.assert_allclose(np.diag(circ).real, [0.5, 0.5], atol=1e-15)
    assert abs(circ[0, 1].real) < 1e-15 and abs(abs(circ[0, 1]) - 0.5) < 1e-15


def test_standard_settings_select_named_states():
    kets = {"H": [1, 0], "V": [0, 1], "D": D, "A": A,
            "R": np.array([1, 1j]) / np.sqrt(2), "L": np.array([1, -1j]) / np.sqrt(2)}
    for label, ket in kets.items():
        ket = np.asarray(ket, dtype=complex)
        p = STANDARD_SETTINGS[label].projector()
        assert np.real(ket.conj() @ p @ ket) == pytest.approx(1.0, abs=1e-12), label


def test_coincidence_probability_examples():
    d, a, h = STANDARD_SETTINGS["D"], STANDARD_SETTINGS["A"], STANDARD_SETTINGS["H"]
    assert coincidence_probability(bell_psi(), d, d) == pytest.approx(0.5, abs=1e-12)
    assert coincidence_probability(bell_psi(), d, a) == pytest.approx(0.0, abs=1e-12)
    assert coincidence_probability(bell_psi(), h, h) == pytest.approx(0.0, abs=1e-12)


def test_check_density_matrix_distinguishes_rounding_from_bugs():
    rho = np.diag([0.5, 0.5 + 5e-11, -5e-11, 0.0]).astype(complex)
    check_density_matrix(rho)
    with pytest.raises(PhysicalityError):
        check_density_matrix(np.diag([0.6, 0.5, -0.1, 0.0]))


@settings(max_examples=1000, deadline=None)
@given(noise=noise_params, seed=st.integers(0, 2**32 - 1))
def test_channel_output_is_physical(noise, seed):
    rho = random_density_matrix(np.random.default_rng(seed))
    out = apply_noise(rho, noise)
    assert np.max(np.abs(out - out.conj().T)) <= 1e-12
    assert abs(np.trace(out) - 1) <= 1e-12
    assert np.linalg.eigvalsh(out).min() >= -1e-10


@settings(max_examples=200, deadline=None)
@given(p1=st.floats(0, 1), p2=st.floats(0, 1), seed=st.integers(0, 2**32 - 1))
def test_white_noise_composes(p1, p2, seed):
    rho = random_density_matrix(np.random.default_rng(seed))
    twice = apply_noise(apply_noise(rho, NoiseParams(white_noise_p=p1)), NoiseParams(white_noise_p=p2))
    once = apply_noise(rho, NoiseParams(white_noise_p=p1 + p2 - p1 * p2))
    assert np.max(np.abs(twice - once)) <= 1e-12


@settings(max_examples=300, deadline=None)
@given(h=angles, q=angles, port=st.sampled_from(["transmit", "reflect"]))
def test_projectors_idempotent_hermitian(h, q, port):
    p = analyzer_projector(h, q, port)
    assert np.max(np.abs(p @ p - p)) <= 1e-12
    assert np.max(np.abs(p - p.conj().T)) <= 1e-12
    assert np.trace(p).real == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(h1=angles, q1=angles, h2=angles, q2=angles, seed=st.integers(0, 2**32 - 1))
def test_port_probabilities_sum_to_one(h1, q1, h2, q2, seed):
    rho = random_density_matrix(np.random.default_rng(seed))
    total = 0.0
    for pi in ("transmit", "reflect"):
        for ps in ("transmit", "reflect"):
            p = coincidence_probability(rho, AnalyzerSetting(h1, q1, pi), AnalyzerSetting(h2, q2, ps))
            assert 0.0 <= p <= 1.0
            total += p
    assert total == pytest.approx(1.0, abs=1e-12)
