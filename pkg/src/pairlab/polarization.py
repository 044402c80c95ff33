"""Two-qubit polarization states, imperfection channels and analyzer projectors.

Basis order is |HH>, |HV>, |VH>, |VV> with the idler (880 nm) photon in the
first tensor slot and the signal (935 nm) photon in the second.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np

from .errors import ParameterError, PhysicalityError

H = np.array([1.0, 0.0], dtype=complex)
V = np.array([0.0, 1.0], dtype=complex)

HERMITIAN_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10

Port = Literal["transmit", "reflect"]

# |psi> = (|H_i V_s> + |V_i H_s>)/sqrt(2)
PSI_PLUS = (np.kron(H, V) + np.kron(V, H)) / np.sqrt(2.0)


@dataclass(frozen=True)
class NoiseParams:
    phase_sigma: float = 0.0
    rot_signal: float = 0.0
    rot_idler: float = 0.0
    white_noise_p: float = 0.0

    def validate(self) -> None:
        vals = (self.phase_sigma, self.rot_signal, self.rot_idler, self.white_noise_p)
        if not all(np.isfinite(v) for v in vals):
            raise ParameterError(f"non-finite noise parameter in {self}")
        if self.phase_sigma < 0:
            raise ParameterError(f"phase_sigma must be >= 0, got {self.phase_sigma}")
        if not 0.0 <= self.white_noise_p <= 1.0:
            raise ParameterError(f"white_noise_p must lie in [0, 1], got {self.white_noise_p}")


@dataclass(frozen=True)
class AnalyzerSetting:
    """HWP and QWP angles in degrees (fast axis from horizontal) in front of a PBS."""

    hwp: float = 0.0
    qwp: float = 0.0
    port: Port = "transmit"

    def __post_init__(self):
        if self.port not in ("transmit", "reflect"):
            raise ParameterError(f"port must be 'transmit' or 'reflect', got {self.port!r}")

    def projector(self) -> np.ndarray:
        return analyzer_projector(self.hwp, self.qwp, self.port)

    def flipped(self) -> "AnalyzerSetting":
        return AnalyzerSetting(self.hwp, self.qwp, "reflect" if self.port == "transmit" else "transmit")


# Standard settings for the six polarization states. R = (H + iV)/sqrt(2).
STANDARD_SETTINGS = {
    "H": AnalyzerSetting(0.0, 0.0, "transmit"),
    "V": AnalyzerSetting(0.0, 0.0, "reflect"),
    "D": AnalyzerSetting(22.5, 0.0, "transmit"),
    "A": AnalyzerSetting(22.5, 0.0, "reflect"),
    "R": AnalyzerSetting(0.0, -45.0, "transmit"),
    "L": AnalyzerSetting(0.0, -45.0, "reflect"),
}


def ket_to_dm(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    return np.outer(psi, psi.conj())


def bell_psi() -> np.ndarray:
    return ket_to_dm(PSI_PLUS)


def check_density_matrix(rho, name: str = "rho") -> np.ndarray:
    """Validate physicality and return `rho` as a complex 4x4 array.

    Eigenvalues in (-1e-10, 0) are accepted as rounding; anything more
    negative raises PhysicalityError.
    """
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ParameterError(f"{name} must be 4x4, got shape {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise PhysicalityError(f"{name} has non-finite entries")
    herm_err = np.max(np.abs(rho - rho.conj().T))
    if herm_err > HERMITIAN_TOL:
        raise PhysicalityError(f"{name} not Hermitian (max deviation {herm_err:.3e})")
    tr_err = abs(np.trace(rho) - 1.0)
    if tr_err > TRACE_TOL:
        raise PhysicalityError(f"{name} trace deviates from 1 by {tr_err:.3e}")
    min_eig = np.linalg.eigvalsh(rho).min()
    if min_eig < -PSD_TOL:
        raise PhysicalityError(f"{name} has negative eigenvalue {min_eig:.3e}")
    return rho


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def waveplate(theta_deg: float, retardance: float) -> np.ndarray:
    """Jones matrix of a linear retarder, fast axis at `theta_deg`, global phase dropped."""
    r = rotation(np.deg2rad(theta_deg))
    return r @ np.diag([1.0, np.exp(1j * retardance)]) @ r.T


def hwp(theta_deg: float) -> np.ndarray:
    return waveplate(theta_deg, np.pi)


def qwp(theta_deg: float) -> np.ndarray:
    return waveplate(theta_deg, np.pi / 2)


def analyzer_projector(hwp_deg: float, qwp_deg: float, port: Port = "transmit") -> np.ndarray:
    """Projector selected by the analyzer: U^dag |p><p| U.

    Light crosses the HWP, then the QWP, then the PBS, so U = QWP(qwp) @ HWP(hwp).
    With the QWP at 0 the analyzer reduces to a rotatable linear polarizer.
    """
    if port == "transmit":
        out = H
    elif port == "reflect":
        out = V
    else:
        raise ParameterError(f"port must be 'transmit' or 'reflect', got {port!r}")
    u = qwp(qwp_deg) @ hwp(hwp_deg)
    ket = u.conj().T @ out
    proj = np.outer(ket, ket.conj())
    return 0.5 * (proj + proj.conj().T)


def apply_noise(rho, noise: NoiseParams) -> np.ndarray:
    """Local rotation, then dephasing of the HV/VH coherence, then white-noise admixture."""
    noise.validate()
    rho = np.asarray(rho, dtype=complex)
    u = np.kron(rotation(noise.rot_idler), rotation(noise.rot_signal))
    out = u @ rho @ u.conj().T
    # Gaussian random phase between H and V of the idler photon: the HV/VH
    # coherence picks up the full phase and decays by exp(-sigma^2/2). Damping
    # that coherence alone is not completely positive for general inputs.
    z = np.array([0.0, 0.0, 1.0, 1.0])
    out = out * np.exp(-0.5 * noise.phase_sigma**2 * np.subtract.outer(z, z) ** 2)
    p = noise.white_noise_p
    out = (1.0 - p) * out + p * np.eye(4) / 4.0
    out = 0.5 * (out + out.conj().T)
    return check_density_matrix(out, "apply_noise output")


def werner(p: float) -> np.ndarray:
    """Bell state mixed with white noise of weight `p`."""
    return apply_noise(bell_psi(), NoiseParams(white_noise_p=p))


def fidelity(rho, target=PSI_PLUS) -> float:
    target = np.asarray(target, dtype=complex).reshape(-1)
    norm = np.linalg.norm(target)
    if abs(norm - 1.0) > 1e-9:
        raise ParameterError(f"target state is not normalized (|psi| = {norm:.12g})")
    f = float(np.real(target.conj() @ np.asarray(rho, dtype=complex) @ target))
    return min(max(f, 0.0), 1.0)


def _arm_projector(setting: Optional[AnalyzerSetting]) -> np.ndarray:
    if setting is None:
        return np.eye(2, dtype=complex)
    return setting.projector()


def coincidence_probability(
    rho, idler: Optional[AnalyzerSetting], signal: Optional[AnalyzerSetting]
) -> float:
    """Tr(rho Pi_idler x Pi_signal). A `None` setting means no analyzer in that arm."""
    op = np.kron(_arm_projector(idler), _arm_projector(signal))
    p = float(np.real(np.trace(np.asarray(rho, dtype=complex) @ op)))
    return min(max(p, 0.0), 1.0)


def joint_outcome_probabilities(
    rho, idler: Optional[AnalyzerSetting], signal: Optional[AnalyzerSetting]
) -> np.ndarray:
    """Probabilities of (idler passes, signal passes) in order (1,1), (1,0), (0,1), (0,0)."""
    pi_i = _arm_projector(idler)
    pi_s = _arm_projector(signal)
    eye = np.eye(2)
    rho = np.asarray(rho, dtype=complex)
    probs = []
    for a in (pi_i, eye - pi_i):
        for b in (pi_s, eye - pi_s):
            probs.append(np.real(np.trace(rho @ np.kron(a, b))))
    probs = np.clip(np.array(probs), 0.0, None)
    return probs / probs.sum()


def purity(rho) -> float:
    rho = np.asarray(rho, dtype=complex)
    return float(np.real(np.trace(rho @ rho)))
