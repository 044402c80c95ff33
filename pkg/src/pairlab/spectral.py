"""Cavity mode combs, phase-matching envelope, etalon filtering and the analytic G2.

Inside this module frequencies of comb modes are absolute (Hz) but every
phase computation uses offsets from the arm's center frequency.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import ParameterError

# np.sinc(u)**2 == 0.5 at this u
_SINC2_HALF = brentq(lambda u: np.sinc(u) ** 2 - 0.5, 0.1, 0.9, xtol=1e-15)


@dataclass(frozen=True)
class CavityArmSpec:
    center_frequency: float
    fsr: float
    mode_linewidth: float
    n_modes: int = 1

    def __post_init__(self):
        if not (self.fsr > self.mode_linewidth > 0):
            raise ParameterError(
                f"need fsr > mode_linewidth > 0, got fsr={self.fsr}, linewidth={self.mode_linewidth}"
            )
        if int(self.n_modes) != self.n_modes or self.n_modes < 1 or self.n_modes % 2 == 0:
            raise ParameterError(f"n_modes must be a positive odd integer, got {self.n_modes}")


@dataclass(frozen=True)
class EtalonSpec:
    fsr: float
    fwhm: float
    peak_transmission: float = 1.0
    detuning: float = 0.0

    def __post_init__(self):
        if not (self.fsr > self.fwhm > 0):
            raise ParameterError(f"need fsr > fwhm > 0, got fsr={self.fsr}, fwhm={self.fwhm}")
        if not 0.0 < self.peak_transmission <= 1.0:
            raise ParameterError(f"peak_transmission must lie in (0, 1], got {self.peak_transmission}")

    @property
    def finesse(self) -> float:
        return self.fsr / self.fwhm


@dataclass(frozen=True)
class PhaseMatchEnvelope:
    fwhm: float
    center: float

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ParameterError(f"phase-matching fwhm must be > 0, got {self.fwhm}")

    def __call__(self, f):
        u = 2.0 * _SINC2_HALF * (np.asarray(f, dtype=float) - self.center) / self.fwhm
        return np.sinc(u) ** 2


@dataclass(frozen=True)
class ModeComb:
    center: float
    frequencies: np.ndarray
    linewidths: np.ndarray
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        freqs = np.asarray(self.frequencies, dtype=float)
        if freqs.size == 0:
            raise ParameterError("a mode comb needs at least one mode")
        if np.any(np.diff(freqs) <= 0):
            raise ParameterError("mode frequencies must be strictly increasing")
        norm = np.sum(np.abs(self.amplitudes) ** 2)
        if abs(norm - 1.0) > 1e-12:
            raise ParameterError(f"mode amplitudes not normalized (sum |a|^2 = {norm!r})")

    @property
    def n_modes(self) -> int:
        return len(self.frequencies)

    @property
    def offsets(self) -> np.ndarray:
        return np.asarray(self.frequencies) - self.center

    @property
    def weights(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    @classmethod
    def single(cls, linewidth: float, center: float = 0.0) -> "ModeComb":
        return cls(center, np.array([center]), np.array([linewidth]), np.array([1.0 + 0j]))


def build_mode_comb(arm: CavityArmSpec, env: PhaseMatchEnvelope) -> ModeComb:
    half = (arm.n_modes - 1) // 2
    k = np.arange(-half, half + 1)
    freqs = arm.center_frequency + k * arm.fsr
    weights = env(freqs)
    if weights.sum() <= 0:
        raise ParameterError("phase-matching envelope vanishes at every comb mode")
    weights = weights / weights.sum()
    amps = np.sqrt(weights).astype(complex)
    amps /= np.sqrt(np.sum(np.abs(amps) ** 2))
    return ModeComb(arm.center_frequency, freqs, np.full(arm.n_modes, arm.mode_linewidth), amps)


def etalon_transmission(e: EtalonSpec, f):
    """Airy transmission at offset `f` (Hz) from the arm center.

    The coefficient of finesse is fixed so that the transmission is exactly
    half the peak at +-fwhm/2 from a resonance.
    """
    f = np.asarray(f, dtype=float)
    coeff = 1.0 / np.sin(np.pi * e.fwhm / (2.0 * e.fsr)) ** 2
    return e.peak_transmission / (1.0 + coeff * np.sin(np.pi * (f - e.detuning) / e.fsr) ** 2)


def apply_etalon(comb: ModeComb, e: EtalonSpec) -> tuple[ModeComb, float]:
    """Filter a comb; returns the renormalized comb and the transmitted weight."""
    t = etalon_transmission(e, comb.offsets)
    amps = comb.amplitudes * np.sqrt(t)
    weight = float(np.sum(np.abs(amps) ** 2))
    if weight <= 0:
        raise ParameterError("etalon blocks every mode of the comb")
    amps = amps / np.sqrt(weight)
    amps /= np.sqrt(np.sum(np.abs(amps) ** 2))
    return ModeComb(comb.center, comb.frequencies, comb.linewidths, amps), weight


def _side_amplitude(comb: ModeComb, t):
    t = np.abs(np.asarray(t, dtype=float))
    rates = 2j * np.pi * comb.offsets + np.pi * np.asarray(comb.linewidths)
    return np.exp(-np.multiply.outer(t, rates)) @ comb.amplitudes


def side_integral(comb: ModeComb) -> float:
    """Integral over t >= 0 of |sum_m a_m exp(-(i 2pi f_m + pi G_m) t)|^2."""
    a = comb.amplitudes
    rates = 2j * np.pi * comb.offsets + np.pi * np.asarray(comb.linewidths)
    denom = rates[:, None] + rates.conj()[None, :]
    return float(np.real(np.sum(np.outer(a, a.conj()) / denom)))


def g2_normalization(signal: ModeComb, idler: ModeComb) -> float:
    return side_integral(signal) + side_integral(idler)


def g2_analytic(signal: ModeComb, idler: ModeComb, tau):
    """Normalized cross-correlation density at tau = t_signal - t_idler (seconds).

    Positive delays decay with the signal modes, negative delays with the
    idler modes; the two-sided integral is one.
    """
    tau = np.asarray(tau, dtype=float)
    flat = np.atleast_1d(tau).ravel()
    out = np.empty(flat.shape)
    pos = flat >= 0
    if np.any(pos):
        out[pos] = np.abs(_side_amplitude(signal, flat[pos])) ** 2
    if np.any(~pos):
        out[~pos] = np.abs(_side_amplitude(idler, flat[~pos])) ** 2
    out /= g2_normalization(signal, idler)
    return out.reshape(tau.shape) if tau.ndim else float(out[0])


def single_mode_g2(linewidth_signal: float, linewidth_idler: float, tau):
    """Closed-form two-sided exponential for single-mode arms."""
    tau = np.asarray(tau, dtype=float)
    z = 1.0 / (2 * np.pi * linewidth_signal) + 1.0 / (2 * np.pi * linewidth_idler)
    rate = np.where(tau >= 0, 2 * np.pi * linewidth_signal, 2 * np.pi * linewidth_idler)
    return np.exp(-rate * np.abs(tau)) / z


def folded_contrast(values, phases, n_phase_bins: int) -> float:
    """(max - min)/(max + min) of `values` averaged in phase bins over one period."""
    values = np.asarray(values, dtype=float)
    idx = np.floor(np.mod(phases, 1.0) * n_phase_bins).astype(int) % n_phase_bins
    sums = np.bincount(idx, weights=values, minlength=n_phase_bins)
    hits = np.bincount(idx, minlength=n_phase_bins)
    if np.any(hits == 0):
        raise ParameterError("phase folding left empty phase bins")
    prof = sums / hits
    hi, lo = prof.max(), prof.min()
    if hi + lo <= 0:
        return 0.0
    return float((hi - lo) / (hi + lo))


def predicted_comb_contrast(signal: ModeComb, idler: ModeComb, period: float, n_phase_bins: int = 20,
                            n_decay: float = 2.0) -> float:
    """Comb contrast of the noiseless G2, using the same folding as the histogram analysis."""
    rate_s = 2 * np.pi * float(np.min(signal.linewidths))
    rate_i = 2 * np.pi * float(np.min(idler.linewidths))
    step = period / n_phase_bins
    tau_pos = (np.arange(int(np.ceil(n_decay / rate_s / step))) + 0.5) * step
    tau_neg = -(np.arange(int(np.ceil(n_decay / rate_i / step))) + 0.5) * step
    vals_pos = g2_analytic(signal, idler, tau_pos) / np.exp(-rate_s * tau_pos)
    vals_neg = g2_analytic(signal, idler, tau_neg) / np.exp(rate_i * tau_neg)
    tau = np.concatenate([tau_neg, tau_pos])
    vals = np.concatenate([vals_neg, vals_pos])
    return folded_contrast(vals, tau / period, n_phase_bins)
