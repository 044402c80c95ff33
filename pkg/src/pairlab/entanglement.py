"""Polarization-correlation analyses: fringes, CHSH, tomography and brightness."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ContractError, DegenerateDataError, FitError, ParameterError
from .polarization import (
    PSI_PLUS,
    STANDARD_SETTINGS,
    AnalyzerSetting,
    check_density_matrix,
    coincidence_probability,
    fidelity,
)

PAULI = (
    np.eye(2, dtype=complex),
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
PAULI2 = [np.kron(a, b) for a, b in product(PAULI, PAULI)]

TOMOGRAPHY_LABELS = [a + b for a, b in product("HVDR", "HVDR")]


@dataclass(frozen=True)
class CountEntry:
    idler: AnalyzerSetting
    signal: AnalyzerSetting
    counts: float
    integration_time: float = 1.0


@dataclass
class CountTable:
    entries: list

    def __post_init__(self):
        for e in self.entries:
            if e.counts < 0 or not np.isfinite(e.counts):
                raise ContractError(f"counts must be finite and >= 0, got {e.counts}")
            if e.integration_time <= 0:
                raise ContractError(f"integration time must be > 0, got {e.integration_time}")

    def __len__(self):
        return len(self.entries)

    @property
    def counts(self) -> np.ndarray:
        return np.array([e.counts for e in self.entries], dtype=float)

    @property
    def times(self) -> np.ndarray:
        return np.array([e.integration_time for e in self.entries], dtype=float)

    def projectors(self) -> list:
        return [np.kron(e.idler.projector(), e.signal.projector()) for e in self.entries]

    def with_counts(self, counts) -> "CountTable":
        return CountTable([CountEntry(e.idler, e.signal, float(c), e.integration_time)
                           for e, c in zip(self.entries, counts)])


@dataclass
class TomographyResult:
    rho: np.ndarray
    log_likelihood: float
    iterations: int
    linear_estimate: np.ndarray
    converged: bool = True
    intensity: float = float("nan")

    def fidelity(self, target=PSI_PLUS) -> float:
        return fidelity(self.rho, target)


@dataclass
class FringeResult:
    angles: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    visibility: float
    visibility_err: float
    phase: float
    coefficients: np.ndarray = field(repr=False, default=None)


# ---------------------------------------------------------------- fringes

def fit_fringe(angles_deg, values, errors=None, chi2_limit: float = 25.0) -> tuple:
    """Fit c0 + c1 cos(4 theta) + c2 sin(4 theta); returns (V, sigma_V, phase_deg, coef).

    The period is 90 degrees of HWP rotation. With error bars, a reduced
    chi-square above `chi2_limit` is treated as non-sinusoidal data.
    """
    theta = np.deg2rad(np.asarray(angles_deg, dtype=float))
    y = np.asarray(values, dtype=float)
    if np.unique(np.round(np.mod(theta, np.pi / 2), 12)).size < 3:
        raise FitError("need at least three distinct HWP angles within one period")
    design = np.column_stack([np.ones_like(theta), np.cos(4 * theta), np.sin(4 * theta)])
    if errors is None:
        w = np.ones_like(y)
    else:
        err = np.asarray(errors, dtype=float)
        w = 1.0 / np.maximum(err, 1e-300) ** 2 if np.all(err > 0) else 1.0 / np.maximum(err, np.max(err) or 1.0) ** 2
    coef, *_ = np.linalg.lstsq(design * np.sqrt(w)[:, None], y * np.sqrt(w), rcond=None)
    c0, c1, c2 = coef
    if c0 <= 0:
        raise FitError(f"fringe offset {c0:.3g} is not positive", residuals=y - design @ coef)
    amp = float(np.hypot(c1, c2))
    vis = amp / c0
    vis_err = float("nan")
    if errors is not None:
        resid = y - design @ coef
        dof = len(y) - 3
        if dof > 0 and np.sum(w * resid**2) / dof > chi2_limit:
            raise FitError("fringe data are not sinusoidal with a 90 degree period", residuals=resid)
        cov = np.linalg.inv((design * w[:, None]).T @ design)
        if amp > 0:
            grad = np.array([-amp / c0**2, c1 / (amp * c0), c2 / (amp * c0)])
            vis_err = float(np.sqrt(grad @ cov @ grad))
    phase = float(np.rad2deg(np.arctan2(c2, c1)) / 4.0)
    return vis, vis_err, phase, coef


def fringe_scan(rho, idler: AnalyzerSetting, hwp_angles: Sequence[float], signal_qwp: float = 0.0) -> FringeResult:
    """Analytic polarization-correlation fringe: the signal HWP is rotated."""
    angles = np.asarray(hwp_angles, dtype=float)
    probs = np.array([coincidence_probability(rho, idler, AnalyzerSetting(a, signal_qwp, "transmit"))
                      for a in angles])
    vis, _, phase, coef = fit_fringe(angles, probs)
    return FringeResult(angles, probs, np.zeros_like(probs), vis, 0.0, phase, coef)


def fringe_from_counts(table: CountTable) -> FringeResult:
    """Fringe from measured counts; the x axis is the signal HWP angle of each entry."""
    angles = np.array([e.signal.hwp for e in table.entries])
    rates = table.counts / table.times
    errs = np.sqrt(np.maximum(table.counts, 1.0)) / table.times
    vis, vis_err, phase, coef = fit_fringe(angles, rates, errs)
    return FringeResult(angles, rates, errs, vis, vis_err, phase, coef)


# ------------------------------------------------------------------- CHSH

def linear_setting(angle_deg: float, port: str = "transmit") -> AnalyzerSetting:
    """Analyzer passing linear polarization at `angle_deg` (HWP at half the angle)."""
    return AnalyzerSetting(angle_deg / 2.0, 0.0, port)


# (a, a', b, b') as polarization angles; idler {0, 45}, signal {67.5, 22.5}
CHSH_ANGLES = (0.0, 45.0, 67.5, 22.5)

_PORT_SIGNS = (("transmit", "transmit", 1), ("transmit", "reflect", -1),
               ("reflect", "transmit", -1), ("reflect", "reflect", 1))


def chsh_settings(angles=CHSH_ANGLES) -> list:
    """The 16 (idler, signal) analyzer settings of a CHSH run, term by term."""
    a, ap, b, bp = angles
    out = []
    for x, y in ((a, b), (a, bp), (ap, b), (ap, bp)):
        for pi, ps, _ in _PORT_SIGNS:
            out.append((linear_setting(x, pi), linear_setting(y, ps)))
    return out


def _chsh_from_terms(n: np.ndarray):
    """n has shape (4 terms, 4 port combinations) in _PORT_SIGNS order."""
    signs = np.array([s for *_, s in _PORT_SIGNS], dtype=float)
    tot = n.sum(axis=1)
    if np.any(tot <= 0):
        raise DegenerateDataError("a CHSH correlation term has zero total counts")
    e = (n @ signs) / tot
    s = e[0] - e[1] + e[2] + e[3]
    var = np.sum((1.0 - e**2) / tot)
    return float(s), float(np.sqrt(var)), e


def correlation(rho, alpha_deg: float, beta_deg: float) -> float:
    n = np.array([coincidence_probability(rho, linear_setting(alpha_deg, pi), linear_setting(beta_deg, ps))
                  for pi, ps, _ in _PORT_SIGNS])
    return float(n @ np.array([s for *_, s in _PORT_SIGNS]))


def chsh(data, angles=CHSH_ANGLES):
    """CHSH S = E(a,b) - E(a,b') + E(a',b) + E(a',b') and its Poisson error.

    `data` is either a 4x4 density matrix (analytic, error 0) or a CountTable
    whose 16 entries follow `chsh_settings(angles)` order.
    """
    if isinstance(data, CountTable):
        if len(data) != 16:
            raise ContractError(f"CHSH needs 16 count entries, got {len(data)}")
        # counts are normalized to a common integration time per entry
        n = data.counts.reshape(4, 4)
        s, sigma, _ = _chsh_from_terms(n)
        return s, sigma
    rho = check_density_matrix(data)
    a, ap, b, bp = angles
    s = correlation(rho, a, b) - correlation(rho, a, bp) + correlation(rho, ap, b) + correlation(rho, ap, bp)
    return float(s), 0.0


def chsh_significance(s: float, sigma: float, bound: float = 2.0) -> float:
    return (s - bound) / sigma


# ------------------------------------------------------------- tomography

def tomography_settings(labels: Sequence[str] = TOMOGRAPHY_LABELS) -> list:
    return [(STANDARD_SETTINGS[lab[0]], STANDARD_SETTINGS[lab[1]]) for lab in labels]


def _measurement_matrix(projectors) -> np.ndarray:
    # p_k = 1/4 sum_mu r_mu Tr(P_k sigma_mu)
    return np.array([[np.real(np.trace(p @ s)) / 4.0 for s in PAULI2] for p in projectors])


def tomography_linear(table: CountTable, max_condition: float = 1e8) -> np.ndarray:
    """Linear inversion onto the two-qubit Pauli basis.

    Rates are fitted as N * Tr(rho P_k); the overall intensity N is the
    identity coefficient, so dividing it out fixes the trace to one.
    """
    rates = table.counts / table.times
    if len(table) < 16:
        raise ContractError(f"tomography needs at least 16 settings, got {len(table)}")
    if not np.any(rates > 0):
        raise DegenerateDataError("all tomography counts are zero")
    m = _measurement_matrix(table.projectors())
    cond = np.linalg.cond(m)
    if not np.isfinite(cond) or cond > max_condition:
        raise ContractError(f"tomography settings are not informationally complete (condition number {cond:.3g})")
    x, *_ = np.linalg.lstsq(m, rates, rcond=None)
    if x[0] <= 0:
        raise DegenerateDataError("linear inversion gave a non-positive total intensity")
    r = x / x[0]
    rho = sum(c * s for c, s in zip(r, PAULI2)) / 4.0
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def project_psd(mat) -> np.ndarray:
    """Nearest density matrix by eigenvalue clamping and trace renormalization."""
    mat = 0.5 * (np.asarray(mat, dtype=complex) + np.asarray(mat, dtype=complex).conj().T)
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    if vals.sum() <= 0:
        return np.eye(mat.shape[0], dtype=complex) / mat.shape[0]
    out = (vecs * vals) @ vecs.conj().T
    out = 0.5 * (out + out.conj().T)
    return out / np.trace(out).real


_TRIL = np.tril_indices(4)
_TRIL_OFF = np.tril_indices(4, -1)


def _params_to_t(x: np.ndarray) -> np.ndarray:
    t = np.zeros((4, 4), dtype=complex)
    t[np.diag_indices(4)] = x[:4]
    t[_TRIL_OFF] = x[4:10] + 1j * x[10:16]
    return t


def _t_to_params(t: np.ndarray) -> np.ndarray:
    return np.concatenate([np.real(np.diag(t)), np.real(t[_TRIL_OFF]), np.imag(t[_TRIL_OFF])])


def _rho_to_params(rho: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Factor rho (slightly regularized) as T^dag T with T lower triangular."""
    reg = rho + floor * np.eye(4)
    j = np.eye(4)[::-1]
    low = np.linalg.cholesky(j @ reg @ j)
    t = (j @ low @ j).conj().T
    return _t_to_params(np.tril(t))


def _params_to_rho(x: np.ndarray) -> np.ndarray:
    t = _params_to_t(x)
    a = t.conj().T @ t
    return a / np.trace(a).real


class _Likelihood:
    """Poisson negative log-likelihood with the overall intensity profiled out."""

    floor = 1e-300

    def __init__(self, table: CountTable):
        self.n = table.counts
        self.t = table.times
        self.ops = np.array(table.projectors())
        self.n_tot = self.n.sum()

    def probs(self, rho):
        return np.real(np.einsum("kij,ji->k", self.ops, rho))

    def log_likelihood(self, rho) -> tuple:
        """(log L, intensity) with log L = sum n log mu - mu, mu = N t p, constants dropped."""
        p = np.clip(self.probs(rho), 0.0, None)
        tp = self.t * p
        norm = tp.sum()
        if norm <= 0:
            return -np.inf, 0.0
        intensity = self.n_tot / norm
        mu = intensity * tp
        pos = self.n > 0
        if np.any(mu[pos] <= 0):
            return -np.inf, intensity
        return float(np.sum(self.n[pos] * np.log(mu[pos])) - mu.sum()), intensity

    def objective(self, x):
        t = _params_to_t(x)
        a = t.conj().T @ t
        s = np.trace(a).real
        rho = a / s
        p = np.maximum(self.probs(rho), self.floor)
        tp = self.t * p
        norm = tp.sum()
        f = -np.sum(self.n * np.log(p)) + self.n_tot * np.log(norm)
        c = -self.n / p + self.n_tot * self.t / norm
        g = (np.einsum("k,kij->ij", c, self.ops) - np.sum(c * p) * np.eye(4)) / s
        # df = 2 Re tr(G T^dag dT)
        m = (g @ t.conj().T).T
        grad_t = 2.0 * m
        grad = np.concatenate([
            np.real(np.diag(grad_t)),
            np.real(grad_t[_TRIL_OFF]),
            -np.imag(grad_t[_TRIL_OFF]),
        ])
        return float(f), grad


def tomography_mle(table: CountTable, max_iter: int = 10_000, rel_tol: float = 1e-10) -> TomographyResult:
    """Maximum-likelihood state under a Poisson model, rho = T^dag T / Tr(T^dag T)."""
    if not np.any(table.counts > 0):
        raise DegenerateDataError("all tomography counts are zero")
    linear = tomography_linear(table)
    start = project_psd(linear)
    like = _Likelihood(table)
    ll_start, _ = like.log_likelihood(start)

    x0 = _rho_to_params(start)
    res = minimize(like.objective, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": rel_tol, "gtol": 1e-12, "maxfun": 5 * max_iter})
    rho = _params_to_rho(res.x)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    ll, intensity = like.log_likelihood(rho)
    if ll < ll_start:
        rho, ll, intensity = start, ll_start, like.log_likelihood(start)[1]
    converged = bool(res.nit < max_iter)
    return TomographyResult(check_density_matrix(rho, "MLE state"), float(ll), int(res.nit),
                            linear, converged, float(intensity))


def expected_counts(rho, settings, total_pairs: float, integration_time: float = 1.0) -> CountTable:
    """Noise-free count table: counts = total_pairs * Tr(rho P)."""
    entries = [CountEntry(i, s, total_pairs * coincidence_probability(rho, i, s), integration_time)
               for i, s in settings]
    return CountTable(entries)


def poisson_counts(rho, settings, pairs_per_setting: float, rng: np.random.Generator,
                   integration_time: float = 1.0) -> CountTable:
    lam = np.array([pairs_per_setting * coincidence_probability(rho, i, s) for i, s in settings])
    counts = rng.poisson(lam)
    return CountTable([CountEntry(i, s, float(c), integration_time) for (i, s), c in zip(settings, counts)])


def bootstrap_fidelity(table: CountTable, n_resamples: int = 100, seed: int = 0, target=PSI_PLUS) -> tuple:
    """Parametric bootstrap: (mean, std) of MLE fidelity over Poisson-resampled counts."""
    fit = tomography_mle(table)
    lam = fit.intensity * table.times * np.clip(like_probs(fit.rho, table), 0, None)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_resamples)]
    fids = []
    for rng in rngs:
        resampled = table.with_counts(rng.poisson(lam))
        try:
            fids.append(tomography_mle(resampled).fidelity(target))
        except DegenerateDataError:
            continue
    fids = np.array(fids)
    return float(fids.mean()), float(fids.std(ddof=1))


def like_probs(rho, table: CountTable) -> np.ndarray:
    return np.array([np.real(np.trace(rho @ p)) for p in table.projectors()])


# ------------------------------------------------------------- brightness

AVERAGE_BANDWIDTH_MHZ = 9.3


def brightness(rate: float, bandwidth_mhz: float, pump_power_mw: float) -> float:
    """Normalized spectral brightness in pairs / s / MHz / mW."""
    for name, v in (("rate", rate), ("bandwidth", bandwidth_mhz), ("pump power", pump_power_mw)):
        if not (np.isfinite(v) and v > 0):
            raise ParameterError(f"{name} must be > 0, got {v}")
    return rate / (bandwidth_mhz * pump_power_mw)
