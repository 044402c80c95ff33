"""Coincidence histograms, exponential bandwidth fits and comb contrast."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Optional

import numpy as np

from .errors import ContractError, DegenerateDataError, FitError
from .spectral import folded_contrast
from .synth import IDLER, PS_PER_S, SIGNAL, EventStream, max_workers

Side = Literal["positive", "negative"]

# idler tags per histogramming block; bounds the size of the match arrays
_BLOCK = 1 << 16


@dataclass
class CoincidenceHistogram:
    bin_size: int
    range: int
    counts: np.ndarray
    singles: tuple = (0, 0)
    integration_time: float = 0.0

    @property
    def edges(self) -> np.ndarray:
        return np.arange(-self.range, self.range + self.bin_size, self.bin_size, dtype=np.int64)

    @property
    def left(self) -> np.ndarray:
        return self.edges[:-1]

    @property
    def centers(self) -> np.ndarray:
        return self.left + 0.5 * self.bin_size

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))


@dataclass
class BandwidthFit:
    delta_nu: float
    amplitude: float
    background: float
    fit_range: tuple
    residual_rms: float
    side: Side
    iterations: int = 0
    delta_nu_err: float = float("nan")
    residuals: np.ndarray = field(default=None, repr=False)

    @property
    def decay_rate(self) -> float:
        return 2 * np.pi * self.delta_nu


def _require_sorted(events: EventStream):
    if not events.is_sorted():
        raise ContractError("event stream is not sorted by timestamp")


def _block_counts(t_idler, t_signal, bin_size, rng_ps):
    nbins = 2 * rng_ps // bin_size
    lo = np.searchsorted(t_signal, t_idler - rng_ps, side="left")
    hi = np.searchsorted(t_signal, t_idler + rng_ps, side="left")
    n = hi - lo
    total = int(n.sum())
    if total == 0:
        return np.zeros(nbins, np.int64)
    owner = np.repeat(np.arange(len(t_idler)), n)
    start = np.repeat(lo - np.cumsum(n) + n, n)
    idx = start + np.arange(total)
    dt = t_signal[idx] - t_idler[owner]
    return np.bincount((dt + rng_ps) // bin_size, minlength=nbins)[:nbins]


def histogram(events: EventStream, bin_size: int, range: int) -> CoincidenceHistogram:
    """Start-multistop histogram of t_signal - t_idler over [-range, range).

    Each idler tag is paired with every signal tag whose delay lies in the
    window; bins are half-open [t, t + bin_size).
    """
    bin_size, range = int(bin_size), int(range)
    if bin_size <= 0 or range <= 0:
        raise ContractError("bin_size and range must be positive")
    if (2 * range) % bin_size:
        raise ContractError(f"bin_size {bin_size} ps does not divide 2*range = {2 * range} ps")
    _require_sorted(events)
    t_i = events.channel(IDLER)
    t_s = events.channel(SIGNAL)
    blocks = [t_i[k:k + _BLOCK] for k in np.arange(0, len(t_i), _BLOCK)]
    if len(blocks) > 1 and max_workers() > 1:
        with ThreadPoolExecutor(max_workers=max_workers()) as pool:
            parts = list(pool.map(lambda b: _block_counts(b, t_s, bin_size, range), blocks))
    else:
        parts = [_block_counts(b, t_s, bin_size, range) for b in blocks]
    counts = np.sum(parts, axis=0) if parts else np.zeros(2 * range // bin_size, np.int64)
    return CoincidenceHistogram(bin_size, range, counts.astype(np.int64), (len(t_i), len(t_s)),
                                events.integration_time)


def brute_force_histogram(events: EventStream, bin_size: int, range: int) -> np.ndarray:
    t_i = events.channel(IDLER)
    t_s = events.channel(SIGNAL)
    counts = np.zeros(2 * range // bin_size, np.int64)
    for ti in t_i:
        dt = t_s - ti
        dt = dt[(dt >= -range) & (dt < range)]
        np.add.at(counts, (dt + range) // bin_size, 1)
    return counts


def coincidence_rate(events: EventStream, window: int, integration_time: Optional[float] = None):
    """Pairs per second with |t_s - t_i| <= window/2, and its Poisson error."""
    _require_sorted(events)
    t = events.integration_time if integration_time is None else integration_time
    t_i = events.channel(IDLER)
    t_s = events.channel(SIGNAL)
    half = window / 2.0
    lo = np.searchsorted(t_s, t_i - half, side="left")
    hi = np.searchsorted(t_s, t_i + half, side="right")
    n = int(np.sum(hi - lo))
    if n == 0:
        return 0.0, 0.0
    if t <= 0:
        raise ContractError("integration time must be positive to form a rate")
    return n / t, np.sqrt(n) / t


def coincidence_count(events: EventStream, window: int) -> int:
    t_i = events.channel(IDLER)
    t_s = events.channel(SIGNAL)
    half = window / 2.0
    return int(np.sum(np.searchsorted(t_s, t_i + half, "right") - np.searchsorted(t_s, t_i - half, "left")))


def _side_arrays(h: CoincidenceHistogram, side: Side):
    counts = np.asarray(h.counts, dtype=float)
    if side == "positive":
        mask = h.left >= 0
        tau = h.centers[mask]
    elif side == "negative":
        mask = h.left < 0
        tau = -h.centers[mask]
    else:
        raise ContractError(f"side must be 'positive' or 'negative', got {side!r}")
    return tau, counts[mask]


def _model(p, tau_s):
    a, k, b = p
    e = np.exp(-k * tau_s)
    return a * e + b, np.column_stack([e, -a * tau_s * e, np.ones_like(tau_s)])


def _gauss_newton(tau_s, y, w, p0, max_iter):
    p = np.array(p0, dtype=float)
    sw = np.sqrt(w)

    def cost(q):
        return float(np.sum(w * (y - _model(q, tau_s)[0]) ** 2))

    c = cost(p)
    for it in range(1, max_iter + 1):
        f, jac = _model(p, tau_s)
        step, *_ = np.linalg.lstsq(jac * sw[:, None], (y - f) * sw, rcond=None)
        lam = 1.0
        while lam > 1e-6:
            trial = p + lam * step
            c_trial = cost(trial)
            if c_trial <= c:
                break
            lam *= 0.5
        else:
            trial, c_trial = p, c
        converged = np.all(np.abs(trial - p) <= 1e-10 * np.maximum(np.abs(trial), 1e-300)) or c - c_trial <= 1e-14 * c
        p, c = trial, c_trial
        if converged:
            return p, it, True
    return p, max_iter, False


def fit_bandwidth(h: CoincidenceHistogram, side: Side, fit_range: Optional[tuple] = None,
                  max_iter: int = 50) -> BandwidthFit:
    """Fit A*exp(-2*pi*dnu*|tau|) + B to one side of the histogram.

    Weighted least squares with Poisson weights 1/max(count, 1), started from
    a log-linear fit and refined by damped Gauss-Newton. `fit_range` is a
    (min, max) interval of |tau| in ps; by default it starts one bin away from
    zero and ends where the fitted curve drops below 5 counts.
    """
    tau_ps, y = _side_arrays(h, side)
    if np.count_nonzero(y) < 10:
        raise DegenerateDataError(f"fewer than 10 nonzero bins on the {side} side")

    def select(lo, hi):
        m = (tau_ps - 0.5 * h.bin_size >= lo) & (tau_ps + 0.5 * h.bin_size <= hi)
        return tau_ps[m] / PS_PER_S, y[m]

    auto = fit_range is None
    lo, hi = (h.bin_size, float(h.range)) if auto else fit_range
    t, yy = select(lo, hi)
    if np.count_nonzero(yy) < 3:
        raise DegenerateDataError(f"fewer than 3 nonzero bins in fit range on the {side} side")

    pos = yy > 0
    wl = yy[pos]
    slope, intercept = np.polyfit(t[pos], np.log(yy[pos]), 1, w=np.sqrt(wl))
    if slope >= 0:
        raise FitError(f"no decay on the {side} side (log-linear slope {slope:.3g})", residuals=yy)
    p0 = (np.exp(intercept), -slope, 0.0)
    w = 1.0 / np.maximum(yy, 1.0)
    p, iters, ok = _gauss_newton(t, yy, w, p0, max_iter)

    if auto:
        # tail cut: drop bins where the expected count is below 5
        expected = _model(p, t)[0]
        below = np.nonzero(expected < 5.0)[0]
        if below.size and below[0] >= 10:
            hi_cut = t[below[0]] * PS_PER_S - 0.5 * h.bin_size
            t, yy = select(lo, hi_cut)
            w = 1.0 / np.maximum(yy, 1.0)
            p, iters2, ok = _gauss_newton(t, yy, w, p, max_iter)
            iters += iters2
            hi = hi_cut

    f, jac = _model(p, t)
    resid = yy - f
    if not ok:
        raise FitError(f"Gauss-Newton did not converge in {max_iter} iterations on the {side} side", residuals=resid)
    if not (p[1] > 0 and np.isfinite(p).all()):
        raise FitError(f"fitted decay rate {p[1]:.3g} /s is not positive", residuals=resid)
    try:
        cov = np.linalg.inv((jac * w[:, None]).T @ jac)
        k_err = float(np.sqrt(cov[1, 1]))
    except np.linalg.LinAlgError:
        k_err = float("nan")
    return BandwidthFit(
        delta_nu=float(p[1] / (2 * np.pi)),
        amplitude=float(p[0]),
        background=float(p[2]),
        fit_range=(float(lo), float(hi)),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        side=side,
        iterations=iters,
        delta_nu_err=k_err / (2 * np.pi),
        residuals=resid,
    )


def rebin(h: CoincidenceHistogram, factor: int) -> CoincidenceHistogram:
    """Merge `factor` adjacent bins, trimming the range symmetrically to a whole number of coarse bins."""
    factor = int(factor)
    wide = factor * h.bin_size
    rng_ps = (h.range // wide) * wide
    if rng_ps == 0:
        raise ContractError(f"range {h.range} ps is shorter than one rebinned bin ({wide} ps)")
    start = (h.range - rng_ps) // h.bin_size
    n = 2 * rng_ps // h.bin_size
    counts = h.counts[start:start + n].reshape(-1, factor).sum(axis=1)
    return CoincidenceHistogram(wide, rng_ps, counts, h.singles, h.integration_time)


def comb_contrast(h: CoincidenceHistogram, expected_period: float, fits: Optional[dict] = None) -> float:
    """Depth of the periodic revival structure after dividing out the decay envelope.

    Each side is normalized bin by bin by its fitted exponential, then the
    bins within two decay constants of zero are folded onto one period.
    Without `fits`, the envelope is fitted on the histogram rebinned to one
    period per bin, which averages the revivals out.
    """
    period = float(expected_period)
    if h.bin_size > period / 8:
        raise ContractError(f"bin size {h.bin_size} ps too coarse for period {period} ps (need <= period/8)")
    if h.range < 3 * period:
        raise ContractError(f"histogram range {h.range} ps shorter than 3 periods ({3 * period} ps)")
    n_phase = max(int(round(period / h.bin_size)), 1)
    if fits is None:
        coarse = rebin(h, n_phase)
        fits = {}
        for side in ("positive", "negative"):
            f = fit_bandwidth(coarse, side)
            fits[side] = replace(f, amplitude=f.amplitude / n_phase, background=f.background / n_phase)
    values, phases = [], []
    for side, sign in (("positive", 1.0), ("negative", -1.0)):
        tau_ps, y = _side_arrays(h, side)
        fit = fits[side]
        tau_s = tau_ps / PS_PER_S
        keep = (tau_s * fit.decay_rate <= 2.0) & (tau_ps >= 0)
        model = _model((fit.amplitude, fit.decay_rate, fit.background), tau_s[keep])[0]
        if np.any(model <= 0):
            raise FitError("fitted envelope is not positive inside the folding window")
        values.append(y[keep] / model)
        phases.append(sign * tau_ps[keep] / period)
    values = np.concatenate(values)
    phases = np.concatenate(phases)
    if values.size < n_phase:
        raise ContractError("too few bins inside two decay constants to fold one period")
    return folded_contrast(values, phases, n_phase)
