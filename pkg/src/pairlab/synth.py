"""Monte Carlo synthesis of time-tagged detection events."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractError, ParameterError, SamplingError
from .polarization import AnalyzerSetting, bell_psi, check_density_matrix, joint_outcome_probabilities
from .spectral import ModeComb, g2_analytic, single_mode_g2

IDLER = 0
SIGNAL = 1
PS_PER_S = 1e12


@dataclass(frozen=True)
class DetectorSpec:
    efficiency: float = 1.0
    dark_rate: float = 0.0
    jitter_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ParameterError(f"detector efficiency must lie in [0, 1], got {self.efficiency}")
        if self.dark_rate < 0:
            raise ParameterError(f"dark_rate must be >= 0, got {self.dark_rate}")
        if self.jitter_sigma < 0:
            raise ParameterError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")


@dataclass
class SourceRunConfig:
    pair_rate: float
    signal_comb: ModeComb
    idler_comb: ModeComb
    duration: float
    state: np.ndarray = field(default_factory=bell_psi)
    idler_analyzer: Optional[AnalyzerSetting] = None
    signal_analyzer: Optional[AnalyzerSetting] = None
    rng_seed: int = 0

    def validate(self) -> None:
        if not (np.isfinite(self.pair_rate) and self.pair_rate >= 0):
            raise ParameterError(f"pair_rate must be >= 0, got {self.pair_rate}")
        if not (np.isfinite(self.duration) and self.duration >= 0):
            raise ParameterError(f"duration must be >= 0, got {self.duration}")
        check_density_matrix(self.state, "state")


@dataclass
class EventStream:
    """Merged detection events sorted by timestamp (integer ps), ties by channel."""

    channels: np.ndarray
    timestamps: np.ndarray
    duration: Optional[float] = None

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.uint8)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if self.channels.shape != self.timestamps.shape:
            raise ContractError("channels and timestamps differ in length")

    def __len__(self):
        return len(self.timestamps)

    @classmethod
    def empty(cls, duration: Optional[float] = None) -> "EventStream":
        return cls(np.empty(0, np.uint8), np.empty(0, np.int64), duration)

    @classmethod
    def from_channels(cls, idler_ps, signal_ps, duration=None) -> "EventStream":
        idler_ps = np.asarray(idler_ps, dtype=np.int64)
        signal_ps = np.asarray(signal_ps, dtype=np.int64)
        ts = np.concatenate([idler_ps, signal_ps])
        ch = np.concatenate([np.full(len(idler_ps), IDLER, np.uint8), np.full(len(signal_ps), SIGNAL, np.uint8)])
        order = np.lexsort((ch, ts))
        return cls(ch[order], ts[order], duration)

    def channel(self, ch: int) -> np.ndarray:
        return self.timestamps[self.channels == ch]

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.timestamps) >= 0))

    @property
    def integration_time(self) -> float:
        if self.duration is not None:
            return self.duration
        if len(self) < 2:
            return 0.0
        return float(self.timestamps[-1] - self.timestamps[0]) / PS_PER_S


def max_workers() -> int:
    env = os.environ.get("PAIRLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


class TauSampler:
    """Draws signal-minus-idler delays from the normalized G2 density.

    Single-mode arms are sampled exactly by inverse CDF; multimode arms by
    rejection from the single-mode two-sided exponential with the narrowest
    linewidth of each arm.
    """

    max_attempt_factor = 1000

    def __init__(self, signal: ModeComb, idler: ModeComb):
        self.signal = signal
        self.idler = idler
        self.gamma_s = float(np.min(signal.linewidths))
        self.gamma_i = float(np.min(idler.linewidths))
        inv_s, inv_i = 1.0 / self.gamma_s, 1.0 / self.gamma_i
        self.p_positive = inv_s / (inv_s + inv_i)
        self.multimode = signal.n_modes > 1 or idler.n_modes > 1
        self.envelope_constant = self._envelope_constant() if self.multimode else 1.0

    def _proposal_density(self, tau):
        return single_mode_g2(self.gamma_s, self.gamma_i, tau)

    def _envelope_constant(self) -> float:
        spacings = [np.min(np.diff(c.frequencies)) for c in (self.signal, self.idler) if c.n_modes > 1]
        offsets = np.concatenate([np.abs(self.signal.offsets), np.abs(self.idler.offsets)])
        span = max(float(offsets.max()), min(spacings))
        step = 1.0 / (64.0 * span)
        t_max_s = 8.0 / (2 * np.pi * self.gamma_s)
        t_max_i = 8.0 / (2 * np.pi * self.gamma_i)
        grid = np.concatenate([
            -np.arange(0.0, t_max_i, step)[::-1],
            np.arange(0.0, t_max_s, step),
            # revival points of each comb
            np.arange(0.0, t_max_s, 1.0 / min(spacings)),
            -np.arange(0.0, t_max_i, 1.0 / min(spacings)),
        ])
        ratio = g2_analytic(self.signal, self.idler, grid) / self._proposal_density(grid)
        return 1.1 * float(ratio.max())

    def _propose(self, n: int, rng: np.random.Generator) -> np.ndarray:
        positive = rng.random(n) < self.p_positive
        expo = rng.exponential(1.0, n)
        return np.where(positive, expo / (2 * np.pi * self.gamma_s), -expo / (2 * np.pi * self.gamma_i))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n == 0:
            return np.empty(0)
        if not self.multimode:
            return self._propose(n, rng)
        out = np.empty(n)
        filled = 0
        attempts = 0
        budget = self.max_attempt_factor * max(n, 100) * self.envelope_constant
        while filled < n:
            if attempts > budget:
                raise SamplingError(
                    f"rejection sampling accepted {filled}/{n} after {attempts} proposals "
                    f"(envelope constant {self.envelope_constant:.3g})"
                )
            batch = max(int(1.2 * (n - filled) * self.envelope_constant) + 16, 64)
            cand = self._propose(batch, rng)
            ratio = g2_analytic(self.signal, self.idler, cand) / self._proposal_density(cand)
            if np.any(ratio > self.envelope_constant):
                raise SamplingError("G2 density exceeds the rejection envelope")
            keep = cand[rng.random(batch) * self.envelope_constant < ratio]
            take = min(len(keep), n - filled)
            out[filled:filled + take] = keep[:take]
            filled += take
            attempts += batch
        return out


def sample_tau(signal: ModeComb, idler: ModeComb, rng: np.random.Generator, size: Optional[int] = None):
    """Draw delay(s) in seconds; a scalar when `size` is None."""
    sampler = TauSampler(signal, idler)
    if size is None:
        return float(sampler.sample(1, rng)[0])
    return sampler.sample(int(size), rng)


def _to_ps(t_seconds: np.ndarray) -> np.ndarray:
    # np.rint rounds half to even
    return np.rint(t_seconds * PS_PER_S).astype(np.int64)


def _generate_chunk(cfg, det_s, det_i, sampler, probs, t_start, t_stop, rng):
    span = t_stop - t_start
    n_pairs = rng.poisson(cfg.pair_rate * span) if span > 0 else 0
    t0 = t_start + rng.random(n_pairs) * span
    tau = sampler.sample(n_pairs, rng)

    # joint analyzer outcome: 0 both pass, 1 idler only, 2 signal only, 3 none
    outcome = rng.choice(4, size=n_pairs, p=probs) if n_pairs else np.empty(0, int)
    idler_ok = (outcome == 0) | (outcome == 1)
    signal_ok = (outcome == 0) | (outcome == 2)
    idler_ok &= rng.random(n_pairs) < det_i.efficiency
    signal_ok &= rng.random(n_pairs) < det_s.efficiency

    t_idler = t0[idler_ok]
    t_signal = (t0 + tau)[signal_ok]
    if det_i.jitter_sigma > 0:
        t_idler = t_idler + rng.normal(0.0, det_i.jitter_sigma, t_idler.size)
    if det_s.jitter_sigma > 0:
        t_signal = t_signal + rng.normal(0.0, det_s.jitter_sigma, t_signal.size)

    dark_i = t_start + rng.random(rng.poisson(det_i.dark_rate * span)) * span
    dark_s = t_start + rng.random(rng.poisson(det_s.dark_rate * span)) * span
    return np.concatenate([t_idler, dark_i]), np.concatenate([t_signal, dark_s])


def synthesize(cfg: SourceRunConfig, det_s: DetectorSpec, det_i: DetectorSpec, n_chunks: int = 1) -> EventStream:
    """Generate the merged event stream of one run.

    With `n_chunks` > 1 the run is split into equal time slices, each drawn
    from its own child of the run seed, and generated in parallel. The output
    is deterministic for a given (config, detectors, seed, n_chunks).
    """
    cfg.validate()
    if n_chunks < 1:
        raise ParameterError(f"n_chunks must be >= 1, got {n_chunks}")
    if cfg.duration == 0:
        return EventStream.empty(0.0)
    sampler = TauSampler(cfg.signal_comb, cfg.idler_comb)
    probs = joint_outcome_probabilities(cfg.state, cfg.idler_analyzer, cfg.signal_analyzer)

    if n_chunks == 1:
        rngs = [np.random.default_rng(cfg.rng_seed)]
    else:
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.rng_seed).spawn(n_chunks)]
    edges = np.linspace(0.0, cfg.duration, n_chunks + 1)

    def run(k):
        return _generate_chunk(cfg, det_s, det_i, sampler, probs, edges[k], edges[k + 1], rngs[k])

    if n_chunks > 1 and max_workers() > 1:
        with ThreadPoolExecutor(max_workers=min(max_workers(), n_chunks)) as pool:
            parts = list(pool.map(run, range(n_chunks)))
    else:
        parts = [run(k) for k in range(n_chunks)]

    stop_ps = int(np.rint(cfg.duration * PS_PER_S))
    idler = _to_ps(np.concatenate([p[0] for p in parts]))
    signal = _to_ps(np.concatenate([p[1] for p in parts]))
    idler = idler[(idler >= 0) & (idler < stop_ps)]
    signal = signal[(signal >= 0) & (signal < stop_ps)]
    return EventStream.from_channels(idler, signal, cfg.duration)


def expected_singles(cfg: SourceRunConfig, det_s: DetectorSpec, det_i: DetectorSpec) -> dict:
    """Expected counts per channel, ignoring edge losses."""
    probs = joint_outcome_probabilities(cfg.state, cfg.idler_analyzer, cfg.signal_analyzer)
    n = cfg.pair_rate * cfg.duration
    return {
        "idler": n * (probs[0] + probs[1]) * det_i.efficiency + det_i.dark_rate * cfg.duration,
        "signal": n * (probs[0] + probs[2]) * det_s.efficiency + det_s.dark_rate * cfg.duration,
        "coincidences": n * probs[0] * det_i.efficiency * det_s.efficiency,
    }
