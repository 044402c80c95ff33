"""Simulated measurement protocols: one synthesized run per analyzer setting."""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .correlation import coincidence_count
from .entanglement import CountEntry, CountTable, chsh_settings, tomography_settings
from .polarization import AnalyzerSetting
from .synth import synthesize


def child_seeds(seed: int, n: int) -> list:
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def protocol_settings(cfg: RunConfig, protocol: str) -> list:
    a = cfg["analysis"]
    if protocol == "chsh":
        return chsh_settings(tuple(a["chsh_angles_deg"]))
    if protocol == "tomo":
        return tomography_settings()
    if protocol == "fringe":
        idler = AnalyzerSetting(a["fringe_idler_hwp_deg"], 0.0, "transmit")
        angles = np.arange(0.0, 180.0 + 1e-9, a["fringe_hwp_step_deg"])
        return [(idler, AnalyzerSetting(float(x), 0.0, "transmit")) for x in angles]
    raise ValueError(f"unknown protocol {protocol!r}")


def measure(cfg: RunConfig, settings: list, window_ps=None) -> CountTable:
    """Synthesize one run per (idler, signal) setting and count coincidences in the window."""
    window = cfg["analysis"]["window_ps"] if window_ps is None else window_ps
    det_s, det_i = cfg.detector("signal"), cfg.detector("idler")
    entries = []
    for (idler, signal), seed in zip(settings, child_seeds(cfg.seed, len(settings))):
        src = cfg.source(idler_analyzer=idler, signal_analyzer=signal, seed=seed)
        events = synthesize(src, det_s, det_i, n_chunks=cfg["analysis"]["n_chunks"])
        entries.append(CountEntry(idler, signal, float(coincidence_count(events, window)), src.duration))
    return CountTable(entries)
