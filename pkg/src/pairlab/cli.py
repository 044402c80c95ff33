"""Command-line interface: simulate, measure, analyze, design-etalon."""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, default_config_dict
from .correlation import coincidence_rate, comb_contrast, fit_bandwidth, histogram
from .entanglement import (
    AVERAGE_BANDWIDTH_MHZ,
    brightness,
    chsh,
    chsh_significance,
    fringe_from_counts,
    bootstrap_fidelity,
    tomography_mle,
)
from .errors import ConfigError, ContractError, PairlabError
from .experiments import measure, protocol_settings
from .formats import (
    atomic_write_bytes,
    file_digest,
    read_count_table,
    read_tagfile,
    tomography_rows,
    write_count_table,
    write_csv,
    write_tagfile,
)
from .spectral import (
    EtalonSpec,
    ModeComb,
    PhaseMatchEnvelope,
    CavityArmSpec,
    apply_etalon,
    build_mode_comb,
    etalon_transmission,
    predicted_comb_contrast,
)
from .synth import IDLER, SIGNAL, expected_singles, synthesize

EXIT_OK = 0


def _emit(text: str, out):
    if out is None:
        sys.stdout.write(text)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


# ------------------------------------------------------------- commands

def cmd_init_config(args):
    cfg = RunConfig(default_config_dict())
    atomic_write_bytes(args.out, cfg.to_yaml().encode())
    print(f"wrote {args.out}")


def cmd_simulate(args):
    cfg = _load_config(args)
    chunks = args.chunks or cfg["analysis"]["n_chunks"]
    src = cfg.source()
    det_s, det_i = cfg.detector("signal"), cfg.detector("idler")
    events = synthesize(src, det_s, det_i, n_chunks=chunks)
    write_tagfile(args.out, events)
    exp = expected_singles(src, det_s, det_i)
    n_i = int(np.sum(events.channels == IDLER))
    n_s = int(np.sum(events.channels == SIGNAL))
    print(f"config_hash: {cfg.config_hash()}  seed: {cfg.seed}  duration_s: {src.duration}")
    print(f"effective_pair_rate_hz: {src.pair_rate:.6g}")
    print(f"idler singles:  realized {n_i}  expected {exp['idler']:.1f}")
    print(f"signal singles: realized {n_s}  expected {exp['signal']:.1f}")
    print(f"true coincidences expected: {exp['coincidences']:.1f}")
    print(f"wrote {len(events)} records to {args.out}")


def cmd_measure(args):
    cfg = _load_config(args)
    settings = protocol_settings(cfg, args.protocol)
    window = args.window_ps or cfg["analysis"]["window_ps"]
    table = measure(cfg, settings, window)
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed, "protocol": args.protocol,
            "window_ps": window, "duration_s": cfg["duration_s"]}
    _emit(write_count_table(args.out, table, meta), args.out)
    if args.out:
        print(f"wrote {len(table)} settings ({int(table.counts.sum())} coincidences) to {args.out}")


def _default_range(bin_ps: int) -> int:
    return int(bin_ps * math.ceil(200_000 / bin_ps))


def cmd_g2(args):
    bin_ps = 256 if args.fine else args.bin_ps
    rng_ps = args.range_ps or _default_range(bin_ps)
    events = read_tagfile(args.tagfile)
    if args.integration_s is not None:
        events.duration = args.integration_s
    h = histogram(events, bin_ps, rng_ps)
    rate, rate_err = coincidence_rate(events, args.window_ps)
    meta = {"seed": args.seed if args.seed is not None else "none", "input": Path(args.tagfile).name,
            "input_sha256": file_digest(args.tagfile), "bin_size_ps": bin_ps, "range_ps": rng_ps,
            "singles_idler": h.singles[0], "singles_signal": h.singles[1],
            "integration_s": h.integration_time, "window_ps": args.window_ps,
            "coincidence_rate_hz": f"{rate:.6g} +- {rate_err:.3g}"}
    fits = {}
    if args.no_fit:
        meta["fit"] = "disabled"
    elif h.total == 0:
        meta["fit"] = "skipped: histogram is empty"
    else:
        for side in ("positive", "negative"):
            fits[side] = fit_bandwidth(h, side)
            f = fits[side]
            meta[f"fit_{side}_delta_nu_hz"] = f"{f.delta_nu:.6g} +- {f.delta_nu_err:.3g}"
            meta[f"fit_{side}_range_ps"] = f"{f.fit_range[0]:.0f}..{f.fit_range[1]:.0f}"
            meta[f"fit_{side}_background"] = f"{f.background:.4g}"
            meta[f"fit_{side}_residual_rms"] = f"{f.residual_rms:.4g}"
        if args.comb_period_ps:
            meta["comb_period_ps"] = args.comb_period_ps
            meta["comb_contrast"] = f"{comb_contrast(h, args.comb_period_ps):.4f}"
    rows = ([int(l), float(c), int(n)] for l, c, n in zip(h.left, h.centers, h.counts))
    text = write_csv(args.out, meta, ["tau_left_ps", "tau_center_ps", "counts"], rows)
    _emit(text, args.out)
    if args.fit_out and fits:
        write_csv(args.fit_out, {k: v for k, v in meta.items() if not k.startswith("fit_")},
                  ["side", "delta_nu_hz", "delta_nu_err_hz", "amplitude", "background", "fit_lo_ps",
                   "fit_hi_ps", "residual_rms", "iterations"],
                  [[f.side, f.delta_nu, f.delta_nu_err, f.amplitude, f.background, f.fit_range[0],
                    f.fit_range[1], f.residual_rms, f.iterations] for f in fits.values()])
    if args.out:
        for f in fits.values():
            print(f"{f.side:>8} side: delta_nu = {f.delta_nu / 1e6:.3f} MHz (+- {f.delta_nu_err / 1e6:.3f})")
        if "comb_contrast" in meta:
            print(f"comb contrast: {meta['comb_contrast']}")
        print(f"wrote histogram to {args.out}")


def cmd_chsh(args):
    meta_in, table = read_count_table(args.counts)
    s, sigma = chsh(table)
    meta = {"config_hash": meta_in.get("config_hash", "none"), "seed": meta_in.get("seed", "none"),
            "input": Path(args.counts).name}
    sig = chsh_significance(s, sigma) if sigma > 0 else float("inf")
    text = write_csv(args.out, meta, ["S", "sigma_S", "violation_sigmas"], [[s, sigma, sig]])
    _emit(text, args.out)
    if args.out:
        print(f"S = {s:.4f} +- {sigma:.4f} ({sig:.1f} standard deviations above 2)")


def cmd_tomo(args):
    meta_in, table = read_count_table(args.counts)
    result = tomography_mle(table)
    fid = result.fidelity()
    meta = {"config_hash": meta_in.get("config_hash", "none"), "seed": meta_in.get("seed", "none"),
            "input": Path(args.counts).name, "fidelity": f"{fid:.6f}",
            "log_likelihood": f"{result.log_likelihood:.10g}", "iterations": result.iterations,
            "converged": result.converged}
    if args.bootstrap:
        _, std = bootstrap_fidelity(table, args.bootstrap, seed=args.seed or 0)
        meta["fidelity_bootstrap_std"] = f"{std:.6f}"
        meta["bootstrap_resamples"] = args.bootstrap
    text = write_csv(args.out, meta, ["part", "row", "HH", "HV", "VH", "VV"], tomography_rows(result))
    _emit(text, args.out)
    if args.out:
        print(f"fidelity = {fid:.4f}  (iterations {result.iterations}, converged {result.converged})")


def cmd_fringe(args):
    meta_in, table = read_count_table(args.counts)
    fr = fringe_from_counts(table)
    meta = {"config_hash": meta_in.get("config_hash", "none"), "seed": meta_in.get("seed", "none"),
            "input": Path(args.counts).name, "visibility": f"{fr.visibility:.6f}",
            "visibility_err": f"{fr.visibility_err:.3g}", "fringe_phase_deg": f"{fr.phase:.3f}",
            "period_deg": 90}
    rows = [[a, v, e] for a, v, e in zip(fr.angles, fr.values, fr.errors)]
    text = write_csv(args.out, meta, ["signal_hwp_deg", "rate_hz", "rate_err_hz"], rows)
    _emit(text, args.out)
    if args.out:
        print(f"visibility = {fr.visibility:.4f} +- {fr.visibility_err:.4f}")


def cmd_brightness(args):
    meta = {"pump_power_mw": args.pump_mw}
    if args.tagfile:
        events = read_tagfile(args.tagfile)
        if args.integration_s is not None:
            events.duration = args.integration_s
        rate, _ = coincidence_rate(events, args.window_ps)
        meta.update(input=Path(args.tagfile).name, window_ps=args.window_ps)
    elif args.rate is not None:
        rate = args.rate
    else:
        raise ContractError("brightness needs --rate or --tagfile")
    rows = [[rate, args.bandwidth_mhz, args.pump_mw, brightness(rate, args.bandwidth_mhz, args.pump_mw),
             "bandwidth as given"]]
    if args.bandwidth_mhz != AVERAGE_BANDWIDTH_MHZ:
        rows.append([rate, AVERAGE_BANDWIDTH_MHZ, args.pump_mw,
                     brightness(rate, AVERAGE_BANDWIDTH_MHZ, args.pump_mw),
                     "average of the 9 and 9.5 MHz arm bandwidths"])
    text = write_csv(args.out, meta, ["rate_hz", "bandwidth_mhz", "pump_power_mw", "brightness_per_s_mhz_mw",
                                      "provenance"], rows)
    _emit(text, args.out)
    if args.out:
        for r in rows:
            print(f"{r[3]:.4f} /s/MHz/mW  ({r[4]})")


def cmd_design_etalon(args):
    etalon = EtalonSpec(args.fsr_hz, args.fwhm_hz, args.peak, args.detuning_hz)
    arm = CavityArmSpec(0.0, args.comb_fsr_hz, args.linewidth_hz, args.n_modes)
    comb = build_mode_comb(arm, PhaseMatchEnvelope(args.pm_fwhm_hz, 0.0))
    filtered, weight = apply_etalon(comb, etalon)
    t = etalon_transmission(etalon, comb.offsets)
    period_ps = 1e12 / args.comb_fsr_hz
    before = after = 0.0
    if comb.n_modes > 1:
        before = predicted_comb_contrast(comb, comb, 1.0 / args.comb_fsr_hz)
        after = predicted_comb_contrast(filtered, filtered, 1.0 / args.comb_fsr_hz)
    center = int(np.argmin(np.abs(comb.offsets)))
    meta = {"etalon_fsr_hz": args.fsr_hz, "etalon_fwhm_hz": args.fwhm_hz, "finesse": f"{etalon.finesse:.4g}",
            "comb_fsr_hz": args.comb_fsr_hz, "n_modes": args.n_modes, "comb_period_ps": f"{period_ps:.6g}",
            "transmitted_weight": f"{weight:.6g}",
            "predicted_contrast_before": f"{before:.4f}", "predicted_contrast_after": f"{after:.4f}"}
    rows = []
    for k in range(comb.n_modes):
        rel = t[k] / t[center]
        rows.append([k - center, comb.offsets[k], t[k], rel, comb.weights[k], filtered.weights[k]])
    text = write_csv(args.out, meta, ["mode", "offset_hz", "transmission", "suppression_vs_center",
                                      "weight_before", "weight_after"], rows)
    _emit(text, args.out)
    if args.out:
        print(f"contrast before {before:.3f}, after {after:.3f}; transmitted weight {weight:.4f}")


# --------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pairlab", description=__doc__)
    p.add_argument("--version", action="version", version=f"pairlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("init-config", help="write a default config for the reference source")
    q.add_argument("out")
    q.set_defaults(func=cmd_init_config)

    q = sub.add_parser("simulate", help="synthesize a PTAG time-tag file from a config")
    q.add_argument("config")
    q.add_argument("out")
    q.add_argument("--seed", type=int)
    q.add_argument("--chunks", type=int, help="time chunks generated in parallel")
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("measure", help="simulate a CHSH, tomography or fringe protocol into a count table")
    q.add_argument("config")
    q.add_argument("out", nargs="?")
    q.add_argument("--protocol", choices=["chsh", "tomo", "fringe"], required=True)
    q.add_argument("--seed", type=int)
    q.add_argument("--window-ps", type=int)
    q.set_defaults(func=cmd_measure)

    an = sub.add_parser("analyze", help="analyze tag files or count tables")
    asub = an.add_subparsers(dest="analysis", required=True)

    q = asub.add_parser("g2", help="coincidence histogram and bandwidth fits")
    q.add_argument("tagfile")
    q.add_argument("-o", "--out")
    q.add_argument("--bin-ps", type=int, default=4000, help="histogram bin (default 4000 ps)")
    q.add_argument("--fine", action="store_true", help="256 ps bins for time-resolved comb structure")
    q.add_argument("--range-ps", type=int)
    q.add_argument("--window-ps", type=int, default=80_000)
    q.add_argument("--integration-s", type=float)
    q.add_argument("--comb-period-ps", type=float)
    q.add_argument("--fit-out")
    q.add_argument("--no-fit", action="store_true")
    q.add_argument("--seed", type=int, help="seed recorded in the report metadata")
    q.set_defaults(func=cmd_g2)

    q = asub.add_parser("chsh", help="CHSH S from a 16-setting count table")
    q.add_argument("counts")
    q.add_argument("-o", "--out")
    q.set_defaults(func=cmd_chsh)

    q = asub.add_parser("tomo", help="maximum-likelihood state tomography")
    q.add_argument("counts")
    q.add_argument("-o", "--out")
    q.add_argument("--bootstrap", type=int, default=0, help="parametric bootstrap resamples for the fidelity error")
    q.add_argument("--seed", type=int)
    q.set_defaults(func=cmd_tomo)

    q = asub.add_parser("fringe", help="polarization-correlation fringe visibility")
    q.add_argument("counts")
    q.add_argument("-o", "--out")
    q.set_defaults(func=cmd_fringe)

    q = asub.add_parser("brightness", help="normalized spectral brightness")
    q.add_argument("--rate", type=float)
    q.add_argument("--tagfile")
    q.add_argument("--bandwidth-mhz", type=float, default=9.0)
    q.add_argument("--pump-mw", type=float, default=9.0)
    q.add_argument("--window-ps", type=int, default=80_000)
    q.add_argument("--integration-s", type=float)
    q.add_argument("-o", "--out")
    q.set_defaults(func=cmd_brightness)

    q = sub.add_parser("design-etalon", help="per-mode etalon transmission and predicted comb contrast")
    q.add_argument("--fsr-hz", type=float, default=8.4e9)
    q.add_argument("--fwhm-hz", type=float, default=120e6)
    q.add_argument("--peak", type=float, default=1.0)
    q.add_argument("--detuning-hz", type=float, default=0.0)
    q.add_argument("--comb-fsr-hz", type=float, default=2e9)
    q.add_argument("--n-modes", type=int, default=5)
    q.add_argument("--linewidth-hz", type=float, default=9e6)
    q.add_argument("--pm-fwhm-hz", type=float, default=120e9)
    q.add_argument("-o", "--out")
    q.set_defaults(func=cmd_design_etalon)
    return p


def _error_line(exc: Exception, code: int) -> str:
    return "error: " + json.dumps({"code": code, "type": type(exc).__name__, "message": str(exc)})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except PairlabError as exc:
        print(_error_line(exc, exc.exit_code), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        err = ContractError(f"{exc.filename}: {exc.strerror}")
        print(_error_line(err, err.exit_code), file=sys.stderr)
        return err.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
