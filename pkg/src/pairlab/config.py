"""YAML run configuration with unit-suffixed keys."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigError, PairlabError
from .polarization import AnalyzerSetting, NoiseParams, apply_noise, bell_psi
from .spectral import (
    CavityArmSpec,
    EtalonSpec,
    ModeComb,
    PhaseMatchEnvelope,
    apply_etalon,
    build_mode_comb,
)
from .synth import DetectorSpec, SourceRunConfig

C_LIGHT = 299_792_458.0
SIGNAL_CENTER_HZ = C_LIGHT / 935e-9
IDLER_CENTER_HZ = C_LIGHT / 880e-9

UNIT_SUFFIXES = ("hz", "s", "ps", "rad", "deg", "mw", "mhz")
DIMENSIONLESS = {"seed", "n_modes", "white_noise_p", "efficiency", "peak_transmission", "port", "n_chunks"}

REQUIRED = object()


@dataclass(frozen=True)
class F:
    """Leaf field: expected type(s) and default."""

    types: tuple
    default: Any = REQUIRED


@dataclass(frozen=True)
class Section:
    fields: dict
    nullable: bool = False
    default_null: bool = False


NUM = (int, float)


def _arm(center, linewidth):
    return Section({
        "center_frequency_hz": F(NUM, center),
        "fsr_hz": F(NUM, 2e9),
        "mode_linewidth_hz": F(NUM, linewidth),
        "n_modes": F((int,), 1),
    })


_ETALON = Section({
    "fsr_hz": F(NUM),
    "fwhm_hz": F(NUM),
    "peak_transmission": F(NUM, 1.0),
    "detuning_hz": F(NUM, 0.0),
}, nullable=True, default_null=True)

_ANALYZER = Section({
    "hwp_deg": F(NUM, 0.0),
    "qwp_deg": F(NUM, 0.0),
    "port": F((str,), "transmit"),
}, nullable=True, default_null=True)

_DETECTOR = Section({
    "efficiency": F(NUM, 1.0),
    "dark_rate_hz": F(NUM, 0.0),
    "jitter_s": F(NUM, 0.0),
})

SCHEMA = Section({
    "seed": F((int,), 0),
    "duration_s": F(NUM),
    "pair_rate_hz": F(NUM),
    "state": Section({
        "phase_sigma_rad": F(NUM, 0.0),
        "rot_signal_rad": F(NUM, 0.0),
        "rot_idler_rad": F(NUM, 0.0),
        "white_noise_p": F(NUM, 0.0),
    }),
    "signal_arm": _arm(SIGNAL_CENTER_HZ, 9e6),
    "idler_arm": _arm(IDLER_CENTER_HZ, 9.5e6),
    "phase_matching": Section({
        "fwhm_hz": F(NUM, 120e9),
        "detuning_hz": F(NUM, 0.0),
    }),
    "etalons": Section({"signal": _ETALON, "idler": _ETALON}),
    "analyzers": Section({"signal": _ANALYZER, "idler": _ANALYZER}),
    "detectors": Section({"signal": _DETECTOR, "idler": _DETECTOR}),
    "analysis": Section({
        "bin_size_ps": F((int,), 4000),
        "range_ps": F((int,), 200_000),
        "window_ps": F((int,), 80_000),
        "pump_power_mw": F(NUM, 9.0),
        "n_chunks": F((int,), 1),
        "chsh_angles_deg": F((list,), [0.0, 45.0, 67.5, 22.5]),
        "fringe_idler_hwp_deg": F(NUM, -22.5),
        "fringe_hwp_step_deg": F(NUM, 7.5),
    }),
})


def _check_unit(key: str, path: str):
    if key in DIMENSIONLESS:
        return
    suffix = key.rsplit("_", 1)[-1] if "_" in key else ""
    if suffix not in UNIT_SUFFIXES:
        raise ConfigError(f"key lacks a recognized unit suffix (one of {', '.join(UNIT_SUFFIXES)})", path)


def _normalize(raw, section: Section, path: str) -> Optional[dict]:
    if raw is None:
        if section.nullable:
            return None
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"expected a mapping, got {type(raw).__name__}", path or "<root>")
    unknown = set(raw) - set(section.fields)
    if unknown:
        key = sorted(unknown)[0]
        kp = f"{path}.{key}" if path else key
        stem = str(key).rsplit("_", 1)[0]
        twins = [k for k in section.fields if k.rsplit("_", 1)[0] == stem and k not in DIMENSIONLESS]
        if twins:
            raise ConfigError(f"unit suffix not accepted here, expected '{twins[0]}'", kp)
        raise ConfigError("unknown key", kp)
    out = {}
    for key, fld in section.fields.items():
        kp = f"{path}.{key}" if path else key
        if isinstance(fld, Section):
            if key not in raw and fld.default_null:
                out[key] = None
            else:
                out[key] = _normalize(raw.get(key), fld, kp)
            continue
        _check_unit(key, kp)
        if key not in raw:
            if fld.default is REQUIRED:
                raise ConfigError("required key missing", kp)
            out[key] = copy.deepcopy(fld.default)
            continue
        val = raw[key]
        if isinstance(val, bool) or not isinstance(val, fld.types):
            # YAML reads 2e9 without a dot as a string
            if float in fld.types and isinstance(val, str):
                try:
                    val = float(val)
                except ValueError:
                    raise ConfigError(f"expected a number, got {val!r}", kp) from None
            else:
                names = "/".join(t.__name__ for t in fld.types)
                raise ConfigError(f"expected {names}, got {type(val).__name__}", kp)
        if isinstance(val, int) and float in fld.types:
            val = float(val)
        out[key] = val
    return out


@dataclass
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw) -> "RunConfig":
        cfg = cls(_normalize(raw, SCHEMA, ""))
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, text: str) -> "RunConfig":
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"invalid YAML: {exc}") from None
        return cls.from_dict(raw or {})

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
        return cls.from_yaml(text)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False)

    def config_hash(self) -> str:
        blob = json.dumps(self.data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_seed(self, seed: int) -> "RunConfig":
        data = copy.deepcopy(self.data)
        data["seed"] = int(seed)
        return RunConfig(data)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    def validate(self) -> None:
        """Build every physical object once so domain errors surface with a key path."""
        d = self.data
        for key in ("duration_s", "pair_rate_hz"):
            if d[key] < 0:
                raise ConfigError("must be >= 0", key)
        a = d["analysis"]
        for key in ("bin_size_ps", "range_ps", "window_ps", "n_chunks"):
            if a[key] <= 0:
                raise ConfigError("must be > 0", f"analysis.{key}")
        if len(a["chsh_angles_deg"]) != 4:
            raise ConfigError("needs exactly four angles (a, a', b, b')", "analysis.chsh_angles_deg")
        steps = [("state", self.noise), ("signal_arm", lambda: self.arm("signal")),
                 ("idler_arm", lambda: self.arm("idler")), ("phase_matching", lambda: self.envelope("signal")),
                 ("etalons.signal", lambda: self.etalon("signal")), ("etalons.idler", lambda: self.etalon("idler")),
                 ("analyzers.signal", lambda: self.analyzer("signal")),
                 ("analyzers.idler", lambda: self.analyzer("idler")),
                 ("detectors.signal", lambda: self.detector("signal")),
                 ("detectors.idler", lambda: self.detector("idler"))]
        for path, build in steps:
            try:
                obj = build()
                if isinstance(obj, NoiseParams):
                    obj.validate()
            except PairlabError as exc:
                raise ConfigError(str(exc), path) from None

    # -- object builders -------------------------------------------------

    def noise(self) -> NoiseParams:
        s = self.data["state"]
        return NoiseParams(s["phase_sigma_rad"], s["rot_signal_rad"], s["rot_idler_rad"], s["white_noise_p"])

    def state(self):
        return apply_noise(bell_psi(), self.noise())

    def arm(self, which: str) -> CavityArmSpec:
        a = self.data[f"{which}_arm"]
        return CavityArmSpec(a["center_frequency_hz"], a["fsr_hz"], a["mode_linewidth_hz"], a["n_modes"])

    def envelope(self, which: str) -> PhaseMatchEnvelope:
        pm = self.data["phase_matching"]
        center = self.data[f"{which}_arm"]["center_frequency_hz"] + pm["detuning_hz"]
        return PhaseMatchEnvelope(pm["fwhm_hz"], center)

    def etalon(self, which: str) -> Optional[EtalonSpec]:
        e = self.data["etalons"][which]
        if e is None:
            return None
        return EtalonSpec(e["fsr_hz"], e["fwhm_hz"], e["peak_transmission"], e["detuning_hz"])

    def analyzer(self, which: str) -> Optional[AnalyzerSetting]:
        a = self.data["analyzers"][which]
        if a is None:
            return None
        return AnalyzerSetting(a["hwp_deg"], a["qwp_deg"], a["port"])

    def detector(self, which: str) -> DetectorSpec:
        d = self.data["detectors"][which]
        return DetectorSpec(d["efficiency"], d["dark_rate_hz"], d["jitter_s"])

    def comb(self, which: str) -> tuple[ModeComb, float]:
        """Mode comb of one arm after its etalon, with the transmitted weight."""
        comb = build_mode_comb(self.arm(which), self.envelope(which))
        etalon = self.etalon(which)
        if etalon is None:
            return comb, 1.0
        return apply_etalon(comb, etalon)

    def source(self, idler_analyzer=..., signal_analyzer=..., seed=None) -> SourceRunConfig:
        """SourceRunConfig with the pair rate reduced by both etalon transmissions."""
        sig, w_s = self.comb("signal")
        idl, w_i = self.comb("idler")
        return SourceRunConfig(
            pair_rate=self.data["pair_rate_hz"] * w_s * w_i,
            signal_comb=sig,
            idler_comb=idl,
            duration=self.data["duration_s"],
            state=self.state(),
            idler_analyzer=self.analyzer("idler") if idler_analyzer is ... else idler_analyzer,
            signal_analyzer=self.analyzer("signal") if signal_analyzer is ... else signal_analyzer,
            rng_seed=self.seed if seed is None else seed,
        )


def default_config_dict() -> dict:
    """A single-mode run of the reference source: 9 / 9.5 MHz arms, no analyzers."""
    return RunConfig.from_dict({"duration_s": 1800.0, "pair_rate_hz": 1000.0}).data
