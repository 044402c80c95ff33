"""PTAG binary time-tag files and `#`-metadata CSV reports.

PTAG layout (little endian)::

    header   magic "PTAG" | version u16 | resolution_ps u32 | channel_count u8     (11 bytes)
    record   channel u8 | reserved 7 x u8 (zero) | timestamp i64 [resolution units]  (16 bytes)
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import __version__
from .entanglement import CountEntry, CountTable, TomographyResult
from .errors import ContractError
from .polarization import STANDARD_SETTINGS, AnalyzerSetting
from .synth import EventStream

MAGIC = b"PTAG"
VERSION = 1
HEADER = struct.Struct("<4sHIB")
RECORD_DTYPE = np.dtype([("channel", "u1"), ("reserved", "u1", (7,)), ("timestamp", "<i8")])
assert RECORD_DTYPE.itemsize == 16


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_tags(events: EventStream, resolution_ps: int = 1, channel_count: int = 2) -> bytes:
    if not events.is_sorted():
        raise ContractError("records must be sorted by timestamp")
    if np.any(events.timestamps < 0):
        raise ContractError("timestamps must be >= 0")
    if np.any(events.timestamps % resolution_ps):
        raise ContractError(f"timestamps are not multiples of the {resolution_ps} ps resolution")
    rec = np.zeros(len(events), dtype=RECORD_DTYPE)
    rec["channel"] = events.channels
    rec["timestamp"] = events.timestamps // resolution_ps
    return HEADER.pack(MAGIC, VERSION, resolution_ps, channel_count) + rec.tobytes()


def decode_tags(blob: bytes) -> EventStream:
    if len(blob) < HEADER.size:
        raise ContractError("file too short for a PTAG header")
    magic, version, resolution, n_channels = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ContractError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ContractError(f"unsupported PTAG version {version}")
    if resolution == 0:
        raise ContractError("resolution_ps must be positive")
    body = memoryview(blob)[HEADER.size:]
    if len(body) % RECORD_DTYPE.itemsize:
        raise ContractError(f"truncated record section ({len(body)} bytes)")
    rec = np.frombuffer(body, dtype=RECORD_DTYPE)
    if np.any(rec["channel"] >= n_channels):
        raise ContractError(f"record channel outside declared channel count {n_channels}")
    if np.any(np.abs(rec["timestamp"]) > np.iinfo(np.int64).max // resolution):
        raise ContractError("timestamps overflow at the declared resolution")
    ts = rec["timestamp"].astype(np.int64) * resolution
    events = EventStream(rec["channel"].copy(), ts)
    if not events.is_sorted():
        raise ContractError("records are not sorted by timestamp")
    if np.any(ts < 0):
        raise ContractError("negative timestamp in records")
    return events


def write_tagfile(path, events: EventStream, resolution_ps: int = 1) -> None:
    atomic_write_bytes(path, encode_tags(events, resolution_ps))


def read_tagfile(path) -> EventStream:
    return decode_tags(Path(path).read_bytes())


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


# ------------------------------------------------------------------- CSV

def render_csv(meta: dict, header: list, rows: Iterable) -> str:
    buf = io.StringIO()
    meta = {"tool": f"pairlab {__version__}", **meta}
    meta.setdefault("config_hash", "none")
    meta.setdefault("seed", "none")
    for key, val in meta.items():
        buf.write(f"# {key}: {val}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path: Optional[str], meta: dict, header: list, rows: Iterable) -> str:
    text = render_csv(meta, header, rows)
    if path is not None:
        atomic_write_bytes(path, text.encode())
    return text


def read_csv(text: str) -> tuple[dict, list]:
    """Parse a report into (metadata, list of row dicts)."""
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            meta[key.strip()] = val.strip()
        elif line.strip():
            body.append(line)
    return meta, list(csv.DictReader(body))


COUNT_COLUMNS = ["idler_label", "idler_hwp_deg", "idler_qwp_deg", "idler_port",
                 "signal_label", "signal_hwp_deg", "signal_qwp_deg", "signal_port",
                 "counts", "integration_s"]


def setting_label(s: AnalyzerSetting) -> str:
    for label, ref in STANDARD_SETTINGS.items():
        if ref == s:
            return label
    return "custom"


def count_table_rows(table: CountTable) -> list:
    return [[setting_label(e.idler), e.idler.hwp, e.idler.qwp, e.idler.port,
             setting_label(e.signal), e.signal.hwp, e.signal.qwp, e.signal.port,
             e.counts, e.integration_time] for e in table.entries]


def write_count_table(path, table: CountTable, meta: dict) -> str:
    return write_csv(path, meta, COUNT_COLUMNS, count_table_rows(table))


def read_count_table(path) -> tuple[dict, CountTable]:
    meta, rows = read_csv(Path(path).read_text())
    if not rows:
        raise ContractError("count table has no rows")
    missing = set(COUNT_COLUMNS[1:4] + COUNT_COLUMNS[5:]) - set(rows[0])
    if missing:
        raise ContractError(f"count table lacks columns {sorted(missing)}")
    entries = []
    for k, r in enumerate(rows):
        try:
            entries.append(CountEntry(
                AnalyzerSetting(float(r["idler_hwp_deg"]), float(r["idler_qwp_deg"]), r["idler_port"]),
                AnalyzerSetting(float(r["signal_hwp_deg"]), float(r["signal_qwp_deg"]), r["signal_port"]),
                float(r["counts"]),
                float(r["integration_s"]),
            ))
        except (TypeError, ValueError) as exc:
            raise ContractError(f"count table row {k + 1}: {exc}") from None
    return meta, CountTable(entries)


BASIS_LABELS = ["HH", "HV", "VH", "VV"]


def tomography_rows(result: TomographyResult) -> list:
    rows = []
    for part, mat in (("real", result.rho.real), ("imag", result.rho.imag),
                      ("linear_real", result.linear_estimate.real), ("linear_imag", result.linear_estimate.imag)):
        for label, row in zip(BASIS_LABELS, mat):
            rows.append([part, label, *[float(v) for v in row]])
    return rows
