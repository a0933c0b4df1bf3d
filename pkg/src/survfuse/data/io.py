"""Dataset ingestion and export: JSON manifest, CSV tables, PGM/PPM images and image packs.

The formats are described byte for byte in ``docs/formats.md``.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ..errors import DataError
from .records import Cohort, PatientRecord
from .schema import FeatureSchema

log = logging.getLogger(__name__)

PACK_MAGIC = b"SFPK"
PACK_VERSION = 1
_PACK_HEADER = struct.Struct("<4sIIIII")


# -- small helpers ---------------------------------------------------------
def atomic_write_bytes(path, payload: bytes) -> Path:
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise DataError(f"{path} is empty (a header row is required)")
    return rows[0], rows[1:]


def _check_unique(ids: list[str], path) -> None:
    seen, dup = set(), []
    for pid in ids:
        if pid in seen:
            dup.append(pid)
        seen.add(pid)
    if dup:
        raise DataError(f"{path}: duplicate patient ids {sorted(set(dup))[:10]}")


def _parse_float(text: str, path, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{path} line {line}: column {column!r} has non-numeric value {text!r}") from None
    if not np.isfinite(value):
        raise DataError(f"{path} line {line}: column {column!r} is not finite")
    return value


def read_table(path) -> tuple[list[str], list[str], np.ndarray]:
    """Read a modality CSV; returns ``(ids, column names, values)``."""
    path = Path(path)
    header, rows = _read_csv(path)
    if not header or header[0] != "patient_id":
        raise DataError(f"{path}: first column must be 'patient_id'")
    names = header[1:]
    if not names:
        raise DataError(f"{path}: no feature columns")
    ids, values = [], np.empty((len(rows), len(names)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path} line {i + 2}: expected {len(header)} fields, got {len(row)}")
        ids.append(row[0])
        for j, name in enumerate(names):
            values[i, j] = _parse_float(row[j + 1], path, i + 2, name)
    _check_unique(ids, path)
    return ids, names, values


def read_outcomes(path, n_risks: int) -> tuple[list[str], np.ndarray, np.ndarray]:
    path = Path(path)
    header, rows = _read_csv(path)
    if header[:3] != ["patient_id", "time", "event"]:
        raise DataError(f"{path}: columns must be patient_id,time,event")
    ids, times, events = [], np.empty(len(rows)), np.empty(len(rows), dtype=int)
    bad_time, bad_event = [], []
    for i, row in enumerate(rows):
        if len(row) < 3:
            raise DataError(f"{path} line {i + 2}: expected 3 fields")
        ids.append(row[0])
        times[i] = _parse_float(row[1], path, i + 2, "time")
        ev = _parse_float(row[2], path, i + 2, "event")
        if ev != int(ev) or not 0 <= ev <= n_risks:
            bad_event.append(f"line {i + 2} ({row[0]}): {row[2]}")
        events[i] = int(ev)
        if times[i] <= 0:
            bad_time.append(f"line {i + 2} ({row[0]}): {row[1]}")
    if bad_time:
        raise DataError(f"{path}: non-positive times at " + "; ".join(bad_time))
    if bad_event:
        raise DataError(f"{path}: event labels outside 0..{n_risks} at " + "; ".join(bad_event))
    _check_unique(ids, path)
    return ids, times, events


# -- images ----------------------------------------------------------------
def _pnm_tokens(data: bytes, count: int, pos: int) -> tuple[list[bytes], int]:
    tokens = []
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise DataError("truncated PNM header")
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Read a PGM/PPM (P2, P3, P5 or P6) image as float64 ``(C, H, W)`` scaled to [0, 1]."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise DataError(f"{path}: unsupported image magic {magic!r}")
    (w, h, maxval), pos = _pnm_tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise DataError(f"{path}: maxval {maxval} out of range")
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = w * h * channels
    if magic in (b"P2", b"P3"):
        tokens, _ = _pnm_tokens(data, count, pos)
        pixels = np.array([int(t) for t in tokens], dtype=float)
    else:
        raw = data[pos + 1 :]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        if len(raw) < count * dtype.itemsize:
            raise DataError(f"{path}: truncated pixel data")
        pixels = np.frombuffer(raw, dtype=dtype, count=count).astype(float)
    return (pixels.reshape(h, w, channels) / maxval).transpose(2, 0, 1)


def write_pgm(path, image, maxval: int = 65535) -> Path:
    """Write a ``(1, H, W)`` or ``(3, H, W)`` array in [0, 1] as binary PGM/PPM."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise DataError(f"PGM/PPM needs shape (1|3, H, W), got {image.shape}")
    c, h, w = image.shape
    levels = np.round(np.clip(image, 0.0, 1.0) * maxval).transpose(1, 2, 0).ravel()
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n{maxval}\n".encode("ascii")
    return atomic_write_bytes(path, header + levels.astype(dtype).tobytes())


def write_pack(path, ids: list[str], images) -> Path:
    """Write images of identical shape into one binary pack (float64, little-endian)."""
    images = np.asarray(images, dtype="<f8")
    if images.ndim != 4 or len(images) != len(ids):
        raise DataError("pack needs images of shape (n, C, H, W) and one id per image")
    n, c, h, w = images.shape
    parts = [_PACK_HEADER.pack(PACK_MAGIC, PACK_VERSION, n, c, h, w)]
    for pid in ids:
        raw = pid.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    parts.append(np.ascontiguousarray(images).tobytes())
    return atomic_write_bytes(path, b"".join(parts))


def read_pack(path) -> tuple[list[str], np.ndarray]:
    data = Path(path).read_bytes()
    if len(data) < _PACK_HEADER.size:
        raise DataError(f"{path}: truncated pack header")
    magic, version, n, c, h, w = _PACK_HEADER.unpack_from(data)
    if magic != PACK_MAGIC:
        raise DataError(f"{path}: not an image pack")
    if version != PACK_VERSION:
        raise DataError(f"{path}: unsupported pack version {version}")
    pos, ids = _PACK_HEADER.size, []
    for _ in range(n):
        (length,) = struct.unpack_from("<H", data, pos)
        ids.append(data[pos + 2 : pos + 2 + length].decode("utf-8"))
        pos += 2 + length
    expected = n * c * h * w * 8
    if len(data) - pos != expected:
        raise DataError(f"{path}: expected {expected} bytes of pixel data, found {len(data) - pos}")
    images = np.frombuffer(data, dtype="<f8", offset=pos).reshape(n, c, h, w).astype(float)
    _check_unique(ids, path)
    return ids, images


def read_image_modality(path) -> tuple[list[str], np.ndarray]:
    """Images from a pack file or a directory of ``<patient_id>.pgm``/``.ppm`` files."""
    path = Path(path)
    if path.is_file():
        return read_pack(path)
    if not path.is_dir():
        raise DataError(f"image source {path} does not exist")
    files = sorted(p for p in path.iterdir() if p.suffix in (".pgm", ".ppm"))
    ids = [p.stem for p in files]
    _check_unique(ids, path)
    images = [read_pgm(p) for p in files]
    shapes = {im.shape for im in images}
    if len(shapes) > 1:
        raise DataError(f"{path}: images have differing shapes {sorted(shapes)}")
    return ids, (np.stack(images) if images else np.zeros((0, 1, 1, 1)))


# -- manifest --------------------------------------------------------------
def load_dataset(manifest_path) -> Cohort:
    """Load every modality named in a JSON manifest and inner-join on patient id.

    Patients missing any modality or the outcome are dropped; the count and
    ids are kept in ``cohort.diagnostics``. Records follow the row order of
    the outcomes file.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from None
    base = manifest_path.parent
    try:
        entries = manifest["modalities"]
        outcomes_path = base / manifest["outcomes"]
    except (KeyError, TypeError):
        raise DataError(f"{manifest_path}: manifest needs 'modalities' and 'outcomes'") from None
    n_risks = int(manifest.get("n_risks", 1))
    if n_risks < 1:
        raise DataError(f"{manifest_path}: n_risks must be >= 1")
    if not entries:
        raise DataError(f"{manifest_path}: no modalities listed")

    out_ids, times, events = read_outcomes(outcomes_path, n_risks)
    tables, images = {}, {}
    for entry in entries:
        name, kind = entry.get("name"), entry.get("kind", "tabular")
        if not name or "path" not in entry:
            raise DataError(f"{manifest_path}: every modality needs 'name' and 'path'")
        if name in tables or name in images:
            raise DataError(f"{manifest_path}: duplicate modality {name!r}")
        if kind == "tabular":
            tables[name] = (*read_table(base / entry["path"]), entry.get("overrides", {}))
        elif kind == "image":
            images[name] = read_image_modality(base / entry["path"])
        else:
            raise DataError(f"{manifest_path}: modality {name!r} has unknown kind {kind!r}")

    lookups = {name: {pid: i for i, pid in enumerate(t[0])} for name, t in tables.items()}
    lookups.update({name: {pid: i for i, pid in enumerate(im[0])} for name, im in images.items()})
    keep = [i for i, pid in enumerate(out_ids) if all(pid in lk for lk in lookups.values())]
    all_ids = set(out_ids).union(*(set(lk) for lk in lookups.values()))
    dropped = sorted(all_ids - {out_ids[i] for i in keep})

    records = []
    for i in keep:
        pid = out_ids[i]
        feats = {name: t[2][lookups[name][pid]] for name, t in tables.items()}
        feats.update({name: im[1][lookups[name][pid]] for name, im in images.items()})
        records.append(PatientRecord(pid, feats, float(times[i]), int(events[i])))

    schemas = {}
    for name, (ids, cols, values, overrides) in tables.items():
        unknown = set(overrides) - set(cols)
        if unknown:
            raise DataError(f"{manifest_path}: overrides name unknown columns {sorted(unknown)} in {name!r}")
        rows = [lookups[name][r.patient_id] for r in records] if records else list(range(len(ids)))
        schemas[name] = FeatureSchema.infer(cols, values[rows] if len(rows) else values, overrides)
    shapes = {name: tuple(im[1].shape[1:]) for name, im in images.items()}

    diagnostics = {"n_joined": len(records), "n_dropped": len(dropped), "dropped_ids": dropped}
    if dropped:
        log.warning("dropped %d patients lacking a modality or outcome", len(dropped))
    if not records:
        diagnostics["message"] = "no patient has every modality and an outcome; the join is empty"
        log.warning(diagnostics["message"])
    return Cohort(records, schemas, shapes, n_risks, diagnostics)


def _format(value: float) -> str:
    return repr(float(value))


def write_dataset(cohort: Cohort, directory, name: str = "manifest.json") -> Path:
    """Export a cohort as a manifest plus CSV tables and image packs; returns the manifest path."""
    directory = Path(directory)
    ids = cohort.ids
    entries = []
    for mod, schema in cohort.schemas.items():
        buf = [",".join(["patient_id", *schema.names])]
        for pid, row in zip(ids, cohort.block(mod)):
            buf.append(",".join([pid, *(_format(v) for v in row)]))
        atomic_write_text(directory / f"{mod}.csv", "\n".join(buf) + "\n")
        overrides = {c.name: c.likelihood.to_json() for c in schema.columns}
        entries.append({"name": mod, "kind": "tabular", "path": f"{mod}.csv", "overrides": overrides})
    for mod in cohort.image_shapes:
        write_pack(directory / f"{mod}.sfpk", ids, cohort.block(mod))
        entries.append({"name": mod, "kind": "image", "path": f"{mod}.sfpk"})
    lines = ["patient_id,time,event"]
    lines += [f"{r.patient_id},{_format(r.time)},{r.event}" for r in cohort.records]
    atomic_write_text(directory / "outcomes.csv", "\n".join(lines) + "\n")
    manifest = {"modalities": entries, "outcomes": "outcomes.csv", "n_risks": cohort.n_risks}
    return atomic_write_text(directory / name, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
