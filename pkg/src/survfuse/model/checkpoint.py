"""Checkpoint container: an uncompressed numpy ``.npz`` archive.

Entries are written in sorted order with a fixed zip timestamp, so the
same parameters always produce the same bytes.

The archive holds one float64 array per parameter, keyed by its dotted
parameter name, plus ``__meta__``: a 0-d unicode array with a JSON document
``{"format": "survfuse-checkpoint", "version": 1, "model": {...}}`` where
``model`` carries the modality configs (including fitted normalization
statistics), the number of risks and the time-rescaling constant.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from ..data.io import atomic_write_bytes
from ..errors import DataError
from .samvae import SamvaeModel

FORMAT = "survfuse-checkpoint"
VERSION = 1


def save_checkpoint(model: SamvaeModel, path) -> Path:
    meta = json.dumps({"format": FORMAT, "version": VERSION, "model": model.to_json()}, sort_keys=True)
    arrays = {"__meta__": np.array(meta)}
    arrays.update(model.store.state_dict())
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asarray(arrays[name]), allow_pickle=False)
    return atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path) -> SamvaeModel:
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["__meta__"]))
            state = {k: archive[k] for k in archive.files if k != "__meta__"}
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    if meta.get("format") != FORMAT:
        raise DataError(f"{path} is not a survfuse checkpoint")
    if meta.get("version") != VERSION:
        raise DataError(f"unsupported checkpoint version {meta.get('version')}")
    model = SamvaeModel.from_json(meta["model"])
    model.store.load_state_dict(state)
    return model
