"""Checkpoint format.

Layout: 8-byte magic ``TESSCKP1``, little-endian uint64 header length, UTF-8
JSON header, then a raw block of little-endian float64 parameters. The header
holds the model config, seed, optional threshold snapshot, and an index
``{name: {"offset": <float64 index>, "shape": [...]}}`` into the block.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .forecaster import ModelConfig, PrefixForecaster
from .primitives import ThresholdSet

MAGIC = b"TESSCKP1"


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: Union[str, os.PathLike], model: PrefixForecaster,
                    thresholds: Optional[ThresholdSet] = None, extra: Optional[dict] = None) -> None:
    index = {}
    blocks = []
    offset = 0
    for name, p in model.params.items():
        index[name] = {"offset": offset, "shape": list(p.data.shape)}
        blocks.append(np.ascontiguousarray(p.data, dtype="<f8").reshape(-1))
        offset += p.data.size
    header = {
        "format": "tess-checkpoint/1",
        "config": asdict(model.cfg),
        "seed": model.cfg.seed,
        "thresholds": thresholds.to_dict() if thresholds is not None else None,
        "index": index,
        "n_values": offset,
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = np.concatenate(blocks).astype("<f8").tobytes() if blocks else b""
    _atomic_write_bytes(Path(path), MAGIC + struct.pack("<Q", len(head)) + head + body)


def load_checkpoint(path: Union[str, os.PathLike]) -> tuple[PrefixForecaster, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path} is not a TESS checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    values = np.frombuffer(raw[16 + hlen :], dtype="<f8")
    if values.size != header["n_values"]:
        raise ValueError(f"checkpoint body holds {values.size} values, header says {header['n_values']}")
    model = PrefixForecaster(ModelConfig(**header["config"]))
    state = {}
    for name, entry in header["index"].items():
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        state[name] = values[entry["offset"] : entry["offset"] + size].reshape(entry["shape"]).astype(float)
    model.load_state_dict(state)
    return model, header


def load_thresholds(header: dict) -> Optional[ThresholdSet]:
    t = header.get("thresholds")
    return ThresholdSet.from_dict(t) if t else None
