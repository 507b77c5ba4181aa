"""Versioned binary model container.

Layout: magic "OSLM", version u32 LE, header length u32 LE, UTF-8 JSON header
(kind, metadata, ordered param specs), then each parameter's values as
row-major little-endian 8-byte floats.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"OSLM"
VERSION = 1


class CheckpointError(Exception):
    pass


def save_checkpoint(path: str, kind: str, meta: dict,
                    named_params: list[tuple[str, np.ndarray]]) -> None:
    header = {
        "kind": kind,
        "meta": meta,
        "params": [{"name": name, "shape": list(arr.shape)} for name, arr in named_params],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _name, arr in named_params:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> tuple[str, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        version = struct.unpack("<I", fh.read(4))[0]
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        header_len = struct.unpack("<I", fh.read(4))[0]
        header = json.loads(fh.read(header_len).decode("utf-8"))
        params: dict[str, np.ndarray] = {}
        for spec in header["params"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated parameter {spec['name']}")
            params[spec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return header["kind"], header["meta"], params


def describe_checkpoint(path: str) -> dict:
    """Shape summary for the CLI `describe` subcommand."""
    kind, meta, params = load_checkpoint(path)
    return {
        "kind": kind,
        "version": VERSION,
        "params": [{"name": name, "shape": list(arr.shape)} for name, arr in params.items()],
        "meta_keys": sorted(meta),
    }
