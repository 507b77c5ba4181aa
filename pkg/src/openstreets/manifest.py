"""Run manifests: every artifact-producing command records its command,
configuration, seeds, input digests, and output digests so runs can be
reproduced and compared byte-for-byte."""

from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path

import numpy as np

from . import __version__


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    manifest_path: str | Path,
    command: str,
    config: dict,
    seeds: dict,
    inputs: list[str | Path],
    outputs: list[str | Path],
    extra: dict | None = None,
) -> dict:
    doc = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): file_digest(p) for p in inputs if Path(p).exists()},
        "outputs": {str(p): file_digest(p) for p in outputs if Path(p).exists()},
        "versions": {
            "openstreets": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    if extra:
        doc.update(extra)
    Path(manifest_path).write_text(json.dumps(doc, indent=2, sort_keys=True))
    return doc
