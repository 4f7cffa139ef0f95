"""Run manifests: seeds, config echo, input hash, meter peaks, output hashes.

Two runs with equal manifests are byte-identical end to end: every random
choice derives from the recorded seed, and output checksums are part of the
manifest itself.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def build_manifest(*, command: str, params, config, input_path=None,
                   meter=None, outputs=None, extra=None) -> dict:
    manifest = {
        "format": "KZMANIFEST v1",
        "command": command,
        "params": dataclasses.asdict(params),
        "config": dataclasses.asdict(config),
        "seed": params.seed,
    }
    if input_path is not None:
        manifest["input"] = {
            "path": str(input_path),
            "sha256": sha256_file(input_path),
        }
    if meter is not None:
        manifest["memory"] = meter.snapshot()
    if outputs:
        manifest["outputs"] = {
            Path(p).name: sha256_file(p) for p in outputs}
    if extra:
        manifest["extra"] = extra
    return manifest


def write_manifest(manifest: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
