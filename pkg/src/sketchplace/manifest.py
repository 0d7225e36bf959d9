"""Run manifests: enough provenance to reproduce any CLI run bit-for-bit.

The manifest records the command, the fully resolved configuration, seeds,
sha256 of every input and output artifact, and wall-clock timings. Because
timings can never reproduce, byte-identity across reruns is defined over
the manifest minus its timings; ``deterministic_hash`` is the sha256 of
that canonical core, so two runs agree iff their artifacts and settings
agree.
"""

from __future__ import annotations

import hashlib
import json


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command: str, config: dict, seed, inputs: dict, outputs: dict,
                   timings: dict) -> dict:
    core = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(k): file_sha256(k) for k in inputs} if isinstance(inputs, (list, tuple)) else inputs,
        "outputs": outputs,
    }
    canonical = json.dumps(core, sort_keys=True, separators=(",", ":"))
    manifest = dict(core)
    manifest["deterministic_hash"] = hashlib.sha256(canonical.encode()).hexdigest()
    manifest["timings"] = timings
    return manifest


def hash_files(paths) -> dict:
    return {str(p): file_sha256(p) for p in paths}


def write_manifest(path, manifest: dict):
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
