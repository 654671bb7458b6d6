"""Flat binary tensor files with a JSON manifest.

Layout on disk, for a base path ``foo``:

* ``foo.bin``   every tensor back to back as little-endian float64, C-order,
  in manifest order (tensor names sorted lexicographically).
* ``foo.json``  ``{"format": "flat-f64", "tensors": {name: {"shape": [...],
  "offset": k}}}`` where ``offset`` counts float64 elements from the start
  of the .bin file, not bytes.

Sorted names plus fixed dtype make the byte stream a pure function of the
tensor contents, which is what the bit-for-bit determinism checks diff.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError

FORMAT_TAG = "flat-f64"


def save_tensors(base_path, tensors: dict[str, np.ndarray]) -> tuple[Path, Path]:
    """Write tensors to <base>.bin + <base>.json, returning both paths."""
    base = Path(base_path)
    names = sorted(tensors)
    manifest: dict[str, dict] = {}
    offset = 0
    chunks = []
    for name in names:
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype="<f8"))
        manifest[name] = {"shape": list(arr.shape), "offset": offset}
        offset += arr.size
        chunks.append(arr.tobytes())
    bin_path = base.with_suffix(".bin")
    json_path = base.with_suffix(".json")
    bin_path.write_bytes(b"".join(chunks))
    json_path.write_text(
        json.dumps({"format": FORMAT_TAG, "tensors": manifest},
                   indent=2, sort_keys=True) + "\n"
    )
    return bin_path, json_path


def load_tensors(base_path) -> dict[str, np.ndarray]:
    """Inverse of save_tensors. Validates the manifest against the blob size."""
    base = Path(base_path)
    json_path = base.with_suffix(".json")
    bin_path = base.with_suffix(".bin")
    try:
        meta = json.loads(json_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read manifest {json_path}: {exc}") from exc
    if meta.get("format") != FORMAT_TAG:
        raise ConfigError(f"{json_path}: unknown format tag {meta.get('format')!r}")
    try:
        blob = np.frombuffer(bin_path.read_bytes(), dtype="<f8")
    except OSError as exc:
        raise ConfigError(f"cannot read tensor blob {bin_path}: {exc}") from exc
    out: dict[str, np.ndarray] = {}
    total = 0
    for name, entry in meta["tensors"].items():
        shape = tuple(int(s) for s in entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        offset = int(entry["offset"])
        if offset + size > blob.size:
            raise ConfigError(
                f"{json_path}: tensor {name!r} extends past end of blob "
                f"({offset}+{size} > {blob.size})"
            )
        out[name] = blob[offset:offset + size].reshape(shape).copy()
        total += size
    if total != blob.size:
        raise ConfigError(
            f"{bin_path}: blob holds {blob.size} values, manifest accounts for {total}"
        )
    return out
