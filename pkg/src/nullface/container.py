"""On-disk container for named float32 arrays.

A container is a directory holding:

    meta.json    UTF-8 JSON with a named-array offset table plus caller
                 metadata (version, shapes, fingerprints, ...)
    tensors.bin  the arrays concatenated as little-endian float32,
                 row-major, in offset-table order; no compression

Byte offsets are into tensors.bin. Loads are bit-exact and validate
payload length against the offset table.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import DataCorruptionError

CONTAINER_DTYPE = "f32le"


def write_container(path, meta: dict, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    offsets = {}
    cursor = 0
    shapes = {}
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        offsets[name] = cursor
        shapes[name] = list(arr.shape)
        blob = arr.tobytes()
        blobs.append(blob)
        cursor += len(blob)
    meta = dict(meta)
    meta["dtype"] = CONTAINER_DTYPE
    meta["arrays"] = offsets
    meta["array_shapes"] = shapes
    meta["payload_bytes"] = cursor
    (path / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True),
                                    encoding="utf-8")
    (path / "tensors.bin").write_bytes(b"".join(blobs))
    return path


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    meta_path = path / "meta.json"
    bin_path = path / "tensors.bin"
    if not meta_path.is_file() or not bin_path.is_file():
        raise DataCorruptionError(f"{path} is not a container (missing meta.json/tensors.bin)")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataCorruptionError(f"corrupt meta.json in {path}: {exc}") from exc
    if meta.get("dtype") != CONTAINER_DTYPE:
        raise DataCorruptionError(f"unsupported tensor dtype {meta.get('dtype')!r}")
    payload = bin_path.read_bytes()
    if len(payload) != meta.get("payload_bytes"):
        raise DataCorruptionError(
            f"tensor payload truncated or padded: expected {meta.get('payload_bytes')} "
            f"bytes, found {len(payload)}")
    arrays = {}
    for name, offset in meta["arrays"].items():
        shape = tuple(meta["array_shapes"][name])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(payload):
            raise DataCorruptionError(f"array {name!r} extends past payload end")
        arrays[name] = np.frombuffer(payload[offset:end], dtype="<f4").reshape(shape).copy()
    return meta, arrays
