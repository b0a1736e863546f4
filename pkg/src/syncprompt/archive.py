"""Dense-array archive: one zip holding named .npy payloads plus a manifest.

Every array is written as a standard ``.npy`` member (shape header,
explicit little-endian dtype) under ``arrays/``, and ``manifest.json``
records structured metadata plus a sha256 digest per payload. Writes are
byte-stable: fixed zip timestamps, no compression, sorted member order.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import ChecksumError, DataFormatError

FORMAT_NAME = "syncprompt-archive"
FORMAT_VERSION = 1

_EPOCH = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    buf = io.BytesIO()
    np.lib.format.write_array(buf, arr, allow_pickle=False)
    return buf.getvalue()


def save_archive(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``arrays`` and ``meta`` to ``path`` atomically enough for tests."""
    path = Path(path)
    entries = {}
    payloads = {}
    for name in sorted(arrays):
        data = _npy_bytes(arrays[name])
        payloads[name] = data
        entries[name] = {
            "sha256": hashlib.sha256(data).hexdigest(),
            "dtype": np.lib.format.dtype_to_descr(np.ascontiguousarray(arrays[name]).dtype),
            "shape": list(arrays[name].shape),
        }
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "meta": meta or {},
        "arrays": entries,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo("manifest.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(manifest, indent=2, sort_keys=True))
        for name in sorted(payloads):
            info = zipfile.ZipInfo(f"arrays/{name}.npy", date_time=_EPOCH)
            zf.writestr(info, payloads[name])


def load_archive(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back arrays and metadata, verifying every payload digest."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"archive not found: {path}")
    try:
        with zipfile.ZipFile(path, "r") as zf:
            try:
                manifest = json.loads(zf.read("manifest.json"))
            except (KeyError, json.JSONDecodeError) as exc:
                raise DataFormatError(f"{path}: missing or unreadable manifest") from exc
            if manifest.get("format") != FORMAT_NAME:
                raise DataFormatError(f"{path}: not a {FORMAT_NAME} file")
            arrays = {}
            for name, entry in manifest["arrays"].items():
                payload = zf.read(f"arrays/{name}.npy")
                digest = hashlib.sha256(payload).hexdigest()
                if digest != entry["sha256"]:
                    raise ChecksumError(f"{path}: array {name!r} failed its digest check")
                arrays[name] = np.lib.format.read_array(io.BytesIO(payload), allow_pickle=False)
    except zipfile.BadZipFile as exc:
        # The container's own CRC catches payload corruption first.
        raise ChecksumError(f"{path}: corrupt archive ({exc})") from exc
    return arrays, manifest.get("meta", {})
