"""Binary latent files (IDLT) and small JSON/CSV helpers.

IDLT layout: magic ``b"IDLT"``, four little-endian uint32 dims (C, T, H, W),
then C*T*H*W little-endian float32 values in row-major order (C slowest).
"""

from __future__ import annotations

import csv
import json
import os
import struct
import tempfile
import zipfile
from io import BytesIO, StringIO
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

MAGIC = b"IDLT"
_HEADER = struct.Struct("<4s4I")


class FormatError(ValueError):
    """Raised when a file does not follow the expected layout."""


def as_latent_dims(arr: np.ndarray) -> np.ndarray:
    """Promote 1-3D arrays to the 4D (C, T, H, W) layout by prepending unit axes."""
    arr = np.asarray(arr)
    if arr.ndim > 4:
        raise FormatError(f"latent arrays have at most 4 dims, got {arr.ndim}")
    return arr.reshape((1,) * (4 - arr.ndim) + arr.shape)


def encode_latent(arr: np.ndarray) -> bytes:
    arr4 = as_latent_dims(arr)
    if not np.all(np.isfinite(arr4)):
        raise FormatError("latent contains non-finite values")
    if any(d <= 0 for d in arr4.shape):
        raise FormatError(f"latent dims must be positive, got {arr4.shape}")
    header = _HEADER.pack(MAGIC, *arr4.shape)
    return header + np.ascontiguousarray(arr4, dtype="<f4").tobytes()


def decode_latent(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated IDLT header")
    magic, c, t, h, w = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    count = c * t * h * w
    expected = _HEADER.size + 4 * count
    if len(buf) != expected:
        raise FormatError(f"IDLT payload size {len(buf)} != expected {expected}")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=_HEADER.size)
    return data.reshape(c, t, h, w).astype(np.float64)


def write_latent(path: str | Path, arr: np.ndarray) -> None:
    atomic_write_bytes(path, encode_latent(arr))


def read_latent(path: str | Path) -> np.ndarray:
    return decode_latent(Path(path).read_bytes())


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_json(path: str | Path, obj: Any) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    atomic_write_bytes(path, text.encode())


def read_json(path: str | Path) -> Any:
    with open(path) as fh:
        return json.load(fh)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    buf = StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    atomic_write_bytes(path, buf.getvalue().encode())


def write_npz(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Like ``np.savez`` but with fixed entry timestamps, so equal arrays give equal bytes."""
    buf = BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            member = BytesIO()
            np.lib.format.write_array(member, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), member.getvalue())
    atomic_write_bytes(path, buf.getvalue())


def _fmt(v: Any) -> Any:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v
