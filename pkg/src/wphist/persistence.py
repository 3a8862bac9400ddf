"""Binary posterior-sample files.

Layout (little endian)::

    b"WPH1" | u32 V | u32 T | u32 M | M*V*T float64 draws (row major)
    | V'*T float64 inclusion frequencies | UTF-8 JSON trailer | u64 trailer length
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import PersistenceError
from .sampler import PosteriorSamples

MAGIC = b"WPH1"
_HEADER = struct.Struct("<4sIII")
_TAIL = struct.Struct("<Q")


def encode_samples(samples: PosteriorSamples) -> bytes:
    draws = np.ascontiguousarray(samples.draws, dtype="<f8")
    M, V, T = draws.shape
    gamma = np.ascontiguousarray(samples.gamma_means, dtype="<f8")
    if gamma.ndim != 2 or gamma.shape[1] != T:
        raise PersistenceError("inclusion frequencies must be V' x T")
    meta = dict(samples.meta)
    meta["n_retained"] = int(gamma.shape[0])
    trailer = json.dumps(meta, sort_keys=True).encode("utf-8")
    return b"".join(
        [_HEADER.pack(MAGIC, V, T, M), draws.tobytes(), gamma.tobytes(), trailer, _TAIL.pack(len(trailer))]
    )


def decode_samples(buf: bytes) -> PosteriorSamples:
    if len(buf) < _HEADER.size + _TAIL.size:
        raise PersistenceError("sample file is truncated")
    magic, V, T, M = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise PersistenceError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (n_json,) = _TAIL.unpack_from(buf, len(buf) - _TAIL.size)
    draws_end = _HEADER.size + 8 * M * V * T
    json_start = len(buf) - _TAIL.size - n_json
    if json_start < draws_end:
        raise PersistenceError("sample file lengths are inconsistent")
    gamma_bytes = json_start - draws_end
    if T == 0 or gamma_bytes % (8 * T):
        raise PersistenceError("inclusion-frequency block has the wrong size")
    try:
        meta = json.loads(buf[json_start : len(buf) - _TAIL.size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PersistenceError(f"corrupt metadata trailer: {exc}") from exc
    draws = np.frombuffer(buf, dtype="<f8", count=M * V * T, offset=_HEADER.size).reshape(M, V, T)
    n_ret = gamma_bytes // (8 * T)
    gamma = np.frombuffer(buf, dtype="<f8", count=n_ret * T, offset=draws_end).reshape(n_ret, T)
    if meta.get("n_retained", n_ret) != n_ret:
        raise PersistenceError("trailer disagrees with the inclusion-frequency block")
    return PosteriorSamples(draws.astype(float), gamma.astype(float), meta)


def write_samples(path, samples: PosteriorSamples) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_samples(samples))
    return path


def read_samples(path) -> PosteriorSamples:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc
    return decode_samples(buf)
