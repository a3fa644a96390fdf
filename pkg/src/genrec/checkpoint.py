"""Binary checkpoint container.

Layout (all integers little-endian):

    magic    8 bytes  b"GENRECK1"
    version  u32
    fp       32 bytes sha256 of the config blob
    cfg_len  u32, config blob (UTF-8 JSON)
    st_len   u32, trainer-state blob (UTF-8 JSON, may be "{}")
    count    u32
    count entries, each:
        name_len u16, name UTF-8
        ndim     u8,  dims u32 x ndim
        data     float32 little-endian, row-major

Entries hold model parameters plus optimizer accumulators under reserved
`optim.m.` / `optim.v.` prefixes; the integer step counter lives in the
trainer-state blob. Save -> load -> save is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ContractViolation, FormatError

MAGIC = b"GENRECK1"
VERSION = 1


def fingerprint(config_json: str) -> bytes:
    return hashlib.sha256(config_json.encode("utf-8")).digest()


def save_container(path, config_json: str, trainer_json: str,
                   entries: list[tuple[str, np.ndarray]]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    out += fingerprint(config_json)
    cfg = config_json.encode("utf-8")
    st = trainer_json.encode("utf-8")
    out += struct.pack("<I", len(cfg)) + cfg
    out += struct.pack("<I", len(st)) + st
    out += struct.pack("<I", len(entries))
    for name, arr in entries:
        if arr.dtype != np.float32:
            raise ContractViolation(f"entry {name!r} must be float32")
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<I", dim)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_container(path) -> tuple[bytes, str, str, dict[str, np.ndarray]]:
    """Returns (fingerprint, config_json, trainer_json, name -> float32 array)."""
    raw = Path(path).read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(raw):
            raise FormatError(f"truncated checkpoint {path}")
        chunk = raw[off:off + n]
        off += n
        return chunk

    if take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{path} is not a checkpoint container")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    fp = take(32)
    (cfg_len,) = struct.unpack("<I", take(4))
    config_json = take(cfg_len).decode("utf-8")
    (st_len,) = struct.unpack("<I", take(4))
    trainer_json = take(st_len).decode("utf-8")
    if fingerprint(config_json) != fp:
        raise FormatError(f"config fingerprint mismatch inside {path}")
    (count,) = struct.unpack("<I", take(4))
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        n_values = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = np.frombuffer(take(4 * n_values), dtype="<f4").reshape(shape)
        entries[name] = data.astype(np.float32)
    if off != len(raw):
        raise FormatError(f"trailing bytes in checkpoint {path}")
    return fp, config_json, trainer_json, entries


def trainer_state_to_json(state: dict) -> str:
    return json.dumps(state, sort_keys=True, separators=(",", ":"))


def trainer_state_from_json(blob: str) -> dict:
    try:
        return json.loads(blob) if blob else {}
    except json.JSONDecodeError as e:
        raise FormatError(f"corrupt trainer state: {e}") from e
