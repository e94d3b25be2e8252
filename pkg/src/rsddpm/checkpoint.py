"""Checkpoint container: magic, JSON header, raw little-endian blocks, digest.

Layout (all integers little-endian):

    bytes 0..7    magic b"RSDDPM01"
    bytes 8..11   uint32 header length N
    bytes 12..    UTF-8 JSON header (N bytes)
    ...           parameter blocks, concatenated raw little-endian arrays
    last 32       sha256 over everything before it

The header records endianness, precision, a config snapshot, the schedule
descriptor (T, algorithm) and per-block (name, dtype, shape, nbytes) in
block order. Loading verifies magic and digest; a precision flag different
from the one requested is an error, never a silent cast.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .schedule import ALGORITHM

MAGIC = b"RSDDPM01"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


@dataclass
class Checkpoint:
    role: str                 # "e2e" or "denoiser"
    precision: str
    seed: int
    config: dict
    schedule: dict            # {"T": int, "algorithm": str}
    blocks: dict              # name -> np.ndarray
    digest: str               # sha256 hex of the saved bytes


def save(path, *, role: str, precision: str, seed: int, config: dict,
         T: int, params) -> str:
    """Write a checkpoint; returns the sha256 hex digest of the file content.

    ``params`` is an ordered list of (name, array); arrays must match the
    declared precision.
    """
    if precision not in _DTYPES:
        raise CheckpointError(f"unknown precision {precision!r}")
    want = np.dtype(_DTYPES[precision])
    entries = []
    payload = bytearray()
    for name, arr in params:
        if arr.dtype != np.dtype(precision):
            raise CheckpointError(
                f"block {name!r} has dtype {arr.dtype}, checkpoint precision is {precision}")
        raw = np.ascontiguousarray(arr, dtype=want).tobytes()
        entries.append({"name": name, "dtype": precision,
                        "shape": list(arr.shape), "nbytes": len(raw)})
        payload.extend(raw)
    header = {
        "endian": "little",
        "role": role,
        "precision": precision,
        "seed": int(seed),
        "config": config,
        "schedule": {"T": int(T), "algorithm": ALGORITHM},
        "params": entries,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(hbytes)) + hbytes + bytes(payload)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as f:
        f.write(body + digest)
    return digest.hex()


def load(path, *, expect_precision: str | None = None) -> Checkpoint:
    """Read and verify a checkpoint; refuses corrupt or mismatched files."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 4 + 32:
        raise CheckpointError(f"{path}: truncated checkpoint")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: integrity digest mismatch; file is corrupt")
    (hlen,) = struct.unpack("<I", blob[8:12])
    hstart = 12
    try:
        header = json.loads(blob[hstart:hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}")
    precision = header.get("precision")
    if precision not in _DTYPES:
        raise CheckpointError(f"{path}: unknown precision {precision!r}")
    if expect_precision is not None and precision != expect_precision:
        raise CheckpointError(
            f"{path}: checkpoint precision is {precision}, run requires {expect_precision}; "
            "re-train or change the config instead of casting")
    if header.get("schedule", {}).get("algorithm") != ALGORITHM:
        raise CheckpointError(
            f"{path}: schedule algorithm {header.get('schedule', {}).get('algorithm')!r} "
            f"is not {ALGORITHM!r}")
    blocks = {}
    off = hstart + hlen
    for e in header["params"]:
        raw = body[off:off + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: block {e['name']!r} truncated")
        arr = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"]).copy()
        blocks[e["name"]] = arr.astype(e["dtype"], copy=False)
        off += e["nbytes"]
    if off != len(body):
        raise CheckpointError(f"{path}: {len(body) - off} trailing bytes after blocks")
    return Checkpoint(role=header.get("role", ""), precision=precision,
                      seed=int(header.get("seed", 0)), config=header.get("config", {}),
                      schedule=header["schedule"], blocks=blocks, digest=digest.hex())
