"""Flat binary checkpoints.

Layout::

    TRIGCOPY-CKPT 1\n
    {"D": .., "L": .., "N": .., "N_trg": .., "meta": {..}}\n     (sorted-key JSON, one line)
    W_KQ as little-endian float64, row-major (D*D values)
    W_V  as little-endian float64, row-major (N*D values)

Byte output depends only on the parameters and ``meta``, so identical runs
produce identical files.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .model import ModelParams

MAGIC = b"TRIGCOPY-CKPT 1\n"


def checkpoint_bytes(params: ModelParams, meta: dict | None = None) -> bytes:
    header = {"N": params.N, "N_trg": params.N_trg, "L": params.L, "D": params.D, "meta": meta or {}}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    body = params.W_KQ.astype("<f8").tobytes() + params.W_V.astype("<f8").tobytes()
    return MAGIC + head + body


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_checkpoint(path: str | Path, params: ModelParams, meta: dict | None = None) -> str:
    """Write the checkpoint and return the sha256 of its bytes."""
    data = checkpoint_bytes(params, meta)
    Path(path).write_bytes(data)
    return sha256_hex(data)


def parse_checkpoint(data: bytes) -> tuple[ModelParams, dict]:
    if not data.startswith(MAGIC):
        raise ValueError("not a trigcopy checkpoint (bad magic)")
    rest = data[len(MAGIC):]
    nl = rest.index(b"\n")
    header = json.loads(rest[:nl])
    body = rest[nl + 1:]
    N, L, D = header["N"], header["L"], header["D"]
    if D != L + 2 * N:
        raise ValueError(f"header D={D} inconsistent with L + 2N = {L + 2 * N}")
    expected = 8 * (D * D + N * D)
    if len(body) != expected:
        raise ValueError(f"body has {len(body)} bytes, expected {expected}")
    flat = np.frombuffer(body, dtype="<f8")
    W_KQ = flat[: D * D].reshape(D, D).astype(np.float64)
    W_V = flat[D * D:].reshape(N, D).astype(np.float64)
    return ModelParams(W_KQ, W_V, header["N_trg"], L), header.get("meta", {})


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    return parse_checkpoint(Path(path).read_bytes())
