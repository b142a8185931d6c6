"""Standalone MOER trace writer.

Implements the documented byte layout directly (little-endian: magic
"MOER", u32 version=1, u32 T/L/M/K, f32 lambda, f32 alpha with NaN for
absent, u32 batch_count, batch_count+1 u32 token offsets, then T*L*M f32
logits in token-major order).  Kept independent of the analysis package on
purpose: the reader over there validates files produced here, so the two
implementations check each other.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"MOER"
VERSION = 1


def moer_bytes(logits: np.ndarray, k: int, lam: float = 1.0,
               alpha: float | None = None, batch_boundaries=None) -> bytes:
    logits = np.ascontiguousarray(logits, dtype=np.float32)
    if logits.ndim != 3:
        raise ValueError(f"logits must be (T, L, M), got shape {logits.shape}")
    t, l, m = logits.shape
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= K <= M, got K={k}, M={m}")
    if batch_boundaries is None:
        batch_boundaries = [0, t]
    bounds = [int(b) for b in batch_boundaries]
    if bounds[0] != 0 or bounds[-1] != t:
        raise ValueError(f"batch boundaries must run 0..{t}, got {bounds[0]}..{bounds[-1]}")
    if any(c <= b for b, c in zip(bounds, bounds[1:])):
        raise ValueError("batch boundaries must be strictly increasing")
    head = struct.pack("<4sI", MAGIC, VERSION)
    head += struct.pack("<IIII", t, l, m, k)
    head += struct.pack("<ff", lam, math.nan if alpha is None else alpha)
    head += struct.pack("<I", len(bounds) - 1)
    head += struct.pack(f"<{len(bounds)}I", *bounds)
    return head + logits.tobytes(order="C")


def write_moer(path, logits: np.ndarray, k: int, lam: float = 1.0,
               alpha: float | None = None, batch_boundaries=None) -> None:
    """Write a MOER file atomically (temp file + rename)."""
    blob = moer_bytes(logits, k, lam=lam, alpha=alpha, batch_boundaries=batch_boundaries)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def manifest_line(step: int, token_count: int, path: str, alpha: float | None,
                  m: int, k: int) -> str:
    alpha_s = "-" if alpha is None else f"{alpha:.8g}"
    return f"{step} {token_count} {path} {alpha_s} {m} {k}"
