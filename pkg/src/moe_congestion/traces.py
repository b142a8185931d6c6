"""Routing-trace file format and estimation of quality, load, and splits.

A trace stores pre-softmax gate logits for every (token, layer, expert)
triple plus the architecture metadata needed to analyze them.  The on-disk
MOER format is little-endian:

    bytes 0..3    magic "MOER"
    bytes 4..7    u32 version (currently 1)
    bytes 8..23   u32 T, L, M, K
    bytes 24..27  f32 lambda
    bytes 28..31  f32 alpha (NaN means absent)
    bytes 32..35  u32 batch_count
    then          (batch_count + 1) u32 batch-boundary token offsets
    then          T*L*M f32 logits, token-major, layer-next, expert-minor

See docs/trace_format.md for the conformance fixture catalogue.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import LoadDistribution, QualityVector, softmax_array
from .errors import (
    BadMagicError,
    FieldConsistencyError,
    InvalidInputError,
    TruncatedPayloadError,
    VersionMismatchError,
)

MAGIC = b"MOER"
VERSION = 1
LOAD_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class RoutingTrace:
    """Per-token, per-layer gate logits with architecture metadata."""

    m: int
    l: int
    k: int
    logits: np.ndarray
    batch_boundaries: np.ndarray
    lam: float = 1.0
    alpha: float | None = None

    def __post_init__(self):
        if self.m < 2:
            raise InvalidInputError(f"expert count must be >= 2, got {self.m}")
        if self.l < 1:
            raise InvalidInputError(f"layer count must be >= 1, got {self.l}")
        if not 1 <= self.k <= self.m:
            raise InvalidInputError(f"need 1 <= K <= M, got K={self.k}, M={self.m}")
        if not np.isfinite(self.lam) or self.lam <= 0.0:
            raise InvalidInputError(f"lambda must be finite and > 0, got {self.lam}")
        # Stored at f32 precision on disk; coerce now so round-trips are exact.
        object.__setattr__(self, "lam", float(np.float32(self.lam)))
        if self.alpha is not None:
            if not np.isfinite(self.alpha) or self.alpha < 0.0:
                raise InvalidInputError(f"alpha must be finite and >= 0, got {self.alpha}")
            object.__setattr__(self, "alpha", float(np.float32(self.alpha)))
        logits = np.ascontiguousarray(self.logits, dtype=np.float32)
        if logits.ndim != 3 or logits.shape[1] != self.l or logits.shape[2] != self.m:
            raise InvalidInputError(
                f"logits must have shape (T, {self.l}, {self.m}), got {logits.shape}")
        if logits.shape[0] < 1:
            raise InvalidInputError("trace must contain at least one token")
        if not np.all(np.isfinite(logits)):
            raise InvalidInputError("logits must be finite")
        bounds = np.asarray(self.batch_boundaries, dtype=np.int64)
        if bounds.ndim != 1 or bounds.size < 2:
            raise InvalidInputError("batch_boundaries needs at least [0, T]")
        if bounds[0] != 0 or bounds[-1] != logits.shape[0]:
            raise InvalidInputError(
                f"batch_boundaries must start at 0 and end at T={logits.shape[0]}, got "
                f"{bounds[0]}..{bounds[-1]}")
        if np.any(np.diff(bounds) <= 0):
            raise InvalidInputError("batch_boundaries must be strictly increasing")
        logits.flags.writeable = False
        bounds = np.array(bounds, copy=True)
        bounds.flags.writeable = False
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "batch_boundaries", bounds)

    @property
    def t(self) -> int:
        return int(self.logits.shape[0])

    @property
    def n_batches(self) -> int:
        return int(self.batch_boundaries.size - 1)

    def batch_tokens(self, batch: int) -> np.ndarray:
        lo, hi = self.batch_boundaries[batch], self.batch_boundaries[batch + 1]
        return np.arange(lo, hi)

    def all_tokens(self) -> np.ndarray:
        return np.arange(self.t)


# ---------------------------------------------------------------------------
# binary IO
# ---------------------------------------------------------------------------

def trace_to_bytes(trace: RoutingTrace) -> bytes:
    alpha = np.float32(np.nan) if trace.alpha is None else np.float32(trace.alpha)
    head = struct.pack(
        "<4sIIIIIffI",
        MAGIC, VERSION, trace.t, trace.l, trace.m, trace.k,
        np.float32(trace.lam), alpha, trace.n_batches)
    offsets = trace.batch_boundaries.astype("<u4").tobytes()
    payload = trace.logits.astype("<f4", copy=False).tobytes(order="C")
    return head + offsets + payload


def write_trace(trace: RoutingTrace, destination) -> None:
    """Write a trace to a path or binary file object.

    Paths are written atomically: the bytes land in a temporary file in the
    same directory, which is renamed over the destination on success.
    """
    blob = trace_to_bytes(trace)
    if hasattr(destination, "write"):
        destination.write(blob)
        return
    path = Path(destination)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, field: str) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise TruncatedPayloadError(
                f"file ends at byte {len(self.data)} but field needs bytes up to {end}",
                field=field, offset=len(self.data))
        out = self.data[self.pos:end]
        self.pos = end
        return out

    def u32(self, field: str) -> int:
        return struct.unpack("<I", self.take(4, field))[0]

    def f32(self, field: str) -> float:
        return struct.unpack("<f", self.take(4, field))[0]


def trace_from_bytes(data: bytes) -> RoutingTrace:
    cur = _Cursor(data)
    magic = cur.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, found {magic!r}", field="magic", offset=0)
    version = cur.u32("version")
    if version != VERSION:
        raise VersionMismatchError(
            f"unsupported version {version}, reader supports {VERSION}",
            field="version", offset=4)
    t = cur.u32("T")
    l = cur.u32("L")
    m = cur.u32("M")
    k = cur.u32("K")
    if t < 1:
        raise FieldConsistencyError(f"token count must be >= 1, got {t}", field="T", offset=8)
    if l < 1:
        raise FieldConsistencyError(f"layer count must be >= 1, got {l}", field="L", offset=12)
    if m < 2:
        raise FieldConsistencyError(f"expert count must be >= 2, got {m}", field="M", offset=16)
    if not 1 <= k <= m:
        raise FieldConsistencyError(f"need 1 <= K <= M, got K={k}, M={m}", field="K", offset=20)
    lam = cur.f32("lambda")
    if not np.isfinite(lam) or lam <= 0.0:
        raise FieldConsistencyError(f"lambda must be finite and > 0, got {lam}",
                                    field="lambda", offset=24)
    alpha_raw = cur.f32("alpha")
    if np.isnan(alpha_raw):
        alpha = None
    elif np.isfinite(alpha_raw) and alpha_raw >= 0.0:
        alpha = float(alpha_raw)
    else:
        raise FieldConsistencyError(f"alpha must be NaN (absent) or finite >= 0, got {alpha_raw}",
                                    field="alpha", offset=28)
    batch_count = cur.u32("batch_count")
    if batch_count < 1:
        raise FieldConsistencyError("batch_count must be >= 1", field="batch_count", offset=32)
    offsets_start = cur.pos
    raw = cur.take(4 * (batch_count + 1), "batch_boundaries")
    bounds = np.frombuffer(raw, dtype="<u4").astype(np.int64)
    if bounds[0] != 0:
        raise FieldConsistencyError(f"first batch offset must be 0, got {bounds[0]}",
                                    field="batch_boundaries", offset=offsets_start)
    if bounds[-1] != t:
        raise FieldConsistencyError(
            f"last batch offset must equal T={t}, got {bounds[-1]}",
            field="batch_boundaries", offset=offsets_start + 4 * batch_count)
    steps = np.diff(bounds)
    if np.any(steps <= 0):
        bad = int(np.argmax(steps <= 0)) + 1
        raise FieldConsistencyError(
            "batch offsets must be strictly increasing",
            field="batch_boundaries", offset=offsets_start + 4 * bad)
    payload_start = cur.pos
    payload = cur.take(4 * t * l * m, "logits")
    if cur.pos != len(data):
        raise FieldConsistencyError(
            f"{len(data) - cur.pos} trailing bytes after the declared payload",
            field="logits", offset=cur.pos)
    logits = np.frombuffer(payload, dtype="<f4").reshape(t, l, m)
    if not np.all(np.isfinite(logits)):
        raise FieldConsistencyError("logits must be finite", field="logits", offset=payload_start)
    return RoutingTrace(m=m, l=l, k=k, logits=logits, batch_boundaries=bounds,
                        lam=float(lam), alpha=alpha)


def read_trace(source) -> RoutingTrace:
    """Read a trace from a path or binary file object."""
    if hasattr(source, "read"):
        data = source.read()
    else:
        data = Path(source).read_bytes()
    return trace_from_bytes(data)


# ---------------------------------------------------------------------------
# estimation
# ---------------------------------------------------------------------------

QUALITY_METHODS = ("mean", "median", "trimmed10", "split_half")


def _token_index(trace: RoutingTrace, token_set) -> np.ndarray:
    idx = np.unique(np.asarray(token_set, dtype=np.int64))
    if idx.size == 0:
        raise InvalidInputError("token set is empty")
    if idx[0] < 0 or idx[-1] >= trace.t:
        raise InvalidInputError(f"token indices must lie in [0, {trace.t})")
    return idx


def _check_layer(trace: RoutingTrace, layer: int) -> int:
    if not 0 <= layer < trace.l:
        raise InvalidInputError(f"layer {layer} out of range [0, {trace.l})")
    return int(layer)


def split_half_indices(token_set) -> tuple[np.ndarray, np.ndarray]:
    """First and second halves of a token set in batch (index) order."""
    idx = np.unique(np.asarray(token_set, dtype=np.int64))
    if idx.size < 2:
        raise InvalidInputError("split-half needs at least two tokens")
    half = idx.size // 2
    return idx[:half], idx[half:]


def estimate_quality(trace: RoutingTrace, layer: int, token_set,
                     method: str = "mean") -> QualityVector:
    """Per-expert statistic of gate logits over a token set.

    ``split_half`` averages over the first half of the token set in batch
    order; the caller measures load on the complementary half (see
    ``split_half_indices``).
    """
    layer = _check_layer(trace, layer)
    idx = _token_index(trace, token_set)
    if method not in QUALITY_METHODS:
        raise InvalidInputError(f"unknown quality method {method!r}, expected one of {QUALITY_METHODS}")
    x = trace.logits[idx, layer, :].astype(np.float64)
    if method == "mean":
        values = x.mean(axis=0)
    elif method == "median":
        values = np.median(x, axis=0)
    elif method == "trimmed10":
        n = x.shape[0]
        cut = int(0.1 * n)
        xs = np.sort(x, axis=0)
        values = xs[cut:n - cut].mean(axis=0)
    else:  # split_half
        first, _ = split_half_indices(idx)
        values = trace.logits[first, layer, :].astype(np.float64).mean(axis=0)
    return QualityVector(values)


def dispatch_counts(trace: RoutingTrace, layer: int, token_set) -> np.ndarray:
    """Top-K membership counts per expert over a token set.

    Ties at rank K are broken toward the lowest expert index.
    """
    layer = _check_layer(trace, layer)
    idx = _token_index(trace, token_set)
    x = trace.logits[idx, layer, :]
    order = np.argsort(-x, axis=1, kind="stable")[:, :trace.k]
    return np.bincount(order.ravel(), minlength=trace.m).astype(np.int64)


def load_from_counts(counts: np.ndarray, floor: float = LOAD_FLOOR) -> tuple[LoadDistribution, bool]:
    """Normalize dispatch counts; floor exact zeros to keep the result interior.

    Returns the load and a flag telling whether any expert was floored.
    """
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise InvalidInputError("counts must not be all zero")
    w = counts / total
    floored = bool(np.any(w == 0.0))
    if floored:
        w = np.where(w == 0.0, floor, w)
        w = w / w.sum()
    return LoadDistribution(w), floored


def observed_load(trace: RoutingTrace, layer: int, token_set,
                  mode: str = "dispatch") -> LoadDistribution:
    """Observed per-expert load over a token set.

    ``dispatch`` counts top-K slot assignments (the default);
    ``probability`` averages the per-token gate softmax instead.
    """
    if mode == "dispatch":
        load, _ = load_from_counts(dispatch_counts(trace, layer, token_set))
        return load
    if mode == "probability":
        layer = _check_layer(trace, layer)
        idx = _token_index(trace, token_set)
        probs = softmax_array(trace.logits[idx, layer, :].astype(np.float64)).mean(axis=0)
        return LoadDistribution(probs)
    raise InvalidInputError(f"unknown load mode {mode!r}, expected 'dispatch' or 'probability'")


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SplitSpec:
    """Disjoint token sets: A (quality fit), B (clustering), C (held out)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    total: int

    def __post_init__(self):
        sets = [np.unique(np.asarray(s, dtype=np.int64)) for s in (self.a, self.b, self.c)]
        merged = np.concatenate(sets)
        if merged.size != np.unique(merged).size:
            raise InvalidInputError("split sets must be disjoint")
        if merged.size != self.total:
            raise InvalidInputError(
                f"split sets cover {merged.size} tokens, expected {self.total}")
        if merged.size and (merged.min() < 0 or merged.max() >= self.total):
            raise InvalidInputError(f"split indices must lie in [0, {self.total})")
        for name, arr in zip("abc", sets):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def split_three_way(trace: RoutingTrace, fractions=(1 / 3, 1 / 3, 1 / 3),
                    seed: int = 0) -> SplitSpec:
    """Deterministic batch-granular three-way split.

    Batches are shuffled with the seed and assigned greedily against the
    cumulative token targets, so each set's size is within one batch of its
    target fraction.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0.0) or abs(fr.sum() - 1.0) > 1e-9:
        raise InvalidInputError("fractions must be three nonnegative numbers summing to 1")
    if trace.n_batches < 3:
        raise InvalidInputError(f"need at least 3 batches to split, got {trace.n_batches}")
    order = np.random.default_rng(seed).permutation(trace.n_batches)
    target_a = fr[0] * trace.t
    target_ab = (fr[0] + fr[1]) * trace.t
    sets: list[list[np.ndarray]] = [[], [], []]
    done = 0.0
    for batch in order:
        tokens = trace.batch_tokens(int(batch))
        if done < target_a:
            sets[0].append(tokens)
        elif done < target_ab:
            sets[1].append(tokens)
        else:
            sets[2].append(tokens)
        done += tokens.size
    parts = [np.sort(np.concatenate(s)) if s else np.empty(0, dtype=np.int64) for s in sets]
    return SplitSpec(a=parts[0], b=parts[1], c=parts[2], total=trace.t)


# ---------------------------------------------------------------------------
# series manifests
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    """One checkpoint of a series: step, token count, trace path, alpha, M, K."""

    step: int
    token_count: int
    path: str
    alpha: float | None
    m: int
    k: int


def read_manifest(path) -> list[ManifestEntry]:
    """Parse a series manifest: one whitespace-separated line per checkpoint.

    Columns: step, token count, trace path, alpha ('-' when absent), M, K.
    Blank lines and lines starting with '#' are skipped.
    """
    entries = []
    text = Path(path).read_text()
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 6:
            raise InvalidInputError(
                f"{path}:{ln}: expected 6 fields (step tokens path alpha M K), got {len(fields)}")
        step, tokens, trace_path, alpha_s, m, k = fields
        alpha = None if alpha_s in ("-", "nan", "NaN") else float(alpha_s)
        entries.append(ManifestEntry(step=int(step), token_count=int(tokens),
                                     path=trace_path, alpha=alpha, m=int(m), k=int(k)))
    if not entries:
        raise InvalidInputError(f"manifest {path} lists no checkpoints")
    return sorted(entries, key=lambda e: e.step)


def write_manifest(entries, path) -> None:
    lines = ["# step tokens path alpha M K"]
    for e in entries:
        alpha = "-" if e.alpha is None else f"{e.alpha:.8g}"
        lines.append(f"{e.step} {e.token_count} {e.path} {alpha} {e.m} {e.k}")
    Path(path).write_text("\n".join(lines) + "\n")
