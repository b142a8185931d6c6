"""Simplex-valued primitives shared by every other module.

The two value types are thin immutable wrappers around float64 arrays:
``LoadDistribution`` for points of the M-simplex (per-expert load shares)
and ``QualityVector`` for per-expert preference scores in gate-logit units.
All operations are pure functions; constructed values are frozen and safe
to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

# Stored distributions sum to one within SUM_TOL.  Constructors silently
# renormalize inputs whose sum is off by at most RENORM_TOL and reject
# anything worse.
SUM_TOL = 1e-12
RENORM_TOL = 1e-9


def _frozen_f64(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    arr.flags.writeable = False
    return arr


def as_weights(mu) -> np.ndarray:
    """Plain float64 view of a LoadDistribution or array-like."""
    if isinstance(mu, LoadDistribution):
        return mu.weights
    return np.asarray(mu, dtype=np.float64)


def as_values(q) -> np.ndarray:
    """Plain float64 view of a QualityVector or array-like."""
    if isinstance(q, QualityVector):
        return q.values
    return np.asarray(q, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class LoadDistribution:
    """A point in the M-simplex: nonnegative shares summing to one."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1:
            raise InvalidInputError(f"load distribution must be 1-D, got shape {w.shape}")
        if w.size < 2:
            raise InvalidInputError(f"load distribution needs at least 2 experts, got {w.size}")
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("load distribution entries must be finite")
        if np.any(w < 0.0):
            raise InvalidInputError("load distribution entries must be nonnegative")
        total = float(w.sum())
        if abs(total - 1.0) > RENORM_TOL:
            raise InvalidInputError(
                f"load distribution sums to {total!r}, more than {RENORM_TOL} away from 1"
            )
        if abs(total - 1.0) > SUM_TOL:
            w = w / total
        object.__setattr__(self, "weights", _frozen_f64(w))

    @classmethod
    def uniform(cls, m: int) -> "LoadDistribution":
        return cls(np.full(m, 1.0 / m))

    @property
    def m(self) -> int:
        return int(self.weights.size)

    @property
    def is_interior(self) -> bool:
        return bool(np.all(self.weights > 0.0))

    def require_interior(self) -> "LoadDistribution":
        if not self.is_interior:
            raise InvalidInputError("load distribution must be strictly interior")
        return self

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.weights
        return self.weights.astype(dtype)

    def __len__(self) -> int:
        return self.m

    def __repr__(self) -> str:
        return f"LoadDistribution({np.array2string(self.weights, precision=6)})"


@dataclass(frozen=True, eq=False)
class QualityVector:
    """Per-expert preference scores, in gate-logit units."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise InvalidInputError(f"quality vector must be 1-D, got shape {v.shape}")
        if v.size < 2:
            raise InvalidInputError(f"quality vector needs at least 2 experts, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("quality vector entries must be finite")
        object.__setattr__(self, "values", _frozen_f64(v))

    @property
    def m(self) -> int:
        return int(self.values.size)

    @property
    def spread(self) -> float:
        return float(self.values.max() - self.values.min())

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)

    def __len__(self) -> int:
        return self.m

    def __repr__(self) -> str:
        return f"QualityVector({np.array2string(self.values, precision=6)})"


@dataclass(frozen=True)
class GameParams:
    """Congestion strength, entropy temperature, and expert count."""

    gamma: float
    lam: float = 1.0
    m: int = 2

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma < 0.0:
            raise InvalidInputError(f"gamma must be finite and >= 0, got {self.gamma}")
        if not np.isfinite(self.lam) or self.lam <= 0.0:
            raise InvalidInputError(f"lambda must be finite and > 0, got {self.lam}")
        if self.m < 2:
            raise InvalidInputError(f"expert count must be >= 2, got {self.m}")


def softmax_array(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax along the last axis (array in, array out)."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(logits) -> LoadDistribution:
    """Stable softmax of a logit vector, as a load distribution.

    Entries are strictly positive whenever the logit range stays below the
    float64 exp underflow threshold (about 745).
    """
    v = as_values(logits)
    if v.ndim != 1 or v.size < 2:
        raise InvalidInputError(f"softmax expects a 1-D vector of length >= 2, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("softmax input must be finite")
    return LoadDistribution(softmax_array(v))


def l1_distance(a, b) -> float:
    """Total-variation-style L1 distance; ranges over [0, 2] on the simplex."""
    wa = as_weights(a)
    wb = as_weights(b)
    if wa.shape != wb.shape:
        raise InvalidInputError(f"length mismatch: {wa.shape} vs {wb.shape}")
    return float(np.abs(wa - wb).sum())


def xlogx(w: np.ndarray) -> np.ndarray:
    """x * log(x) with the 0 * log(0) = 0 convention."""
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros_like(w)
    pos = w > 0.0
    out[pos] = w[pos] * np.log(w[pos])
    return out


def entropy_normalized(mu) -> float:
    """Shannon entropy divided by log M, so uniform -> 1 and one-hot -> 0.

    Computed as 1 - KL(mu || uniform) / log M, which evaluates to exactly
    1.0 at the uniform distribution instead of picking up rounding noise.
    """
    w = as_weights(mu)
    if w.ndim != 1 or w.size < 2:
        raise InvalidInputError(f"expected a 1-D distribution of length >= 2, got shape {w.shape}")
    scaled = w * w.size
    kl = np.zeros_like(w)
    pos = scaled > 0.0
    kl[pos] = w[pos] * np.log(scaled[pos])
    return float(np.clip(1.0 - kl.sum() / np.log(w.size), 0.0, 1.0))


def quality_spread(q) -> float:
    """Max minus min of a quality vector (the spread B0)."""
    v = as_values(q)
    return float(v.max() - v.min())
