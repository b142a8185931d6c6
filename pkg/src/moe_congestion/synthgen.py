"""Synthetic routing traces with planted equilibrium structure.

The generator works backwards from a target equilibrium: it solves the game
at the scripted gamma, converts the equilibrium load into exact per-expert
top-K dispatch counts, assigns each token a K-expert set hitting those
counts, and then writes logits of the form

    s[t, i] = base_i + boost * 1[i in S_t] + jitter

with ``base = q - boost * counts / T`` so that (a) every token's top-K set
is exactly its assigned set (boost exceeds the spread of ``base``) and
(b) the per-expert mean logit equals q exactly.  The resulting trace has
observed dispatch load equal to the planted equilibrium up to count
rounding and mean-logit quality equal to the planted q, so fitting the
trace recovers the scripted gamma.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GameParams, softmax_array
from .equilibrium import MultiTypeSpec, solve_multitype, solve_single
from .errors import InvalidInputError
from .identify import rescale_to_spread
from .traces import RoutingTrace


@dataclass(frozen=True, eq=False)
class PlantedLayer:
    """Ground truth for one generated layer."""

    gamma: float
    quality: np.ndarray
    load: np.ndarray
    type_qualities: np.ndarray | None = None
    type_loads: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class SyntheticTrace:
    trace: RoutingTrace
    layers: tuple[PlantedLayer, ...]
    type_assignment: np.ndarray | None = None


def plan_dispatch_counts(target: np.ndarray, tokens: int, k: int) -> np.ndarray:
    """Integer per-expert dispatch counts: sum = tokens * K, each <= tokens.

    Largest-remainder rounding of tokens * K * target.  Infeasible targets
    (a share above 1/K, which top-K dispatch cannot represent) raise.
    """
    target = np.asarray(target, dtype=np.float64)
    total = tokens * k
    raw = target * total
    if np.any(raw > tokens + 1e-9):
        raise InvalidInputError(
            f"target load max {target.max():.4f} exceeds 1/K = {1 / k:.4f}; "
            "top-K dispatch cannot represent it")
    counts = np.floor(raw).astype(np.int64)
    counts = np.minimum(counts, tokens)
    short = total - int(counts.sum())
    if short < 0:
        raise InvalidInputError("rounding overflow in dispatch planning")
    frac = raw - counts
    frac[counts >= tokens] = -np.inf
    order = np.argsort(-frac, kind="stable")
    for idx in order[:short]:
        counts[idx] += 1
    if counts.sum() != total:
        raise InvalidInputError("could not distribute dispatch counts under the 1/K cap")
    return counts


def assign_expert_sets(counts: np.ndarray, tokens: int, k: int) -> np.ndarray:
    """(tokens, K) expert sets realizing the planned counts exactly.

    Greedy largest-remaining-count selection: any expert whose remaining
    demand equals the remaining token count is always picked, which keeps
    the plan feasible all the way down.
    """
    remaining = np.asarray(counts, dtype=np.int64).copy()
    if remaining.sum() != tokens * k or np.any(remaining > tokens) or np.any(remaining < 0):
        raise InvalidInputError("counts are not a feasible dispatch plan")
    sets = np.empty((tokens, k), dtype=np.int64)
    for t in range(tokens):
        pick = np.argsort(-remaining, kind="stable")[:k]
        sets[t] = np.sort(pick)
        remaining[pick] -= 1
    return sets


def _boost_for(q: np.ndarray, counts: np.ndarray, tokens: int, jitter: float) -> float:
    spread = float(q.max() - q.min())
    count_range = float(counts.max() - counts.min()) / tokens
    margin = 1.0 + 8.0 * jitter
    if count_range >= 0.999:
        raise InvalidInputError("dispatch counts too skewed to plant a separating boost")
    return (spread + margin) / (1.0 - count_range)


def _planted_logits(q: np.ndarray, counts: np.ndarray, sets: np.ndarray,
                    jitter: float, rng: np.random.Generator) -> np.ndarray:
    tokens, k = sets.shape
    m = q.size
    boost = _boost_for(q, counts, tokens, jitter)
    base = q - boost * counts / tokens
    logits = np.tile(base, (tokens, 1))
    rows = np.repeat(np.arange(tokens), k)
    logits[rows, sets.ravel()] += boost
    if jitter > 0.0:
        noise = jitter * rng.standard_normal((tokens, m))
        noise -= noise.mean(axis=0)  # keep the per-expert mean logit exact
        logits += noise
    else:
        selected_min = np.take_along_axis(logits, sets, axis=1).min(axis=1)
        masked = logits.copy()
        masked[rows, sets.ravel()] = -np.inf
        assert np.all(selected_min > masked.max(axis=1)), "planted top-K separation failed"
    return logits


def _batch_boundaries(tokens: int, n_batches: int) -> np.ndarray:
    if n_batches < 1 or n_batches > tokens:
        raise InvalidInputError(f"need 1 <= batches <= tokens, got {n_batches} for T={tokens}")
    return np.round(np.linspace(0, tokens, n_batches + 1)).astype(np.int64)


def _per_layer(value, n_layers: int, name: str) -> list[float]:
    arr = np.atleast_1d(np.asarray(value, dtype=np.float64))
    if arr.size == 1:
        return [float(arr[0])] * n_layers
    if arr.size != n_layers:
        raise InvalidInputError(f"{name} must be a scalar or one value per layer")
    return [float(v) for v in arr]


def generate_trace(m: int, n_layers: int, k: int, tokens: int, n_batches: int,
                   gamma, spread=2.5, lam: float = 1.0, alpha: float | None = None,
                   seed: int = 0, jitter: float = 0.0, shuffle: bool = True) -> SyntheticTrace:
    """Single-type synthetic trace; ``gamma``/``spread`` may vary per layer."""
    gammas = _per_layer(gamma, n_layers, "gamma")
    spreads = _per_layer(spread, n_layers, "spread")
    logits = np.empty((tokens, n_layers, m), dtype=np.float64)
    planted = []
    for layer in range(n_layers):
        rng = np.random.default_rng([seed, 7, layer])
        q = rescale_to_spread(rng.standard_normal(m), spreads[layer])
        g = gammas[layer]
        if g == 0.0:
            mu = softmax_array(q / lam)
        else:
            mu = solve_single(q, GameParams(gamma=g, lam=lam, m=m)).mu.weights
        counts = plan_dispatch_counts(mu, tokens, k)
        sets = assign_expert_sets(counts, tokens, k)
        logits[:, layer, :] = _planted_logits(q, counts, sets, jitter, rng)
        planted.append(PlantedLayer(gamma=g, quality=q, load=counts / (tokens * k)))
    if shuffle:
        perm = np.random.default_rng([seed, 99]).permutation(tokens)
        logits = logits[perm]
    trace = RoutingTrace(m=m, l=n_layers, k=k, logits=logits.astype(np.float32),
                         batch_boundaries=_batch_boundaries(tokens, n_batches),
                         lam=lam, alpha=alpha)
    return SyntheticTrace(trace=trace, layers=tuple(planted))


def generate_multitype_trace(m: int, n_layers: int, k: int, tokens: int, n_batches: int,
                             gamma: float, n_types: int, weights=None, spread=2.5,
                             type_offset: float = 25.0, lam: float = 1.0,
                             alpha: float | None = None, seed: int = 0,
                             jitter: float = 0.0, shuffle: bool = True) -> SyntheticTrace:
    """Synthetic trace with planted token types.

    Each type gets its own quality vector per layer; the planted loads are
    the multi-type equilibrium per-type distributions.  A constant
    per-type logit offset separates the types in logit space (softmax and
    top-K are shift-invariant, so nothing else changes), which is what
    makes k-means recover the planted partition.
    """
    if n_types < 1:
        raise InvalidInputError(f"need at least 1 type, got {n_types}")
    if weights is None:
        weights = np.full(n_types, 1.0 / n_types)
    weights = np.asarray(weights, dtype=np.float64)
    type_counts = plan_dispatch_counts(weights, tokens, 1).ravel()
    if np.any(type_counts < 1):
        raise InvalidInputError("every type needs at least one token")
    assignment = np.repeat(np.arange(n_types), type_counts)
    spreads = _per_layer(spread, n_layers, "spread")
    offsets = type_offset * (np.arange(n_types) - (n_types - 1) / 2.0)

    logits = np.empty((tokens, n_layers, m), dtype=np.float64)
    planted = []
    for layer in range(n_layers):
        rng = np.random.default_rng([seed, 11, layer])
        qs = np.stack([rescale_to_spread(rng.standard_normal(m), spreads[layer])
                       for _ in range(n_types)])
        spec = MultiTypeSpec(weights=weights, qualities=tuple(qs))
        result = solve_multitype(spec, GameParams(gamma=gamma, lam=lam, m=m))
        type_loads = []
        aggregate = np.zeros(m)
        for ti in range(n_types):
            members = np.flatnonzero(assignment == ti)
            mu = result.mus[ti].weights
            counts = plan_dispatch_counts(mu, members.size, k)
            sets = assign_expert_sets(counts, members.size, k)
            block = _planted_logits(qs[ti], counts, sets, jitter, rng) + offsets[ti]
            logits[members, layer, :] = block
            load = counts / (members.size * k)
            type_loads.append(load)
            aggregate += (members.size / tokens) * load
        planted.append(PlantedLayer(gamma=gamma, quality=weights @ qs, load=aggregate,
                                    type_qualities=qs + offsets[:, None],
                                    type_loads=np.stack(type_loads)))
    if shuffle:
        perm = np.random.default_rng([seed, 99]).permutation(tokens)
        logits = logits[perm]
        assignment = assignment[perm]
    trace = RoutingTrace(m=m, l=n_layers, k=k, logits=logits.astype(np.float32),
                         batch_boundaries=_batch_boundaries(tokens, n_batches),
                         lam=lam, alpha=alpha)
    return SyntheticTrace(trace=trace, layers=tuple(planted), type_assignment=assignment)
