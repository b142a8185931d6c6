"""Equilibrium solvers for the entropy-regularized congestion game.

The single-type equilibrium is the unique minimizer of the strictly convex
potential

    Psi(mu) = sum_i [ -q_i mu_i + (gamma/2) mu_i^2 + lam * mu_i log mu_i ]

and the fixed point of the best-response map

    Phi(mu)_i = softmax((q_i - gamma * mu_i) / lam).

Solvers run damped best-response iteration mu <- (1-eta) mu + eta Phi(mu)
with eta = min(1, lam / (lam + gamma)).  At that step size the potential
decreases at every iteration (the best response minimizes the linearized
potential plus entropy, and the quadratic congestion term has curvature
gamma < lam/eta along the step), so convergence is global even where the
best-response map itself is not a contraction.  A step-halving fallback
guards against floating-point violations of the descent property.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    GameParams,
    LoadDistribution,
    QualityVector,
    as_values,
    as_weights,
    softmax_array,
    xlogx,
)
from .errors import InvalidInputError, NonConvergedError

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100_000

# Relative slack for the "potential did not increase" check; below this the
# change is indistinguishable from rounding noise.
_DESCENT_SLACK = 1e-12
_MAX_HALVINGS = 60


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    """Solution of a single-type (or top-K truncated) equilibrium solve."""

    mu: LoadDistribution
    residual: float
    iterations: int
    potential_value: float


@dataclass(frozen=True, eq=False)
class MultiTypeEquilibriumResult:
    """Per-type equilibrium distributions plus their aggregate load."""

    mus: tuple[LoadDistribution, ...]
    aggregate: LoadDistribution
    residual: float
    iterations: int
    potential_value: float


@dataclass(frozen=True, eq=False)
class MultiTypeSpec:
    """Token-type weights and per-type quality vectors (shared expert count)."""

    weights: np.ndarray
    qualities: tuple[QualityVector, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size < 1:
            raise InvalidInputError("type weights must be a nonempty 1-D vector")
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise InvalidInputError("type weights must be finite and strictly positive")
        total = float(w.sum())
        if abs(total - 1.0) > 1e-9:
            raise InvalidInputError(f"type weights sum to {total!r}, expected 1")
        if abs(total - 1.0) > 1e-12:
            w = w / total
        qs = tuple(q if isinstance(q, QualityVector) else QualityVector(np.asarray(q)) for q in self.qualities)
        if len(qs) != w.size:
            raise InvalidInputError(f"{w.size} weights but {len(qs)} quality vectors")
        m = qs[0].m
        if any(q.m != m for q in qs):
            raise InvalidInputError("all quality vectors must share the expert count")
        w = np.array(w, copy=True)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "qualities", qs)

    @property
    def n_types(self) -> int:
        return int(self.weights.size)

    @property
    def m(self) -> int:
        return self.qualities[0].m

    def quality_matrix(self) -> np.ndarray:
        return np.stack([q.values for q in self.qualities])


# ---------------------------------------------------------------------------
# array kernels (broadcast over leading axes)
# ---------------------------------------------------------------------------

def best_response_array(mu: np.ndarray, q: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    return softmax_array((q - gamma * mu) / lam)


def potential_array(mu: np.ndarray, q: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    return np.sum(-q * mu + 0.5 * gamma * mu * mu + lam * xlogx(mu), axis=-1)


def multitype_potential_array(mus: np.ndarray, qs: np.ndarray, w: np.ndarray,
                              gamma: float, lam: float) -> float:
    f = w @ mus
    congestion = 0.5 * gamma * float(np.dot(f, f))
    quality = float(np.sum(w[:, None] * qs * mus))
    entropy = lam * float(np.sum(w[:, None] * xlogx(mus)))
    return congestion - quality + entropy


def _damped_iterate(mu, evaluate_map, evaluate_potential, eta0, tol, max_iter):
    """Shared damped fixed-point loop with potential-descent fallback.

    ``mu`` may carry leading batch axes; the residual is the max over rows.
    Returns (mu, residual, iterations, converged).
    """
    psi = evaluate_potential(mu)
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        phi = evaluate_map(mu)
        residual = float(np.abs(phi - mu).sum(axis=-1).max())
        if residual <= tol:
            return mu, residual, iteration, True
        step = phi - mu
        cand = mu + eta0 * step
        psi_c = evaluate_potential(cand)
        limit = psi + _DESCENT_SLACK * (1.0 + np.abs(psi))
        if np.any(psi_c > limit):
            eta = np.full(np.shape(psi), eta0)
            for _ in range(_MAX_HALVINGS):
                bad = psi_c > limit
                if not np.any(bad):
                    break
                eta = np.where(bad, 0.5 * eta, eta)
                cand = mu + np.expand_dims(eta, -1) * step
                psi_c = evaluate_potential(cand)
            # If descent still fails after 60 halvings the potential is flat
            # to machine precision; accept the update and let the residual
            # check decide.
        mu = cand
        psi = psi_c
    return mu, residual, max_iter, False


def solve_batch(q, params: GameParams, starts: np.ndarray,
                tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Damped best-response solve from a (batch, M) array of interior starts.

    Returns (mus, residual, iterations, converged).  All rows share the
    instance, so the residual is the worst row's fixed-point gap.
    """
    qv = as_values(q)
    starts = np.asarray(starts, dtype=np.float64)
    if starts.shape[-1] != qv.size:
        raise InvalidInputError(f"starts have M={starts.shape[-1]}, quality has M={qv.size}")
    if np.any(starts <= 0.0):
        raise InvalidInputError("starts must be strictly interior")
    gamma, lam = params.gamma, params.lam
    eta0 = min(1.0, lam / (lam + gamma))
    return _damped_iterate(
        starts,
        lambda mu: best_response_array(mu, qv, gamma, lam),
        lambda mu: potential_array(mu, qv, gamma, lam),
        eta0, tol, max_iter,
    )


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _check_instance(q, params: GameParams) -> np.ndarray:
    qv = as_values(q)
    if qv.ndim != 1:
        raise InvalidInputError("quality must be a 1-D vector")
    if qv.size != params.m:
        raise InvalidInputError(f"quality has M={qv.size} but params.m={params.m}")
    if not np.all(np.isfinite(qv)):
        raise InvalidInputError("quality entries must be finite")
    return qv


def best_response(mu, q, params: GameParams) -> LoadDistribution:
    """softmax((q - gamma * mu) / lam): one step of the best-response map."""
    qv = _check_instance(q, params)
    w = as_weights(mu)
    if w.shape != qv.shape:
        raise InvalidInputError(f"load has M={w.size}, quality has M={qv.size}")
    return LoadDistribution(best_response_array(w, qv, params.gamma, params.lam))


def potential(mu, q, params: GameParams) -> float:
    """Rosenthal potential at an interior distribution."""
    qv = _check_instance(q, params)
    w = as_weights(mu)
    if w.shape != qv.shape:
        raise InvalidInputError(f"load has M={w.size}, quality has M={qv.size}")
    if np.any(w <= 0.0):
        raise InvalidInputError("potential requires a strictly interior distribution")
    return float(potential_array(w, qv, params.gamma, params.lam))


def multitype_potential(mus, spec: MultiTypeSpec, params: GameParams) -> float:
    """Joint Rosenthal potential of the multi-type game at interior per-type loads."""
    arr = np.stack([as_weights(mu) for mu in mus])
    if arr.shape != (spec.n_types, spec.m):
        raise InvalidInputError(f"expected {spec.n_types} distributions over {spec.m} experts")
    if np.any(arr <= 0.0):
        raise InvalidInputError("potential requires strictly interior distributions")
    return multitype_potential_array(arr, spec.quality_matrix(), spec.weights,
                                     params.gamma, params.lam)


def solve_single(q, params: GameParams, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER, start=None) -> EquilibriumResult:
    """Solve the single-type equilibrium to an L1 fixed-point residual <= tol."""
    qv = _check_instance(q, params)
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    if start is None:
        mu0 = np.full(qv.size, 1.0 / qv.size)
    else:
        mu0 = as_weights(start)
        if mu0.shape != qv.shape or np.any(mu0 <= 0.0):
            raise InvalidInputError("start must be a strictly interior distribution of matching size")
    mu, residual, iterations, converged = solve_batch(qv, params, mu0[None, :], tol, max_iter)
    mu = mu[0]
    if not converged:
        raise NonConvergedError(
            f"no fixed point within {max_iter} iterations (residual {residual:.3e})",
            best=LoadDistribution(mu), residual=residual, iterations=iterations)
    return EquilibriumResult(
        mu=LoadDistribution(mu),
        residual=residual,
        iterations=iterations,
        potential_value=float(potential_array(mu, qv, params.gamma, params.lam)),
    )


def solve_multitype(spec: MultiTypeSpec, params: GameParams, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER) -> MultiTypeEquilibriumResult:
    """Solve the multi-type equilibrium by synchronous damped best response.

    All types step jointly against the current aggregate load; the joint
    potential certifies descent.  The residual is max over types of the L1
    gap between each type's load and its best response to the aggregate.
    """
    if spec.m != params.m:
        raise InvalidInputError(f"spec has M={spec.m} but params.m={params.m}")
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    qs = spec.quality_matrix()
    w = spec.weights
    gamma, lam = params.gamma, params.lam
    eta0 = min(1.0, lam / (lam + gamma))

    def apply_map(mus):
        f = w @ mus
        return best_response_array(f, qs, gamma, lam)

    def joint_potential(mus):
        return multitype_potential_array(mus, qs, w, gamma, lam)

    mus0 = np.full((spec.n_types, spec.m), 1.0 / spec.m)
    mus, residual, iterations, converged = _damped_iterate(
        mus0, apply_map, lambda m: np.asarray(joint_potential(m)), eta0, tol, max_iter)
    if not converged:
        raise NonConvergedError(
            f"no multi-type fixed point within {max_iter} iterations (residual {residual:.3e})",
            best=tuple(LoadDistribution(row) for row in mus),
            residual=residual, iterations=iterations)
    aggregate = w @ mus
    return MultiTypeEquilibriumResult(
        mus=tuple(LoadDistribution(row) for row in mus),
        aggregate=LoadDistribution(aggregate),
        residual=residual,
        iterations=iterations,
        potential_value=joint_potential(mus),
    )


def topk_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries; ties at rank k go to the lowest index."""
    order = np.argsort(-np.asarray(values), kind="stable")
    return np.sort(order[:k])


def truncate_topk(mu: np.ndarray, k: int) -> np.ndarray:
    """Zero all but the k largest entries and renormalize the survivors."""
    keep = topk_indices(mu, k)
    out = np.zeros_like(mu)
    out[keep] = mu[keep]
    return out / out.sum()


def topk_fixed_point(q, params: GameParams, k: int, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER) -> EquilibriumResult:
    """Fixed point of the top-K truncated best-response map.

    The truncated map applies the full best response, keeps the K largest
    entries, and renormalizes.  A fixed point supported on S solves the
    restricted game on S (the renormalization cancels the off-support
    softmax mass), so the solver alternates restricted equilibrium solves
    with support updates and reports an oscillation between supports
    honestly instead of forcing an answer.
    """
    qv = _check_instance(q, params)
    m = qv.size
    if not 1 <= k <= m:
        raise InvalidInputError(f"need 1 <= K <= M, got K={k}, M={m}")
    if k == m:
        return solve_single(q, params, tol=tol, max_iter=max_iter)
    gamma, lam = params.gamma, params.lam

    support = topk_indices(softmax_array(qv / lam), k)
    seen: list[tuple[int, ...]] = [tuple(support)]
    total_iterations = 0
    for _ in range(64):
        if k == 1:
            sub_mu = np.array([1.0])
            total_iterations += 1
        else:
            sub_params = GameParams(gamma=gamma, lam=lam, m=k)
            sub_mu, sub_res, sub_iters, converged = solve_batch(
                qv[support], sub_params, np.full((1, k), 1.0 / k), tol, max_iter)
            sub_mu = sub_mu[0]
            total_iterations += sub_iters
            if not converged:
                raise NonConvergedError(
                    f"restricted solve on support {tuple(support)} did not converge "
                    f"(residual {sub_res:.3e})",
                    best=None, residual=sub_res, iterations=total_iterations)
        mu = np.zeros(m)
        mu[support] = sub_mu
        phi = best_response_array(mu, qv, gamma, lam)
        new_support = topk_indices(phi, k)
        if np.array_equal(new_support, support):
            truncated = truncate_topk(phi, k)
            residual = float(np.abs(truncated - mu).sum())
            return EquilibriumResult(
                mu=LoadDistribution(mu),
                residual=residual,
                iterations=total_iterations,
                potential_value=float(potential_array(mu, qv, gamma, lam)),
            )
        key = tuple(new_support)
        if key in seen:
            cycle = " -> ".join(str(s) for s in seen + [key])
            raise NonConvergedError(
                f"top-K support oscillates without settling: {cycle}",
                best=LoadDistribution(mu), residual=None, iterations=total_iterations)
        seen.append(key)
        support = new_support
    raise NonConvergedError(
        "top-K support did not settle within 64 support updates",
        best=None, residual=None, iterations=total_iterations)
