"""Fitting the effective congestion coefficient from observed routing.

Given an observed interior load ``mu_obs`` and a quality vector ``q``, the
effective congestion is the gamma minimizing the L1 fixed-point residual

    R(gamma) = || softmax((q - gamma * mu_obs) / lam) - mu_obs ||_1 ,

which is unimodal in gamma (mass moves monotonically from high-load to
low-load experts as gamma grows), so golden-section search finds the global
minimizer.  The fitted value splits into an explicit part alpha * M coming
from the auxiliary balance loss and an implicit remainder.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from ._optim import golden_section_min
from .core import GameParams, as_values, as_weights, softmax_array
from .equilibrium import DEFAULT_MAX_ITER, DEFAULT_TOL, best_response_array, solve_single
from .errors import DegenerateQualityError, InvalidInputError, NonConvergedError

DEFAULT_GAMMA_MAX = 500.0
GAMMA_SEARCH_TOL = 1e-4

# Fits below this are reported as "gamma -> 0": the layer carries no
# detectable congestion structure and is out of scope for the model.
SCOPE_THRESHOLD = 0.05

_CONSTANT_Q_TOL = 1e-9


class BoundaryFlag(str, Enum):
    INTERIOR = "interior"
    AT_ZERO = "at_zero"
    AT_MAX = "at_max"


@dataclass(frozen=True)
class FitResult:
    """Fitted effective congestion with residual and decomposition."""

    gamma_eff: float
    residual: float
    gamma_explicit: float
    gamma_implicit: float
    boundary_flag: BoundaryFlag = BoundaryFlag.INTERIOR
    ci_low: float | None = None
    ci_high: float | None = None

    def __post_init__(self):
        total = self.gamma_explicit + self.gamma_implicit
        if total != self.gamma_eff:
            raise InvalidInputError(
                f"decomposition must be exact: {self.gamma_explicit} + {self.gamma_implicit} != {self.gamma_eff}")
        if self.ci_low is not None and self.ci_high is not None:
            if not self.ci_low <= self.gamma_eff <= self.ci_high:
                raise InvalidInputError(
                    f"CI [{self.ci_low}, {self.ci_high}] must contain gamma_eff={self.gamma_eff}")

    @property
    def in_scope(self) -> bool:
        return self.gamma_eff > SCOPE_THRESHOLD

    def with_ci(self, low: float, high: float) -> "FitResult":
        """Attach a confidence interval, widened if necessary to contain the
        point estimate (percentile bootstrap can exclude it under heavy
        resampling skew)."""
        return replace(self, ci_low=min(low, self.gamma_eff),
                       ci_high=max(high, self.gamma_eff))


@dataclass(frozen=True)
class RecoveryTrial:
    true_gamma: float
    recovered_gamma: float
    rel_error: float


@dataclass(frozen=True, eq=False)
class RecoveryReport:
    """Outcome of the synthetic identification experiment."""

    trials: tuple[RecoveryTrial, ...]
    median_error: float
    mean_error: float
    sigma_q: float
    failures: int = 0

    def to_table(self) -> str:
        lines = ["true_gamma\trecovered_gamma\trel_error"]
        for t in self.trials:
            lines.append(f"{t.true_gamma:.6g}\t{t.recovered_gamma:.6g}\t{t.rel_error:.6g}")
        return "\n".join(lines) + "\n"


def residual(gamma: float, mu_obs, q, lam: float = 1.0) -> float:
    """L1 gap between the best response at gamma and the observed load."""
    w = as_weights(mu_obs)
    qv = as_values(q)
    if w.shape != qv.shape:
        raise InvalidInputError(f"load has M={w.size}, quality has M={qv.size}")
    if np.any(w <= 0.0):
        raise InvalidInputError("observed load must be strictly interior")
    if gamma < 0.0 or not np.isfinite(gamma):
        raise InvalidInputError(f"gamma must be finite and >= 0, got {gamma}")
    if lam <= 0.0:
        raise InvalidInputError(f"lambda must be > 0, got {lam}")
    return float(np.abs(best_response_array(w, qv, gamma, lam) - w).sum())


def _residual_grid(gammas: np.ndarray, w: np.ndarray, qv: np.ndarray, lam: float) -> np.ndarray:
    """R(gamma) evaluated for a whole grid of gammas in one vector pass."""
    logits = (qv[None, :] - gammas[:, None] * w[None, :]) / lam
    return np.abs(softmax_array(logits) - w[None, :]).sum(axis=1)


def fit_gamma(mu_obs, q, lam: float = 1.0, gamma_max: float = DEFAULT_GAMMA_MAX,
              alpha: float = 0.0, search_tol: float = GAMMA_SEARCH_TOL) -> FitResult:
    """Fit gamma_eff = argmin_{gamma in [0, gamma_max]} R(gamma).

    The residual of a load that sits at (or near) an equilibrium is
    unimodal in gamma, but arbitrary interior loads can show shallow
    secondary minima, so the search brackets the optimum with a log-spaced
    scan before golden-section refinement.

    Raises DegenerateQualityError for constant q (the residual is then flat
    in gamma).  When the minimizer sits at the top of the search interval
    the result carries the ``at_max`` flag and the caller should retry with
    a larger gamma_max.
    """
    w = as_weights(mu_obs)
    qv = as_values(q)
    if w.shape != qv.shape:
        raise InvalidInputError(f"load has M={w.size}, quality has M={qv.size}")
    if np.any(w <= 0.0):
        raise InvalidInputError("observed load must be strictly interior")
    if float(qv.max() - qv.min()) < _CONSTANT_Q_TOL:
        raise DegenerateQualityError("quality vector is constant; gamma is unidentifiable")
    if gamma_max <= 0:
        raise InvalidInputError(f"gamma_max must be > 0, got {gamma_max}")

    objective = lambda g: residual(g, w, qv, lam)
    grid = np.concatenate([[0.0], np.geomspace(max(1e-3 * gamma_max, search_tol),
                                               gamma_max, 63)])
    scans = _residual_grid(grid, w, qv, lam)
    i = int(np.argmin(scans))
    lo = float(grid[max(i - 1, 0)])
    hi = float(grid[min(i + 1, grid.size - 1)])
    if hi > lo:
        gamma_eff, res = golden_section_min(objective, lo, hi, tol=search_tol)
    else:
        gamma_eff, res = float(grid[i]), float(scans[i])
    if gamma_eff <= search_tol:
        flag = BoundaryFlag.AT_ZERO
    elif gamma_eff >= gamma_max - search_tol:
        flag = BoundaryFlag.AT_MAX
    else:
        flag = BoundaryFlag.INTERIOR
    explicit, implicit = decompose(gamma_eff, alpha, w.size)
    return FitResult(gamma_eff=gamma_eff, residual=res,
                     gamma_explicit=explicit, gamma_implicit=implicit,
                     boundary_flag=flag)


def decompose(gamma_eff: float, alpha: float, m: int) -> tuple[float, float]:
    """Split gamma_eff into the auxiliary-loss part alpha * M and the rest.

    The implicit part may come out negative; that is reported as-is, since
    it signals balance below what the explicit loss alone would induce.
    """
    if alpha < 0.0 or not np.isfinite(alpha):
        raise InvalidInputError(f"alpha must be finite and >= 0, got {alpha}")
    if m < 2:
        raise InvalidInputError(f"expert count must be >= 2, got {m}")
    explicit = alpha * m
    return explicit, gamma_eff - explicit


def rescale_to_spread(q: np.ndarray, spread: float) -> np.ndarray:
    """Center and scale a vector so max - min equals ``spread`` exactly."""
    q = np.asarray(q, dtype=np.float64)
    current = float(q.max() - q.min())
    if current <= 0.0:
        raise InvalidInputError("cannot rescale a constant vector to a positive spread")
    if spread < 0.0:
        raise InvalidInputError(f"target spread must be >= 0, got {spread}")
    return (q - q.mean()) * (spread / current)


def synthetic_recovery(gamma_list, sigma_q: float, trials: int, m: int = 64,
                       b0_target: float = 2.24, seed: int = 0, lam: float = 1.0,
                       gamma_max: float = DEFAULT_GAMMA_MAX,
                       load_tokens: int | None = None,
                       load_k: int = 8) -> RecoveryReport:
    """Generate equilibria at known gammas and refit from noisy quality.

    Per trial: draw q ~ N(0, I) rescaled to spread ``b0_target`` (default:
    the converged OLMoE quality spread), solve the equilibrium at the true
    gamma, perturb q with i.i.d. Gaussian noise of scale ``sigma_q``, and
    refit gamma from the equilibrium load and noisy quality.

    With ``load_tokens=None`` the refit sees the exact equilibrium load
    (the idealized experiment: at sigma_q = 0 recovery is near-perfect).
    Setting ``load_tokens`` simulates measuring the load by top-K dispatch
    over a finite token sample, i.e. ``load_tokens * load_k`` multinomial
    slot draws from the equilibrium, which is how a real pipeline observes
    load and adds its measurement noise to the experiment.

    Trials are seeded per (gamma, trial) index, so any execution order
    gives identical aggregates.  Solver failures are excluded and counted.
    """
    if trials < 1:
        raise InvalidInputError(f"need at least one trial, got {trials}")
    if load_tokens is not None and (load_tokens < 1 or load_k < 1):
        raise InvalidInputError("load_tokens and load_k must be positive")
    gammas = [float(g) for g in gamma_list]
    if any(g <= 0 for g in gammas):
        raise InvalidInputError("true gammas must be positive (relative error is undefined at 0)")
    records = []
    failures = 0
    for gi, gamma in enumerate(gammas):
        for t in range(trials):
            rng = np.random.default_rng([seed, gi, t])
            q = rescale_to_spread(rng.standard_normal(m), b0_target)
            params = GameParams(gamma=gamma, lam=lam, m=m)
            try:
                mu_star = solve_single(q, params, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER).mu
            except NonConvergedError:
                failures += 1
                continue
            if load_tokens is None:
                load = mu_star
            else:
                from .traces import load_from_counts  # deferred: traces sits above this module

                counts = rng.multinomial(load_tokens * load_k, mu_star.weights)
                load, _ = load_from_counts(counts)
            noisy = q + sigma_q * rng.standard_normal(m)
            fit = fit_gamma(load, noisy, lam=lam, gamma_max=gamma_max)
            records.append(RecoveryTrial(
                true_gamma=gamma,
                recovered_gamma=fit.gamma_eff,
                rel_error=abs(fit.gamma_eff - gamma) / gamma,
            ))
    if not records:
        raise NonConvergedError("every synthetic trial failed to solve", iterations=0)
    errors = np.array([r.rel_error for r in records])
    return RecoveryReport(
        trials=tuple(records),
        median_error=float(np.median(errors)),
        mean_error=float(errors.mean()),
        sigma_q=float(sigma_q),
        failures=failures,
    )
