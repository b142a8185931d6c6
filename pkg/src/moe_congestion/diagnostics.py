"""Scope diagnostics and the three-phase classifier for checkpoint series.

Closed forms: the collapse threshold gamma_c = M * B0 / (M - 1), the
worst-case best-response contraction rate gamma / (2 * lam), its
load-dependent refinement (gamma / lam) * max_i 2 mu_i (1 - mu_i), and the
top-K / cross-layer approximation bounds.  Bounds are capped at 2 (the L1
diameter of the simplex) and reported as None once the contraction rate
reaches 1, where they carry no information.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import as_weights
from .errors import InvalidInputError
from .traces import RoutingTrace, observed_load

L1_DIAMETER = 2.0

DEFAULT_SURGE_RATIO = 1.5
DEFAULT_RELAX_RATIO = 0.6
DEFAULT_DORMANT_THRESHOLD = 0.05
# A post-peak run counts as the stabilization plateau while its values stay
# within this relative band of the run median.
PLATEAU_BAND = 0.15

MIN_GROUP_SIZE = 5


def gamma_critical(m: int, b0: float) -> float:
    """Congestion level above which full collapse onto one expert is impossible."""
    if m < 2:
        raise InvalidInputError(f"expert count must be >= 2, got {m}")
    if b0 < 0 or not np.isfinite(b0):
        raise InvalidInputError(f"quality spread must be finite and >= 0, got {b0}")
    return m * b0 / (m - 1)


def contraction_rate(gamma: float, lam: float) -> float:
    """Worst-case L1 contraction rate of the best-response map: gamma / (2 lam)."""
    if lam <= 0:
        raise InvalidInputError(f"lambda must be > 0, got {lam}")
    if gamma < 0:
        raise InvalidInputError(f"gamma must be >= 0, got {gamma}")
    return gamma / (2.0 * lam)


def contraction_rate_effective(gamma: float, lam: float, mu) -> float:
    """Load-dependent contraction rate: (gamma / lam) * max_i 2 mu_i (1 - mu_i)."""
    if lam <= 0:
        raise InvalidInputError(f"lambda must be > 0, got {lam}")
    if gamma < 0:
        raise InvalidInputError(f"gamma must be >= 0, got {gamma}")
    w = as_weights(mu)
    return (gamma / lam) * float((2.0 * w * (1.0 - w)).max())


def topk_error_bound(k: int, m: int, rho: float) -> float | None:
    """L1 bound between the dense equilibrium and a top-K fixed point.

    Returns None when rho >= 1 (the bound is vacuous there); otherwise
    min(2 (1 - K/M) / (1 - rho), 2).
    """
    if not 1 <= k <= m:
        raise InvalidInputError(f"need 1 <= K <= M, got K={k}, M={m}")
    if rho < 0 or not np.isfinite(rho):
        raise InvalidInputError(f"rho must be finite and >= 0, got {rho}")
    if k == m:
        return 0.0  # no truncation, zero gap at any contraction rate
    if rho >= 1.0:
        return None
    return min(2.0 * (1.0 - k / m) / (1.0 - rho), L1_DIAMETER)


def myopic_gap_bound(epsilon_l: float, lam: float, rho_l: float) -> float | None:
    """L1 bound between per-layer and coupled equilibria given spread epsilon_l."""
    if lam <= 0:
        raise InvalidInputError(f"lambda must be > 0, got {lam}")
    if epsilon_l < 0 or not np.isfinite(epsilon_l):
        raise InvalidInputError(f"epsilon must be finite and >= 0, got {epsilon_l}")
    if rho_l < 0 or not np.isfinite(rho_l):
        raise InvalidInputError(f"rho must be finite and >= 0, got {rho_l}")
    if rho_l >= 1.0:
        return None
    return min(epsilon_l / lam / (1.0 - rho_l), L1_DIAMETER)


@dataclass(frozen=True)
class SpreadEstimate:
    """Continuation spread at one layer pair; degenerate when < 2 usable groups."""

    value: float
    group_count: int
    degenerate: bool


def continuation_spread(trace: RoutingTrace, layer: int,
                        min_group_size: int = MIN_GROUP_SIZE,
                        baseline: str = "mean") -> SpreadEstimate:
    """Cross-layer coupling strength between layer ``layer`` and the next.

    Tokens are grouped by their top-1 expert at the given layer; each
    group's average load at layer+1 is compared against a baseline.
    ``baseline="mean"`` (default) measures the max L1 deviation from the
    unconditional average load; ``baseline="pairwise"`` measures the max L1
    distance between any two group averages.  Groups smaller than
    ``min_group_size`` tokens are dropped; with fewer than two surviving
    groups the estimate is degenerate and reported as 0.
    """
    if not 0 <= layer < trace.l - 1:
        raise InvalidInputError(f"layer must be in [0, {trace.l - 1}) to have a successor")
    if baseline not in ("mean", "pairwise"):
        raise InvalidInputError(f"unknown baseline {baseline!r}, expected 'mean' or 'pairwise'")
    top1 = np.argmax(trace.logits[:, layer, :], axis=1)
    group_loads = []
    for expert in range(trace.m):
        members = np.flatnonzero(top1 == expert)
        if members.size < min_group_size:
            continue
        group_loads.append(observed_load(trace, layer + 1, members).weights)
    if len(group_loads) < 2:
        return SpreadEstimate(value=0.0, group_count=len(group_loads), degenerate=True)
    if baseline == "mean":
        reference = observed_load(trace, layer + 1, trace.all_tokens()).weights
        value = max(float(np.abs(g - reference).sum()) for g in group_loads)
    else:
        value = max(float(np.abs(a - b).sum())
                    for i, a in enumerate(group_loads) for b in group_loads[i + 1:])
    return SpreadEstimate(value=value, group_count=len(group_loads), degenerate=False)


# ---------------------------------------------------------------------------
# phase classification
# ---------------------------------------------------------------------------

class Phase(str, Enum):
    DORMANT = "dormant"
    SURGE = "surge"
    STABILIZATION = "stabilization"
    RELAXATION = "relaxation"


@dataclass(frozen=True)
class CheckpointRecord:
    """One checkpoint's layer-aggregated diagnostics."""

    step: int
    gamma_eff: float
    b0: float = float("nan")
    entropy: float = float("nan")
    ci: tuple[float, float] | None = None
    gamma_c: float | None = None
    layers_above_gamma_c: int | None = None


@dataclass(frozen=True, eq=False)
class PhaseReport:
    """Per-checkpoint phase labels plus the trajectory summary."""

    labels: tuple[Phase, ...]
    peak_index: int
    peak_step: int
    peak_value: float
    start_value: float
    final_value: float
    peak_to_final_ratio: float | None
    surge_detected: bool
    relaxation_detected: bool
    plateau_median: float | None


def _find_plateau(values: list[float], floor: float, band: float):
    """Longest contiguous run (>= 2 records) that stays within +-band of its
    own median and above the relaxation floor.  Ties go to the earliest run.
    Returns (start, end_exclusive, median) or None."""
    n = len(values)
    best = None
    for start in range(n):
        for end in range(start + 2, n + 1):
            run = values[start:end]
            if min(run) < floor:
                continue
            med = float(np.median(run))
            if all((1.0 - band) * med <= v <= (1.0 + band) * med for v in run):
                if best is None or (end - start) > (best[1] - best[0]):
                    best = (start, end, med)
    return best


def classify_phases(series, surge_ratio: float = DEFAULT_SURGE_RATIO,
                    relax_ratio: float = DEFAULT_RELAX_RATIO,
                    dormant_threshold: float = DEFAULT_DORMANT_THRESHOLD) -> PhaseReport:
    """Label each checkpoint of a gamma_eff series as dormant, surge,
    stabilization, or relaxation.

    The peak is the first maximum of the series.  Pre-peak records are
    dormant while gamma_eff stays at or below ``dormant_threshold`` and
    surge afterwards (provided the peak exceeds ``surge_ratio`` times the
    first non-dormant value).  Post-peak records belong to the
    stabilization plateau -- the longest run holding within the plateau
    band of its own median -- until the series falls below ``relax_ratio``
    times the peak (or below the plateau band), after which they are
    relaxation.  A post-peak decline with no plateau at all goes straight
    to relaxation, matching an early-relaxation trajectory cut short by the
    end of training.
    """
    records = list(series)
    if len(records) < 3:
        raise InvalidInputError(f"need at least 3 checkpoints to classify, got {len(records)}")
    steps = [int(r.step) for r in records]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise InvalidInputError("checkpoint steps must be strictly increasing")
    g = [float(r.gamma_eff) for r in records]
    n = len(g)

    peak_index = int(np.argmax(g))
    peak = g[peak_index]
    labels: list[Phase] = [Phase.STABILIZATION] * n
    plateau_median = None

    if peak <= dormant_threshold:
        labels = [Phase.DORMANT] * n
        surge_detected = False
        relaxation_detected = False
    else:
        first_active = next(v for v in g if v > dormant_threshold)
        surge_detected = peak > surge_ratio * first_active
        relax_floor = relax_ratio * peak
        relaxation_detected = g[-1] < relax_floor
        rising_label = Phase.SURGE if surge_detected else Phase.STABILIZATION

        for i in range(peak_index + 1):
            labels[i] = Phase.DORMANT if g[i] <= dormant_threshold else rising_label

        post = g[peak_index + 1:]
        plateau = _find_plateau(post, relax_floor, PLATEAU_BAND)
        if plateau is not None:
            _, _, med = plateau
            plateau_median = med
            low, high = (1.0 - PLATEAU_BAND) * med, (1.0 + PLATEAU_BAND) * med
            for j, v in enumerate(post):
                i = peak_index + 1 + j
                if v < relax_floor or v < low:
                    labels[i] = Phase.RELAXATION
                elif v <= high:
                    labels[i] = Phase.STABILIZATION
                else:
                    labels[i] = rising_label
        else:
            # No plateau: anything that has left the peak's neighbourhood is
            # already relaxing.
            for j, v in enumerate(post):
                i = peak_index + 1 + j
                labels[i] = (Phase.STABILIZATION if v >= (1.0 - PLATEAU_BAND) * peak
                             else Phase.RELAXATION)

    final = g[-1]
    return PhaseReport(
        labels=tuple(labels),
        peak_index=peak_index,
        peak_step=steps[peak_index],
        peak_value=peak,
        start_value=g[0],
        final_value=final,
        peak_to_final_ratio=(peak / final) if final > 0 else None,
        surge_detected=surge_detected,
        relaxation_detected=relaxation_detected,
        plateau_median=plateau_median,
    )


def phase_table(records, report: PhaseReport) -> str:
    """Delimiter-separated series table with phase labels."""
    lines = ["step\tgamma_eff\tci_low\tci_high\tb0\tentropy\tgamma_c\tphase"]
    for rec, label in zip(records, report.labels):
        ci_low = f"{rec.ci[0]:.6g}" if rec.ci else "-"
        ci_high = f"{rec.ci[1]:.6g}" if rec.ci else "-"
        gamma_c = f"{rec.gamma_c:.6g}" if rec.gamma_c is not None else "-"
        lines.append(f"{rec.step}\t{rec.gamma_eff:.6g}\t{ci_low}\t{ci_high}"
                     f"\t{rec.b0:.6g}\t{rec.entropy:.6g}\t{gamma_c}\t{label.value}")
    return "\n".join(lines) + "\n"
