"""Baseline predictors, held-out evaluation, clustering, bootstrap CIs, and
the checkpoint-series pipeline.

The evaluation protocol is a three-way batch-granular split: quality
vectors and scalar fits come from set A, token clusters from set B, and
every baseline is scored by L1 distance between its predicted load and the
observed load on held-out set C.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from ._optim import grid_then_golden
from .core import (
    GameParams,
    LoadDistribution,
    QualityVector,
    as_values,
    as_weights,
    entropy_normalized,
    l1_distance,
    quality_spread,
    softmax_array,
)
from .diagnostics import CheckpointRecord, PhaseReport, classify_phases, gamma_critical
from .equilibrium import MultiTypeSpec, solve_multitype, solve_single
from .errors import (
    DegenerateQualityError,
    InvalidInputError,
    NonConvergedError,
    PipelineFailedError,
)
from .identify import DEFAULT_GAMMA_MAX, SCOPE_THRESHOLD, FitResult, fit_gamma
from .traces import (
    ManifestEntry,
    RoutingTrace,
    SplitSpec,
    _token_index,
    dispatch_counts,
    estimate_quality,
    load_from_counts,
    observed_load,
    read_manifest,
    read_trace,
    split_three_way,
)

DEFAULT_T_MAX = 100.0
DEFAULT_T_MIN = 1e-3
T_SEARCH_TOL = 1e-4


class BaselineKind(str, Enum):
    UNIFORM = "uniform"
    TEMP_SOFTMAX = "temp_softmax"
    MFG_SINGLE = "mfg_single"
    MFG_MULTITYPE = "mfg_multitype"
    MIXTURE_SOFTMAX = "mixture_softmax"
    INDEP_CLUSTER_SOFTMAX = "indep_cluster_softmax"
    INDEP_CLUSTER_MFG = "indep_cluster_mfg"


# ---------------------------------------------------------------------------
# temperature fit
# ---------------------------------------------------------------------------

def fit_temperature(q, mu_obs, t_max: float = DEFAULT_T_MAX,
                    t_min: float = DEFAULT_T_MIN) -> float:
    """Temperature minimizing || softmax(q / T) - mu_obs ||_1 on [t_min, t_max].

    A log-spaced scan brackets the optimum before golden-section refinement,
    which keeps the fit robust when the objective is not perfectly unimodal.
    """
    qv = as_values(q)
    w = as_weights(mu_obs)
    if qv.shape != w.shape:
        raise InvalidInputError(f"quality has M={qv.size}, load has M={w.size}")
    if float(qv.max() - qv.min()) < 1e-9:
        raise DegenerateQualityError("quality vector is constant; temperature is unidentifiable")
    if not 0 < t_min < t_max:
        raise InvalidInputError(f"need 0 < t_min < t_max, got [{t_min}, {t_max}]")

    def objective(t: float) -> float:
        return float(np.abs(softmax_array(qv / t) - w).sum())

    t, _ = grid_then_golden(objective, t_min, t_max, n_grid=128, tol=T_SEARCH_TOL,
                            log_spacing=True)
    return t


def _fit_mixture_temperature(logits: np.ndarray, target: np.ndarray,
                             t_max: float, t_min: float = DEFAULT_T_MIN) -> float:
    """Shared temperature for the per-token softmax mixture, fitted on set A."""

    def objective(t: float) -> float:
        return float(np.abs(softmax_array(logits / t).mean(axis=0) - target).sum())

    t, _ = grid_then_golden(objective, t_min, t_max, n_grid=128, tol=T_SEARCH_TOL,
                            log_spacing=True)
    return t


# ---------------------------------------------------------------------------
# k-means token clustering
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ClusterModel:
    """k-means over per-token concatenated gate-logit vectors."""

    centroids: np.ndarray
    tokens: np.ndarray
    assignments: np.ndarray
    weights: np.ndarray
    inertia: float
    layers: tuple[int, ...]

    def assign(self, features: np.ndarray) -> np.ndarray:
        d2 = ((features[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)


def _kmeans_pp_seed(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centroids[i] = x[pick]
        d2 = np.minimum(d2, ((x - centroids[i]) ** 2).sum(axis=1))
    return centroids


def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator,
            max_iter: int = 300) -> tuple[np.ndarray, np.ndarray, float]:
    centroids = _kmeans_pp_seed(x, k, rng)
    labels = None
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        own = d2[np.arange(x.shape[0]), new_labels]
        for j in range(k):
            if not np.any(new_labels == j):
                far = int(np.argmax(own))
                centroids[j] = x[far]
                new_labels[far] = j
                own[far] = 0.0
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centroids[j] = x[labels == j].mean(axis=0)
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(x.shape[0]), labels].sum())
    return centroids, labels, inertia


def _token_features(trace: RoutingTrace, layers, token_index: np.ndarray) -> np.ndarray:
    layers = tuple(int(l) for l in layers)
    return trace.logits[token_index][:, layers, :].reshape(token_index.size, -1).astype(np.float64)


def cluster_tokens(trace: RoutingTrace, layers, token_set, k_types: int,
                   seed: int = 0) -> ClusterModel:
    """Deterministic k-means (k-means++ seeding) on gate-logit vectors.

    Empty clusters are re-seeded from the point farthest from its centroid.
    """
    idx = _token_index(trace, token_set)
    if k_types < 1:
        raise InvalidInputError(f"need at least one cluster, got {k_types}")
    if idx.size < k_types:
        raise InvalidInputError(f"{idx.size} tokens cannot form {k_types} clusters")
    x = _token_features(trace, layers, idx)
    rng = np.random.default_rng([seed, 23])
    centroids, labels, inertia = _kmeans(x, k_types, rng)
    weights = np.bincount(labels, minlength=k_types) / idx.size
    return ClusterModel(centroids=centroids, tokens=idx, assignments=labels,
                        weights=weights, inertia=inertia,
                        layers=tuple(int(l) for l in layers))


def elbow_report(trace: RoutingTrace, layers, token_set, k_list=(2, 4, 8),
                 seed: int = 0) -> list[tuple[int, float]]:
    """k-means inertia per candidate cluster count, for elbow inspection."""
    return [(k, cluster_tokens(trace, layers, token_set, k, seed).inertia)
            for k in k_list]


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PredictionContext:
    """Everything a baseline needs to predict one layer's held-out load."""

    m: int
    lam: float
    quality: QualityVector
    load: LoadDistribution
    gamma_fit: FitResult
    temperature: float
    cluster_qualities: np.ndarray | None = None
    cluster_weights: np.ndarray | None = None
    cluster_temperatures: np.ndarray | None = None
    cluster_gammas: np.ndarray | None = None
    mixture_logits: np.ndarray | None = None
    mixture_temperature: float | None = None


def _require(ctx_field, kind: BaselineKind):
    if ctx_field is None:
        raise InvalidInputError(f"baseline {kind.value} needs cluster/mixture context")
    return ctx_field


def predict(kind: BaselineKind, ctx: PredictionContext) -> LoadDistribution:
    """Predicted load distribution for one baseline at one layer."""
    kind = BaselineKind(kind)
    params = GameParams(gamma=ctx.gamma_fit.gamma_eff, lam=ctx.lam, m=ctx.m)
    if kind is BaselineKind.UNIFORM:
        return LoadDistribution.uniform(ctx.m)
    if kind is BaselineKind.TEMP_SOFTMAX:
        return LoadDistribution(softmax_array(ctx.quality.values / ctx.temperature))
    if kind is BaselineKind.MFG_SINGLE:
        return solve_single(ctx.quality, params).mu
    if kind is BaselineKind.MFG_MULTITYPE:
        qs = _require(ctx.cluster_qualities, kind)
        w = np.asarray(_require(ctx.cluster_weights, kind), dtype=np.float64)
        keep = w > 0.0
        spec = MultiTypeSpec(weights=w[keep] / w[keep].sum(),
                             qualities=tuple(QualityVector(qs[i]) for i in np.flatnonzero(keep)))
        return solve_multitype(spec, params).aggregate
    if kind is BaselineKind.MIXTURE_SOFTMAX:
        logits = _require(ctx.mixture_logits, kind)
        t = _require(ctx.mixture_temperature, kind)
        return LoadDistribution(softmax_array(logits / t).mean(axis=0))
    if kind is BaselineKind.INDEP_CLUSTER_SOFTMAX:
        qs = _require(ctx.cluster_qualities, kind)
        w = _require(ctx.cluster_weights, kind)
        ts = _require(ctx.cluster_temperatures, kind)
        mix = np.zeros(ctx.m)
        for wk, qk, tk in zip(w, qs, ts):
            if wk > 0:
                mix += wk * softmax_array(qk / tk)
        return LoadDistribution(mix / mix.sum())
    if kind is BaselineKind.INDEP_CLUSTER_MFG:
        qs = _require(ctx.cluster_qualities, kind)
        w = _require(ctx.cluster_weights, kind)
        gs = _require(ctx.cluster_gammas, kind)
        mix = np.zeros(ctx.m)
        for wk, qk, gk in zip(w, qs, gs):
            if wk > 0:
                sub = solve_single(qk, GameParams(gamma=float(gk), lam=ctx.lam, m=ctx.m))
                mix += wk * sub.mu.weights
        return LoadDistribution(mix / mix.sum())
    raise InvalidInputError(f"unknown baseline kind {kind!r}")


def heldout_l1(predicted, trace: RoutingTrace, layer: int, heldout_set,
               mode: str = "dispatch") -> float:
    """L1 distance between a prediction and the observed load on held-out tokens."""
    return l1_distance(predicted, observed_load(trace, layer, heldout_set, mode=mode))


# ---------------------------------------------------------------------------
# whole-trace evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    k_types: int = 4
    seed: int = 42
    gamma_max: float = DEFAULT_GAMMA_MAX
    t_max: float = DEFAULT_T_MAX
    quality_method: str = "mean"
    load_mode: str = "dispatch"
    fractions: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    layers: tuple[int, ...] | None = None
    baselines: tuple[BaselineKind, ...] = (
        BaselineKind.UNIFORM,
        BaselineKind.TEMP_SOFTMAX,
        BaselineKind.MFG_SINGLE,
        BaselineKind.MFG_MULTITYPE,
        BaselineKind.MIXTURE_SOFTMAX,
        BaselineKind.INDEP_CLUSTER_SOFTMAX,
        BaselineKind.INDEP_CLUSTER_MFG,
    )


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Held-out L1 per layer and baseline, with the headline comparisons."""

    layers: tuple[int, ...]
    errors: dict
    fits: tuple[FitResult, ...]
    improvements: tuple[float, ...]
    multitype_wins: int
    group_means: dict

    def mean_error(self, kind: BaselineKind) -> float:
        return float(np.mean(self.errors[BaselineKind(kind)]))

    def to_table(self) -> str:
        kinds = list(self.errors)
        header = "layer\t" + "\t".join(k.value for k in kinds) + "\timprovement_pct"
        lines = [header]
        for i, layer in enumerate(self.layers):
            cells = [f"{self.errors[k][i]:.4f}" for k in kinds]
            lines.append(f"{layer}\t" + "\t".join(cells) + f"\t{100 * self.improvements[i]:.1f}")
        for group, means in self.group_means.items():
            cells = [f"{means[k]:.4f}" for k in kinds]
            lines.append(f"{group}\t" + "\t".join(cells) + "\t-")
        return "\n".join(lines) + "\n"


def build_context(trace: RoutingTrace, layer: int, split: SplitSpec,
                  clusters: ClusterModel | None, config: EvalConfig) -> PredictionContext:
    """Fit every per-layer quantity the baselines need, using sets A and B only
    (cluster weights use held-out assignments, per the aggregate-load protocol)."""
    q_a = estimate_quality(trace, layer, split.a, method=config.quality_method)
    load_a = observed_load(trace, layer, split.a, mode=config.load_mode)
    gamma_fit = fit_gamma(load_a, q_a, lam=trace.lam, gamma_max=config.gamma_max)
    temperature = fit_temperature(q_a, load_a, t_max=config.t_max)

    logits_a = trace.logits[split.a, layer, :].astype(np.float64)
    mixture_t = _fit_mixture_temperature(logits_a, load_a.weights, t_max=config.t_max)
    mixture_logits = trace.logits[split.c, layer, :].astype(np.float64)

    cluster_qualities = cluster_weights = cluster_ts = cluster_gs = None
    if clusters is not None:
        k = clusters.centroids.shape[0]
        labels_a = clusters.assign(_token_features(trace, clusters.layers, split.a))
        labels_c = clusters.assign(_token_features(trace, clusters.layers, split.c))
        cluster_weights = np.bincount(labels_c, minlength=k) / max(labels_c.size, 1)
        cluster_qualities = np.empty((k, trace.m))
        cluster_ts = np.empty(k)
        cluster_gs = np.empty(k)
        for j in range(k):
            members = split.a[labels_a == j]
            if members.size < 2:
                cluster_qualities[j] = q_a.values
                cluster_ts[j] = temperature
                cluster_gs[j] = gamma_fit.gamma_eff
                continue
            q_j = estimate_quality(trace, layer, members, method=config.quality_method)
            load_j = observed_load(trace, layer, members, mode=config.load_mode)
            cluster_qualities[j] = q_j.values
            try:
                cluster_ts[j] = fit_temperature(q_j, load_j, t_max=config.t_max)
                cluster_gs[j] = fit_gamma(load_j, q_j, lam=trace.lam,
                                          gamma_max=config.gamma_max).gamma_eff
            except DegenerateQualityError:
                cluster_ts[j] = temperature
                cluster_gs[j] = gamma_fit.gamma_eff

    return PredictionContext(
        m=trace.m, lam=trace.lam, quality=q_a, load=load_a,
        gamma_fit=gamma_fit, temperature=temperature,
        cluster_qualities=cluster_qualities, cluster_weights=cluster_weights,
        cluster_temperatures=cluster_ts, cluster_gammas=cluster_gs,
        mixture_logits=mixture_logits, mixture_temperature=mixture_t,
    )


def evaluate_trace(trace: RoutingTrace, config: EvalConfig = EvalConfig()) -> EvalReport:
    """Run the full baseline comparison on one trace."""
    layers = config.layers if config.layers is not None else tuple(range(trace.l))
    split = split_three_way(trace, config.fractions, seed=config.seed)
    if split.a.size == 0 or split.c.size == 0:
        raise InvalidInputError("evaluation needs nonempty fitting and held-out sets")
    needs_clusters = any(k in (BaselineKind.MFG_MULTITYPE, BaselineKind.INDEP_CLUSTER_SOFTMAX,
                               BaselineKind.INDEP_CLUSTER_MFG) for k in config.baselines)
    clusters = None
    if needs_clusters:
        if split.b.size < config.k_types:
            raise InvalidInputError("clustering set is smaller than the cluster count")
        clusters = cluster_tokens(trace, layers, split.b, config.k_types, seed=config.seed)

    errors: dict[BaselineKind, list[float]] = {k: [] for k in config.baselines}
    fits = []
    for layer in layers:
        ctx = build_context(trace, layer, split, clusters, config)
        fits.append(ctx.gamma_fit)
        observed_c = observed_load(trace, layer, split.c, mode=config.load_mode)
        for kind in config.baselines:
            pred = predict(kind, ctx)
            errors[kind].append(float(np.abs(pred.weights - observed_c.weights).sum()))

    improvements = []
    wins = 0
    if BaselineKind.MFG_SINGLE in errors and BaselineKind.MFG_MULTITYPE in errors:
        for single, multi in zip(errors[BaselineKind.MFG_SINGLE],
                                 errors[BaselineKind.MFG_MULTITYPE]):
            improvements.append((single - multi) / single if single > 0 else 0.0)
            wins += multi < single
    else:
        improvements = [0.0] * len(layers)

    half = len(layers) // 2
    groups = {"all": slice(None)}
    if half >= 1 and len(layers) >= 2:
        groups["early"] = slice(0, half)
        groups["late"] = slice(half, None)
    group_means = {
        name: {k: float(np.mean(np.asarray(v)[sel])) for k, v in errors.items()}
        for name, sel in groups.items()
    }
    return EvalReport(
        layers=tuple(layers),
        errors={k: tuple(v) for k, v in errors.items()},
        fits=tuple(fits),
        improvements=tuple(improvements),
        multitype_wins=wins,
        group_means=group_means,
    )


# ---------------------------------------------------------------------------
# bootstrap
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BootstrapCI:
    point: float
    low: float
    high: float
    n_boot: int
    level: float = 0.95


def bootstrap_ci(items, statistic, n_boot: int = 1000, level: float = 0.95,
                 seed: int = 0) -> BootstrapCI:
    """Percentile bootstrap over batch-level items.

    ``statistic`` maps a list of items (a resample of the batches, drawn
    with replacement) to a scalar.  Deterministic for a fixed seed.
    """
    items = list(items)
    if len(items) < 2:
        raise InvalidInputError(f"bootstrap needs at least 2 batches, got {len(items)}")
    if not 0 < level < 1:
        raise InvalidInputError(f"level must be in (0, 1), got {level}")
    if n_boot < 1:
        raise InvalidInputError(f"n_boot must be >= 1, got {n_boot}")
    point = float(statistic(items))
    rng = np.random.default_rng(seed)
    n = len(items)
    stats = np.empty(n_boot)
    for b in range(n_boot):
        pick = rng.integers(0, n, size=n)
        stats[b] = statistic([items[i] for i in pick])
    tail = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(stats, [tail, 100.0 - tail])
    return BootstrapCI(point=point, low=float(low), high=float(high),
                       n_boot=n_boot, level=level)


# ---------------------------------------------------------------------------
# checkpoint-series pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeriesConfig:
    quality_method: str = "mean"
    load_mode: str = "dispatch"
    gamma_max: float = DEFAULT_GAMMA_MAX
    scope_threshold: float = SCOPE_THRESHOLD
    bootstrap_samples: int = 0
    level: float = 0.95
    seed: int = 42
    # attach a held-out baseline comparison to every checkpoint
    evaluate_baselines: bool = False
    eval_k_types: int = 4


@dataclass(frozen=True, eq=False)
class CheckpointAnalysis:
    entry: ManifestEntry
    record: CheckpointRecord | None
    layer_fits: tuple[FitResult, ...] = ()
    eval_report: "EvalReport | None" = None
    error: str | None = None


@dataclass(frozen=True, eq=False)
class SeriesResult:
    checkpoints: tuple[CheckpointAnalysis, ...]
    phase_report: PhaseReport | None

    @property
    def records(self) -> list[CheckpointRecord]:
        return [c.record for c in self.checkpoints if c.record is not None]

    @property
    def errors(self) -> list[tuple[int, str]]:
        return [(c.entry.step, c.error) for c in self.checkpoints if c.error is not None]


def _layer_average_gamma(gammas, threshold: float) -> float:
    in_scope = [g for g in gammas if g > threshold]
    return float(np.mean(in_scope)) if in_scope else 0.0


def analyze_checkpoint(trace: RoutingTrace, alpha: float | None,
                       config: SeriesConfig = SeriesConfig()) -> tuple[CheckpointRecord, tuple[FitResult, ...]]:
    """Layer-aggregated diagnostics for a single checkpoint trace.

    Quality and load come from the full token set (the dynamics protocol;
    the split protocol lives in ``evaluate_trace``).  The layer-average
    gamma_eff covers in-scope layers only (per-layer fit above the scope
    threshold); B0 and entropy average over all layers.
    """
    tokens = trace.all_tokens()
    effective_alpha = trace.alpha if alpha is None else alpha
    fits = []
    gammas = []
    spreads = []
    entropies = []
    above = 0
    batch_counts = []
    for layer in range(trace.l):
        q = estimate_quality(trace, layer, tokens, method=config.quality_method)
        counts = np.stack([dispatch_counts(trace, layer, trace.batch_tokens(b))
                           for b in range(trace.n_batches)])
        batch_counts.append(counts)
        if config.load_mode == "dispatch":
            load, _ = load_from_counts(counts.sum(axis=0))
        else:
            load = observed_load(trace, layer, tokens, mode=config.load_mode)
        fit = fit_gamma(load, q, lam=trace.lam, gamma_max=config.gamma_max,
                        alpha=effective_alpha or 0.0)
        fits.append(fit)
        gammas.append(fit.gamma_eff)
        spreads.append(quality_spread(q))
        entropies.append(entropy_normalized(load))
        if fit.gamma_eff > gamma_critical(trace.m, quality_spread(q)):
            above += 1

    gamma_eff = _layer_average_gamma(gammas, config.scope_threshold)
    b0 = float(np.mean(spreads))
    record = CheckpointRecord(
        step=0, gamma_eff=gamma_eff, b0=b0, entropy=float(np.mean(entropies)),
        gamma_c=gamma_critical(trace.m, b0), layers_above_gamma_c=above,
    )
    if config.bootstrap_samples > 0 and trace.n_batches >= 2:
        qualities = [estimate_quality(trace, layer, tokens, method=config.quality_method)
                     for layer in range(trace.l)]

        def stat(batches):
            per_layer = []
            for layer in range(trace.l):
                summed = np.sum([b[layer] for b in batches], axis=0)
                load, _ = load_from_counts(summed)
                per_layer.append(fit_gamma(load, qualities[layer], lam=trace.lam,
                                           gamma_max=config.gamma_max).gamma_eff)
            return _layer_average_gamma(per_layer, config.scope_threshold)

        items = [np.stack([batch_counts[layer][b] for layer in range(trace.l)])
                 for b in range(trace.n_batches)]
        ci = bootstrap_ci(items, stat, n_boot=config.bootstrap_samples,
                          level=config.level, seed=config.seed)
        record = replace(record, ci=(ci.low, ci.high))
    return record, tuple(fits)


def analyze_series(manifest, config: SeriesConfig = SeriesConfig(),
                   base_dir=None) -> SeriesResult:
    """Run the checkpoint pipeline over a manifest (path or entry list).

    Per-checkpoint failures are recorded and the series continues; if every
    checkpoint fails the pipeline raises.  Phase labels are attached when
    at least three checkpoints succeed.
    """
    if isinstance(manifest, (str, Path)):
        entries = read_manifest(manifest)
        if base_dir is None:
            base_dir = Path(manifest).parent
    else:
        entries = sorted(manifest, key=lambda e: e.step)
    base_dir = Path(base_dir) if base_dir is not None else Path(".")

    analyses = []
    for entry in entries:
        path = Path(entry.path)
        if not path.is_absolute():
            path = base_dir / path
        try:
            trace = read_trace(path)
            if trace.m != entry.m or trace.k != entry.k or trace.t != entry.token_count:
                raise InvalidInputError(
                    f"manifest says (T={entry.token_count}, M={entry.m}, K={entry.k}) but trace "
                    f"has (T={trace.t}, M={trace.m}, K={trace.k})")
            record, fits = analyze_checkpoint(trace, entry.alpha, config)
            record = replace(record, step=entry.step)
            eval_report = None
            if config.evaluate_baselines:
                eval_report = evaluate_trace(trace, EvalConfig(
                    k_types=config.eval_k_types, seed=config.seed,
                    gamma_max=config.gamma_max, quality_method=config.quality_method,
                    load_mode=config.load_mode))
            analyses.append(CheckpointAnalysis(entry=entry, record=record,
                                               layer_fits=fits, eval_report=eval_report))
        except (OSError, ValueError, NonConvergedError) as exc:
            analyses.append(CheckpointAnalysis(entry=entry, record=None, error=str(exc)))
    good = [a for a in analyses if a.record is not None]
    if not good:
        raise PipelineFailedError("every checkpoint in the series failed")
    phase_report = classify_phases([a.record for a in good]) if len(good) >= 3 else None
    return SeriesResult(checkpoints=tuple(analyses), phase_report=phase_report)


def plot_data(records, report: PhaseReport | None) -> str:
    """Structured plot rows: step, gamma_eff, ci bounds, B0, H, phase."""
    lines = ["step\tgamma_eff\tci_low\tci_high\tb0\tentropy\tphase"]
    labels = report.labels if report is not None else [None] * len(records)
    for rec, label in zip(records, labels):
        ci_low = f"{rec.ci[0]:.6g}" if rec.ci else "-"
        ci_high = f"{rec.ci[1]:.6g}" if rec.ci else "-"
        phase = label.value if label is not None else "-"
        lines.append(f"{rec.step}\t{rec.gamma_eff:.6g}\t{ci_low}\t{ci_high}"
                     f"\t{rec.b0:.6g}\t{rec.entropy:.6g}\t{phase}")
    return "\n".join(lines) + "\n"
