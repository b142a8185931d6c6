"""Command-line front end.

Subcommands: fit, dynamics, diagnose, synth, eval, trace-info, trace-gen.
All stochastic behaviour is controlled by --seed (default 42), so repeated
invocations produce byte-identical output.  Tables are tab-separated with a
header row; --json emits structured records instead.  Output files are
written to a temporary file and renamed into place, so a failing run never
leaves a partial file behind.  MOE_CONGESTION_THREADS caps the per-layer
worker pool (default: no parallelism).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics, evaluate, identify, synthgen, traces
from .core import entropy_normalized, quality_spread
from .diagnostics import CheckpointRecord
from .errors import InvalidInputError, NonConvergedError, PipelineFailedError, TraceFormatError


def _worker_count() -> int:
    raw = os.environ.get("MOE_CONGESTION_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _parallel_map(fn, items):
    items = list(items)
    workers = _worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_layers(spec: str | None, n_layers: int) -> list[int]:
    if spec is None:
        return list(range(n_layers))
    out: list[int] = []
    for part in spec.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    bad = [l for l in out if not 0 <= l < n_layers]
    if bad:
        raise InvalidInputError(f"layer selector out of range [0, {n_layers}): {bad}")
    return sorted(set(out))


def _json_dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _fit_layer(trace, layer, alpha, gamma_max, bootstrap, level, seed):
    tokens = trace.all_tokens()
    q = traces.estimate_quality(trace, layer, tokens)
    counts = np.stack([traces.dispatch_counts(trace, layer, trace.batch_tokens(b))
                       for b in range(trace.n_batches)])
    load, floored = traces.load_from_counts(counts.sum(axis=0))
    fit = identify.fit_gamma(load, q, lam=trace.lam, gamma_max=gamma_max, alpha=alpha)
    if bootstrap > 0 and trace.n_batches >= 2:
        def stat(batches):
            resampled, _ = traces.load_from_counts(np.sum(batches, axis=0))
            return identify.fit_gamma(resampled, q, lam=trace.lam,
                                      gamma_max=gamma_max).gamma_eff
        ci = evaluate.bootstrap_ci(list(counts), stat, n_boot=bootstrap,
                                   level=level, seed=seed + layer)
        fit = fit.with_ci(ci.low, ci.high)
    return fit, quality_spread(q), floored


def cmd_fit(args) -> int:
    trace = traces.read_trace(args.trace)
    layers = _parse_layers(args.layers, trace.l)
    alpha = args.alpha if args.alpha is not None else (trace.alpha or 0.0)
    rows = _parallel_map(
        lambda l: _fit_layer(trace, l, alpha, args.gamma_max, args.bootstrap,
                             args.level, args.seed),
        layers)
    if args.json:
        payload = []
        for layer, (fit, b0, floored) in zip(layers, rows):
            payload.append({
                "layer": layer, "gamma_eff": fit.gamma_eff, "residual": fit.residual,
                "gamma_explicit": fit.gamma_explicit, "gamma_implicit": fit.gamma_implicit,
                "boundary": fit.boundary_flag.value, "in_scope": fit.in_scope,
                "ci_low": fit.ci_low, "ci_high": fit.ci_high, "b0": b0,
                "load_floored": floored,
            })
        _emit(_json_dump(payload), args.out)
        return 0
    lines = ["layer\tgamma_eff\tresidual\tgamma_explicit\tgamma_implicit"
             "\tboundary\tin_scope\tci_low\tci_high\tb0\tfloored"]
    for layer, (fit, b0, floored) in zip(layers, rows):
        ci_low = f"{fit.ci_low:.6g}" if fit.ci_low is not None else "-"
        ci_high = f"{fit.ci_high:.6g}" if fit.ci_high is not None else "-"
        lines.append(
            f"{layer}\t{fit.gamma_eff:.6g}\t{fit.residual:.6g}\t{fit.gamma_explicit:.6g}"
            f"\t{fit.gamma_implicit:.6g}\t{fit.boundary_flag.value}\t{int(fit.in_scope)}"
            f"\t{ci_low}\t{ci_high}\t{b0:.6g}\t{int(floored)}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def _read_precomputed(path) -> list[CheckpointRecord]:
    records = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("step"):
            continue
        fields = line.split()
        if len(fields) < 2:
            raise InvalidInputError(f"{path}:{ln}: expected 'step gamma_eff [b0 [entropy]]'")
        step, gamma = int(fields[0]), float(fields[1])
        b0 = float(fields[2]) if len(fields) > 2 else float("nan")
        entropy = float(fields[3]) if len(fields) > 3 else float("nan")
        records.append(CheckpointRecord(step=step, gamma_eff=gamma, b0=b0, entropy=entropy))
    if not records:
        raise InvalidInputError(f"no records in {path}")
    return records


def cmd_dynamics(args) -> int:
    if args.precomputed:
        records = _read_precomputed(args.precomputed)
        report = diagnostics.classify_phases(records) if len(records) >= 3 else None
        errors = []
        eval_blocks = []
    else:
        config = evaluate.SeriesConfig(bootstrap_samples=args.bootstrap, seed=args.seed,
                                       gamma_max=args.gamma_max,
                                       evaluate_baselines=args.eval,
                                       eval_k_types=args.clusters)
        result = evaluate.analyze_series(args.manifest, config)
        records = result.records
        report = result.phase_report
        errors = result.errors
        eval_blocks = [(a.entry.step, a.eval_report) for a in result.checkpoints
                       if a.eval_report is not None]
    if args.plot_data:
        _emit(evaluate.plot_data(records, report), args.plot_data)
    if args.json:
        payload = {
            "records": [{
                "step": r.step, "gamma_eff": r.gamma_eff, "b0": r.b0, "entropy": r.entropy,
                "gamma_c": r.gamma_c, "ci": r.ci,
                "layers_above_gamma_c": r.layers_above_gamma_c,
            } for r in records],
            "phases": [l.value for l in report.labels] if report else None,
            "summary": None if report is None else {
                "peak_step": report.peak_step, "peak_value": report.peak_value,
                "start_value": report.start_value, "final_value": report.final_value,
                "peak_to_final_ratio": report.peak_to_final_ratio,
                "surge_detected": report.surge_detected,
                "relaxation_detected": report.relaxation_detected,
            },
            "errors": [{"step": s, "message": m} for s, m in errors],
        }
        _emit(_json_dump(payload), args.out)
        return 0
    parts = []
    if report is not None:
        parts.append(diagnostics.phase_table(records, report))
        ratio = "-" if report.peak_to_final_ratio is None else f"{report.peak_to_final_ratio:.2f}"
        parts.append(
            f"# peak step {report.peak_step}, peak {report.peak_value:.4g}, "
            f"final {report.final_value:.4g}, peak/final {ratio}, "
            f"surge_detected={report.surge_detected}, "
            f"relaxation_detected={report.relaxation_detected}\n")
    else:
        parts.append(evaluate.plot_data(records, None))
        parts.append("# series too short for phase classification\n")
    for step, message in errors:
        parts.append(f"# checkpoint {step} failed: {message}\n")
    if not args.precomputed:
        for step, block in eval_blocks:
            parts.append(f"# held-out baselines, checkpoint {step}\n")
            parts.append(block.to_table())
    _emit("".join(parts), args.out)
    return 0


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------

def cmd_diagnose(args) -> int:
    trace = traces.read_trace(args.trace)
    layers = _parse_layers(args.layers, trace.l)
    tokens = trace.all_tokens()
    rows = []
    for layer in layers:
        q = traces.estimate_quality(trace, layer, tokens)
        load = traces.observed_load(trace, layer, tokens)
        fit = identify.fit_gamma(load, q, lam=trace.lam, gamma_max=args.gamma_max)
        b0 = quality_spread(q)
        gamma_c = diagnostics.gamma_critical(trace.m, b0)
        rho = diagnostics.contraction_rate(fit.gamma_eff, trace.lam)
        rho_eff = diagnostics.contraction_rate_effective(fit.gamma_eff, trace.lam, load)
        bound = diagnostics.topk_error_bound(trace.k, trace.m, rho_eff)
        eps = None
        if layer < trace.l - 1:
            eps = diagnostics.continuation_spread(trace, layer)
        rows.append({
            "layer": layer, "gamma_eff": fit.gamma_eff, "b0": b0, "gamma_c": gamma_c,
            "margin": fit.gamma_eff / gamma_c if gamma_c > 0 else None,
            "rho": rho, "rho_eff": rho_eff, "k_over_m": trace.k / trace.m,
            "topk_bound": bound,
            "entropy": entropy_normalized(load),
            "epsilon_next": None if eps is None else eps.value,
            "epsilon_degenerate": None if eps is None else eps.degenerate,
        })
    if args.json:
        _emit(_json_dump(rows), args.out)
        return 0
    header = ("layer\tgamma_eff\tb0\tgamma_c\tmargin\trho\trho_eff\tk_over_m"
              "\ttopk_bound\tentropy\tepsilon_next")
    lines = [header]
    for r in rows:
        margin = f"{r['margin']:.4g}" if r["margin"] is not None else "-"
        bound = "vacuous" if r["topk_bound"] is None else f"{r['topk_bound']:.4g}"
        eps = "-" if r["epsilon_next"] is None else f"{r['epsilon_next']:.4g}"
        lines.append(
            f"{r['layer']}\t{r['gamma_eff']:.6g}\t{r['b0']:.4g}\t{r['gamma_c']:.4g}"
            f"\t{margin}\t{r['rho']:.4g}\t{r['rho_eff']:.4g}\t{r['k_over_m']:.4g}"
            f"\t{bound}\t{r['entropy']:.4g}\t{eps}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    gammas = [float(g) for g in args.gammas.split(",")]
    report = identify.synthetic_recovery(
        gammas, sigma_q=args.sigma_q, trials=args.trials, m=args.experts,
        b0_target=args.spread, seed=args.seed, gamma_max=args.gamma_max)
    if args.json:
        payload = {
            "sigma_q": report.sigma_q, "median_error": report.median_error,
            "mean_error": report.mean_error, "failures": report.failures,
            "trials": [{"true_gamma": t.true_gamma, "recovered_gamma": t.recovered_gamma,
                        "rel_error": t.rel_error} for t in report.trials],
        }
        _emit(_json_dump(payload), args.out)
        return 0
    text = (f"# sigma_q={report.sigma_q:.6g} median_rel_error={report.median_error:.6g} "
            f"mean_rel_error={report.mean_error:.6g} failures={report.failures}\n")
    _emit(text + report.to_table(), args.out)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    trace = traces.read_trace(args.trace)
    if trace.n_batches < 3:
        raise InvalidInputError(f"eval needs at least 3 batches, got {trace.n_batches}")
    config = evaluate.EvalConfig(k_types=args.clusters, seed=args.seed,
                                 gamma_max=args.gamma_max)
    report = evaluate.evaluate_trace(trace, config)
    extra = ""
    if args.elbow:
        split = traces.split_three_way(trace, config.fractions, seed=config.seed)
        pairs = evaluate.elbow_report(trace, range(trace.l), split.b, seed=config.seed)
        extra = "".join(f"# elbow k={k} inertia={v:.6g}\n" for k, v in pairs)
    if args.json:
        payload = {
            "layers": list(report.layers),
            "errors": {k.value: list(v) for k, v in report.errors.items()},
            "improvement_pct": [100 * x for x in report.improvements],
            "multitype_wins": report.multitype_wins,
            "group_means": {g: {k.value: v for k, v in means.items()}
                            for g, means in report.group_means.items()},
        }
        _emit(_json_dump(payload), args.out)
        return 0
    _emit(extra + report.to_table(), args.out)
    return 0


# ---------------------------------------------------------------------------
# trace utilities
# ---------------------------------------------------------------------------

def cmd_trace_info(args) -> int:
    trace = traces.read_trace(args.trace)
    alpha = "-" if trace.alpha is None else f"{trace.alpha:.6g}"
    lines = [
        f"tokens\t{trace.t}",
        f"layers\t{trace.l}",
        f"experts\t{trace.m}",
        f"top_k\t{trace.k}",
        f"lambda\t{trace.lam:.6g}",
        f"alpha\t{alpha}",
        f"batches\t{trace.n_batches}",
    ]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_trace_gen(args) -> int:
    gammas = [float(g) for g in args.gamma.split(",")]
    gamma_arg = gammas[0] if len(gammas) == 1 else gammas
    if args.multitype > 1:
        if len(gammas) != 1:
            raise InvalidInputError("multitype generation takes a single gamma")
        synth = synthgen.generate_multitype_trace(
            m=args.experts, n_layers=args.layers, k=args.top_k, tokens=args.tokens,
            n_batches=args.batches, gamma=gammas[0], n_types=args.multitype,
            spread=args.spread, type_offset=args.type_offset, lam=args.lam,
            alpha=args.alpha, seed=args.seed, jitter=args.jitter)
    else:
        synth = synthgen.generate_trace(
            m=args.experts, n_layers=args.layers, k=args.top_k, tokens=args.tokens,
            n_batches=args.batches, gamma=gamma_arg, spread=args.spread, lam=args.lam,
            alpha=args.alpha, seed=args.seed, jitter=args.jitter)
    traces.write_trace(synth.trace, args.out)
    planted = ",".join(f"{p.gamma:.6g}" for p in synth.layers)
    sys.stdout.write(f"wrote {args.out} (T={synth.trace.t}, L={synth.trace.l}, "
                     f"M={synth.trace.m}, K={synth.trace.k}, planted gamma={planted})\n")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p, out: bool = True):
    p.add_argument("--seed", type=int, default=42, help="seed for all stochastic steps")
    p.add_argument("--gamma-max", type=float, default=identify.DEFAULT_GAMMA_MAX)
    p.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    if out:
        p.add_argument("--out", default=None, help="write output to this file atomically")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moe-congestion",
        description="Congestion-game analysis of MoE routing traces")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit per-layer effective congestion from a trace")
    p.add_argument("trace")
    p.add_argument("--layers", default=None, help="layer selector, e.g. 0-7 or 0,3,5")
    p.add_argument("--alpha", type=float, default=None,
                   help="auxiliary-loss coefficient (defaults to the trace metadata)")
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap resamples for CIs")
    p.add_argument("--level", type=float, default=0.95)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("dynamics", help="analyze a checkpoint series and label phases")
    p.add_argument("manifest", nargs="?", default=None)
    p.add_argument("--precomputed", default=None,
                   help="TSV of 'step gamma_eff [b0 [entropy]]' rows, bypassing traces")
    p.add_argument("--bootstrap", type=int, default=0)
    p.add_argument("--eval", action="store_true",
                   help="attach a held-out baseline comparison per checkpoint")
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--plot-data", default=None, help="also write plot rows to this file")
    _add_common(p)
    p.set_defaults(func=cmd_dynamics)

    p = sub.add_parser("diagnose", help="per-layer scope diagnostics for a trace")
    p.add_argument("trace")
    p.add_argument("--layers", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("synth", help="synthetic gamma recovery experiment")
    p.add_argument("--gammas", default="5,10,15,20,30,40")
    p.add_argument("--sigma-q", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=50, help="trials per gamma value")
    p.add_argument("--experts", type=int, default=64)
    p.add_argument("--spread", type=float, default=2.5)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="baseline comparison with held-out L1")
    p.add_argument("trace")
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--elbow", action="store_true", help="report k-means inertia for k=2,4,8")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("trace-info", help="print trace header metadata")
    p.add_argument("trace")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_trace_info)

    p = sub.add_parser("trace-gen", help="generate a synthetic trace with planted structure")
    p.add_argument("--out", required=True)
    p.add_argument("--experts", type=int, default=64)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--top-k", type=int, default=8)
    p.add_argument("--tokens", type=int, default=2048)
    p.add_argument("--batches", type=int, default=50)
    p.add_argument("--gamma", default="8.5", help="scalar or comma-separated per layer")
    p.add_argument("--spread", type=float, default=2.5)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--multitype", type=int, default=1, help="number of planted token types")
    p.add_argument("--type-offset", type=float, default=25.0)
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_trace_gen)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "dynamics" and not args.manifest and not args.precomputed:
        parser.error("dynamics needs a manifest or --precomputed")
    try:
        return args.func(args)
    except (InvalidInputError, TraceFormatError, NonConvergedError,
            PipelineFailedError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
