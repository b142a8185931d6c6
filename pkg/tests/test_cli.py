import json

import numpy as np
import pytest

from moe_congestion.cli import main
from moe_congestion.synthgen import generate_trace
from moe_congestion.traces import RoutingTrace, write_trace


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def gen_trace_file(tmp_path, name="t.moer", **kwargs):
    defaults = dict(m=64, n_layers=2, k=8, tokens=1500, n_batches=12,
                    gamma=10.0, spread=2.5, seed=0)
    defaults.update(kwargs)
    synth = generate_trace(**defaults)
    path = tmp_path / name
    write_trace(synth.trace, path)
    return path, synth


class TestFit:
    def test_recovers_planted_gamma(self, tmp_path, capsys):
        path, _ = gen_trace_file(tmp_path)
        code, out, _ = run(capsys, "fit", str(path))
        assert code == 0
        lines = out.strip().split("\n")
        assert lines[0].startswith("layer\tgamma_eff")
        for row in lines[1:]:
            gamma = float(row.split("\t")[1])
            assert gamma == pytest.approx(10.0, rel=0.05)

    def test_alpha_decomposition_column(self, tmp_path, capsys):
        path, _ = gen_trace_file(tmp_path)
        code, out, _ = run(capsys, "fit", str(path), "--alpha", "0.01", "--json")
        assert code == 0
        rows = json.loads(out)
        for row in rows:
            assert row["gamma_explicit"] == pytest.approx(0.64)
            assert row["gamma_implicit"] == pytest.approx(row["gamma_eff"] - 0.64)

    def test_constant_trace_degenerate(self, tmp_path, capsys):
        logits = np.zeros((40, 1, 4), dtype=np.float32)
        trace = RoutingTrace(m=4, l=1, k=2, logits=logits, batch_boundaries=[0, 40])
        path = tmp_path / "flat.moer"
        write_trace(trace, path)
        code, _, err = run(capsys, "fit", str(path))
        assert code == 1
        assert "constant" in err

    def test_parse_failure_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "junk.moer"
        bad.write_bytes(b"not a trace")
        code, _, err = run(capsys, "fit", str(bad))
        assert code == 1
        assert "magic" in err

    def test_deterministic_output_files(self, tmp_path, capsys):
        path, _ = gen_trace_file(tmp_path)
        out1 = tmp_path / "a.tsv"
        out2 = tmp_path / "b.tsv"
        assert run(capsys, "fit", str(path), "--bootstrap", "30", "--out", str(out1))[0] == 0
        assert run(capsys, "fit", str(path), "--bootstrap", "30", "--out", str(out2))[0] == 0
        assert out1.read_bytes() == out2.read_bytes()


class TestDynamics:
    def test_precomputed_olmoe_series(self, tmp_path, capsys):
        rows = [
            (5000, 13.7), (10000, 11.4), (15000, 23.0), (20000, 31.4), (25000, 31.5),
            (30000, 36.4), (35000, 36.0), (40000, 38.8), (45000, 37.7), (50000, 32.7),
            (100000, 27.2), (200000, 24.3), (300000, 28.0), (400000, 26.6),
            (500000, 22.2), (600000, 21.7), (750000, 15.9), (900000, 13.5),
            (1220000, 10.2), (1250000, 8.5),
        ]
        pre = tmp_path / "series.tsv"
        pre.write_text("\n".join(f"{s} {g}" for s, g in rows) + "\n")
        code, out, _ = run(capsys, "dynamics", "--precomputed", str(pre), "--json")
        assert code == 0
        payload = json.loads(out)
        assert payload["summary"]["surge_detected"] is True
        assert payload["summary"]["relaxation_detected"] is True
        assert payload["summary"]["peak_to_final_ratio"] >= 4.2
        assert payload["phases"][:10] == ["surge"] * 10

    def test_manifest_pipeline(self, tmp_path, capsys):
        from moe_congestion.traces import ManifestEntry, write_manifest

        entries = []
        for i, g in enumerate([5.0, 20.0, 8.0]):
            path, _ = gen_trace_file(tmp_path, name=f"c{i}.moer", gamma=g,
                                     m=16, k=4, tokens=800, n_batches=8, seed=i)
            entries.append(ManifestEntry(step=(i + 1) * 100, token_count=800,
                                         path=path.name, alpha=None, m=16, k=4))
        manifest = tmp_path / "m.manifest"
        write_manifest(entries, manifest)
        plot = tmp_path / "plot.tsv"
        code, out, _ = run(capsys, "dynamics", str(manifest), "--plot-data", str(plot))
        assert code == 0
        assert "peak step 200" in out
        assert plot.exists()
        assert plot.read_text().splitlines()[0].startswith("step\t")

    def test_requires_source(self, capsys):
        with pytest.raises(SystemExit):
            main(["dynamics"])


class TestDiagnose:
    def test_columns_and_vacuous_marker(self, tmp_path, capsys):
        path, _ = gen_trace_file(tmp_path, gamma=30.0, tokens=2000)
        code, out, _ = run(capsys, "diagnose", str(path))
        assert code == 0
        header = out.strip().split("\n")[0].split("\t")
        assert header[:4] == ["layer", "gamma_eff", "b0", "gamma_c"]
        # gamma 30 at near-uniform loads has rho_eff > 1: bound column flags it
        assert "vacuous" in out

    def test_k_equals_m_bound_zero(self, tmp_path, capsys):
        # K = M dispatches every token everywhere, so the truncation gap is 0
        rng = np.random.default_rng(2)
        logits = rng.standard_normal((400, 1, 8)).astype(np.float32)
        trace = RoutingTrace(m=8, l=1, k=8, logits=logits, batch_boundaries=[0, 400])
        path = tmp_path / "km.moer"
        write_trace(trace, path)
        code, out, _ = run(capsys, "diagnose", str(path), "--json")
        rows = json.loads(out)
        assert code == 0
        assert rows[0]["topk_bound"] == 0.0

    def test_safety_margin_fixture(self, tmp_path, capsys):
        # converged OLMoE shape: gamma 8.5, B0 2.24 -> margin ~3.7x
        path, _ = gen_trace_file(tmp_path, gamma=8.5, spread=2.24, tokens=3000,
                                 n_batches=10, seed=4)
        code, out, _ = run(capsys, "diagnose", str(path), "--json")
        rows = json.loads(out)
        for row in rows:
            assert row["margin"] == pytest.approx(3.7, abs=0.3)


class TestSynth:
    def test_small_run(self, capsys):
        code, out, _ = run(capsys, "synth", "--gammas", "5,10", "--trials", "2",
                           "--experts", "8", "--sigma-q", "0.0", "--seed", "1")
        assert code == 0
        assert out.startswith("# sigma_q=0")
        assert "true_gamma\trecovered_gamma\trel_error" in out

    def test_json(self, capsys):
        code, out, _ = run(capsys, "synth", "--gammas", "5", "--trials", "2",
                           "--experts", "8", "--json")
        payload = json.loads(out)
        assert code == 0
        assert len(payload["trials"]) == 2


class TestEval:
    def test_single_cluster_equals_single_type(self, tmp_path, capsys):
        path, _ = gen_trace_file(tmp_path, m=16, k=4, tokens=900, n_batches=9)
        code, out, _ = run(capsys, "eval", str(path), "--clusters", "1", "--json")
        assert code == 0
        payload = json.loads(out)
        single = payload["errors"]["mfg_single"]
        multi = payload["errors"]["mfg_multitype"]
        for s, m in zip(single, multi):
            assert s == pytest.approx(m, abs=1e-9)

    def test_too_few_batches(self, tmp_path, capsys):
        path, _ = gen_trace_file(tmp_path, n_batches=2)
        code, _, err = run(capsys, "eval", str(path))
        assert code == 1 and "batches" in err


class TestTraceTools:
    def test_trace_info(self, tmp_path, capsys):
        path, _ = gen_trace_file(tmp_path, alpha=0.01)
        code, out, _ = run(capsys, "trace-info", str(path))
        assert code == 0
        assert "experts\t64" in out and "top_k\t8" in out and "alpha\t0.01" in out

    def test_trace_gen_roundtrip(self, tmp_path, capsys):
        out_path = tmp_path / "gen.moer"
        code, out, _ = run(capsys, "trace-gen", "--out", str(out_path),
                           "--experts", "16", "--layers", "2", "--top-k", "4",
                           "--tokens", "300", "--batches", "5", "--gamma", "4,9")
        assert code == 0 and out_path.exists()
        from moe_congestion.traces import read_trace

        trace = read_trace(out_path)
        assert trace.m == 16 and trace.l == 2

    def test_trace_gen_multitype(self, tmp_path, capsys):
        out_path = tmp_path / "mt.moer"
        code, _, _ = run(capsys, "trace-gen", "--out", str(out_path),
                         "--experts", "16", "--layers", "1", "--top-k", "2",
                         "--tokens", "300", "--batches", "5", "--gamma", "3",
                         "--multitype", "2")
        assert code == 0 and out_path.exists()
