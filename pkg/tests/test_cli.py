"""End-to-end command-line behavior: files, determinism, exit codes."""

import json

import pytest

from coalgp.cli import main

TREE = "((A:0.3,B:0.3):0.7,C:0.5);"


def run(argv):
    return main([str(a) for a in argv])


class TestSimulateCommand:
    def test_iso_constant_count_contract(self, tmp_path):
        out = tmp_path / "sim.json"
        code = run(
            ["simulate", "--iso", "-n", 100, "--traj", "constant:1", "--lambda", 1,
             "--seed", 7, "--out", out]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert len(payload["coal_times"]) == 99
        assert payload["meta"]["seed"] == 7

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        args = ["simulate", "--iso", "-n", 30, "--traj", "expgrowth:25,5", "--seed", 7]
        assert run(args + ["--out", a]) == 0
        assert run(args + ["--out", b]) == 0
        assert a.read_bytes().replace(b"a.json", b"") == b.read_bytes().replace(b"b.json", b"")

    def test_gp_simulation(self, tmp_path):
        out = tmp_path / "gp.json"
        code = run(
            ["simulate", "--iso", "-n", 12, "--kernel", "bm", "--theta", 2, "--init-var", 1,
             "--lambda", 3, "--seed", 1, "--out", out]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert len(payload["coal_times"]) == 11
        assert len(payload["f_times"]) == len(payload["f_values"])

    def test_replicates_write_ks_report(self, tmp_path):
        out = tmp_path / "rep.json"
        code = run(
            ["simulate", "--iso", "-n", 6, "--traj", "constant:1", "--lambda", 1,
             "--seed", 3, "--replicates", 40, "--out", out]
        )
        assert code == 0
        files = sorted(tmp_path.glob("rep_0*.json"))
        assert len(files) == 40
        report = json.loads((tmp_path / "rep_ks_report.json").read_text())
        assert len(report["ks_by_event"]) == 5

    def test_hetero_schedule(self, tmp_path):
        out = tmp_path / "het.json"
        code = run(
            ["simulate", "--schedule", "0:3,0.5:2", "--traj", "constant:1", "--lambda", 1,
             "--seed", 5, "--out", out]
        )
        assert code == 0
        assert len(json.loads(out.read_text())["coal_times"]) == 4

    def test_usage_errors_exit_2(self, tmp_path, capsys):
        assert run(["simulate", "--iso", "-n", 5, "--traj", "nosuch:1", "--out", tmp_path / "x"]) == 2
        assert run(["simulate", "--iso", "-n", 5, "--out", tmp_path / "x"]) == 2  # no traj/kernel
        assert run(["simulate", "-n", 5, "--traj", "constant:1", "--out", tmp_path / "x"]) == 2

    def test_runtime_error_exit_3(self, tmp_path):
        code = run(
            ["simulate", "--iso", "-n", 3, "--traj", "constant:1", "--lambda", 1e6,
             "--proposal-cap", 200, "--seed", 0, "--out", tmp_path / "x.json"]
        )
        assert code == 3


class TestInferCommand:
    def infer_args(self, tree_path, out):
        return [
            "infer", "--tree", tree_path, "--iters", 120, "--burnin", 20, "--thin", 5,
            "--lambda-hat", 3, "--eps", 0.01, "--alpha", 0.001, "--beta", 0.001,
            "--seed", 1, "--out", out,
        ]

    def test_infer_writes_chain(self, tmp_path, capsys):
        tree = tmp_path / "t.nwk"
        tree.write_text(TREE)
        out = tmp_path / "chain.jsonl"
        assert run(self.infer_args(tree, out)) == 0
        lines = out.read_text().strip().splitlines()
        meta = json.loads(lines[0])
        header = json.loads(lines[1])
        assert meta["type"] == "meta" and header["type"] == "header"
        assert header["n_draws"] == len(lines) - 2 == 20
        err = capsys.readouterr().err
        assert "acceptance" in err

    def test_missing_tree_exits_2(self, tmp_path):
        assert run(self.infer_args(tmp_path / "absent.nwk", tmp_path / "o.jsonl")) == 2

    def test_data_json_input(self, tmp_path):
        data = tmp_path / "d.json"
        data.write_text(json.dumps({"coal_times": [0.4, 1.1], "samp_times": [0.0], "samp_counts": [3]}))
        out = tmp_path / "chain.jsonl"
        code = run(
            ["infer", "--data", data, "--iters", 60, "--burnin", 10, "--seed", 2,
             "--kernel", "ou", "--phi", 1.0, "--lambda-hat", 2, "--out", out]
        )
        assert code == 0
        header = json.loads(out.read_text().splitlines()[1])
        assert header["kernel"]["kind"] == "ou"

    def test_infer_determinism(self, tmp_path):
        tree = tmp_path / "t.nwk"
        tree.write_text(TREE)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run(self.infer_args(tree, a))
        run(self.infer_args(tree, b))
        strip = lambda p: p.read_text().replace(str(p), "")  # noqa: E731
        assert strip(a) == strip(b)


class TestSummarizeCommand:
    def make_chain(self, tmp_path):
        tree = tmp_path / "t.nwk"
        tree.write_text(TREE)
        out = tmp_path / "chain.jsonl"
        assert run(
            ["infer", "--tree", tree, "--iters", 200, "--burnin", 50, "--thin", 5,
             "--lambda-hat", 3, "--seed", 4, "--out", out]
        ) == 0
        return out

    def test_summary_rows(self, tmp_path):
        chain = self.make_chain(tmp_path)
        out = tmp_path / "summary.csv"
        assert run(["summarize", "--chain", chain, "--grid", 25, "--seed", 0, "--out", out]) == 0
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 26

    def test_metrics_with_truth(self, tmp_path):
        chain = self.make_chain(tmp_path)
        out = tmp_path / "summary.csv"
        metrics = tmp_path / "metrics.json"
        code = run(
            ["summarize", "--chain", chain, "--grid", 25, "--truth", "constant:1",
             "--metrics-out", metrics, "--seed", 0, "--out", out]
        )
        assert code == 0
        report = json.loads(metrics.read_text())
        assert set(report) == {"sre", "mrw", "envelope", "variation", "grid_size"}

    def test_extrapolation_warns(self, tmp_path, capsys):
        chain = self.make_chain(tmp_path)
        out = tmp_path / "summary.csv"
        assert run(
            ["summarize", "--chain", chain, "--grid", 10, "--grid-max", 5.0,
             "--seed", 0, "--out", out]
        ) == 0
        assert "beyond the root" in capsys.readouterr().err
        rows = out.read_text().strip().splitlines()[1:]
        assert any(r.endswith(",1") for r in rows)

    def test_summary_determinism(self, tmp_path):
        chain = self.make_chain(tmp_path)
        a, b = tmp_path / "s1.csv", tmp_path / "s2.csv"
        run(["summarize", "--chain", chain, "--grid", 30, "--seed", 9, "--out", a])
        run(["summarize", "--chain", chain, "--grid", 30, "--seed", 9, "--out", b])
        assert a.read_bytes() == b.read_bytes()


class TestExtractCommand:
    def test_extract_matches_library(self, tmp_path):
        tree = tmp_path / "t.nwk"
        tree.write_text(TREE)
        out = tmp_path / "data.json"
        assert run(["extract", "--tree", tree, "--out", out]) == 0
        payload = json.loads(out.read_text())
        assert payload["coal_times"] == pytest.approx([0.3, 1.0])
        assert payload["samp_times"] == pytest.approx([0.0, 0.5])
        assert payload["samp_counts"] == [2, 1]

    def test_extracted_json_feeds_infer(self, tmp_path):
        tree = tmp_path / "t.nwk"
        tree.write_text(TREE)
        data = tmp_path / "data.json"
        run(["extract", "--tree", tree, "--out", data])
        out = tmp_path / "chain.jsonl"
        assert run(
            ["infer", "--data", data, "--iters", 50, "--burnin", 10, "--seed", 0,
             "--lambda-hat", 2, "--out", out]
        ) == 0


def test_replicates_parallel_workers_match_serial(tmp_path):
    base = ["simulate", "--iso", "-n", 5, "--traj", "constant:1", "--lambda", 1,
            "--seed", 11, "--replicates", 6]
    assert run(base + ["--out", tmp_path / "ser.json"]) == 0
    assert run(base + ["--workers", 2, "--out", tmp_path / "par.json"]) == 0
    for r in range(6):
        a = json.loads((tmp_path / f"ser_{r:04d}.json").read_text())
        b = json.loads((tmp_path / f"par_{r:04d}.json").read_text())
        assert a["coal_times"] == b["coal_times"]


def test_multi_chain_files(tmp_path):
    tree = tmp_path / "t.nwk"
    tree.write_text(TREE)
    out = tmp_path / "chain.jsonl"
    code = run(
        ["infer", "--tree", tree, "--iters", 60, "--burnin", 10, "--thin", 5,
         "--chains", 2, "--seed", 3, "--lambda-hat", 2, "--out", out]
    )
    assert code == 0
    files = sorted(tmp_path.glob("chain_chain*.jsonl"))
    assert len(files) == 2
    # distinct seeds, distinct draws
    a = json.loads(files[0].read_text().splitlines()[2])
    b = json.loads(files[1].read_text().splitlines()[2])
    assert a["theta"] != b["theta"]


def test_outdir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("COALGP_OUTDIR", str(tmp_path / "sandbox"))
    assert run(
        ["simulate", "--iso", "-n", 4, "--traj", "constant:1", "--lambda", 1,
         "--seed", 0, "--out", "nested/sim.json"]
    ) == 0
    assert (tmp_path / "sandbox" / "nested" / "sim.json").exists()
