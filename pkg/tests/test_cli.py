import json
import os

import pytest

from percsim.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def corpus(tmp_path, capsys):
    path = tmp_path / "corpus.jsonl"
    code, _, _ = run(capsys, "gen", "--seed", "7", "--n", "8", "--out", str(path))
    assert code == 0
    return path


class TestGen:
    def test_same_seed_identical_bytes(self, tmp_path, capsys):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert run(capsys, "gen", "--seed", "5", "--n", "10", "--out", str(a))[0] == 0
        assert run(capsys, "gen", "--seed", "5", "--n", "10", "--out", str(b))[0] == 0
        assert a.read_bytes() == b.read_bytes()

    def test_sidecar_contains_hash(self, corpus):
        meta = json.loads((corpus.parent / "corpus.jsonl.meta.json").read_text())
        resolved = json.loads((corpus.parent / "resolved_config.json").read_text())
        assert meta["config_hash"] == resolved["config_hash"]

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{"grid": {"bogus_key": 3}}')
        code, _, err = run(capsys, "gen", "--config", str(cfg), "--out",
                           str(tmp_path / "x.jsonl"))
        assert code == 1
        record = json.loads(err)
        assert "bogus_key" in record["error"]

    def test_bad_flags_exit_2(self, capsys):
        assert run(capsys, "gen")[0] == 2  # missing --out


class TestRender:
    def test_writes_channel_files(self, tmp_path, corpus, capsys):
        outdir = tmp_path / "renders"
        code, _, _ = run(capsys, "render", "--scenes", str(corpus),
                         "--index", "1", "--outdir", str(outdir))
        assert code == 0
        names = os.listdir(outdir)
        assert "scene0001_vehicles.pgm" in names
        assert "scene0001_composite.ppm" in names
        assert "resolved_config.json" in names

    def test_out_of_range_index_fails_clean(self, tmp_path, corpus, capsys):
        code, _, err = run(capsys, "render", "--scenes", str(corpus),
                           "--index", "99", "--outdir", str(tmp_path / "r"))
        assert code == 1
        assert "out of range" in json.loads(err)["error"]


class TestEval:
    def test_self_evaluation_is_perfect(self, tmp_path, corpus, capsys):
        dets = tmp_path / "proxy.jsonl"
        report = tmp_path / "report.json"
        code, _, _ = run(capsys, "eval", "--scenes", str(corpus), "--source", "proxy",
                         "--dump", str(dets), "--targets", str(dets),
                         "--out", str(report), "--label", "proxy")
        assert code == 0
        data = json.loads(report.read_text())
        assert data["map_050"] == 1.0 and data["maxr_070"] == 1.0
        assert data["meta"]["label"] == "proxy"

    def test_annotation_source_against_proxy(self, tmp_path, corpus, capsys):
        proxy = tmp_path / "proxy.jsonl"
        r1 = tmp_path / "r1.json"
        run(capsys, "eval", "--scenes", str(corpus), "--source", "proxy",
            "--dump", str(proxy), "--targets", str(proxy), "--out", str(r1))
        r2 = tmp_path / "r2.json"
        code, _, _ = run(capsys, "eval", "--scenes", str(corpus), "--source", "annotation",
                         "--targets", str(proxy), "--out", str(r2), "--label", "annotation")
        assert code == 0
        assert 0.0 <= json.loads(r2.read_text())["map_050"] <= 1.0

    def test_missing_targets_is_error(self, tmp_path, corpus, capsys):
        code, _, err = run(capsys, "eval", "--scenes", str(corpus), "--source",
                           "annotation", "--out", str(tmp_path / "r.json"))
        assert code == 1
        assert "targets" in json.loads(err)["error"]


class TestFitBaseline:
    def test_fits_and_reports_fn_ratio(self, tmp_path, capsys):
        big = tmp_path / "big.jsonl"
        assert run(capsys, "gen", "--seed", "2", "--n", "40", "--out", str(big))[0] == 0
        dets = tmp_path / "proxy.jsonl"
        run(capsys, "eval", "--scenes", str(big), "--source", "proxy",
            "--dump", str(dets), "--targets", str(dets),
            "--out", str(tmp_path / "r.json"))
        model = tmp_path / "baseline.json"
        code, out, _ = run(capsys, "fit-baseline", "--scenes", str(big),
                           "--dets", str(dets), "--out", str(model), "--seed", "7")
        assert code == 0
        data = json.loads(model.read_text())
        assert 0.0 <= data["fn_ratio"] <= 1.0
        assert len(data["gmm"]["weights"]) == 3


class TestSimulate:
    def test_annotation_run_and_determinism(self, tmp_path, corpus, capsys):
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        for outdir in (out1, out2):
            code, _, _ = run(capsys, "simulate", "--scenes", str(corpus),
                             "--perception", "annotation", "--episodes", "3",
                             "--horizon", "30", "--outdir", str(outdir), "--seed", "3")
            assert code == 0
        assert (out1 / "episodes.jsonl").read_bytes() == (out2 / "episodes.jsonl").read_bytes()
        summary = json.loads((out1 / "summary.json").read_text())
        assert summary["episodes"] == 3
        assert summary["perception"] == "annotation"

    def test_gaussian_needs_fn_ratio(self, tmp_path, corpus, capsys):
        code, _, err = run(capsys, "simulate", "--scenes", str(corpus),
                           "--perception", "gaussian", "--episodes", "1",
                           "--outdir", str(tmp_path / "g"))
        assert code == 1
        assert "fn_ratio" in json.loads(err)["error"]


class TestReport:
    def make_report(self, path, label, h, m50):
        data = {"map_050": m50, "map_070": m50 / 2, "maxr_050": 0.8, "maxr_070": 0.5,
                "precision_at_fixed": 0.9, "recall_at_fixed": 0.7,
                "fixed_threshold": 0.5, "counts": {"tp": 1, "fp": 0, "fn": 0},
                "pr_curves": {}, "meta": {"config_hash": h, "label": label}}
        path.write_text(json.dumps(data))

    def test_table_lists_all_sources(self, tmp_path, capsys):
        r1, r2 = tmp_path / "a.json", tmp_path / "b.json"
        self.make_report(r1, "imitator", "h1", 0.9)
        self.make_report(r2, "gaussian", "h1", 0.3)
        out_path = tmp_path / "table.json"
        code, out, _ = run(capsys, "report", "--reports", str(r1), str(r2),
                           "--out", str(out_path))
        assert code == 0
        assert "imitator" in out and "gaussian" in out
        rows = json.loads(out_path.read_text())["rows"]
        assert {r["label"] for r in rows} == {"imitator", "gaussian"}

    def test_mixed_hashes_refused(self, tmp_path, capsys):
        r1, r2 = tmp_path / "a.json", tmp_path / "b.json"
        self.make_report(r1, "x", "h1", 0.9)
        self.make_report(r2, "y", "h2", 0.3)
        code, _, err = run(capsys, "report", "--reports", str(r1), str(r2))
        assert code == 1
        assert "mixed" in json.loads(err)["error"]
