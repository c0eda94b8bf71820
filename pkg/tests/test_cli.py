import csv
import json
import os

import numpy as np
import pytest

from lama import cli
from lama.synthetic import keyword_pairs, write_tsv


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def marker_pairs(n, seed):
    """pos docs always contain 'zing', neg docs 'blah'; 'meh' docs carry no
    marker, so both markers stay informative."""
    rng = np.random.Generator(np.random.PCG64(seed))
    fillers = [f"mundane{i}" for i in range(8)]
    pairs = []
    for i in range(n):
        label, marker = [("pos", "zing"), ("neg", "blah"), ("meh", None)][i % 3]
        tokens = list(rng.choice(fillers, size=int(rng.integers(5, 9))))
        if marker:
            for _ in range(2):
                tokens.insert(int(rng.integers(0, len(tokens) + 1)), marker)
        pairs.append((label, " ".join(tokens)))
    return pairs


TRAIN_FLAGS = ["--encoder", "le", "--embed-dim", "16", "--hidden", "8",
               "--mlp-hidden", "24", "--max-len", "32", "--batch", "16",
               "--min-count", "2", "--epochs", "15", "--patience", "15",
               "-m", "2"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    train_tsv = root / "train.tsv"
    valid_tsv = root / "valid.tsv"
    write_tsv(marker_pairs(96, seed=0), train_tsv)
    write_tsv(marker_pairs(48, seed=1), valid_tsv)
    out = root / "trained"
    code = run_cli("train", "--data", train_tsv, "--valid", valid_tsv,
                   "--seed", "7", "--out", out, *TRAIN_FLAGS)
    assert code == 0
    return {"root": root, "train": train_tsv, "valid": valid_tsv,
            "ckpt": out / "checkpoint", "out": out}


class TestTrain:
    def test_artifacts_written(self, workspace):
        out = workspace["out"]
        assert (out / "manifest.json").exists()
        assert (out / "history.csv").exists()
        for name in ("config.json", "vocab.txt", "weights.bin"):
            assert (workspace["ckpt"] / name).exists()

    def test_same_seed_byte_identical_weights(self, workspace, tmp_path):
        out2 = tmp_path / "again"
        code = run_cli("train", "--data", workspace["train"], "--valid",
                       workspace["valid"], "--seed", "7", "--out", out2,
                       *TRAIN_FLAGS)
        assert code == 0
        for name in ("weights.bin", "config.json", "vocab.txt"):
            assert (out2 / "checkpoint" / name).read_bytes() == \
                   (workspace["ckpt"] / name).read_bytes()
        # history matches except the timing column
        def meat(path):
            rows = list(csv.DictReader(open(path)))
            return [(r["epoch"], r["train_loss"], r["valid_acc"]) for r in rows]
        assert meat(out2 / "history.csv") == meat(workspace["out"] / "history.csv")

    def test_manifest_contains_resolved_config(self, workspace):
        manifest = json.loads((workspace["out"] / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["seed"] == 7
        assert manifest["config"]["encoder"] == "le"
        assert manifest["config"]["lr"] == 0.05
        assert str(workspace["train"]) in manifest["inputs"]

    def test_divergence_exit_code(self, workspace, tmp_path):
        code = run_cli("train", "--data", workspace["train"], "--valid",
                       workspace["valid"], "--out", tmp_path / "boom",
                       "--lr", "200", "--weight-decay", "0.05", *TRAIN_FLAGS[2:])
        assert code == cli.EXIT_DIVERGED

    def test_pretrained_embeddings_flag(self, workspace, tmp_path, capsys):
        vecs = tmp_path / "vectors.txt"
        dims = 16
        vecs.write_text("zing " + " ".join(["0.05"] * dims) + "\n"
                        "blah " + " ".join(["-0.05"] * dims) + "\n",
                        encoding="utf-8")
        code = run_cli("train", "--data", workspace["train"], "--valid",
                       workspace["valid"], "--out", tmp_path / "pre",
                       "--embeddings", vecs, "--epochs", "1", *TRAIN_FLAGS)
        assert code == 0
        assert "pretrained coverage" in capsys.readouterr().out

    def test_pretrained_dimension_mismatch_is_data_error(self, workspace, tmp_path):
        vecs = tmp_path / "short.txt"
        vecs.write_text("zing 1.0 2.0\n", encoding="utf-8")
        code = run_cli("train", "--data", workspace["train"], "--valid",
                       workspace["valid"], "--out", tmp_path / "pre2",
                       "--embeddings", vecs, "--epochs", "1", *TRAIN_FLAGS)
        assert code == cli.EXIT_DATA


class TestEval:
    def test_two_paths_suffice(self, workspace, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        code = run_cli("eval", "--checkpoint", workspace["ckpt"],
                       "--data", workspace["valid"])
        assert code == 0
        payload = json.loads((tmp_path / "lama-out" / "eval" / "metrics.json").read_text())
        assert payload["accuracy"] >= 0.95
        assert len(payload["confusion"]) == 3

    def test_unknown_label_is_data_error(self, workspace, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("weird\tzing zing mundane0\n", encoding="utf-8")
        code = run_cli("eval", "--checkpoint", workspace["ckpt"], "--data", bad,
                       "--out", tmp_path / "out")
        assert code == cli.EXIT_DATA

    def test_missing_checkpoint_is_io_error(self, workspace, tmp_path):
        code = run_cli("eval", "--checkpoint", tmp_path / "nope",
                       "--data", workspace["valid"], "--out", tmp_path / "out")
        assert code == cli.EXIT_IO


@pytest.fixture(scope="module")
def export(workspace, tmp_path_factory):
    # attention sharpens well after accuracy saturates, so the
    # interpretability export trains to the final snapshot
    out = tmp_path_factory.mktemp("attend")
    run = out / "run"
    code = run_cli("train", "--data", workspace["train"], "--valid",
                   workspace["valid"], "--seed", "7", "--out", run,
                   "--snapshot", "final", *TRAIN_FLAGS)
    assert code == 0
    code = run_cli("attend", "--checkpoint", run / "checkpoint",
                   "--data", workspace["train"], "--out", out)
    assert code == 0
    return out / "attention.jsonl"


class TestAttendAndTopwords:

    def test_export_format(self, export):
        lines = export.read_text().splitlines()
        assert len(lines) == 96
        rec = json.loads(lines[0])
        assert set(rec) == {"doc_id", "tokens", "label", "predicted", "A"}
        A = np.asarray(rec["A"])
        assert A.shape == (2, len(rec["tokens"]))
        np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-5)

    def test_unique_marker_ranks_first_per_class(self, export, tmp_path):
        for label, marker in (("pos", "zing"), ("neg", "blah")):
            out = tmp_path / f"top-{label}"
            code = run_cli("topwords", "--data", export, "--label", label,
                           "--out", out)
            assert code == 0
            rows = (out / "topwords.tsv").read_text().splitlines()[1:]
            assert rows[0].split("\t")[0] == marker
            assert len(rows) <= 20

    def test_aggregation_matches_brute_force(self, export, tmp_path):
        ranking = cli.top_attended_words(export, label="pos", top_k=1000,
                                         min_occurrences=1)
        # independent recomputation
        sums, counts = {}, {}
        for line in export.read_text().splitlines():
            rec = json.loads(line)
            if rec["label"] != "pos":
                continue
            A = np.asarray(rec["A"])
            for t, token in enumerate(rec["tokens"]):
                sums[token] = sums.get(token, 0.0) + A[:, t].max()
                counts[token] = counts.get(token, 0) + 1
        expected = sorted(((sums[t] / counts[t], t) for t in sums),
                          key=lambda x: (-x[0], x[1]))
        assert [w for w, _, _ in ranking] == [t for _, t in expected]
        got = {w: (s, n) for w, s, n in ranking}
        for score, token in expected:
            assert got[token][0] == pytest.approx(score, rel=1e-9)
            assert got[token][1] == counts[token]

    def test_min_occurrences_filter(self, export):
        ranking = cli.top_attended_words(export, min_occurrences=10_000)
        assert ranking == []


class TestParams:
    def test_table_matches_published_deltas(self, tmp_path):
        out = tmp_path / "params"
        code = run_cli("params", "--heads", "2,4,8,16,32,64", "--d-ann", "512",
                       "--out", out)
        assert code == 0
        rows = list(csv.DictReader(open(out / "params.csv")))
        assert [int(r["heads"]) for r in rows] == [2, 4, 8, 16, 32, 64]
        published = [0.002, 0.004, 0.009, 0.016, 0.034]
        deltas = [float(r["lama_delta_millions"]) for r in rows[1:]]
        for ours, pub in zip(deltas, published):
            assert abs(ours - pub) <= 0.0015
        te = {r["te_millions"] for r in rows}
        assert len(te) == 1

    def test_odd_d_ann_rejected(self, tmp_path):
        code = run_cli("params", "--d-ann", "511", "--out", tmp_path / "x")
        assert code == cli.EXIT_USAGE


class TestBench:
    def test_smoke_and_csv(self, tmp_path):
        out = tmp_path / "bench"
        code = run_cli("bench", "--kind", "le", "--lengths", "8,16,32,64",
                       "--trials", "5", "--dim", "16", "-m", "2",
                       "--batch", "1", "--out", out)
        assert code == 0
        lines = (out / "bench_le.csv").read_text().splitlines()
        assert lines[0] == "length,median_seconds,trials"
        assert len(lines) == 5

    def test_bad_lengths_usage_error(self, tmp_path):
        code = run_cli("bench", "--kind", "te", "--lengths", "8,16",
                       "--out", tmp_path / "x")
        assert code == cli.EXIT_USAGE


class TestHeadsSweep:
    def test_sweep_writes_sorted_csv(self, workspace, tmp_path):
        out = tmp_path / "sweep"
        code = run_cli("heads-sweep", "--data", workspace["train"], "--valid",
                       workspace["valid"], "--grid", "2,1", "--out", out,
                       *TRAIN_FLAGS[:-2], "--epochs", "2")
        assert code == 0
        rows = list(csv.DictReader(open(out / "sweep.csv")))
        assert [int(r["m"]) for r in rows] == [1, 2]


class TestErrorSurface:
    def test_unknown_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("train", "--frobnicate")
        assert exc.value.code == 2

    def test_missing_data_file_is_io_error(self, tmp_path):
        code = run_cli("train", "--data", tmp_path / "absent.tsv",
                       "--valid", tmp_path / "absent.tsv",
                       "--out", tmp_path / "out")
        assert code == cli.EXIT_IO

    def test_malformed_tsv_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.tsv"
        bad.write_text("no tab here\n", encoding="utf-8")
        code = run_cli("train", "--data", bad, "--valid", bad,
                       "--out", tmp_path / "out")
        assert code == cli.EXIT_DATA

    def test_rerun_reproduces_outputs_byte_identically(self, tmp_path):
        out = tmp_path / "params"
        argv = ["params", "--heads", "2,4", "--out", str(out)]
        assert run_cli(*argv) == 0
        first = {name: (out / name).read_bytes()
                 for name in ("params.csv", "manifest.json")}
        assert run_cli(*argv) == 0
        for name, blob in first.items():
            assert (out / name).read_bytes() == blob
