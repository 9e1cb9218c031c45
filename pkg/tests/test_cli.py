"""CLI behavior: exit codes, config layering, artifact schemas."""

import configparser
import hashlib
import os
import subprocess
import sys

import numpy as np
import pytest

from calligan.cli import main
from calligan.data import read_manifest, save_glyph_png
from calligan.synthetic import dilate, stroke_glyph

TRAIN_FLAGS = ["--image-size", "32", "--base-channels", "8", "--max-channels", "32",
               "--relu-slope", "0.2", "--epochs", "2", "--seed", "5", "--quiet"]


def run(argv, capsys=None):
    code = main(argv)
    if capsys is None:
        return code, "", ""
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def prepared(tmp_path, n=12, test_size=4, extra=()):
    out = str(tmp_path / "prep")
    code = main(["prepare", "--synthetic-fixtures", "--fixture-count", str(n),
                 "--out", out, "--image-size", "32", "--test-size", str(test_size),
                 "--seed", "5", *extra])
    assert code == 0
    return out


class TestPrepare:
    def test_fixtures_end_to_end(self, tmp_path):
        out = prepared(tmp_path)
        assert os.path.isfile(os.path.join(out, "manifest.txt"))
        assert os.path.isfile(os.path.join(out, "resolved_config.ini"))
        sections = read_manifest(os.path.join(out, "manifest.txt"))
        assert len(sections["test"]) == 4
        assert len(sections["train"]) == 8
        assert not set(sections["test"]) & set(sections["train"])
        imgs = os.listdir(os.path.join(out, "images", "source"))
        assert len(imgs) == 12

    def test_rerun_same_seed_identical_manifest(self, tmp_path):
        out_a = prepared(tmp_path / "a")
        out_b = prepared(tmp_path / "b")
        read = lambda p: open(os.path.join(p, "manifest.txt"), "rb").read()
        assert read(out_a) == read(out_b)

    def test_train_sizes_share_test_set(self, tmp_path):
        out = prepared(tmp_path, n=16, test_size=4,
                       extra=["--train-sizes", "4,8"])
        m4 = read_manifest(os.path.join(out, "manifest_train4.txt"))
        m8 = read_manifest(os.path.join(out, "manifest_train8.txt"))
        assert m4["test"] == m8["test"]
        assert set(m4["train"]) < set(m8["train"])
        for m in (m4, m8):
            assert not set(m["test"]) & set(m["train"])

    def test_missing_source_dir_exits_2(self, tmp_path, capsys):
        code, _, err = run(["prepare", "--source", "/nonexistent/src",
                            "--target", "/nonexistent/tgt",
                            "--out", str(tmp_path / "o")], capsys)
        assert code == 2
        assert "/nonexistent/src" in err

    def test_disjoint_corpora_exit_3(self, tmp_path, capsys):
        a = tmp_path / "a"
        b = tmp_path / "b"
        a.mkdir(); b.mkdir()
        g = stroke_glyph(16, np.random.default_rng(0))
        save_glyph_png(g, str(a / "100.png"))
        save_glyph_png(dilate(g), str(b / "200.png"))
        code, _, err = run(["prepare", "--source", str(a), "--target", str(b),
                            "--out", str(tmp_path / "o"), "--image-size", "16"],
                           capsys)
        assert code == 3
        assert "shared" in err

    def test_config_file_layering(self, tmp_path, capsys):
        cfg = tmp_path / "base.ini"
        cfg.write_text("[data]\ntest_size = 3\nfixture_count = 10\n")
        out = str(tmp_path / "prep")
        # flag overrides the file for test_size; fixture_count comes from file
        code = main(["prepare", "--synthetic-fixtures", "--config", str(cfg),
                     "--out", out, "--image-size", "32", "--test-size", "2",
                     "--seed", "1"])
        assert code == 0
        resolved = configparser.ConfigParser()
        resolved.read(os.path.join(out, "resolved_config.ini"))
        assert resolved.get("data", "test_size") == "2"
        assert resolved.get("data", "fixture_count") == "10"
        sections = read_manifest(os.path.join(out, "manifest.txt"))
        assert len(sections["test"]) == 2
        assert len(sections["train"]) == 8

    def test_missing_config_file_exits_2(self, tmp_path, capsys):
        code, _, err = run(["prepare", "--synthetic-fixtures",
                            "--config", "/nonexistent.ini",
                            "--out", str(tmp_path / "o")], capsys)
        assert code == 2


class TestTrainGenerateEvaluate:
    def test_pipeline(self, tmp_path, capsys):
        prep = prepared(tmp_path)
        train_out = str(tmp_path / "train")
        code, out, _ = run(["train", "--data", prep, "--out", train_out,
                            *TRAIN_FLAGS], capsys)
        assert code == 0
        assert "checkpoint:" in out
        ckpt = os.path.join(train_out, "checkpoint.ckpt")
        assert os.path.isfile(ckpt)
        assert os.path.isfile(os.path.join(train_out, "trainlog.csv"))

        gen_out = str(tmp_path / "gen")
        code, out, _ = run(["generate", "--checkpoint", ckpt,
                            "--source", os.path.join(prep, "images", "source"),
                            "--truth", os.path.join(prep, "images", "target"),
                            "--out", gen_out], capsys)
        assert code == 0
        assert "global threshold:" in out
        assert len(os.listdir(os.path.join(gen_out, "binary"))) == 12

        eval_out = str(tmp_path / "eval")
        code, out, _ = run(["evaluate",
                            "--generated", os.path.join(gen_out, "binary"),
                            "--truth", os.path.join(prep, "images", "target"),
                            "--out", eval_out], capsys)
        assert code == 0
        assert os.path.isfile(os.path.join(eval_out, "report.csv"))
        assert "mean_cr:" in out

    def test_evaluate_identical_dirs_gives_cr_1(self, tmp_path, capsys):
        prep = prepared(tmp_path)
        truth = os.path.join(prep, "images", "target")
        code, out, _ = run(["evaluate", "--generated", truth, "--truth", truth,
                            "--out", str(tmp_path / "eval")], capsys)
        assert code == 0
        assert "mean_cr:   1.0" in out
        assert "mean_ssim: 1.0" in out

    def test_determinism_bitwise(self, tmp_path):
        prep = prepared(tmp_path)
        ckpts = []
        for name in ("t1", "t2"):
            out = str(tmp_path / name)
            assert main(["train", "--data", prep, "--out", out,
                         *TRAIN_FLAGS]) == 0
            blob = open(os.path.join(out, "checkpoint.ckpt"), "rb").read()
            ckpts.append(hashlib.sha256(blob).hexdigest())
        assert ckpts[0] == ckpts[1]

    def test_missing_checkpoint_exits_2(self, tmp_path, capsys):
        code, _, err = run(["generate", "--checkpoint", "/nonexistent.ckpt",
                            "--source", str(tmp_path), "--out",
                            str(tmp_path / "o")], capsys)
        assert code == 2
        assert "/nonexistent.ckpt" in err

    def test_evaluate_missing_dir_exits_2(self, tmp_path, capsys):
        code, _, err = run(["evaluate", "--generated", "/nonexistent",
                            "--truth", "/nonexistent", "--out",
                            str(tmp_path / "o")], capsys)
        assert code == 2


class TestSweep:
    def test_sweep_schema(self, tmp_path, capsys):
        prep = prepared(tmp_path, n=14, test_size=4)
        out = str(tmp_path / "sweep")
        code, text, _ = run(["sweep", "--data", prep, "--sizes", "2,4",
                             "--test-size", "4", "--out", out, *TRAIN_FLAGS],
                            capsys)
        assert code == 0
        lines = open(os.path.join(out, "sweep.csv")).read().strip().split("\n")
        assert lines[0] == "train_size,mean_cr,mean_ssim,high,medium,low"
        assert len(lines) == 3
        for line in lines[1:]:
            fields = line.split(",")
            assert all(np.isfinite(float(v)) for v in fields)
        assert os.path.isdir(os.path.join(out, "size_2"))
        assert os.path.isdir(os.path.join(out, "size_4"))

    def test_sizes_required(self, tmp_path, capsys):
        prep = prepared(tmp_path)
        code, _, err = run(["sweep", "--data", prep,
                            "--out", str(tmp_path / "o")], capsys)
        assert code == 2
        assert "--sizes" in err


class TestTuring:
    def ready(self, tmp_path):
        prep = prepared(tmp_path, n=16, test_size=4)
        tru = os.path.join(prep, "images", "target")
        out = str(tmp_path / "sheet")
        code = main(["turing-gen", "--generated",
                     os.path.join(prep, "images", "source"),
                     "--truth", tru, "--out", out, "--image-size", "32",
                     "--n-each", "4", "--rows", "2", "--cols", "4",
                     "--seed", "3"])
        assert code == 0
        return out

    def test_sheet_artifacts(self, tmp_path):
        out = self.ready(tmp_path)
        assert os.path.isfile(os.path.join(out, "sheet.png"))
        key = open(os.path.join(out, "key.txt")).read()
        assert key.startswith("# cells=8")

    def test_score_perfect_marks(self, tmp_path, capsys):
        out = self.ready(tmp_path)
        key_lines = open(os.path.join(out, "key.txt")).read().split()
        marks = ",".join(p for p in key_lines if p.isdigit())
        resp = tmp_path / "responses.txt"
        resp.write_text(f"alice: {marks}\n")
        code, text, _ = run(["turing-score", "--key",
                             os.path.join(out, "key.txt"),
                             "--responses", str(resp),
                             "--out", str(tmp_path / "scores")], capsys)
        assert code == 0
        assert "alice: 1.0" in text
        assert "mean accuracy: 1.0" in text
        assert os.path.isfile(tmp_path / "scores" / "scores.csv")

    def test_malformed_responses_exit_2(self, tmp_path, capsys):
        out = self.ready(tmp_path)
        resp = tmp_path / "bad.txt"
        resp.write_text("bob: 1, banana\n")
        code, _, err = run(["turing-score", "--key",
                            os.path.join(out, "key.txt"),
                            "--responses", str(resp)], capsys)
        assert code == 2

    def test_protocol_enforcement_exit_2(self, tmp_path, capsys):
        out = self.ready(tmp_path)
        resp = tmp_path / "short.txt"
        resp.write_text("carol: 0\n")
        code, _, err = run(["turing-score", "--key",
                            os.path.join(out, "key.txt"),
                            "--responses", str(resp),
                            "--require-marks", "4"], capsys)
        assert code == 2
        assert "carol" in err


class TestGradcheck:
    def test_small_audit_passes(self, tmp_path, capsys):
        # 8x8 composite keeps this test quick; acceptance runs the full 16x16
        code, out, _ = run(["gradcheck", "--image-size", "8",
                            "--out", str(tmp_path / "gc")], capsys)
        assert code == 0
        assert "composite_vs_gen_params" in out
        assert "FAIL" not in out
        assert os.path.isfile(tmp_path / "gc" / "gradcheck.txt")

    def test_impossible_tolerance_exits_4(self, tmp_path, capsys):
        code, _, err = run(["gradcheck", "--image-size", "8",
                            "--tolerance", "1e-18"], capsys)
        assert code == 4
        assert "gradient check failed" in err


class TestProcessLevel:
    def test_module_entrypoint(self, tmp_path):
        result = subprocess.run(
            [sys.executable, "-m", "calligan", "prepare", "--synthetic-fixtures",
             "--fixture-count", "10", "--out", str(tmp_path / "p"),
             "--image-size", "32", "--test-size", "2", "--seed", "0"],
            capture_output=True, text=True)
        assert result.returncode == 0, result.stderr
        assert "paired 10 glyphs" in result.stdout

    def test_usage_error_exit_code(self):
        result = subprocess.run(
            [sys.executable, "-m", "calligan", "train"],
            capture_output=True, text=True)
        assert result.returncode == 2  # argparse: --out is required

    def test_no_writes_outside_out_dir(self, tmp_path):
        before = set(os.listdir(tmp_path))
        prepared(tmp_path)
        after = set(os.listdir(tmp_path))
        assert after - before == {"prep"}
