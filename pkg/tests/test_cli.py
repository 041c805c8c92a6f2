"""Command-line interface: subcommands, exit codes, artifacts, determinism."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from pfmn import dataio as dio
from pfmn import model as M
from pfmn.cli import main
from pfmn.kts import Segmentation
from pfmn.registry import write_checkpoint
from pfmn.registry import ParamRegistry


@pytest.fixture(scope="module")
def mem_checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "mem.ckpt"
    reg = ParamRegistry()
    M.MemoryParams.create(reg, rng=0)
    write_checkpoint(reg, path)
    return path


def write_pool(path, n=10, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    arr = rng.standard_normal((n, 2048)).astype(np.float32) * scale
    dio.write_features(arr, path, kind=dio.KIND_POOL)
    return arr


def make_manifest(tmp_path, n_videos=2, n=10, with_seg=True, with_gt=False):
    entries = []
    for i in range(n_videos):
        vid = f"v{i}"
        fpath = tmp_path / f"{vid}.feat"
        write_pool(fpath, n=n, seed=i)
        seg = None
        gts = []
        if with_seg:
            seg = tmp_path / f"{vid}.seg.json"
            dio.unit_segmentation(n).save(seg)
        if with_gt:
            g = tmp_path / f"{vid}.gt.json"
            g.write_text(dio.GtSummary("a", (1, 4), (), 2.0).to_json())
            gts = [g]
        entries.append(dio.ManifestEntry(vid, fpath, segmentation=seg, gt=gts))
    man = tmp_path / "manifest.json"
    dio.write_manifest(entries, man)
    return man


def tree_checksum(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in ("run_config.json", "artifacts.json"):
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestSegmentCommand:
    def test_writes_segmentation(self, tmp_path):
        feat = tmp_path / "x.feat"
        rng = np.random.default_rng(0)
        arr = np.vstack([np.tile(rng.standard_normal(2048), (10, 1)),
                         np.tile(rng.standard_normal(2048), (10, 1))]).astype(np.float32)
        dio.write_features(arr, feat, kind=dio.KIND_POOL)
        out = tmp_path / "run" / "seg.json"
        code = main(["segment", "--features", str(feat), "--out", str(out),
                     "--max-segments", "4", "--penalty", "1.0"])
        assert code == 0
        seg = Segmentation.load(out)
        assert seg.boundaries == (10,)
        assert (out.parent / "run_config.json").exists()
        assert (out.parent / "artifacts.json").exists()

    def test_missing_input_is_io_error(self, tmp_path, capsys):
        code = main(["segment", "--features", str(tmp_path / "nope.feat"),
                     "--out", str(tmp_path / "seg.json")])
        assert code == 3
        assert "error: io:" in capsys.readouterr().err

    def test_corrupt_input_is_format_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.feat"
        bad.write_bytes(b"NOTAFEAT" + b"\0" * 32)
        code = main(["segment", "--features", str(bad),
                     "--out", str(tmp_path / "seg.json")])
        assert code == 4
        assert "error: format:" in capsys.readouterr().err


class TestSynthGen:
    def test_deterministic_runs(self, tmp_path):
        args = ["synth-gen", "--k", "3", "--sequences", "4", "--len-min", "20",
                "--len-max", "24", "--sigma", "0.05", "--distractors", "4",
                "--seed", "7"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        assert tree_checksum(tmp_path / "a") == tree_checksum(tmp_path / "b")

    def test_manifest_loads(self, tmp_path):
        assert main(["synth-gen", "--k", "3", "--sequences", "3", "--len-min",
                     "20", "--len-max", "22", "--distractors", "4",
                     "--holdout", "2", "--out", str(tmp_path)]) == 0
        train = dio.load_manifest(tmp_path / "train_manifest.json")
        held = dio.load_manifest(tmp_path / "heldout_manifest.json")
        assert len(train) == 3 and len(held) == 2
        kind, arr = dio.read_features(train[0].features)
        assert kind == dio.KIND_POOL and arr.shape[1] == 2048


class TestSummarize:
    def test_summary_contract(self, tmp_path, mem_checkpoint):
        man = make_manifest(tmp_path, n_videos=2, n=12)
        out = tmp_path / "run"
        code = main(["summarize", "--manifest", str(man), "--checkpoint",
                     str(mem_checkpoint), "--out", str(out), "--ratio", "0.25"])
        assert code == 0
        recs = json.loads((out / "summaries.json").read_text())["summaries"]
        assert len(recs) == 2
        for rec in recs:
            assert rec["m"] == 3  # floor(0.25 * 12)
            idx = rec["indices"]
            assert all(b > a for a, b in zip(idx, idx[1:]))
            assert len(rec["per_step"]) == 3
            assert len(rec["subshot_frame_ranges"]) == 3

    def test_m_exceeding_n_is_usage_error(self, tmp_path, mem_checkpoint, capsys):
        man = make_manifest(tmp_path, n_videos=1, n=5)
        code = main(["summarize", "--manifest", str(man), "--checkpoint",
                     str(mem_checkpoint), "--out", str(tmp_path / "r"),
                     "--m", "9"])
        assert code == 2
        err = capsys.readouterr().err
        assert "m=9" in err and "n=5" in err

    def test_ratio_clamps_to_one(self, tmp_path, mem_checkpoint):
        man = make_manifest(tmp_path, n_videos=1, n=3)
        out = tmp_path / "r"
        code = main(["summarize", "--manifest", str(man), "--checkpoint",
                     str(mem_checkpoint), "--out", str(out), "--ratio", "0.15"])
        assert code == 0
        recs = json.loads((out / "summaries.json").read_text())["summaries"]
        assert recs[0]["m"] == 1


class TestEvaluate:
    def test_prediction_equal_to_gt_scores_one(self, tmp_path, mem_checkpoint):
        man = make_manifest(tmp_path, n_videos=1, n=10, with_gt=True)
        summaries = {"summaries": [{"video_id": "v0", "m": 2,
                                    "indices": [1, 4], "per_step": []}]}
        spath = tmp_path / "summ.json"
        spath.write_text(json.dumps(summaries))
        out = tmp_path / "report.json"
        code = main(["evaluate", "--manifest", str(man), "--summaries",
                     str(spath), "--out", str(out)])
        assert code == 0
        report = json.loads(out.read_text())
        assert report["mean_f1"] == pytest.approx(1.0)
        assert report["videos"][0]["per_gt"] == [pytest.approx(1.0)]

    def test_disjoint_prediction_scores_zero(self, tmp_path):
        man = make_manifest(tmp_path, n_videos=1, n=10, with_gt=True)
        spath = tmp_path / "summ.json"
        spath.write_text(json.dumps({"summaries": [
            {"video_id": "v0", "m": 2, "indices": [2, 3], "per_step": []}]}))
        out = tmp_path / "report.json"
        assert main(["evaluate", "--manifest", str(man), "--summaries",
                     str(spath), "--out", str(out)]) == 0
        assert json.loads(out.read_text())["mean_f1"] == pytest.approx(0.0)


class TestTrainCommands:
    def test_pretrain_then_finetune(self, tmp_path):
        man = make_manifest(tmp_path, n_videos=3, n=8, with_seg=False)
        pre = tmp_path / "pre"
        code = main(["pretrain", "--manifest", str(man), "--epochs", "1",
                     "--seed", "1", "--out", str(pre)])
        assert code == 0
        ckpts = sorted(pre.glob("*.ckpt"))
        assert ckpts
        assert (pre / "trace.jsonl").read_text().strip()
        fin = tmp_path / "fin"
        code = main(["finetune", "--manifest", str(man), "--epochs", "1",
                     "--seed", "1", "--init", str(ckpts[-1]), "--out", str(fin)])
        assert code == 0
        assert sorted(fin.glob("*.ckpt"))

    def test_finetune_without_init_is_usage_error(self, tmp_path, capsys):
        man = make_manifest(tmp_path, n_videos=1, n=8, with_seg=False)
        code = main(["finetune", "--manifest", str(man), "--epochs", "1",
                     "--out", str(tmp_path / "fin")])
        assert code == 2
        assert "checkpoint" in capsys.readouterr().err


class TestCropNfov:
    def test_crop_png(self, tmp_path):
        from pfmn import sphere
        rng = np.random.default_rng(0)
        erp_png = tmp_path / "erp.png"
        sphere.save_image(rng.random((60, 120, 3)).astype(np.float32), erp_png)
        out = tmp_path / "crop.png"
        code = main(["crop-nfov", "--erp", str(erp_png), "--lon", "40",
                     "--lat", "10", "--out", str(out),
                     "--width", "64", "--height", "36"])
        assert code == 0
        crop = sphere.load_image(out)
        assert crop.shape == (36, 64, 3)

    def test_unknown_flag_is_usage_error(self, tmp_path):
        assert main(["crop-nfov", "--bogus", "1"]) == 2

    def test_unknown_command_is_usage_error(self):
        assert main(["frobnicate"]) == 2
