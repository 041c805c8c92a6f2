"""Command-line front end for the summarization pipeline.

Every run resolves its arguments (including the seed) into a config snapshot
written next to the outputs, plus an artifact manifest, so any result can be
reproduced from its run directory. Exit codes: 2 usage, 3 I/O, 4 format,
5 numeric.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import dataio as dio
from . import kts
from . import model as mdl
from . import ranker as rk
from . import sphere
from . import training as tr
from .errors import (ConfigError, ContractError, DecodeExhausted,
                     DecodeInfeasible, DimensionError, DomainError,
                     FormatError, NumericError)
from .registry import ParamRegistry, read_checkpoint, write_checkpoint

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_NUMERIC = 5


def _emit_run_records(out_dir: Path, args: argparse.Namespace,
                      artifacts: list[Path]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)

    def plain(v):
        if isinstance(v, Path):
            return str(v)
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        return v

    resolved = {k: plain(v) for k, v in vars(args).items() if k != "func"}
    (out_dir / "run_config.json").write_text(json.dumps(resolved, indent=2))
    (out_dir / "artifacts.json").write_text(
        json.dumps({"artifacts": [str(p) for p in artifacts]}, indent=2))


def _load_model(checkpoint: Path, seed: int = 0):
    state = read_checkpoint(checkpoint)
    registry = ParamRegistry()
    mem = mdl.MemoryParams.create(registry, rng=seed)
    ranker = None
    if any(k.startswith("ranker/") for k in state):
        ranker = rk.RankerParams.create(registry, rng=seed + 1)
    unknown = [k for k in state if k not in registry]
    if unknown:
        raise FormatError(f"checkpoint has unknown parameters {unknown[:3]}")
    registry.load_state(state, strict=False)
    return registry, mem, ranker


def _pool_features(path: Path) -> np.ndarray:
    kind, arr = dio.read_features(path)
    if kind != dio.KIND_POOL:
        raise FormatError(f"{path} is not a pool-vector feature file")
    return arr


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_segment(args) -> int:
    feats = _pool_features(args.features)
    max_segments = args.max_segments or feats.shape[0]
    seg = kts.kts_segment(feats, max_segments=max_segments, penalty=args.penalty)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    seg.save(out)
    _emit_run_records(out.parent, args, [out])
    return 0


def cmd_score_views(args) -> int:
    kind, maps = dio.read_features(args.features)
    if kind != dio.KIND_SPATIAL:
        raise FormatError(f"{args.features} is not a spatial-map feature file")
    _, _, ranker = _load_model(args.checkpoint, seed=args.seed)
    if ranker is None:
        raise FormatError(f"checkpoint {args.checkpoint} has no ranker parameters")
    n = maps.shape[0]
    scores = np.empty((n, 81), dtype=np.float32)
    for i in range(n):
        scores[i] = rk.score_view(maps[i], ranker).data
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dio.write_features(scores, out, kind=dio.KIND_SCORES)
    _emit_run_records(out.parent, args, [out])
    return 0


def cmd_train_ranker(args) -> int:
    pos = _stacked_maps(args.pos)
    neg = _stacked_maps(args.neg)
    if pos.shape[0] != neg.shape[0]:
        raise FormatError("positive and negative map counts differ")
    config = _load_config(args, default_phase="ranker")
    pairs = [rk.RankPair(p, n) for p, n in zip(pos, neg)]
    registry, _, trace = tr.train_ranker(pairs, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "ranker.ckpt"
    write_checkpoint(registry, ckpt)
    trace_path = out_dir / "trace.jsonl"
    trace.write_jsonl(trace_path)
    (out_dir / "train_config.json").write_text(config.to_json())
    _emit_run_records(out_dir, args, [ckpt, trace_path])
    return 0


def _stacked_maps(path: Path) -> np.ndarray:
    kind, arr = dio.read_features(path)
    if kind == dio.KIND_SPATIAL:
        return arr.reshape(-1, *rk.MAP_SHAPE)
    raise FormatError(f"{path} is not a spatial-map feature file")


def _load_config(args, default_phase: str) -> tr.TrainConfig:
    if args.config is not None:
        config = tr.TrainConfig.from_json(Path(args.config).read_text())
        if config.phase != default_phase:
            raise ConfigError(
                f"config phase {config.phase!r} does not match {default_phase!r}")
    else:
        factory = {"ranker": tr.TrainConfig.ranker,
                   "pretrain": tr.TrainConfig.pretrain,
                   "finetune": tr.TrainConfig.finetune}[default_phase]
        config = factory(epochs=args.epochs, seed=args.seed)
    if args.seed is not None:
        config.seed = args.seed
    return config


def _corpus_from_manifest(path: Path) -> list[np.ndarray]:
    entries = dio.load_manifest(path)
    return [_pool_features(e.features) for e in entries]


def cmd_fit(args, phase: str) -> int:
    corpus = _corpus_from_manifest(args.manifest)
    config = _load_config(args, default_phase=phase)
    inits = [Path(p) for p in (args.init or [])]
    out_dir = Path(args.out)
    result = tr.fit(corpus, config, init_checkpoints=inits, out_dir=out_dir)
    trace_path = out_dir / "trace.jsonl"
    result.trace.write_jsonl(trace_path)
    (out_dir / "train_config.json").write_text(config.to_json())
    artifacts = [Path(p) for p in result.trace.checkpoints] + [trace_path]
    _emit_run_records(out_dir, args, artifacts)
    return 0


def _descriptors_for_entry(entry: dio.ManifestEntry, ranker) -> np.ndarray:
    kind, arr = dio.read_features(entry.features)
    if kind == dio.KIND_POOL:
        return arr
    if kind == dio.KIND_SPATIAL:
        if ranker is None:
            raise FormatError("spatial features need a checkpoint with ranker "
                              "parameters")
        rows = []
        for i in range(arr.shape[0]):
            scores = rk.score_view(arr[i], ranker).data
            weights = rk.normalize_scores(scores.astype(np.float32))
            pools = arr[i].mean(axis=(1, 2))
            rows.append(weights.data @ pools)
        return np.stack(rows).astype(np.float32)
    raise FormatError(f"{entry.features}: unsupported feature kind {kind}")


def cmd_summarize(args) -> int:
    entries = dio.load_manifest(args.manifest)
    _, mem, ranker = _load_model(args.checkpoint, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for entry in entries:
        feats = _descriptors_for_entry(entry, ranker)
        n = feats.shape[0]
        m = args.m if args.m is not None else max(1, math.floor(args.ratio * n))
        if m > n:
            raise ConfigError(
                f"summary length m={m} exceeds subshot count n={n} "
                f"for video {entry.video_id}")
        result = mdl.decode(feats, m, mem, window_policy=args.policy)
        ranges = None
        if entry.segmentation is not None:
            ranges = kts.Segmentation.load(entry.segmentation).segments()
        records.append(mdl.summary_to_json_dict(entry.video_id, m, result,
                                                frame_ranges=ranges))
    out = out_dir / "summaries.json"
    out.write_text(json.dumps({"summaries": records}, indent=2))
    _emit_run_records(out_dir, args, [out])
    return 0


def cmd_evaluate(args) -> int:
    entries = {e.video_id: e for e in dio.load_manifest(args.manifest)}
    try:
        summaries = json.loads(Path(args.summaries).read_text())["summaries"]
    except (KeyError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad summaries file {args.summaries}: {exc}") from exc
    reports = []
    for rec in summaries:
        vid = rec["video_id"]
        if vid not in entries:
            raise FormatError(f"summary for unknown video {vid!r}")
        entry = entries[vid]
        if entry.segmentation is None or not entry.gt:
            raise FormatError(f"video {vid!r} lacks segmentation or GT in manifest")
        seg = kts.Segmentation.load(entry.segmentation)
        gts = [dio.GtSummary.from_json(Path(g).read_text()) for g in entry.gt]
        per_gt = dio.f1_per_gt(rec["indices"], gts, seg)
        reports.append({"video_id": vid, "f1": float(np.mean(per_gt)),
                        "per_gt": per_gt})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {"mean_f1": float(np.mean([r["f1"] for r in reports])),
               "videos": reports}
    out.write_text(json.dumps(payload, indent=2))
    _emit_run_records(out.parent, args, [out])
    return 0


def cmd_synth_gen(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    splits = [("train", args.sequences, args.seed)]
    if args.holdout:
        splits.append(("heldout", args.holdout, args.seed + 1_000_003))
    for split, count, seed in splits:
        corpus = dio.synth_corpus(
            k=args.k, num_sequences=count, length_range=(args.len_min, args.len_max),
            noise_sigma=args.sigma, distractor_clusters=args.distractors, seed=seed)
        split_dir = out_dir / split
        split_dir.mkdir(exist_ok=True)
        entries = []
        for i, seq in enumerate(corpus.sequences):
            vid = f"{split}-{i:04d}"
            fpath = split_dir / f"{vid}.feat"
            dio.write_features(seq.features, fpath, kind=dio.KIND_POOL)
            seg = dio.unit_segmentation(seq.length)
            spath = split_dir / f"{vid}.seg.json"
            seg.save(spath)
            gt = dio.GtSummary("planted", seq.storyline_positions, (),
                               dio.GT_BUDGET_RATIO * seq.length)
            gpath = split_dir / f"{vid}.gt.json"
            gpath.write_text(gt.to_json())
            entries.append(dio.ManifestEntry(vid, fpath, segmentation=spath,
                                             gt=[gpath], topic="synthetic"))
            artifacts.extend([fpath, spath, gpath])
        man = out_dir / f"{split}_manifest.json"
        dio.write_manifest(entries, man)
        artifacts.append(man)
    _emit_run_records(out_dir, args, artifacts)
    return 0


def cmd_crop_nfov(args) -> int:
    erp_path = Path(args.erp)
    if erp_path.suffix == ".png":
        erp = sphere.ErpImage(sphere.load_image(erp_path))
    else:
        erp = sphere.load_raw_erp(erp_path)
    spec = sphere.NfovSpec(sphere.Viewpoint(args.lon, args.lat),
                           h_span=args.h_span, v_span=args.v_span,
                           out_width=args.width, out_height=args.height)
    crop = sphere.gnomonic_crop(erp, spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    sphere.save_image(crop, out)
    _emit_run_records(out.parent, args, [out])
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pfmn",
                                description="Story-based temporal summarization "
                                            "of 360-degree videos")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("segment", help="KTS subshot segmentation")
    sp.add_argument("--features", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--max-segments", type=int, default=None)
    sp.add_argument("--penalty", type=float, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("score-views", help="score 81 NFOV candidates per subshot")
    sp.add_argument("--features", type=Path, required=True)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_score_views)

    sp = sub.add_parser("train-ranker", help="max-margin view ranker training")
    sp.add_argument("--pos", type=Path, required=True)
    sp.add_argument("--neg", type=Path, required=True)
    sp.add_argument("--config", type=Path, default=None)
    sp.add_argument("--epochs", type=int, default=30)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_train_ranker)

    for phase in ("pretrain", "finetune"):
        sp = sub.add_parser(phase, help=f"{phase} the memory network")
        sp.add_argument("--manifest", type=Path, required=True)
        sp.add_argument("--config", type=Path, default=None)
        sp.add_argument("--epochs", type=int, default=4)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--init", type=Path, action="append", default=None)
        sp.add_argument("--out", type=Path, required=True)
        sp.set_defaults(func=lambda a, ph=phase: cmd_fit(a, ph))

    sp = sub.add_parser("summarize", help="decode summaries for a manifest")
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--checkpoint", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    group = sp.add_mutually_exclusive_group()
    group.add_argument("--ratio", type=float, default=0.15)
    group.add_argument("--m", type=int, default=None)
    sp.add_argument("--policy", choices=mdl.WINDOW_POLICIES, default="full")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("evaluate", help="frame-level F1 against GT summaries")
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--summaries", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("synth-gen", help="generate a synthetic storyline corpus")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--sequences", type=int, default=200)
    sp.add_argument("--holdout", type=int, default=0)
    sp.add_argument("--len-min", type=int, default=40)
    sp.add_argument("--len-max", type=int, default=60)
    sp.add_argument("--sigma", type=float, default=0.1)
    sp.add_argument("--distractors", type=int, default=30)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth_gen)

    sp = sub.add_parser("crop-nfov", help="gnomonic NFOV crop from an ERP frame")
    sp.add_argument("--erp", type=Path, required=True)
    sp.add_argument("--lon", type=float, required=True)
    sp.add_argument("--lat", type=float, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--h-span", type=float, default=sphere.DEFAULT_H_SPAN)
    sp.add_argument("--v-span", type=float, default=sphere.DEFAULT_V_SPAN)
    sp.add_argument("--width", type=int, default=256)
    sp.add_argument("--height", type=int, default=144)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_crop_nfov)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0,) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError, PermissionError, OSError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FormatError, DimensionError) as exc:
        print(f"error: format: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (NumericError, DomainError, ContractError, DecodeExhausted,
            DecodeInfeasible, FloatingPointError, OverflowError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
