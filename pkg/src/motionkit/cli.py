"""``motionkit`` command line.

Every subcommand takes ``--out-dir`` (required), ``--config`` (JSON file of
overrides), ``--seed`` and ``--workers``.  Each run writes the resolved
configuration to ``config.json`` and a ``run_manifest.json`` listing input
and output digests.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__, curation, fsq, generator, metrics, synthetic
from .formats import (
    FormatError,
    detections_to_ndjson,
    dumps_json,
    load_paired_corpus,
    manifest_to_jsonl,
    read_detections,
    read_motion,
    read_tokens,
    write_atomic,
    write_motion,
    write_tokens,
)
from .geom import Degenerate6DError, Skeleton
from .geom import ShapeError as GeomShapeError
from .representation import EmptyInputError, TooShortError, encode_features, resample_fps
from .wavelet import WaveletConfig, WaveletError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULTS = {
    "seed": 0,
    "data": {"skeleton": "default", "target_fps": 30.0},
    "curation": {
        "iou_threshold": curation.IOU_THRESHOLD,
        "confidence_threshold": curation.CONFIDENCE_THRESHOLD,
        "jump_threshold": curation.JUMP_THRESHOLD,
        "jump_relative": True,
        "tree_count": curation.TREE_COUNT,
        "subsample_size": curation.CURATION_SUBSAMPLE_SIZE,
        "score_threshold": curation.SCORE_THRESHOLD,
        "min_span": curation.MIN_SPAN,
        "max_span": curation.MAX_SPAN,
        "jitter_margin": curation.JITTER_MARGIN,
    },
    "tokenizer": {
        "levels": [8, 8, 8, 5, 5, 5],
        "downsample": 4,
        "width": 128,
        "depth": 2,
        "wavelet_family": "db4",
        "wavelet_levels": 2,
        "steps": 500,
        "lr": 1e-3,
        "batch": 8,
        "window": 64,
        "grad_clip": 1.0,
    },
    "generator": {
        "layers": 4,
        "width": 256,
        "heads": 4,
        "ffn_mult": 4,
        "max_text": 32,
        "max_motion": 64,
        "steps": 1000,
        "lr": 1e-3,
        "batch": 16,
        "grad_clip": 1.0,
    },
    "sampling": {"strategy": "greedy", "temperature": 1.0, "k": 0, "max_length": None},
    "metrics": {"extractor": "handcrafted", "hist_bins": 50, "jerk_range": None, "retrieval_batch": 32},
}

# keys whose value may be null in addition to their default's type
_NULLABLE = {("tokenizer", "wavelet_family"), ("sampling", "max_length"), ("metrics", "jerk_range")}

SCORE_SHEET_COLUMNS = ["prompt_id", "prompt", "model", "text_alignment", "motion_smoothness",
                       "physical_plausibility", "notes"]


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration


def _check_type(path: str, default, value, nullable: bool):
    if value is None:
        if nullable or default is None:
            return
        raise ConfigError(f"{path}: null not allowed")
    if default is None:
        if not isinstance(value, (int, float, list, str)):
            raise ConfigError(f"{path}: unsupported value {value!r}")
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str) or (path == "data.skeleton" and isinstance(value, dict))
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {type(value).__name__}")


def resolve_config(overrides: Optional[dict] = None) -> dict:
    """Defaults merged with ``overrides``; unknown keys and wrong types are rejected."""
    cfg = copy.deepcopy(DEFAULTS)
    for key, val in (overrides or {}).items():
        if key not in cfg:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(cfg[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{key}: expected an object")
            for sub, v in val.items():
                if sub not in cfg[key]:
                    raise ConfigError(f"unknown config key {key}.{sub}")
                _check_type(f"{key}.{sub}", cfg[key][sub], v, (key, sub) in _NULLABLE)
                cfg[key][sub] = v
        else:
            _check_type(key, cfg[key], val, False)
            cfg[key] = val
    return cfg


def load_config(path: Optional[str], seed: Optional[int]) -> dict:
    overrides = {}
    if path:
        try:
            overrides = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(overrides, dict):
            raise ConfigError(f"{path}: top level must be an object")
    cfg = resolve_config(overrides)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def skeleton_from_config(cfg: dict) -> Skeleton:
    choice = cfg["data"]["skeleton"]
    if isinstance(choice, dict):
        return Skeleton.from_dict(choice)
    if choice == "default":
        return Skeleton.default()
    if choice.startswith("chain:"):
        return Skeleton.chain(int(choice.split(":", 1)[1]))
    raise ConfigError(f"data.skeleton: expected 'default', 'chain:N' or an object, got {choice!r}")


def fsq_from_config(cfg: dict) -> tuple[fsq.FsqConfig, Optional[WaveletConfig], fsq.TrainConfig]:
    t = cfg["tokenizer"]
    try:
        fc = fsq.FsqConfig(tuple(t["levels"]), t["downsample"], t["width"], t["depth"])
        wav = None if t["wavelet_family"] is None else WaveletConfig(t["wavelet_family"], t["wavelet_levels"], "periodic")
    except (fsq.FsqError, WaveletError) as e:
        raise ConfigError(f"tokenizer: {e}") from None
    tc = fsq.TrainConfig(t["steps"], t["lr"], t["batch"], t["window"], t["grad_clip"])
    return fc, wav, tc


def strategy_from_config(cfg: dict) -> generator.Strategy:
    s = cfg["sampling"]
    try:
        return generator.Strategy(s["strategy"], s["temperature"], s["k"])
    except generator.GeneratorError as e:
        raise ConfigError(f"sampling: {e}") from None


# --------------------------------------------------------------------------
# run bookkeeping


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _input_digests(paths: Sequence[Optional[str]]) -> dict:
    out = {}
    for p in paths:
        if not p:
            continue
        P = Path(p)
        if P.is_dir():
            for f in sorted(P.rglob("*")):
                if f.is_file():
                    out[str(f)] = file_digest(f)
        elif P.is_file():
            out[str(P)] = file_digest(P)
    return out


class Run:
    def __init__(self, command: str, args: argparse.Namespace, cfg: dict, inputs: Sequence[Optional[str]]):
        self.command = command
        self.cfg = cfg
        self.out = Path(args.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.workers = max(1, int(args.workers))
        self.started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        self.inputs = _input_digests(inputs)
        self.write("config.json", dumps_json(cfg))

    def path(self, rel: str) -> Path:
        return self.out / rel

    def write(self, rel: str, data: bytes | str) -> Path:
        p = self.path(rel)
        write_atomic(p, data)
        return p

    def finish(self) -> dict:
        outputs = {}
        for f in sorted(self.out.rglob("*")):
            if f.is_file() and f.name != "run_manifest.json":
                outputs[f.relative_to(self.out).as_posix()] = file_digest(f)
        manifest = {
            "command": self.command,
            "config_hash": config_digest(self.cfg),
            "inputs": self.inputs,
            "tool_version": __version__,
            "started": self.started,
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "outputs": outputs,
        }
        self.write("run_manifest.json", dumps_json(manifest))
        return manifest


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def read_motion_dir(path: str) -> dict:
    P = Path(path)
    if not P.is_dir():
        raise FileNotFoundError(f"motion directory {path} not found")
    return {f.stem: read_motion(f) for f in sorted(P.glob("*.mkm"))}


def _loss_csv(losses: Sequence[float]) -> str:
    return "step,loss\n" + "".join(f"{i},{v:.9g}\n" for i, v in enumerate(losses))


def _round(obj, digits: int = 10):
    """Round floats so reports are stable text across platforms."""
    if isinstance(obj, float):
        return float(f"{obj:.{digits}g}")
    if isinstance(obj, dict):
        return {k: _round(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v, digits) for v in obj]
    return obj


# --------------------------------------------------------------------------
# curate


def _write_span(job) -> str:
    out_path, motion, start, end, fps = job
    write_motion(out_path, resample_fps(motion.slice(start, end), fps))
    return Path(out_path).name


def cmd_curate(args, cfg) -> int:
    run = Run("curate", args, cfg, [args.detections, args.motions])
    c = cfg["curation"]
    skel = skeleton_from_config(cfg)
    tracks = read_detections(args.detections) if args.detections else {}
    motions = read_motion_dir(args.motions) if args.motions else {}

    verdicts, valid = {}, {}
    for clip in sorted(set(tracks) | set(motions)):
        if clip not in motions:
            verdicts[clip] = {"status": "skipped", "reason": "missing-motion"}
        elif clip not in tracks:
            verdicts[clip] = {"status": "skipped", "reason": "missing-detections"}
        elif tracks[clip].num_frames != motions[clip].num_frames:
            verdicts[clip] = {"status": "skipped", "reason": "length-mismatch",
                              "detection_frames": tracks[clip].num_frames,
                              "motion_frames": motions[clip].num_frames}
        elif motions[clip].num_joints != skel.num_joints:
            verdicts[clip] = {"status": "skipped", "reason": "joint-count-mismatch"}
        elif motions[clip].num_frames < 4:
            verdicts[clip] = {"status": "skipped", "reason": "too-short", "frames": motions[clip].num_frames}
        else:
            valid[clip] = motions[clip]

    names = list(valid)
    analyses = []
    if names:
        forests = curation.fit_curation_forests([valid[k] for k in names], skel, c["tree_count"],
                                                c["subsample_size"], cfg["seed"])
        analyses = curation.analyze_corpus([valid[k] for k in names], skel, forests, c["score_threshold"],
                                           1, None, c["jitter_margin"])
    jobs = []
    for clip, cv in zip(names, analyses):
        m = valid[clip]
        tv = curation.curate_track(tracks[clip], c["iou_threshold"], c["confidence_threshold"],
                                   c["jump_threshold"], c["jump_relative"], 1)
        spans, dropped = curation.combine_spans(m.num_frames, [tv.spans, cv.spans], (),
                                                c["min_span"], c["max_span"])
        files = []
        for s in spans:
            name = f"{clip}_{s.start:06d}_{s.end:06d}.mkm"
            files.append(name)
            jobs.append((str(run.path("curated") / name), m, s.start, s.end, cfg["data"]["target_fps"]))
        verdicts[clip] = {
            "status": "ok" if spans else "rejected",
            "frames": m.num_frames,
            "spans": [[s.start, s.end] for s in spans],
            "frames_kept": int(sum(len(s) for s in spans)),
            "detection": {"rejected": tv.rejected, "center_jumps": tv.center_jumps},
            "motion": {"orientation_splits": cv.orientation_frames, "jitter_frames": cv.jitter_frames,
                       "rejected_frames": cv.rejected_frames},
            "dropped_short": [list(d) for d in dropped],
            "files": files,
        }
    _pmap(_write_span, jobs, run.workers)

    reasons = {"missing-motion": 0, "missing-detections": 0, "length-mismatch": 0, "joint-count-mismatch": 0,
               "too-short": 0, "no-candidate": 0, "low-iou": 0, "low-confidence": 0, "jitter": 0,
               "short-span": 0}
    for v in verdicts.values():
        if v["status"] == "skipped":
            reasons[v["reason"]] += 1
            continue
        for k, frames in v["detection"]["rejected"].items():
            reasons[k] += len(frames)
        reasons["jitter"] += len(v["motion"]["rejected_frames"])
        reasons["short-span"] += sum(e - s for s, e in v["dropped_short"])
    summary = {
        "clips_in": len(verdicts),
        "clips_accepted": sum(v["status"] == "ok" for v in verdicts.values()),
        "clips_rejected": sum(v["status"] == "rejected" for v in verdicts.values()),
        "clips_skipped": sum(v["status"] == "skipped" for v in verdicts.values()),
        "spans": sum(len(v.get("spans", [])) for v in verdicts.values()),
        "frames_in": int(sum(v.get("frames", 0) for v in verdicts.values())),
        "frames_kept": int(sum(v.get("frames_kept", 0) for v in verdicts.values())),
        "reason_counts": reasons,
    }
    run.write("verdicts.json", dumps_json(verdicts))
    run.write("summary.json", dumps_json(summary))
    run.finish()
    print(f"curate: {summary['clips_accepted']}/{summary['clips_in']} clips accepted, {summary['spans']} spans")
    return EXIT_OK


# --------------------------------------------------------------------------
# tokenizer


def _features_of(motions: dict, skel: Skeleton, fps: float) -> dict:
    out = {}
    for k, m in motions.items():
        if m.num_joints != skel.num_joints:
            raise DataError(f"clip {k}: {m.num_joints} joints, skeleton has {skel.num_joints}")
        out[k] = encode_features(resample_fps(m, fps), skel)
    return out


def cmd_train_fsq(args, cfg) -> int:
    run = Run("train-fsq", args, cfg, [args.motions])
    skel = skeleton_from_config(cfg)
    fc, wav, tc = fsq_from_config(cfg)
    motions = read_motion_dir(args.motions)
    if not motions:
        raise EmptyInputError(f"no .mkm files in {args.motions}")
    feats = _features_of(motions, skel, cfg["data"]["target_fps"])
    model = fsq.build_tokenizer(list(feats.values()), fc, wav, cfg["seed"], skel)
    model, losses = fsq.train_reconstruction(model, list(feats.values()), tc, cfg["seed"])
    fsq.save_tokenizer(model, run.path("tokenizer"), cfg["seed"], len(losses))
    run.write("loss.csv", _loss_csv(losses))
    resampled = [resample_fps(m, cfg["data"]["target_fps"]) for m in motions.values()]
    report = {"steps": len(losses), "initial_loss": losses[0] if losses else None,
              "final_loss": losses[-1] if losses else None, "parameters": model.parameter_count(),
              "config_hash": model.config_hash,
              "reconstruction": fsq.eval_reconstruction(model, resampled, skel)}
    run.write("report.json", dumps_json(_round(report)))
    run.finish()
    print(f"train-fsq: loss {report['initial_loss']:.4g} -> {report['final_loss']:.4g}")
    return EXIT_OK


def _encode_job(job):
    model, clip, feats, fps = job
    return fsq.encode_motion(model, feats, clip, fps)


def _read_captions(path: str) -> dict:
    out = {}
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if line.strip():
                try:
                    rec = json.loads(line)
                    out[str(rec["clip_id"])] = str(rec["text"])
                except (json.JSONDecodeError, KeyError, TypeError) as e:
                    raise FormatError(f"{path}:{n}: malformed caption record ({e})") from None
    return out


_SPAN_SUFFIX = re.compile(r"_\d{6}_\d{6}$")


def caption_for(captions: dict, clip_id: str) -> Optional[str]:
    """Caption of a clip, falling back to its source clip for curated span names."""
    if clip_id in captions:
        return captions[clip_id]
    return captions.get(_SPAN_SUFFIX.sub("", clip_id))


def cmd_tokenize(args, cfg) -> int:
    run = Run("tokenize", args, cfg, [args.tokenizer, args.motions, args.captions])
    model = fsq.load_tokenizer(args.tokenizer)
    skel = model.skeleton or skeleton_from_config(cfg)
    fps = cfg["data"]["target_fps"]
    feats = _features_of(read_motion_dir(args.motions), skel, fps)
    seqs = _pmap(_encode_job, [(model, k, v, fps) for k, v in feats.items()], run.workers)
    write_tokens(run.path("tokens.mkt"), seqs, model.config_hash, model.fsq.vocab_size, model.fsq.downsample)
    report = {"clips": len(seqs), "tokens": int(sum(len(s) for s in seqs)), "config_hash": model.config_hash}
    if args.captions:
        caps = _read_captions(args.captions)
        texts = {s.clip_id: caption_for(caps, s.clip_id) for s in seqs}
        records = [{"clip_id": s.clip_id, "text": texts[s.clip_id], "tokens": "tokens.mkt"}
                   for s in seqs if texts[s.clip_id] is not None]
        report["uncaptioned"] = [k for k, t in texts.items() if t is None]
        run.write("manifest.jsonl", manifest_to_jsonl(records))
    run.write("report.json", dumps_json(report))
    run.finish()
    print(f"tokenize: {report['clips']} clips, {report['tokens']} tokens")
    return EXIT_OK


# --------------------------------------------------------------------------
# generator


def cmd_train_gen(args, cfg) -> int:
    run = Run("train-gen", args, cfg, [args.manifest])
    pairs, header = load_paired_corpus(args.manifest)
    if not pairs:
        raise EmptyInputError(f"{args.manifest} lists no pairs")
    g = cfg["generator"]
    longest = max(len(c) for _, c in pairs)
    if longest + 1 > g["max_motion"]:
        raise DataError(f"longest token sequence ({longest}) needs generator.max_motion >= {longest + 1}")
    try:
        gc = generator.GenConfig(header["vocab_size"], g["layers"], g["width"], g["heads"], g["ffn_mult"],
                                 g["max_text"], g["max_motion"], tokenizer_hash=header["config_hash"])
    except generator.GeneratorError as e:
        raise ConfigError(f"generator: {e}") from None
    model = generator.init_generator(gc, cfg["seed"])
    tc = generator.GenTrainConfig(g["steps"], g["lr"], g["batch"], g["grad_clip"])
    model, losses = generator.train_generator(model, pairs, tc, cfg["seed"])
    generator.save_generator(model, run.path("generator"), cfg["seed"], len(losses))
    run.write("loss.csv", _loss_csv(losses))
    report = {"pairs": len(pairs), "steps": len(losses), "initial_loss": losses[0] if losses else None,
              "final_loss": losses[-1] if losses else None, "parameters": model.parameter_count(),
              "vocab": gc.vocab, "tokenizer_hash": gc.tokenizer_hash}
    run.write("report.json", dumps_json(_round(report)))
    run.finish()
    print(f"train-gen: loss {report['initial_loss']:.4g} -> {report['final_loss']:.4g}")
    return EXIT_OK


def cmd_generate(args, cfg) -> int:
    run = Run("generate", args, cfg, [args.generator, args.tokenizer])
    gen = generator.load_generator(args.generator)
    tok = fsq.load_tokenizer(args.tokenizer)
    generator.check_compatible(gen, tok)
    skel = tok.skeleton or skeleton_from_config(cfg)
    motion, sample = generator.generate(gen, tok, args.text, skel, strategy_from_config(cfg), cfg["seed"],
                                        cfg["data"]["target_fps"], cfg["sampling"]["max_length"])
    write_motion(run.path("motion.mkm"), motion)
    seq = fsq.TokenSequence("generated", sample.codes, motion.num_frames, motion.fps)
    write_tokens(run.path("tokens.mkt"), [seq], tok.config_hash, tok.fsq.vocab_size, tok.fsq.downsample)
    run.write("sample.json", dumps_json({"text": args.text, "codes": sample.codes.tolist(),
                                         "truncated": sample.truncated, "frames": motion.num_frames,
                                         "strategy": strategy_from_config(cfg).to_dict(), "seed": cfg["seed"]}))
    run.finish()
    print(f"generate: {len(sample.codes)} tokens -> {motion.num_frames} frames"
          + (" (truncated)" if sample.truncated else ""))
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluation and statistics


def _positions(motions: dict, skel: Skeleton, fps: float) -> dict:
    return {k: (resample_fps(m, fps).joint_positions(skel), fps) for k, m in motions.items()}


def cmd_eval(args, cfg) -> int:
    run = Run("eval", args, cfg, [args.reference, args.candidate, args.tokenizer, args.similarity])
    skel = skeleton_from_config(cfg)
    fps = cfg["data"]["target_fps"]
    mc = cfg["metrics"]
    ref = read_motion_dir(args.reference)
    if not ref:
        raise EmptyInputError(f"no .mkm files in {args.reference}")
    ref_pos = _positions(ref, skel, fps)
    report: dict = {"reference_clips": len(ref)}
    jr = tuple(mc["jerk_range"]) if mc["jerk_range"] else None
    report["reference_acceleration"] = _pooled_acc(ref_pos)
    ref_jerk = metrics.jerk_stats(list(ref_pos.values()), mc["hist_bins"], jr)
    report["reference_jerk"] = {k: v for k, v in ref_jerk.items() if k != "histogram"}

    if args.candidate:
        cand = read_motion_dir(args.candidate)
        cand_pos = _positions(cand, skel, fps)
        paired, skipped = [], {}
        for k in sorted(ref_pos):
            if k not in cand_pos:
                skipped[k] = "missing-candidate"
            elif ref_pos[k][0].shape != cand_pos[k][0].shape:
                skipped[k] = "frame-count-mismatch"
            else:
                paired.append(k)
        for k in sorted(set(cand_pos) - set(ref_pos)):
            skipped[k] = "missing-reference"
        if paired:
            err = np.concatenate([np.linalg.norm(ref_pos[k][0] - cand_pos[k][0], axis=-1).ravel() for k in paired])
            report["mpjpe_mm"] = float(err.mean() * 1000.0)
        report["paired_clips"] = len(paired)
        report["skipped"] = skipped
        report["candidate_acceleration"] = _pooled_acc(cand_pos)
        cand_jerk = metrics.jerk_stats(list(cand_pos.values()), mc["hist_bins"], jr)
        report["candidate_jerk"] = {k: v for k, v in cand_jerk.items() if k != "histogram"}
        if mc["extractor"] != "handcrafted":
            raise ConfigError("metrics.extractor: the CLI computes FID with the 'handcrafted' extractor only")
        fa = metrics.motion_feature_stats(list(ref_pos.values()))
        fb = metrics.motion_feature_stats(list(cand_pos.values()))
        report["fid"] = metrics.frechet_distance(fa, fb)
        run.write("candidate_jerk_histogram.csv", metrics.histogram_csv(cand_jerk["histogram"]))

    if args.tokenizer:
        tok = fsq.load_tokenizer(args.tokenizer)
        report["reconstruction"] = fsq.eval_reconstruction(tok, [resample_fps(m, fps) for m in ref.values()],
                                                           tok.skeleton or skel)
    if args.similarity:
        S = np.load(args.similarity)
        report["r_precision"] = {f"R@{k}": v for k, v in metrics.batched_r_precision(
            lambda idx: S[np.ix_(idx, idx)], S.shape[0], (1, 2, 3), mc["retrieval_batch"], cfg["seed"]).items()}

    report = _round(report)
    run.write("reference_jerk_histogram.csv", metrics.histogram_csv(ref_jerk["histogram"]))
    run.write("report.json", dumps_json(report))
    run.write("report.txt", metrics.format_report(report))
    run.finish()
    sys.stdout.write(metrics.format_report(report))
    return EXIT_OK


def _pooled_acc(pos: dict) -> dict:
    series = [metrics.acceleration_series(p, fps) for p, fps in pos.values() if p.shape[0] >= 3]
    if not series:
        return {"mean": None, "max": None}
    a = np.concatenate(series)
    return {"mean": float(a.mean()), "max": float(a.max())}


def _hist_block(values: np.ndarray, bins: int) -> dict:
    hi = float(values.max()) if values.size and values.max() > 0 else 1.0
    counts, edges = np.histogram(values, bins=bins, range=(0.0, hi))
    return {"counts": counts.tolist(), "edges": edges.tolist()}


def _score_sheet(prompts: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCORE_SHEET_COLUMNS)
    for i, p in enumerate(prompts):
        w.writerow([i, p, "", "", "", "", ""])
    return buf.getvalue()


def cmd_stats(args, cfg) -> int:
    run = Run("stats", args, cfg, [args.motions, args.prompts])
    skel = skeleton_from_config(cfg)
    fps = cfg["data"]["target_fps"]
    mc = cfg["metrics"]
    motions = read_motion_dir(args.motions)
    if not motions:
        raise EmptyInputError(f"no .mkm files in {args.motions}")
    pos = _positions(motions, skel, fps)
    jr = tuple(mc["jerk_range"]) if mc["jerk_range"] else None
    jerk = metrics.jerk_stats(list(pos.values()), mc["hist_bins"], jr)
    lengths = np.array([p.shape[0] / fps for p, _ in pos.values()])
    speeds = np.concatenate([np.linalg.norm(np.diff(p[:, 0, [0, 2]], axis=0), axis=-1) * fps
                             for p, _ in pos.values()])
    length_hist = _hist_block(lengths, mc["hist_bins"])
    speed_hist = _hist_block(speeds, mc["hist_bins"])
    stats = {
        "clips": len(motions),
        "frames": int(sum(p.shape[0] for p, _ in pos.values())),
        "duration_s": {"total": float(lengths.sum()), "mean": float(lengths.mean()),
                       "min": float(lengths.min()), "max": float(lengths.max())},
        "root_speed_mps": {"mean": float(speeds.mean()), "p50": float(np.percentile(speeds, 50)),
                           "p95": float(np.percentile(speeds, 95))},
        "jerk": {k: v for k, v in jerk.items() if k != "histogram"},
    }
    run.write("stats.json", dumps_json(_round(stats)))
    run.write("jerk_histogram.csv", metrics.histogram_csv(jerk["histogram"]))
    run.write("length_histogram.csv", metrics.histogram_csv(length_hist))
    run.write("speed_histogram.csv", metrics.histogram_csv(speed_hist))
    prompts = []
    if args.prompts:
        prompts = [ln.strip() for ln in Path(args.prompts).read_text(encoding="utf-8").splitlines() if ln.strip()]
    run.write("score_sheet.csv", _score_sheet(prompts))
    run.finish()
    print(f"stats: {stats['clips']} clips, mean jerk {stats['jerk']['mean']:.4g} m/s^3")
    return EXIT_OK


# --------------------------------------------------------------------------
# synthetic fixtures


def cmd_fixtures(args, cfg) -> int:
    """Write a synthetic bundle: motions, matching detections and ground truth."""
    run = Run("fixtures", args, cfg, [])
    rng = np.random.default_rng(cfg["seed"])
    skel = skeleton_from_config(cfg)
    truth = {}
    tracks = {}
    if args.kind == "curation":
        clips, outlier = synthetic.curation_corpus(rng, args.clips, skel)
        for i, c in enumerate(clips):
            name = f"clip{i:04d}"
            write_motion(run.path(f"motions/{name}.mkm"), c.motion)
            tracks[name] = synthetic.detection_track(rng, c.motion.num_frames)
            truth[name] = {"flip_frames": c.flip_frames, "burst_frames": c.burst_frames}
        truth["_global_outlier"] = f"clip{outlier:04d}"
    else:
        lo, hi = (150, 200) if args.frames is None else (args.frames, args.frames)
        for i in range(args.clips):
            name = f"clip{i:04d}"
            m = synthetic.random_motion(rng, int(rng.integers(lo, hi + 1)), skel)
            if args.kind == "noisy":
                m = synthetic.add_jitter(m, rng, 0.05)
            write_motion(run.path(f"motions/{name}.mkm"), m)
            tracks[name] = synthetic.detection_track(rng, m.num_frames)
            truth[name] = {"flip_frames": [], "burst_frames": []}
    run.write("detections.ndjson", detections_to_ndjson(tracks))
    run.write("ground_truth.json", dumps_json(truth))
    if args.captions:
        verbs = ["walks", "turns", "jogs", "steps", "strolls", "wanders"]
        adverbs = ["slowly", "forward", "left", "right", "in a circle", "casually"]
        lines = [json.dumps({"clip_id": k, "text": f"a person {verbs[i % 6]} {adverbs[(i // 6) % 6]}"})
                 for i, k in enumerate(sorted(tracks))]
        run.write("captions.jsonl", "\n".join(lines) + "\n")
    run.finish()
    print(f"fixtures: wrote {len(tracks)} clips to {run.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="motionkit", description="Motion curation, tokenization, generation and evaluation.")
    p.add_argument("--version", action="version", version=f"motionkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--config", help="JSON file of configuration overrides")
        sp.add_argument("--seed", type=int, help="overrides the configured seed")
        sp.add_argument("--workers", type=int, default=1, help="parallel workers for per-clip work")
        sp.add_argument("--out-dir", required=True, help="output directory")
        sp.set_defaults(func=fn)
        return sp

    sp = add("curate", cmd_curate, "filter detections + motions into curated clip spans")
    sp.add_argument("--detections", help="detection stream (NDJSON)")
    sp.add_argument("--motions", help="directory of .mkm motion files")

    sp = add("train-fsq", cmd_train_fsq, "train the motion tokenizer")
    sp.add_argument("--motions", required=True)

    sp = add("tokenize", cmd_tokenize, "encode motions into a token file")
    sp.add_argument("--tokenizer", required=True, help="tokenizer checkpoint directory")
    sp.add_argument("--motions", required=True)
    sp.add_argument("--captions", help="JSONL of {clip_id, text}; also writes a paired manifest")

    sp = add("train-gen", cmd_train_gen, "train the text-to-motion-token generator")
    sp.add_argument("--manifest", required=True, help="paired corpus manifest (JSONL)")

    sp = add("generate", cmd_generate, "generate a motion from text")
    sp.add_argument("--generator", required=True)
    sp.add_argument("--tokenizer", required=True)
    sp.add_argument("--text", required=True)

    sp = add("eval", cmd_eval, "compute the metrics report")
    sp.add_argument("--reference", required=True, help="directory of reference motions")
    sp.add_argument("--candidate", help="directory of candidate motions paired by file name")
    sp.add_argument("--tokenizer", help="also report tokenizer reconstruction on the reference set")
    sp.add_argument("--similarity", help=".npy text-by-motion similarity matrix for R@k")

    sp = add("stats", cmd_stats, "corpus statistics, jerk histogram and a blank score sheet")
    sp.add_argument("--motions", required=True)
    sp.add_argument("--prompts", help="text file, one evaluation prompt per line, for the score sheet")

    sp = add("fixtures", cmd_fixtures, "write a synthetic motion + detection bundle")
    sp.add_argument("--kind", choices=["clean", "noisy", "curation"], default="clean")
    sp.add_argument("--clips", type=int, default=8)
    sp.add_argument("--frames", type=int, help="fixed clip length (clean/noisy kinds)")
    sp.add_argument("--captions", action="store_true", help="also write captions.jsonl")
    return p


_DATA_ERRORS = (FormatError, FileNotFoundError, DataError, EmptyInputError, TooShortError, GeomShapeError,
                fsq.FsqError, generator.GeneratorError, IsADirectoryError, NotADirectoryError)
_NUMERIC_ERRORS = (fsq.TrainingDiverged, FloatingPointError, Degenerate6DError, np.linalg.LinAlgError,
                   metrics.MetricError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    prefix = f"motionkit {args.command}: error:"
    try:
        cfg = load_config(args.config, args.seed)
        return args.func(args, cfg)
    except ConfigError as e:
        print(f"{prefix} {e}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERIC_ERRORS as e:
        print(f"{prefix} numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except _DATA_ERRORS as e:
        print(f"{prefix} {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
