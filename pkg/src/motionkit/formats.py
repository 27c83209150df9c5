"""On-disk formats.

Motion file (``.mkm``)
    ``b"MKMOTION"`` | uint32 LE header length | UTF-8 JSON header | payload.
    The header records ``fps``, ``joints``, ``frames``, ``endianness``
    (always ``"little"``), ``dtype`` (``"float32"``), the ordered ``fields``
    with their per-frame shapes, and optional ``betas`` length.  Payload is
    the fields' float32 values, field after field, each in C order.

Token file (``.mkt``)
    ``b"MKTOKENS"`` | uint32 LE header length | JSON header | uint32 LE codes.
    Header: ``config_hash``, ``vocab_size``, ``downsample`` and a ``clips``
    table of ``{clip_id, offset, count, frames, fps}`` (offset and count in
    codes).

Detection stream (``.ndjson``)
    One JSON object per line: ``clip``, ``frame``, ``tracked`` box and
    ``candidates`` (list of boxes).  A box is ``[x1, y1, x2, y2, confidence]``.

Paired corpus manifest (``.jsonl``)
    One JSON object per line: ``clip_id``, ``text``, ``tokens`` (token-file
    path, relative to the manifest's directory).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import geom
from .curation import BoundingBox, DetectionTrack, InvalidBoxError
from .fsq import TokenSequence
from .representation import MotionSequence

MOTION_MAGIC = b"MKMOTION"
TOKEN_MAGIC = b"MKTOKENS"


class FormatError(ValueError):
    pass


# --------------------------------------------------------------------------
# atomic writes


def write_atomic(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _framed(magic: bytes, header: dict, payload: bytes) -> bytes:
    h = json.dumps(header, sort_keys=True).encode("utf-8")
    return magic + struct.pack("<I", len(h)) + h + payload


def _unframe(raw: bytes, magic: bytes, what: str, path) -> tuple[dict, bytes]:
    if raw[:len(magic)] != magic:
        raise FormatError(f"{path}: not a {what} file (bad magic)")
    off = len(magic)
    if len(raw) < off + 4:
        raise FormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[off:off + 4])
    off += 4
    try:
        header = json.loads(raw[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: unreadable header ({e})") from None
    return header, raw[off + hlen:]


# --------------------------------------------------------------------------
# motion files


def motion_to_bytes(motion: MotionSequence) -> bytes:
    F, N = motion.num_frames, motion.num_joints
    fields = [("translation", [3], motion.translation),
              ("root_orientation", [3, 3], motion.root_orientation),
              ("local_rotations", [N, 3, 3], motion.local_rotations)]
    header = {"fps": float(motion.fps), "joints": N, "frames": F, "endianness": "little", "dtype": "float32",
              "fields": [{"name": n, "shape": s} for n, s, _ in fields]}
    parts = [np.ascontiguousarray(a, dtype="<f4").tobytes() for _, _, a in fields]
    if motion.betas is not None:
        b = np.asarray(motion.betas, dtype="<f4").ravel()
        header["betas"] = int(b.size)
        parts.append(b.tobytes())
    return _framed(MOTION_MAGIC, header, b"".join(parts))


def motion_from_bytes(raw: bytes, path="<bytes>") -> MotionSequence:
    header, payload = _unframe(raw, MOTION_MAGIC, "motion", path)
    try:
        F, N, fps = int(header["frames"]), int(header["joints"]), float(header["fps"])
        fields = header["fields"]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: header missing field {e}") from None
    if header.get("endianness", "little") != "little" or header.get("dtype", "float32") != "float32":
        raise FormatError(f"{path}: only little-endian float32 payloads are supported")
    sizes = [F * int(np.prod(f["shape"])) for f in fields]
    nb = int(header.get("betas", 0))
    expected = 4 * (sum(sizes) + nb)
    if len(payload) != expected:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    arrays, off = {}, 0
    for f, n in zip(fields, sizes):
        arrays[f["name"]] = flat[off:off + n].reshape([F] + list(f["shape"]))
        off += n
    missing = {"translation", "root_orientation", "local_rotations"} - set(arrays)
    if missing:
        raise FormatError(f"{path}: missing fields {sorted(missing)}")
    if arrays["local_rotations"].shape[1] != N:
        raise FormatError(f"{path}: joint count mismatch")
    if not np.all(np.isfinite(flat)):
        raise FormatError(f"{path}: non-finite values in payload")
    # float32 storage loses a little orthonormality; snap back onto SO(3)
    R = geom.project_to_rotation(arrays["root_orientation"])
    L = geom.project_to_rotation(arrays["local_rotations"])
    betas = flat[off:off + nb] if nb else None
    return MotionSequence(fps, arrays["translation"], R, L, betas)


def write_motion(path, motion: MotionSequence) -> None:
    write_atomic(path, motion_to_bytes(motion))


def read_motion(path) -> MotionSequence:
    return motion_from_bytes(Path(path).read_bytes(), path)


# --------------------------------------------------------------------------
# token files


def write_tokens(path, sequences: Iterable[TokenSequence], config_hash: str, vocab_size: int,
                 downsample: int) -> None:
    clips, chunks, off = [], [], 0
    for s in sequences:
        c = np.asarray(s.codes, dtype=np.int64)
        if c.size and (c.min() < 0 or c.max() >= vocab_size):
            raise FormatError(f"clip {s.clip_id}: code outside vocabulary {vocab_size}")
        clips.append({"clip_id": s.clip_id, "offset": off, "count": int(c.size), "frames": int(s.frames),
                      "fps": float(s.fps)})
        chunks.append(c.astype("<u4").tobytes())
        off += c.size
    header = {"config_hash": config_hash, "vocab_size": int(vocab_size), "downsample": int(downsample),
              "clips": clips}
    write_atomic(path, _framed(TOKEN_MAGIC, header, b"".join(chunks)))


def read_tokens(path) -> tuple[dict, list[TokenSequence]]:
    header, payload = _unframe(Path(path).read_bytes(), TOKEN_MAGIC, "token", path)
    if len(payload) % 4:
        raise FormatError(f"{path}: payload length not a multiple of 4")
    codes = np.frombuffer(payload, dtype="<u4").astype(np.int64)
    seqs = []
    for c in header.get("clips", []):
        o, n = int(c["offset"]), int(c["count"])
        if o + n > codes.size:
            raise FormatError(f"{path}: clip {c['clip_id']} extends past the payload")
        seqs.append(TokenSequence(c["clip_id"], codes[o:o + n], int(c["frames"]), float(c["fps"])))
    if codes.size and codes.max() >= header["vocab_size"]:
        raise FormatError(f"{path}: code outside vocabulary {header['vocab_size']}")
    return header, seqs


# --------------------------------------------------------------------------
# detection stream


def _box(v, path, line) -> BoundingBox:
    try:
        return BoundingBox.from_list(v)
    except (InvalidBoxError, TypeError, ValueError) as e:
        raise FormatError(f"{path}:{line}: bad box {v!r} ({e})") from None


def read_detections(path) -> "OrderedDict[str, DetectionTrack]":
    """Group records by clip id, ordered by first appearance; frames must be 0..F-1."""
    per_clip: OrderedDict[str, dict[int, tuple]] = OrderedDict()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                clip, frame = str(rec["clip"]), int(rec["frame"])
                tracked, cands = rec["tracked"], rec["candidates"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise FormatError(f"{path}:{line_no}: malformed detection record ({e})") from None
            if not isinstance(cands, list):
                raise FormatError(f"{path}:{line_no}: candidates must be a list")
            frames = per_clip.setdefault(clip, {})
            if frame in frames:
                raise FormatError(f"{path}:{line_no}: duplicate frame {frame} for clip {clip}")
            frames[frame] = (_box(tracked, path, line_no), [_box(c, path, line_no) for c in cands])
    out = OrderedDict()
    for clip, frames in per_clip.items():
        if sorted(frames) != list(range(len(frames))):
            raise FormatError(f"{path}: clip {clip} frames are not contiguous from 0")
        out[clip] = DetectionTrack([frames[i][0] for i in range(len(frames))],
                                   [frames[i][1] for i in range(len(frames))])
    return out


def detections_to_ndjson(tracks: dict[str, DetectionTrack]) -> str:
    lines = []
    for clip, t in tracks.items():
        for i, (b, cands) in enumerate(zip(t.tracked, t.candidates)):
            lines.append(json.dumps({"clip": clip, "frame": i, "tracked": b.to_list(),
                                     "candidates": [c.to_list() for c in cands]}))
    return "\n".join(lines) + ("\n" if lines else "")


# --------------------------------------------------------------------------
# paired corpus


def read_manifest(path) -> list[dict]:
    base = Path(path).parent
    out = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append({"clip_id": str(rec["clip_id"]), "text": str(rec["text"]),
                            "tokens": str(base / rec["tokens"])})
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise FormatError(f"{path}:{line_no}: malformed manifest record ({e})") from None
    return out


def manifest_to_jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps({"clip_id": r["clip_id"], "text": r["text"], "tokens": r["tokens"]}) + "\n"
                   for r in records)


def load_paired_corpus(path) -> tuple[list[tuple[str, np.ndarray]], Optional[dict]]:
    """``(text, codes)`` pairs from a manifest plus the shared token-file header."""
    pairs, header = [], None
    cache: dict[str, tuple[dict, dict[str, TokenSequence]]] = {}
    for rec in read_manifest(path):
        if rec["tokens"] not in cache:
            h, seqs = read_tokens(rec["tokens"])
            cache[rec["tokens"]] = (h, {s.clip_id: s for s in seqs})
        h, seqs = cache[rec["tokens"]]
        if header is not None and h["config_hash"] != header["config_hash"]:
            raise FormatError(f"{path}: token files come from different tokenizers")
        header = h
        if rec["clip_id"] not in seqs:
            raise FormatError(f"{path}: clip {rec['clip_id']} not found in {rec['tokens']}")
        pairs.append((rec["text"], seqs[rec["clip_id"]].codes))
    return pairs, header
