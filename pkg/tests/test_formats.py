import json
import struct

import numpy as np
import pytest

from motionkit import formats, synthetic
from motionkit.curation import BoundingBox, DetectionTrack
from motionkit.formats import FormatError
from motionkit.fsq import TokenSequence


def test_motion_roundtrip(tmp_path, rng, skeleton):
    m = synthetic.random_motion(rng, 40, skeleton)
    path = tmp_path / "a.mkm"
    formats.write_motion(path, m)
    back = formats.read_motion(path)
    assert back.fps == m.fps and back.num_frames == 40 and back.num_joints == skeleton.num_joints
    np.testing.assert_allclose(back.translation, m.translation, atol=1e-6)
    np.testing.assert_allclose(back.local_rotations, m.local_rotations, atol=1e-6)
    assert formats.motion_to_bytes(m) == path.read_bytes()


def test_motion_header_layout(rng, skeleton):
    raw = formats.motion_to_bytes(synthetic.random_motion(rng, 5, skeleton))
    assert raw[:8] == b"MKMOTION"
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen])
    assert header["endianness"] == "little" and header["dtype"] == "float32"
    N = skeleton.num_joints
    assert len(raw) - 12 - hlen == 4 * 5 * (3 + 9 + 9 * N)


def test_motion_corruption_detected(rng, skeleton, tmp_path):
    raw = formats.motion_to_bytes(synthetic.random_motion(rng, 5, skeleton))
    with pytest.raises(FormatError, match="bad magic"):
        formats.motion_from_bytes(b"X" + raw[1:])
    with pytest.raises(FormatError, match="payload"):
        formats.motion_from_bytes(raw[:-4])
    with pytest.raises(FormatError):
        formats.motion_from_bytes(raw[:10])


def test_token_roundtrip(tmp_path):
    seqs = [TokenSequence("a", [0, 5, 63999], 12, 30.0), TokenSequence("b", [7], 3, 30.0)]
    formats.write_tokens(tmp_path / "t.mkt", seqs, "abc", 64000, 4)
    header, back = formats.read_tokens(tmp_path / "t.mkt")
    assert header["config_hash"] == "abc" and header["vocab_size"] == 64000
    assert [s.clip_id for s in back] == ["a", "b"]
    np.testing.assert_array_equal(back[0].codes, [0, 5, 63999])
    assert back[1].frames == 3


def test_token_vocab_enforced(tmp_path):
    with pytest.raises(FormatError):
        formats.write_tokens(tmp_path / "t.mkt", [TokenSequence("a", [10], 4, 30.0)], "h", 10, 4)


def test_detections_roundtrip(tmp_path):
    t = DetectionTrack([BoundingBox(0, 0, 1, 2), BoundingBox(1, 1, 2, 3)],
                       [[BoundingBox(0, 0, 1, 2, 0.9)], []])
    path = tmp_path / "d.ndjson"
    path.write_text(formats.detections_to_ndjson({"c1": t}))
    back = formats.read_detections(path)
    assert list(back) == ["c1"]
    assert back["c1"].num_frames == 2
    assert back["c1"].candidates[0][0].confidence == 0.9


def test_detections_errors_name_the_line(tmp_path):
    good = json.dumps({"clip": "c", "frame": 0, "tracked": [0, 0, 1, 1, 1], "candidates": []})
    bad_box = json.dumps({"clip": "c", "frame": 1, "tracked": [0, 0, -1, 1, 1], "candidates": []})
    path = tmp_path / "d.ndjson"
    path.write_text(good + "\n" + bad_box + "\n")
    with pytest.raises(FormatError, match=r"d\.ndjson:2"):
        formats.read_detections(path)
    path.write_text(good + "\n{not json\n")
    with pytest.raises(FormatError, match=r"d\.ndjson:2"):
        formats.read_detections(path)
    path.write_text(good + "\n" + good + "\n")
    with pytest.raises(FormatError, match="duplicate"):
        formats.read_detections(path)
    gap = json.dumps({"clip": "c", "frame": 2, "tracked": [0, 0, 1, 1, 1], "candidates": []})
    path.write_text(good + "\n" + gap + "\n")
    with pytest.raises(FormatError, match="contiguous"):
        formats.read_detections(path)


def test_paired_corpus(tmp_path):
    formats.write_tokens(tmp_path / "t.mkt", [TokenSequence("a", [1, 2], 8, 30.0)], "h", 10, 4)
    (tmp_path / "m.jsonl").write_text(formats.manifest_to_jsonl([{"clip_id": "a", "text": "walk", "tokens": "t.mkt"}]))
    pairs, header = formats.load_paired_corpus(tmp_path / "m.jsonl")
    assert pairs[0][0] == "walk" and pairs[0][1].tolist() == [1, 2]
    assert header["config_hash"] == "h"
    (tmp_path / "m.jsonl").write_text(formats.manifest_to_jsonl([{"clip_id": "zz", "text": "x", "tokens": "t.mkt"}]))
    with pytest.raises(FormatError, match="not found"):
        formats.load_paired_corpus(tmp_path / "m.jsonl")


def test_atomic_write_leaves_no_temp(tmp_path):
    formats.write_atomic(tmp_path / "sub" / "x.txt", "hello")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["x.txt"]
