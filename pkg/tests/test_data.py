import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascadetrack import data
from cascadetrack.data import EASY, HARD, SceneSpec, generate, load_sequence, save_sequence
from cascadetrack.geometry import BoundingBox


def test_static_scene_has_constant_boxes():
    seq = generate(SceneSpec(velocity_x=0, velocity_y=0), 8, np.random.default_rng(0))
    assert all(b == seq.boxes[0] for b in seq.boxes)


def test_same_seed_gives_identical_sequences():
    spec = data.corpus_spec(1005)
    a = generate(spec, 20, np.random.default_rng(3))
    b = generate(spec, 20, np.random.default_rng(3))
    assert a == b
    assert all(fa.tobytes() == fb.tobytes() for fa, fb in zip(a.frames, b.frames))


def test_velocity_moves_centre_exactly():
    seq = generate(SceneSpec(velocity_x=2, velocity_y=0), 11, np.random.default_rng(0))
    assert seq.boxes[10].cx - seq.boxes[0].cx == 20
    assert all(b.cy == seq.boxes[0].cy for b in seq.boxes)


def test_hard_frames_move_faster():
    spec = SceneSpec(velocity_x=1, hard_block=2, hard_motion=2.0)
    seq = generate(spec, 6, np.random.default_rng(0))
    steps = [b.cx - a.cx for a, b in zip(seq.boxes, seq.boxes[1:])]
    assert seq.tags == [EASY, EASY, HARD, HARD, EASY, EASY]
    assert steps == [1, 2, 2, 1, 1]


def test_generation_errors():
    with pytest.raises(ValueError):
        generate(SceneSpec(), 1)
    with pytest.raises(ValueError):
        generate(SceneSpec(start_cx=5.0), 3)
    with pytest.raises(ValueError):
        generate(SceneSpec(velocity_x=5, bounce=False), 30)
    with pytest.raises(ValueError):
        SceneSpec(noise=-1)


def test_bouncing_keeps_target_in_frame():
    seq = generate(SceneSpec(velocity_x=3.3, velocity_y=-2.1), 200, np.random.default_rng(0))
    assert all(b.inside((128, 128)) for b in seq.boxes)


def _gradient_energy(img):
    gy, gx = np.gradient(img.astype(float))
    return float(np.mean(gx ** 2 + gy ** 2))


def test_hard_frames_are_blurrier():
    spec = SceneSpec(velocity_x=0, hard_block=3, hard_blur=1.5, noise=0)
    seq = generate(spec, 12, np.random.default_rng(0))
    easy = [_gradient_energy(f) for f, t in zip(seq.frames, seq.tags) if t == EASY]
    hard = [_gradient_energy(f) for f, t in zip(seq.frames, seq.tags) if t == HARD]
    assert max(hard) < min(easy)


def test_distractors_only_on_hard_frames():
    base = dict(velocity_x=0, hard_block=3, hard_blur=0, hard_motion=1, noise=0, texture_seed=4)
    plain = generate(SceneSpec(**base), 12)
    clutter = generate(SceneSpec(**base, clutter=3), 12)
    for a, b, tag in zip(plain.frames, clutter.frames, plain.tags):
        assert np.array_equal(a, b) == (tag == EASY)


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_generated_boxes_are_valid(seed):
    seq = data.corpus_sequence(seed, 30)
    for f, b in zip(seq.frames, seq.boxes):
        assert f.dtype == np.uint8 and f.shape == (128, 128)
        assert b.inside((128, 128)) and b.w >= 4 and b.h >= 4
    assert len(seq.frames) == len(seq.boxes) == len(seq.tags) == 30


def test_standard_corpus_recipe():
    train, test = data.standard_corpus(n_train=3, n_test=2, length=100)
    assert len(data.TRAIN_SEEDS) == 40 and len(data.TEST_SEEDS) == 20
    assert not set(data.TRAIN_SEEDS) & set(data.TEST_SEEDS)
    for seq in train + test:
        assert len(seq) == 100
        assert abs(seq.tags.count(EASY) / len(seq) - 0.5) <= 0.05
    assert [s.name for s in train] == ["seq1000", "seq1001", "seq1002"]


def test_full_corpus_sizes(standard_corpus):
    train, test = standard_corpus
    assert len(train) == 40 and len(test) == 20
    assert {len(s) for s in train + test} == {100}
    assert not {s.name for s in train} & {s.name for s in test}


def test_sequence_round_trip(tmp_path):
    seq = data.corpus_sequence(1001, 7)
    save_sequence(seq, tmp_path / "s")
    back = load_sequence(tmp_path / "s")
    assert back == seq
    assert back.spec == seq.spec and back.name == seq.name
    # saving again reproduces the same bytes
    save_sequence(back, tmp_path / "t")
    for name in os.listdir(tmp_path / "s"):
        assert (tmp_path / "s" / name).read_bytes() == (tmp_path / "t" / name).read_bytes()


def test_annotation_lines_parse_to_same_reals(tmp_path):
    seq = data.corpus_sequence(1002, 4)
    save_sequence(seq, tmp_path)
    lines = (tmp_path / "groundtruth.txt").read_text().splitlines()
    for i, (line, box) in enumerate(zip(lines, seq.boxes)):
        idx, cx, cy, w, h = line.split()
        assert int(idx) == i and BoundingBox(float(cx), float(cy), float(w), float(h)) == box


def test_truncated_annotations_rejected(tmp_path):
    save_sequence(data.corpus_sequence(1003, 5), tmp_path)
    gt = tmp_path / "groundtruth.txt"
    gt.write_text("".join(gt.read_text().splitlines(keepends=True)[:-1]))
    with pytest.raises(ValueError, match="annotations"):
        load_sequence(tmp_path)


def test_malformed_files_rejected(tmp_path):
    save_sequence(data.corpus_sequence(1004, 3), tmp_path)
    frame = tmp_path / "frame_0001.pgm"
    raw = frame.read_bytes()
    frame.write_bytes(raw[:-10])
    with pytest.raises(ValueError):
        load_sequence(tmp_path)
    frame.write_bytes(b"P2" + raw[2:])
    with pytest.raises(ValueError):
        load_sequence(tmp_path)
    frame.write_bytes(raw)
    m = tmp_path / "manifest.json"
    manifest = json.loads(m.read_text())
    manifest["format"] = "other"
    m.write_text(json.dumps(manifest))
    with pytest.raises(ValueError):
        load_sequence(tmp_path)
    m.write_text("{not json")
    with pytest.raises(ValueError):
        load_sequence(tmp_path)


def test_pgm_round_trip_and_comments(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7)).astype(np.uint8)
    data.write_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(data.read_pgm(tmp_path / "a.pgm"), img)
    (tmp_path / "b.pgm").write_bytes(b"P5\n# comment\n7 5\n255\n" + img.tobytes())
    assert np.array_equal(data.read_pgm(tmp_path / "b.pgm"), img)
    with pytest.raises(ValueError):
        data.write_pgm(tmp_path / "c.pgm", img.astype(np.float32))


def test_corpus_round_trip(tmp_path):
    seqs = [data.corpus_sequence(s, 3) for s in (1000, 1001)]
    data.save_corpus(seqs, tmp_path)
    assert data.load_corpus(tmp_path) == seqs
    assert data.load_corpus(tmp_path / "seq1000") == seqs[:1]
