import jsonschema
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cascadetrack import bench, data
from cascadetrack.agent import QNet
from cascadetrack.config import CascadeConfig
from cascadetrack.features import default_conv_spec, init_conv_weights
from cascadetrack.geometry import BoundingBox

GT = [BoundingBox(10 + i, 20, 8, 6) for i in range(10)]
FAR = [BoundingBox(100, 100, 8, 6)] * 10

boxes = st.builds(BoundingBox, st.floats(10, 30), st.floats(10, 30), st.floats(2, 15), st.floats(2, 15))


def test_perfect_tracking_auc():
    assert bench.success_auc(GT, GT) == pytest.approx(20 / 21, abs=1e-15)
    assert round(bench.success_auc(GT, GT), 3) == 0.952


def test_zero_overlap_auc():
    assert bench.success_auc(FAR, GT) == 0.0


def test_half_perfect_half_missed():
    pred = GT[:5] + FAR[:5]
    assert bench.success_auc(pred, GT) == pytest.approx(10 / 21, abs=1e-15)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        bench.success_auc(GT[:3], GT)


@given(st.lists(st.tuples(boxes, boxes), min_size=1, max_size=20), st.randoms())
def test_success_curve_monotone_and_order_free(pairs, rnd):
    pred, gt = [p for p, _ in pairs], [g for _, g in pairs]
    curve = bench.success_curve(pred, gt)
    assert np.all(np.diff(curve) <= 0)
    assert 0 <= bench.success_auc(pred, gt) <= 1
    idx = list(range(len(pairs)))
    rnd.shuffle(idx)
    assert bench.success_auc([pred[i] for i in idx], [gt[i] for i in idx]) == pytest.approx(
        bench.success_auc(pred, gt), abs=1e-15)


def test_stopping_stats_examples():
    probs, mean = bench.stopping_stats([1] * 7, 5)
    assert list(probs) == [1, 0, 0, 0, 0] and mean == 1
    probs, mean = bench.stopping_stats([1, 2, 3, 4, 5] * 3, 5)
    assert np.allclose(probs, 0.2) and mean == 3
    with pytest.raises(ValueError):
        bench.stopping_stats([], 5)
    with pytest.raises(ValueError):
        bench.stopping_stats([6], 5)


@given(st.lists(st.integers(1, 5), min_size=1, max_size=50))
def test_stop_probabilities_sum_to_one(steps):
    probs, mean = bench.stopping_stats(steps, 5)
    assert abs(probs.sum() - 1) <= 1e-9
    assert mean == pytest.approx(np.mean(steps))


@pytest.fixture(scope="module")
def small_report():
    config = CascadeConfig()
    rng = np.random.default_rng(0)
    net = QNet.init(rng)
    weights = init_conv_weights(default_conv_spec(3), rng)
    corpus = [data.corpus_sequence(2000 + i, 6) for i in range(2)]
    return bench.compare_baselines(corpus, net, config, weights), corpus, net, weights, config


def test_report_shape(small_report):
    report, corpus, *_ = small_report
    assert len(report.rows) == 4 * len(corpus)
    assert set(report.aggregate) == set(bench.METHODS)
    for r in report.rows:
        assert 0 <= r.auc <= 1 and abs(sum(r.stop_probs) - 1) < 1e-9
        assert len(r.steps) == len(r.frame_ms) == 5


def test_last_layer_baseline_uses_every_layer(small_report):
    report, *_ = small_report
    assert report.aggregate["east_last"]["mean_steps"] == 5
    assert report.aggregate["dcf_only"]["mean_steps"] == 1


def test_self_speedup_is_one(small_report):
    report, *_ = small_report
    for m in report.speedup:
        assert report.speedup[m][m] == 1.0


def test_evaluation_is_deterministic_apart_from_timing(small_report):
    report, corpus, net, weights, config = small_report
    again = bench.compare_baselines(corpus, net, config, weights)
    for a, b in zip(report.rows, again.rows):
        assert (a.method, a.sequence, a.auc, a.steps) == (b.method, b.sequence, b.auc, b.steps)


def test_parallel_workers_give_same_rows(small_report):
    report, corpus, net, weights, config = small_report
    par = bench.compare_baselines(corpus, net, config, weights, workers=2)
    assert [(r.method, r.sequence, r.auc, r.steps) for r in par.rows] == [
        (r.method, r.sequence, r.auc, r.steps) for r in report.rows]


def test_missing_policy_or_weights_rejected(small_report):
    _, corpus, net, _, config = small_report
    with pytest.raises(ValueError):
        bench.compare_baselines(corpus, None, config)
    with pytest.raises(ValueError):
        bench.compare_baselines(corpus, net, config)
    with pytest.raises(ValueError):
        bench.compare_baselines([], net, config, [])


def test_csv_round_trip(small_report, tmp_path):
    report, *_ = small_report
    path = tmp_path / "r.csv"
    bench.emit(report, "csv", path)
    header = path.read_text().splitlines()[0]
    assert header == "method,sequence,auc,mean_steps,median_ms_per_frame,stop_p1,stop_p2,stop_p3,stop_p4,stop_p5"
    rows = bench.read_csv(path)
    assert len(rows) == len(report.rows) + len(report.aggregate)
    for row in rows:
        if row["sequence"] == "ALL":
            ref = report.aggregate[row["method"]]
            probs = ref["stop_probs"]
        else:
            ref = report.row(row["method"], row["sequence"]).__dict__
            probs = ref["stop_probs"]
        for key in ("auc", "mean_steps", "median_ms_per_frame"):
            assert abs(row[key] - ref[key]) <= 1e-9
        assert all(abs(row[f"stop_p{i + 1}"] - p) <= 1e-9 for i, p in enumerate(probs))


def test_json_round_trip_and_schema(small_report, tmp_path):
    report, *_ = small_report
    path = tmp_path / "r.json"
    bench.emit(report, "json", path)
    doc = bench.read_json(path)
    jsonschema.validate(doc, bench.REPORT_SCHEMA)
    for m, agg in report.aggregate.items():
        for key, value in agg.items():
            assert np.allclose(doc["aggregate"][m][key], value, rtol=0, atol=1e-9)


def test_unknown_format_rejected(small_report, tmp_path):
    with pytest.raises(ValueError):
        bench.emit(small_report[0], "xml", tmp_path / "r.xml")


def test_overlays_one_per_frame(tmp_path):
    seq = data.corpus_sequence(2005, 4)
    paths = bench.emit_overlays(seq, seq.boxes, tmp_path / "ov")
    assert len(paths) == len(seq.frames)
    raw = open(paths[0], "rb").read()
    assert raw.startswith(b"P6\n128 128\n255\n")
    img = np.frombuffer(raw[len(b"P6\n128 128\n255\n"):], dtype=np.uint8).reshape(128, 128, 3)
    b = seq.boxes[0]
    # prediction drawn over ground truth: the top edge is red
    assert tuple(img[int(np.floor(b.y0)), int(np.floor(b.x0)) + 2]) == (255, 0, 0)
    with pytest.raises(ValueError):
        bench.emit_overlays(seq, seq.boxes[:2], tmp_path / "x")
