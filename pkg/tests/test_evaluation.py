import csv

import numpy as np
import pytest

from dctscene.blobs import blobs_from_mask
from dctscene.evaluation import EvalReport, GroundTruth, SequenceReport, associate, blob_box_overlap, \
    evaluate_detections, evaluate_sequence, expand_blocks, f1_from_counts, load_ground_truth, max_model_bytes, \
    measure_resources, pixel_counts, pixel_f1, tracking_suitability
from dctscene.pipeline import Pipeline, save_pgm
from dctscene.synthetic import SyntheticConfig, generate_sequence, write_sequence


def test_identical_detection():
    truth = np.zeros((16, 16), dtype=bool)
    truth[4:12, 2:9] = True
    assert pixel_f1(truth, truth) == (1.0, 1.0, 1.0)


def test_empty_detection():
    truth = np.zeros((8, 8), dtype=bool)
    truth[2:4, 2:4] = True
    precision, recall, f1 = pixel_f1(np.zeros_like(truth), truth)
    assert (precision, recall, f1) == (0.0, 0.0, 0.0)


def test_half_square():
    truth = np.ones((8, 8), dtype=bool)
    detection = np.zeros((8, 8), dtype=bool)
    detection[:, :4] = True
    assert pixel_counts(detection, truth) == (32, 0, 32)
    precision, recall, f1 = pixel_f1(detection, truth)
    assert precision == 1.0
    assert recall == 0.5
    assert f1 == pytest.approx(2 / 3)


def test_precision_recall_symmetry(rng):
    for _ in range(20):
        a = rng.random((12, 10)) < 0.4
        b = rng.random((12, 10)) < 0.4
        assert pixel_f1(a, b)[0] == pixel_f1(b, a)[1]
        assert pixel_f1(a, b)[2] == pytest.approx(pixel_f1(b, a)[2])


def test_zero_over_zero():
    assert f1_from_counts(0, 0, 0) == (0.0, 0.0, 0.0)


def test_size_mismatch():
    with pytest.raises(ValueError):
        pixel_counts(np.zeros((8, 8)), np.zeros((8, 9)))
    with pytest.raises(ValueError):
        expand_blocks(np.ones((1, 1)), 9, 8)


def test_expand_blocks_crops():
    pixels = expand_blocks(np.array([[1, 0], [0, 1]]), 12, 13)
    assert pixels.shape == (12, 13)
    assert pixels[:8, :8].all()
    assert not pixels[:8, 8:].any()
    assert pixels[8:, 8:].all()


def blob(rows, cols, shape=(6, 6)):
    mask = np.zeros(shape, dtype=bool)
    mask[rows, cols] = True
    return blobs_from_mask(mask)[0]


def test_suitability_cases():
    assert tracking_suitability([], [(1, 0, 0, 8, 8)]) == 1.0
    box = (1, 0, 0, 48, 8)
    fragments = [blob([0], [0]), blob([0], [2]), blob([0], [4])]
    assert tracking_suitability(fragments, [box]) == pytest.approx(1 / 3)
    assert tracking_suitability([blob([0, 0, 0], [0, 1, 2])], [box]) == 1.0
    assert tracking_suitability(fragments, []) == 0.0


def rasterized_overlap(blob_, box, shape):
    block_mask = np.zeros(shape, dtype=bool)
    block_mask[blob_.rows, blob_.cols] = True
    pixels = expand_blocks(block_mask, shape[0] * 8, shape[1] * 8)
    _, x, y, w, h = box
    box_mask = np.zeros_like(pixels)
    box_mask[max(y, 0):y + h, max(x, 0):x + w] = True
    return int((pixels & box_mask).sum())


def greedy_oracle(blobs, boxes, shape):
    remaining = {(i, j): rasterized_overlap(b, box, shape) for i, b in enumerate(blobs) for j, box in enumerate(boxes)}
    remaining = {pair: overlap for pair, overlap in remaining.items() if overlap > 0}
    pairs = []
    while remaining:
        best = max(remaining, key=lambda pair: (remaining[pair], -pair[0], -pair[1]))
        pairs.append(best)
        remaining = {pair: o for pair, o in remaining.items() if pair[0] != best[0] and pair[1] != best[1]}
    return pairs


def test_association_matches_greedy_oracle(rng):
    shape = (6, 6)
    for _ in range(100):
        blobs = blobs_from_mask(rng.random(shape) < 0.35)
        boxes = []
        for object_id in range(int(rng.integers(0, 4))):
            x, y = rng.integers(0, 40, size=2)
            w, h = rng.integers(1, 24, size=2)
            boxes.append((object_id, int(x), int(y), int(w), int(h)))
        for b in blobs:
            for box in boxes:
                assert blob_box_overlap(b, box) == rasterized_overlap(b, box, shape)
        assert associate(blobs, boxes) == greedy_oracle(blobs, boxes, shape)


def test_memory_figures():
    assert max_model_bytes(72, 96, 5) == 1_105_920
    assert max_model_bytes(72, 96, 5) / 1024 == 1080


def test_sequence_report_sums_frames():
    report = SequenceReport("demo")
    truth = np.zeros((16, 16), dtype=bool)
    truth[:8, :8] = True
    detection = np.array([[True, True], [False, False]])
    blobs = blobs_from_mask(detection)
    report.add_frame(detection, truth, blobs, [(1, 0, 0, 8, 8)])
    report.add_frame(np.zeros((2, 2), dtype=bool), truth, [], [(1, 0, 0, 8, 8)])
    assert (report.frames, report.tp, report.fp, report.fn) == (2, 64, 64, 64)
    assert report.precision == 0.5
    assert report.recall == 0.5
    assert (report.associated, report.detected) == (1, 1)
    assert report.suitability == 1.0
    assert report.fps == 0.0


def test_eval_report_csv(tmp_path):
    first = SequenceReport("a", frames=2, tp=10, fp=0, fn=10, associated=1, detected=2, seconds=1.0)
    second = SequenceReport("b", frames=3, tp=0, fp=5, fn=0, associated=0, detected=0, seconds=1.0, model_bytes=64)
    report = EvalReport([first, second])
    total = report.total
    assert (total.frames, total.tp, total.fp, total.fn, total.model_bytes) == (5, 10, 5, 10, 64)
    assert total.fps == 2.5
    path = tmp_path / "report.csv"
    report.to_csv(path)
    with open(path, newline="", encoding="utf-8") as csv_file:
        rows = list(csv.DictReader(csv_file))
    assert [row["name"] for row in rows] == ["a", "b", "all"]
    assert float(rows[0]["suitability"]) == 0.5
    assert float(rows[1]["suitability"]) == 1.0
    assert "all" in report.summary()


@pytest.fixture
def recorded_sequence(tmp_path):
    sequence = generate_sequence("walk_stop_leave", SyntheticConfig(width=40, height=32, n_frames=12), seed=4)
    return sequence, write_sequence(sequence, tmp_path / "gt_sequence")


def test_load_ground_truth(recorded_sequence):
    sequence, directory = recorded_sequence
    for path in (directory, directory / "gt"):
        truth = load_ground_truth(path)
        assert truth.frames == list(range(12))
        for frame, mask in enumerate(sequence.masks):
            np.testing.assert_array_equal(truth.masks[frame], mask)
        assert truth.boxes == {frame: boxes for frame, boxes in enumerate(sequence.boxes) if boxes}


def test_load_ground_truth_missing(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_ground_truth(tmp_path / "nothing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError):
        load_ground_truth(tmp_path / "empty")


def test_evaluate_detections(tmp_path):
    gt = tmp_path / "gt"
    (gt / "masks").mkdir(parents=True)
    mask = np.zeros((16, 24), dtype=np.uint8)
    mask[0:8, 0:8] = 255
    for frame in range(2):
        save_pgm(gt / "masks" / f"{frame:06d}.pgm", mask)
    (gt / "boxes.txt").write_text("0 1 0 0 8 8\n1 1 0 0 8 8\n", encoding="utf-8")
    detections = tmp_path / "detections"
    (detections / "foreground").mkdir(parents=True)
    save_pgm(detections / "foreground" / "000000.pgm", np.array([[255, 0, 0], [0, 0, 0]], dtype=np.uint8))
    save_pgm(detections / "foreground" / "000001.pgm", np.array([[255, 0, 0], [0, 0, 255]], dtype=np.uint8))
    report = evaluate_detections(detections, gt)
    assert len(report.sequences) == 1
    result = report.sequences[0]
    assert (result.tp, result.fp, result.fn) == (128, 64, 0)
    assert result.recall == 1.0
    assert (result.associated, result.detected) == (2, 3)


def test_missing_detection_counts_as_empty(caplog):
    truth = GroundTruth({0: np.ones((8, 8), dtype=bool), 1: np.ones((8, 8), dtype=bool)}, {})
    report = evaluate_sequence({0: np.ones((1, 1), dtype=bool)}, truth, "partial")
    assert (report.frames, report.tp, report.fn) == (2, 64, 64)
    assert "frame 1" in caplog.text


def test_measure_resources(model, config):
    sequence = generate_sequence("static", SyntheticConfig(width=32, height=24, n_frames=5), seed=0)
    pipeline = Pipeline(model, config)
    report = measure_resources(pipeline, sequence.frames)
    assert report.frames == 5
    assert report.seconds > 0
    assert report.model_bytes == pipeline.scene.model_bytes()
    assert 12 * 32 <= report.model_bytes <= report.max_model_bytes == 12 * 5 * 32
    assert report.model_kilobytes == report.model_bytes / 1024
