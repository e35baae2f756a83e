# -*- coding: utf-8 -*-
"""Scoring of detection output.

Pixel level precision, recall and F1 against object masks, tracking
suitability against object boxes, and throughput and scene model memory of a
pipeline run. Counts are summed over all frames of a sequence before the
measures are computed.
"""
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence
import csv
import logging
import time

import numpy as np
import numpy.typing as npt

from dctscene.blobs import Blob, blobs_from_mask
from dctscene.classifier import ClassifierModel
from dctscene.config import ModelConfig
from dctscene.pipeline import Pipeline, load_pgm
from dctscene.synthetic import Box, SyntheticSequence, read_box_lines
from dctscene.units import BLOCK_SIZE, MODE_RECORD_BYTES


@dataclass
class GroundTruth:
    """Per-frame object masks (pixel resolution) and object boxes (object id, x, y, w, h)."""
    masks: dict[int, npt.NDArray[np.bool_]] = field(default_factory=dict)
    boxes: dict[int, list[Box]] = field(default_factory=dict)

    @property
    def frames(self) -> list[int]:
        return sorted(set(self.masks) | set(self.boxes))

    @classmethod
    def from_sequence(cls, sequence: SyntheticSequence) -> "GroundTruth":
        return cls(dict(enumerate(sequence.masks)), dict(enumerate(sequence.boxes)))


def load_ground_truth(directory: str | Path) -> GroundTruth:
    """Reads masks/NNNNNN.pgm and boxes.txt from `directory` or its gt/ subdirectory."""
    directory = Path(directory)
    if (directory / "gt").is_dir():
        directory = directory / "gt"
    if not directory.is_dir():
        raise FileNotFoundError(f"Ground truth directory not found: {directory}")
    truth = GroundTruth()
    for mask_file in sorted((directory / "masks").glob("*.pgm")):
        truth.masks[int(mask_file.stem)] = load_pgm(mask_file) > 127
    boxes_file = directory / "boxes.txt"
    if boxes_file.exists():
        for frame, object_id, x, y, w, h in read_box_lines(boxes_file):
            truth.boxes.setdefault(frame, []).append((object_id, x, y, w, h))
    if not truth.frames:
        raise FileNotFoundError(f"No ground truth masks or boxes in {directory}")
    return truth


def expand_blocks(block_mask: npt.ArrayLike, height: int, width: int) -> npt.NDArray[np.bool_]:
    """Rasterizes a block mask to 8x8 pixel squares, cropped to the frame size."""
    block_mask = np.asarray(block_mask, dtype=bool)
    pixels = np.repeat(np.repeat(block_mask, BLOCK_SIZE, axis=0), BLOCK_SIZE, axis=1)
    if pixels.shape[0] < height or pixels.shape[1] < width:
        raise ValueError(f"Block mask {block_mask.shape} does not cover a {width}x{height} frame")
    return pixels[:height, :width]


def pixel_counts(detection: npt.ArrayLike, truth: npt.ArrayLike) -> tuple[int, int, int]:
    """Returns (TP, FP, FN) pixel counts."""
    detection = np.asarray(detection, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if detection.shape != truth.shape:
        raise ValueError(f"Detection {detection.shape} and ground truth {truth.shape} differ in size")
    return (int(np.count_nonzero(detection & truth)), int(np.count_nonzero(detection & ~truth)),
            int(np.count_nonzero(~detection & truth)))


def f1_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Returns (precision, recall, F1); every 0/0 is 0."""
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def pixel_f1(detection: npt.ArrayLike, truth: npt.ArrayLike) -> tuple[float, float, float]:
    return f1_from_counts(*pixel_counts(detection, truth))


def blob_box_overlap(blob: Blob, box: Box) -> int:
    """Number of pixels of the blob's blocks inside the box."""
    _, x, y, w, h = box
    x0 = blob.cols * BLOCK_SIZE
    y0 = blob.rows * BLOCK_SIZE
    dx = np.clip(np.minimum(x0 + BLOCK_SIZE, x + w) - np.maximum(x0, x), 0, None)
    dy = np.clip(np.minimum(y0 + BLOCK_SIZE, y + h) - np.maximum(y0, y), 0, None)
    return int((dx * dy).sum())


def associate(blobs: Sequence[Blob], boxes: Sequence[Box]) -> list[tuple[int, int]]:
    """Greedily pairs boxes with overlapping blobs, largest overlap first.

    Each blob and each box is used at most once. Ties go to the lower blob
    index, then the lower box index.

    Returns
    -------
    (blob index, box index) pairs.
    """
    candidates = sorted((-overlap, i, j) for i, blob in enumerate(blobs) for j, box in enumerate(boxes)
                        if (overlap := blob_box_overlap(blob, box)) > 0)
    used_blobs: set[int] = set()
    used_boxes: set[int] = set()
    pairs = []
    for _, i, j in candidates:
        if i not in used_blobs and j not in used_boxes:
            used_blobs.add(i)
            used_boxes.add(j)
            pairs.append((i, j))
    return pairs


def tracking_suitability(blobs: Sequence[Blob], boxes: Sequence[Box]) -> float:
    """Associated blobs over detected blobs; 1.0 when nothing is detected."""
    if not blobs:
        return 1.0
    return len(associate(blobs, boxes)) / len(blobs)


@dataclass
class SequenceReport:
    """Summed counts of one sequence (or of all sequences)."""
    name: str
    frames: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    associated: int = 0
    detected: int = 0
    seconds: float = 0.0
    model_bytes: int = 0

    @property
    def precision(self) -> float:
        return f1_from_counts(self.tp, self.fp, self.fn)[0]

    @property
    def recall(self) -> float:
        return f1_from_counts(self.tp, self.fp, self.fn)[1]

    @property
    def f1(self) -> float:
        return f1_from_counts(self.tp, self.fp, self.fn)[2]

    @property
    def suitability(self) -> float:
        return self.associated / self.detected if self.detected else 1.0

    @property
    def fps(self) -> float:
        return self.frames / self.seconds if self.seconds > 0 else 0.0

    def add_frame(self, detection: npt.NDArray[np.bool_], truth: Optional[npt.NDArray[np.bool_]],
                  blobs: Sequence[Blob], boxes: Optional[Sequence[Box]]) -> None:
        self.frames += 1
        if truth is not None:
            tp, fp, fn = pixel_counts(expand_blocks(detection, truth.shape[0], truth.shape[1]), truth)
            self.tp += tp
            self.fp += fp
            self.fn += fn
        if blobs and boxes is not None:
            self.associated += len(associate(blobs, boxes))
            self.detected += len(blobs)

    def row(self) -> dict[str, Any]:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(precision=self.precision, recall=self.recall, f1=self.f1, suitability=self.suitability,
                      fps=self.fps)
        return values


@dataclass
class EvalReport:
    sequences: list[SequenceReport] = field(default_factory=list)

    @property
    def total(self) -> SequenceReport:
        total = SequenceReport("all")
        for report in self.sequences:
            for name in ("frames", "tp", "fp", "fn", "associated", "detected", "seconds"):
                setattr(total, name, getattr(total, name) + getattr(report, name))
            total.model_bytes = max(total.model_bytes, report.model_bytes)
        return total

    def to_csv(self, path: str | Path) -> None:
        rows = [report.row() for report in self.sequences] + [self.total.row()]
        with open(path, "w", newline="", encoding="utf-8") as csv_file:
            writer = csv.DictWriter(csv_file, delimiter=",", fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        logging.info(f"Wrote evaluation report to {path}")

    def summary(self) -> str:
        lines = [f"{'sequence':<24} {'frames':>6} {'precision':>9} {'recall':>7} {'F1':>6} {'suitab.':>7}"]
        for report in self.sequences + [self.total]:
            lines.append(f"{report.name:<24} {report.frames:>6} {report.precision:>9.3f} {report.recall:>7.3f} "
                         f"{report.f1:>6.3f} {report.suitability:>7.3f}")
        return "\n".join(lines)


def evaluate_sequence(foreground: dict[int, npt.NDArray[np.bool_]], truth: GroundTruth,
                      name: str = "sequence") -> SequenceReport:
    """Scores block resolution foreground masks of the ground truth frames.

    A frame without a detection mask counts as an empty detection.
    """
    report = SequenceReport(name)
    shape = next(iter(foreground.values())).shape if foreground else None
    for frame in truth.frames:
        detection = foreground.get(frame)
        if detection is None:
            if shape is None:
                raise ValueError(f"No detections to score for {name}")
            logging.warning(f"{name}: no detection for frame {frame}, counting it as empty.")
            detection = np.zeros(shape, dtype=bool)
        report.add_frame(detection, truth.masks.get(frame), blobs_from_mask(detection), truth.boxes.get(frame, []))
    return report


def load_foreground(directory: str | Path) -> dict[int, npt.NDArray[np.bool_]]:
    directory = Path(directory)
    return {int(path.stem): load_pgm(path) > 127 for path in sorted(directory.glob("*.pgm"))}


def evaluate_detections(detections: str | Path, ground_truth: str | Path) -> EvalReport:
    """Scores the output of `detect` against ground truth.

    Either both directories belong to one sequence (`detections` holds
    foreground/), or they hold one subdirectory per sequence with equal
    names.
    """
    detections, ground_truth = Path(detections), Path(ground_truth)
    if (detections / "foreground").is_dir():
        pairs = [(detections.name, detections, ground_truth)]
    else:
        pairs = [(sub.name, sub, ground_truth / sub.name) for sub in sorted(detections.iterdir())
                 if (sub / "foreground").is_dir()]
        if not pairs:
            raise FileNotFoundError(f"No detection output found in {detections}")
    report = EvalReport()
    for name, detection_dir, truth_dir in pairs:
        report.sequences.append(evaluate_sequence(load_foreground(detection_dir / "foreground"),
                                                  load_ground_truth(truth_dir), name))
    return report


@dataclass(frozen=True)
class ResourceReport:
    frames: int
    seconds: float
    model_bytes: int
    max_model_bytes: int

    @property
    def fps(self) -> float:
        return self.frames / self.seconds if self.seconds > 0 else 0.0

    @property
    def model_kilobytes(self) -> float:
        return self.model_bytes / 1024


def max_model_bytes(rows: int, cols: int, max_modes: int) -> int:
    return rows * cols * max_modes * MODE_RECORD_BYTES


def measure_resources(pipeline: Pipeline, frames: Iterable[bytes]) -> ResourceReport:
    """Runs the frames through the pipeline and measures throughput and memory.

    The time includes decoding. Memory is the persistent scene model after
    the last frame.
    """
    count = 0
    start = time.perf_counter()
    for jpeg_bytes in frames:
        pipeline.process_frame(jpeg_bytes)
        count += 1
    seconds = time.perf_counter() - start
    scene = pipeline.scene
    if scene is None:
        return ResourceReport(count, seconds, 0, 0)
    rows, cols = scene.grid_shape
    return ResourceReport(count, seconds, scene.model_bytes(), max_model_bytes(rows, cols, scene.max_modes))


def evaluate_pipeline(sequence: SyntheticSequence, model: ClassifierModel,
                      config: Optional[ModelConfig] = None) -> SequenceReport:
    """Runs a synthetic sequence through a fresh pipeline and scores it against its own ground truth."""
    pipeline = Pipeline(model, config)
    truth = GroundTruth.from_sequence(sequence)
    report = SequenceReport(sequence.name)
    start = time.perf_counter()
    results = list(pipeline.run(sequence.frames))
    report.seconds = time.perf_counter() - start
    for result in results:
        if result.skipped:
            continue
        report.add_frame(result.foreground(), truth.masks.get(result.index), result.blobs,
                         truth.boxes.get(result.index, []))
    if pipeline.scene is not None:
        report.model_bytes = pipeline.scene.model_bytes()
    return report
