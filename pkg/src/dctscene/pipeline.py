# -*- coding: utf-8 -*-
"""Frame pipeline.

decode -> features -> DCT classifier -> spatial iterations -> scene update
-> mode expiry -> connected components -> foreground blobs, one frame at a
time. One Pipeline instance serves one stream.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional
import logging

import numpy as np
import numpy.typing as npt
from PIL import Image

from dctscene.blobs import AgeImage, Blob, age_image, connected_components, foreground_blobs, foreground_mask, \
    format_blob_record
from dctscene.classifier import ClassifierModel, DecisionGrid, classify_frame, load_model, score_modes, \
    spatial_iterate
from dctscene.config import ModelConfig, PipelineConfig
from dctscene.features import FeatureGrid, extract_features
from dctscene.jpeg import JpegDecodeError, decode_jpeg_dct
from dctscene.mjpeg import iter_mjpeg_frames
from dctscene.scene import SceneModel, apply_updates, expire_modes, load_snapshot, save_snapshot


@dataclass
class FrameResult:
    """Outcome of one input frame.

    `index` counts input frames of the stream, skipped ones included;
    `scene_frame` is the scene model's frame counter when the frame was
    processed (-1 for a skipped frame).
    """
    index: int
    scene_frame: int = -1
    blobs: list[Blob] = field(default_factory=list)
    components: list[Blob] = field(default_factory=list)
    decisions: Optional[DecisionGrid] = None
    age: Optional[AgeImage] = None
    scores: Optional[npt.NDArray[np.float64]] = None
    reset: bool = False
    error: Optional[str] = None

    @property
    def skipped(self) -> bool:
        return self.error is not None

    @property
    def grid_shape(self) -> Optional[tuple[int, int]]:
        return None if self.age is None else (int(self.age.shape[0]), int(self.age.shape[1]))

    def foreground(self) -> npt.NDArray[np.bool_]:
        """Block mask of the foreground blobs."""
        if self.age is None:
            raise ValueError(f"Frame {self.index} was skipped and has no foreground")
        return foreground_mask(self.blobs, self.age.shape)


class Pipeline:
    """Background subtraction over a stream of JPEG frames.

    Parameters
    ----------
    model
        Classifier weights, threshold and lambda table. Lambda rows missing
        for the configured number of iterations count as zeros.
    config
        Model parameters.
    scene
        Scene model to continue from, e.g. a loaded snapshot.
    keep_scores
        Store the final per-block match scores in each FrameResult.
    track_tags
        Let the scene model carry per-mode tags given to `process_features`.
    """

    def __init__(self, model: ClassifierModel, config: Optional[ModelConfig] = None, *,
                 scene: Optional[SceneModel] = None, keep_scores: bool = False, track_tags: bool = False):
        self.model = model
        self.config = config or ModelConfig()
        self.lambdas = model.lambdas.for_iterations(self.config.iterations)
        self.scene = scene
        self.keep_scores = keep_scores
        self.track_tags = track_tags
        self.frames_seen = 0

    def _ensure_scene(self, grid_shape: tuple[int, int]) -> bool:
        if self.scene is not None and self.scene.grid_shape == grid_shape:
            return False
        if self.scene is not None:
            logging.warning(f"Frame size changed from {self.scene.grid_shape} to {grid_shape} blocks; "
                            "resetting the scene model.")
        self.scene = SceneModel(grid_shape[0], grid_shape[1], self.config, track_tags=self.track_tags)
        return True

    def process_features(self, features: FeatureGrid, tags: Optional[npt.NDArray[np.integer]] = None) -> FrameResult:
        """Runs one frame of already extracted features through the scene model."""
        reset = self._ensure_scene(features.shape[:2])
        scene = self.scene
        assert scene is not None
        config = self.config
        weights = self.model.weights
        frame = scene.current_frame

        base = score_modes(scene, features, weights, config)
        decisions = classify_frame(scene, features, weights, config, base)
        decisions = spatial_iterate(scene, decisions, self.lambdas, weights, config.iterations, base, config.t_similar)
        age = age_image(decisions)

        apply_updates(scene, decisions, features, tags)
        expire_modes(scene)

        components = connected_components(age, frame - config.n_bg)
        blobs = foreground_blobs(components, frame, config.n_bg, config.min_blob_blocks)
        scene.advance_frame()
        logging.debug(f"Frame {self.frames_seen} (scene frame {frame}): {len(blobs)} foreground blobs.")

        result = FrameResult(self.frames_seen, frame, blobs, components, decisions, age,
                             decisions.score.copy() if self.keep_scores else None, reset)
        self.frames_seen += 1
        return result

    def process_frame(self, jpeg_bytes: bytes, tags: Optional[npt.NDArray[np.integer]] = None) -> FrameResult:
        """Decodes and processes one JPEG frame.

        An undecodable frame is skipped: the scene model is left untouched and
        the returned result carries the error.
        """
        try:
            planes = decode_jpeg_dct(jpeg_bytes)
        except JpegDecodeError as error:
            logging.error(f"Skipping frame {self.frames_seen}: {error}")
            result = FrameResult(self.frames_seen, error=str(error))
            self.frames_seen += 1
            return result
        return self.process_features(extract_features(planes), tags)

    def run(self, frames: Iterable[bytes]) -> Iterator[FrameResult]:
        for jpeg_bytes in frames:
            yield self.process_frame(jpeg_bytes)


def save_pgm(path: Path, image: npt.NDArray[np.uint8]) -> None:
    Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8), "L").save(path)


def load_pgm(path: Path) -> npt.NDArray[np.uint8]:
    with Image.open(path) as image:
        return np.asarray(image.convert("L"))


def scale_age_image(age: AgeImage, current_frame: int) -> npt.NDArray[np.uint8]:
    """Maps creation frames 0..current_frame to 0..255."""
    scale = 255.0 / max(current_frame, 1)
    return np.clip(np.rint(np.asarray(age, dtype=np.float64) * scale), 0, 255).astype(np.uint8)


class DetectionWriter:
    """Writes detection output into a directory.

    blobs.txt holds one record per foreground blob; foreground/NNNNNN.pgm the
    block resolution foreground mask (255 = foreground). Age images and score
    maps are optional.
    """

    def __init__(self, directory: str | Path, *, emit_age_images: bool = False, emit_scores: bool = False):
        self.directory = Path(directory)
        self.emit_age_images = emit_age_images
        self.emit_scores = emit_scores
        subdirs = ["foreground"] + ["ages"] * emit_age_images + ["scores"] * emit_scores
        for sub in subdirs:
            (self.directory / sub).mkdir(parents=True, exist_ok=True)
        self._report: Optional[IO[str]] = None
        self._shape: Optional[tuple[int, int]] = None

    def __enter__(self) -> "DetectionWriter":
        self._report = open(self.directory / "blobs.txt", "w", encoding="utf-8")
        self._report.write("# frame blob_id x y w h blocks min_creation max_creation age_class\n")
        return self

    def __exit__(self, *exc_info: object) -> None:
        if self._report is not None:
            self._report.close()
            self._report = None
        logging.info(f"Wrote detection output to {self.directory}")

    def write(self, result: FrameResult) -> None:
        if self._report is None:
            raise RuntimeError("DetectionWriter must be used as a context manager")
        name = f"{result.index:06d}"
        if result.skipped:
            if self._shape is not None:
                save_pgm(self.directory / "foreground" / f"{name}.pgm", np.zeros(self._shape, dtype=np.uint8))
            return
        for blob_id, blob in enumerate(result.blobs):
            self._report.write(format_blob_record(result.index, blob_id, blob) + "\n")
        mask = result.foreground()
        self._shape = mask.shape
        save_pgm(self.directory / "foreground" / f"{name}.pgm", np.where(mask, 255, 0).astype(np.uint8))
        if self.emit_age_images and result.age is not None:
            save_pgm(self.directory / "ages" / f"{name}.pgm", scale_age_image(result.age, result.scene_frame))
        if self.emit_scores and result.scores is not None:
            np.save(self.directory / "scores" / f"{name}.npy", result.scores)


@dataclass
class DetectionSummary:
    frames: int = 0
    skipped: int = 0
    resets: int = 0
    blobs: int = 0


def run_detection(config: PipelineConfig) -> DetectionSummary:
    """Runs detection over `config.input` and writes the output directory."""
    if config.input is None or config.output_dir is None:
        raise ValueError("Detection needs an input and an output directory")
    model = load_model(config.model_path)
    scene = load_snapshot(config.initial_snapshot, config.model_config) if config.initial_snapshot else None
    pipeline = Pipeline(model, config.model_config, scene=scene, keep_scores=config.emit_scores)
    summary = DetectionSummary()
    with DetectionWriter(config.output_dir, emit_age_images=config.emit_age_images,
                         emit_scores=config.emit_scores) as writer:
        for result in pipeline.run(iter_mjpeg_frames(config.input)):
            writer.write(result)
            summary.frames += 1
            summary.skipped += result.skipped
            summary.resets += result.reset and result.index > 0
            summary.blobs += len(result.blobs)
    if config.snapshot_path is not None and pipeline.scene is not None:
        save_snapshot(pipeline.scene, config.snapshot_path)
    logging.info(f"Processed {summary.frames} frames ({summary.skipped} skipped), {summary.blobs} foreground blobs.")
    return summary
