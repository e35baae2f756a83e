# -*- coding: utf-8 -*-
"""Synthetic surveillance sequences with exact ground truth.

Textured rectangles move over, stop on and leave a textured background. Each
frame comes with a per-block content id (a hash of the noise-free block
pixels), so two blocks hold the same scene content exactly when their ids
are equal. Frames are JPEG encoded with Pillow after adding pixel noise.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional
import hashlib
import io
import logging

import numpy as np
import numpy.typing as npt
from PIL import Image
from scipy import ndimage

from dctscene.units import BLOCK_SIZE, blocks_for_pixels

Position = Optional[tuple[int, int]]
Box = tuple[int, int, int, int, int]   # object id, x, y, w, h

SUBSAMPLING = ("4:4:4", "4:2:2", "4:2:0")


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of generated sequences.

    Attributes
    ----------
    width, height
        Frame size.
        Unit: pixels
    n_frames
        Sequence length.
    noise_sigma
        Standard deviation of the per-pixel noise.
        Unit: 8-bit intensity
    quality
        JPEG quality factor.
    subsampling
        Chroma subsampling, one of '4:4:4', '4:2:2', '4:2:0'.
    block_noise
        Probability that a block gets a uniform intensity offset in a frame.
    block_noise_amplitude
        Largest block offset.
        Unit: 8-bit intensity
    speed
        Object speed.
        Unit: pixels per frame
    """
    width: int = 160
    height: int = 120
    n_frames: int = 120
    noise_sigma: float = 2.0
    quality: int = 90
    subsampling: str = "4:2:0"
    block_noise: float = 0.0
    block_noise_amplitude: float = 40.0
    speed: int = 4

    def __post_init__(self) -> None:
        if self.subsampling not in SUBSAMPLING:
            raise ValueError(f"subsampling must be one of {SUBSAMPLING}, got {self.subsampling!r}")
        if self.width < BLOCK_SIZE or self.height < BLOCK_SIZE or self.n_frames < 1:
            raise ValueError(f"Invalid sequence size {self.width}x{self.height}x{self.n_frames}")


@dataclass
class SyntheticObject:
    """A textured rectangle following a scripted path.

    `texture` has shape (h, w, 3), or (n_frames, h, w, 3) for an object whose
    appearance changes every frame. `positions[t]` is the top-left (y, x) in
    frame t, or None while the object is absent.
    """
    object_id: int
    texture: npt.NDArray[np.uint8]
    positions: list[Position]

    @property
    def size(self) -> tuple[int, int]:
        return (int(self.texture.shape[-3]), int(self.texture.shape[-2]))

    def texture_at(self, frame: int) -> npt.NDArray[np.uint8]:
        return self.texture[frame] if self.texture.ndim == 4 else self.texture

    def position(self, frame: int) -> Position:
        return self.positions[frame] if frame < len(self.positions) else None


@dataclass
class SyntheticSequence:
    """Encoded frames with their ground truth."""
    frames: list[bytes]
    labels: list[npt.NDArray[np.int64]]
    masks: list[npt.NDArray[np.bool_]]
    boxes: list[list[Box]]
    name: str = "sequence"
    clean: list[npt.NDArray[np.uint8]] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.frames)


def smooth_texture(rng: np.random.Generator, height: int, width: int, mean: npt.ArrayLike,
                   amplitude: float, sigma: float = 2.0) -> npt.NDArray[np.uint8]:
    """Returns a low-pass filtered random RGB texture around `mean`."""
    noise = rng.normal(size=(height, width, 3))
    noise = ndimage.gaussian_filter(noise, sigma=(sigma, sigma, 0), mode="wrap")
    noise /= max(float(np.abs(noise).max()), 1e-9)
    texture = np.asarray(mean, dtype=np.float64) + amplitude * noise
    return np.clip(np.rint(texture), 0, 255).astype(np.uint8)


def background_texture(rng: np.random.Generator, config: SyntheticConfig) -> npt.NDArray[np.uint8]:
    base = rng.uniform(90, 150, size=3)
    texture = smooth_texture(rng, config.height, config.width, base, 40.0, sigma=3.0).astype(np.float64)
    ramp = np.linspace(-15.0, 15.0, config.width)[None, :, None]
    return np.clip(texture + ramp, 0, 255).astype(np.uint8)


def object_texture(rng: np.random.Generator, height: int, width: int,
                   n_frames: Optional[int] = None) -> npt.NDArray[np.uint8]:
    """Returns an object texture, animated over `n_frames` frames if given."""
    base = rng.choice([rng.uniform(20, 60), rng.uniform(180, 235)], size=3)
    if n_frames is None:
        return smooth_texture(rng, height, width, base, 35.0, sigma=1.5)
    return np.stack([smooth_texture(rng, height, width, base, 35.0, sigma=1.5) for _ in range(n_frames)])


def walk(start: tuple[int, int], end: tuple[int, int], n_frames: int) -> list[Position]:
    """Linear path from `start` to `end` over `n_frames` frames."""
    if n_frames <= 0:
        return []
    if n_frames == 1:
        return [end]
    ys = np.rint(np.linspace(start[0], end[0], n_frames)).astype(int)
    xs = np.rint(np.linspace(start[1], end[1], n_frames)).astype(int)
    return [(int(y), int(x)) for y, x in zip(ys, xs)]


def _steps(distance: float, speed: int) -> int:
    return max(1, int(np.ceil(abs(distance) / max(speed, 1))))


def render(background: npt.NDArray[np.uint8], objects: list[SyntheticObject],
           frame: int) -> tuple[npt.NDArray[np.uint8], npt.NDArray[np.bool_], list[Box]]:
    """Paints the objects present in `frame` over the background, in list order.

    Returns
    -------
    (image, mask, boxes)
    """
    image = background.copy()
    mask = np.zeros(background.shape[:2], dtype=bool)
    boxes: list[Box] = []
    height, width = mask.shape
    for obj in objects:
        position = obj.position(frame)
        if position is None:
            continue
        y, x = position
        h, w = obj.size
        y0, x0, y1, x1 = max(y, 0), max(x, 0), min(y + h, height), min(x + w, width)
        if y1 <= y0 or x1 <= x0:
            continue
        image[y0:y1, x0:x1] = obj.texture_at(frame)[y0 - y:y1 - y, x0 - x:x1 - x]
        mask[y0:y1, x0:x1] = True
        boxes.append((obj.object_id, x0, y0, x1 - x0, y1 - y0))
    return image, mask, boxes


def block_content_ids(image: npt.NDArray[np.uint8]) -> npt.NDArray[np.int64]:
    """Hashes the pixels of every 8x8 block; equal ids mean equal block content."""
    height, width = image.shape[:2]
    rows, cols = blocks_for_pixels(height), blocks_for_pixels(width)
    padded = np.pad(image, ((0, rows * BLOCK_SIZE - height), (0, cols * BLOCK_SIZE - width), (0, 0)), mode="edge")
    blocks = np.ascontiguousarray(
        padded.reshape(rows, BLOCK_SIZE, cols, BLOCK_SIZE, 3).transpose(0, 2, 1, 3, 4)).reshape(rows * cols, -1)
    ids = np.fromiter((int.from_bytes(hashlib.blake2b(block.tobytes(), digest_size=8).digest(), "little", signed=True)
                       for block in blocks), dtype=np.int64, count=rows * cols)
    return ids.reshape(rows, cols)


def encode_jpeg(image: npt.NDArray[np.uint8], quality: int = 90, subsampling: str = "4:2:0") -> bytes:
    buffer = io.BytesIO()
    Image.fromarray(image, "RGB").save(buffer, "JPEG", quality=quality, subsampling=subsampling)
    return buffer.getvalue()


def _observe(rng: np.random.Generator, image: npt.NDArray[np.uint8], config: SyntheticConfig) -> npt.NDArray[np.uint8]:
    noisy = image.astype(np.float64)
    if config.noise_sigma > 0:
        noisy += rng.normal(0.0, config.noise_sigma, size=image.shape)
    if config.block_noise > 0:
        rows, cols = blocks_for_pixels(image.shape[0]), blocks_for_pixels(image.shape[1])
        hit = rng.random((rows, cols)) < config.block_noise
        amplitude = config.block_noise_amplitude
        offsets = np.where(hit, rng.uniform(-amplitude, amplitude, (rows, cols)), 0.0)
        offsets = np.repeat(np.repeat(offsets, BLOCK_SIZE, axis=0), BLOCK_SIZE, axis=1)
        noisy += offsets[:image.shape[0], :image.shape[1], None]
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def make_sequence(rng: np.random.Generator, background: npt.NDArray[np.uint8], objects: list[SyntheticObject],
                  config: SyntheticConfig, name: str = "sequence", keep_clean: bool = False) -> SyntheticSequence:
    """Renders, observes and encodes every frame of a scripted scene."""
    sequence = SyntheticSequence([], [], [], [], name)
    for frame in range(config.n_frames):
        image, mask, boxes = render(background, objects, frame)
        sequence.frames.append(encode_jpeg(_observe(rng, image, config), config.quality, config.subsampling))
        sequence.labels.append(block_content_ids(image))
        sequence.masks.append(mask)
        sequence.boxes.append(boxes)
        if keep_clean:
            sequence.clean.append(image)
    logging.debug(f"Generated {name}: {config.n_frames} frames of {config.width}x{config.height}.")
    return sequence


def static_scene(rng: np.random.Generator,
                 config: SyntheticConfig) -> tuple[npt.NDArray[np.uint8], list[SyntheticObject]]:
    return background_texture(rng, config), []


def walk_stop_leave(rng: np.random.Generator,
                    config: SyntheticConfig) -> tuple[npt.NDArray[np.uint8], list[SyntheticObject]]:
    """An object walks in from the left, stops in the middle and leaves to the right."""
    n = config.n_frames
    h, w = 4 * BLOCK_SIZE, 3 * BLOCK_SIZE
    y = (config.height - h) // 2
    stop_x = (config.width - w) // 2
    enter = int(0.3 * n)
    arrive = enter + _steps(stop_x + w, config.speed)
    leave = max(arrive + 1, int(0.6 * n))
    positions: list[Position] = [None] * enter
    positions += walk((y, -w), (y, stop_x), arrive - enter)
    positions += [(y, stop_x)] * (leave - arrive)
    positions += walk((y, stop_x), (y, config.width), _steps(config.width - stop_x, config.speed))
    positions += [None] * max(0, n - len(positions))
    return background_texture(rng, config), [SyntheticObject(1, object_texture(rng, h, w), positions[:n])]


def abandoned_bag(rng: np.random.Generator,
                  config: SyntheticConfig) -> tuple[npt.NDArray[np.uint8], list[SyntheticObject]]:
    """A person carries a bag in, drops it and keeps walking in the upper part of the frame.

    The person's appearance changes every frame; the bag stays where it was
    dropped until the end of the sequence.
    """
    n = config.n_frames
    ph, pw = 5 * BLOCK_SIZE, 3 * BLOCK_SIZE
    bh, bw = 2 * BLOCK_SIZE, 2 * BLOCK_SIZE
    low_y = config.height - ph - BLOCK_SIZE
    enter = int(0.3 * n)
    drop_x = (config.width - pw - bw) // 2
    drop = enter + _steps(drop_x + pw + bw, config.speed)
    person: list[Position] = [None] * enter + walk((low_y, -pw - bw), (low_y, drop_x), drop - enter)
    bag: list[Position] = [None if p is None else (p[0] + ph - bh, p[1] + pw) for p in person]
    bag += [(low_y + ph - bh, drop_x + pw)] * (n - len(bag))
    top_y = 0
    person += walk((low_y, drop_x), (top_y, drop_x), _steps(low_y - top_y, config.speed))
    x, direction = drop_x, 1
    while len(person) < n:
        x += direction * config.speed
        if x < 0 or x > config.width - pw:
            direction = -direction
            x = min(max(x, 0), config.width - pw)
        person.append((top_y, x))
    objects = [SyntheticObject(1, object_texture(rng, ph, pw, n_frames=n), person[:n]),
               SyntheticObject(2, object_texture(rng, bh, bw), bag[:n])]
    return background_texture(rng, config), objects


def random_scene(rng: np.random.Generator,
                 config: SyntheticConfig) -> tuple[npt.NDArray[np.uint8], list[SyntheticObject]]:
    """One or two objects walking in, stopping for a while and possibly leaving."""
    n = config.n_frames
    objects = []
    for object_id in range(1, int(rng.integers(1, 3)) + 1):
        h = BLOCK_SIZE * int(rng.integers(2, 5))
        w = BLOCK_SIZE * int(rng.integers(2, 5))
        y = int(rng.integers(0, max(1, config.height - h)))
        from_left = bool(rng.integers(0, 2))
        start_x = -w if from_left else config.width
        stop_x = int(rng.integers(0, max(1, config.width - w)))
        end_x = config.width if from_left else -w
        enter = int(rng.integers(int(0.2 * n), int(0.5 * n)))
        positions: list[Position] = [None] * enter
        positions += walk((y, start_x), (y, stop_x), _steps(stop_x - start_x, config.speed))
        positions += [(y, stop_x)] * int(rng.integers(int(0.1 * n), int(0.3 * n)))
        if rng.random() < 0.5:
            positions += walk((y, stop_x), (y, end_x), _steps(end_x - stop_x, config.speed))
            positions += [None] * max(0, n - len(positions))
        else:
            positions += [(y, stop_x)] * max(0, n - len(positions))
        objects.append(SyntheticObject(object_id, object_texture(rng, h, w), positions[:n]))
    return background_texture(rng, config), objects


SCENARIOS: dict[str, Callable[[np.random.Generator, SyntheticConfig],
                              tuple[npt.NDArray[np.uint8], list[SyntheticObject]]]] = {
    "static": static_scene,
    "walk_stop_leave": walk_stop_leave,
    "abandoned_bag": abandoned_bag,
    "random": random_scene,
}


def generate_sequence(scenario: str = "random", config: Optional[SyntheticConfig] = None, seed: int = 0,
                      keep_clean: bool = False) -> SyntheticSequence:
    """Generates one sequence of a named scenario, deterministically from `seed`."""
    if scenario not in SCENARIOS:
        raise ValueError(f"Unknown scenario {scenario!r}, expected one of {', '.join(SCENARIOS)}")
    config = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    background, objects = SCENARIOS[scenario](rng, config)
    return make_sequence(rng, background, objects, config, f"{scenario}_{seed:04d}", keep_clean)


def generate_corpus(n_sequences: int, config: Optional[SyntheticConfig] = None, seed: int = 0,
                    scenario: str = "random") -> list[SyntheticSequence]:
    return [generate_sequence(scenario, config, seed + i) for i in range(n_sequences)]


def write_sequence(sequence: SyntheticSequence, directory: str | Path) -> Path:
    """Writes a sequence as frames/NNNNNN.jpg, labels/NNNNNN.npy, gt/masks/NNNNNN.pgm and gt/boxes.txt."""
    directory = Path(directory)
    for sub in ("frames", "labels", "gt/masks"):
        (directory / sub).mkdir(parents=True, exist_ok=True)
    lines = []
    for index, (frame, labels, mask, boxes) in enumerate(zip(sequence.frames, sequence.labels, sequence.masks,
                                                               sequence.boxes)):
        (directory / "frames" / f"{index:06d}.jpg").write_bytes(frame)
        np.save(directory / "labels" / f"{index:06d}.npy", labels)
        mask_image = Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), "L")
        mask_image.save(directory / "gt" / "masks" / f"{index:06d}.pgm")
        lines.extend(f"{index} {object_id} {x} {y} {w} {h}" for object_id, x, y, w, h in boxes)
    (directory / "gt" / "boxes.txt").write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    logging.info(f"Wrote {len(sequence)} frames of {sequence.name} to {directory}")
    return directory


def read_sequence(directory: str | Path) -> SyntheticSequence:
    """Reads a sequence written by `write_sequence`. Masks and boxes are optional."""
    directory = Path(directory)
    frame_files = sorted((directory / "frames").glob("*.jpg"))
    if not frame_files:
        raise FileNotFoundError(f"No frames found in {directory / 'frames'}")
    sequence = SyntheticSequence([], [], [], [[] for _ in frame_files], directory.name)
    for frame_file in frame_files:
        sequence.frames.append(frame_file.read_bytes())
        label_file = directory / "labels" / f"{frame_file.stem}.npy"
        if not label_file.exists():
            raise FileNotFoundError(f"Missing label file {label_file}")
        sequence.labels.append(np.load(label_file))
        mask_file = directory / "gt" / "masks" / f"{frame_file.stem}.pgm"
        if mask_file.exists():
            sequence.masks.append(np.asarray(Image.open(mask_file)) > 127)
    boxes_file = directory / "gt" / "boxes.txt"
    if boxes_file.exists():
        for frame, object_id, x, y, w, h in read_box_lines(boxes_file):
            if frame < len(sequence.boxes):
                sequence.boxes[frame].append((object_id, x, y, w, h))
    return sequence


def read_box_lines(path: Path) -> Iterator[tuple[int, ...]]:
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            values = tuple(int(v) for v in line.replace(",", " ").split())
            if len(values) != 6:
                raise ValueError(f"Expected 'frame id x y w h' in {path}, got {line!r}")
            yield values


def write_corpus(sequences: list[SyntheticSequence], directory: str | Path) -> list[Path]:
    return [write_sequence(sequence, Path(directory) / sequence.name) for sequence in sequences]


def iter_corpus(directory: str | Path) -> Iterator[SyntheticSequence]:
    """Yields the sequences of a corpus directory, in name order.

    A directory holding frames/ directly is a corpus of one sequence.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"Corpus directory not found: {directory}")
    if (directory / "frames").is_dir():
        yield read_sequence(directory)
        return
    for sub in sorted(p for p in directory.iterdir() if (p / "frames").is_dir()):
        yield read_sequence(sub)


def mjpeg_bytes(sequence: SyntheticSequence) -> bytes:
    """Concatenates the frames into a motion JPEG stream."""
    return b"".join(sequence.frames)
