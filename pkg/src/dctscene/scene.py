# -*- coding: utf-8 -*-
"""Per-block multi-mode scene model.

Every block keeps an ordered list of at most `max_modes` mode models. A mode
holds 8 coefficient values (int16) and 4 temporal fields (int32): creation
frame, hit count, last matched frame and removal frame. Matched modes follow
their input with an approximated median filter; modes expire when they have
not been matched for long enough.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Protocol
import logging
import math
import struct

import numba
import numpy as np
import numpy.typing as npt

from dctscene.config import ModelConfig
from dctscene.units import INT16_MAX, INT16_MIN, MODE_RECORD_BYTES, N_FEATURES, scene_model_bytes

SNAPSHOT_MAGIC = b"DCTS"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sHHHHI")


class MatchOutcomes(Protocol):
    """Anything carrying a per-block selected mode index (-1 = create a new mode)."""
    mode_index: npt.NDArray[np.int16]


@dataclass(frozen=True)
class ModeModel:
    """One stored appearance state of one block."""
    coeffs: tuple[int, ...]
    creation_frame: int
    hit_count: int
    last_matched_frame: int
    removal_frame: int

    RECORD = struct.Struct("<8h4i")

    def to_bytes(self) -> bytes:
        return self.RECORD.pack(*self.coeffs, self.creation_frame, self.hit_count,
                                self.last_matched_frame, self.removal_frame)

    @classmethod
    def from_bytes(cls, record: bytes) -> "ModeModel":
        values = cls.RECORD.unpack(record)
        return cls(tuple(values[:N_FEATURES]), *values[N_FEATURES:])


def amf_update(x: npt.ArrayLike, y: npt.ArrayLike, alpha: float) -> Any:
    """Approximated median filter update of a model coefficient.

    Parameters
    ----------
    x
        Input coefficient value(s).
    y
        Model coefficient value(s).
    alpha
        Step size, must be > 0.
        Unit: coefficient units per frame

    Returns
    -------
    y + alpha if x > y + alpha, y - alpha if x < y - alpha, x otherwise.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    x = np.asarray(x)
    y = np.asarray(y)
    result = np.where(x > y + alpha, y + alpha, np.where(x < y - alpha, y - alpha, x))
    return result[()]


def ema_update(x: npt.ArrayLike, y: npt.ArrayLike, alpha_ema: float) -> Any:
    """Exponential moving average update, (1 - alpha_ema) * y + alpha_ema * x."""
    if not 0.0 <= alpha_ema <= 1.0:
        raise ValueError(f"alpha_ema must be in [0, 1], got {alpha_ema}")
    return ((1.0 - alpha_ema) * np.asarray(y, dtype=np.float64) + alpha_ema * np.asarray(x, dtype=np.float64))[()]


def compute_removal_frame(current_frame: int, c_s: float, c_v: float, hit_count: int) -> int:
    """Returns the frame in which a mode is removed unless matched again.

    f_mr = current_frame + c_s + c_v * hit_count, rounded down.

    Parameters
    ----------
    current_frame
        Unit: frames
    c_s
        Minimum survival time, > 0.
        Unit: frames
    c_v
        Survival per hit, >= 0.
        Unit: frames
    hit_count
        Number of matches of the mode, >= 1.
    """
    if not c_s > 0 or c_v < 0 or hit_count < 1:
        raise ValueError(f"invalid removal parameters c_s={c_s}, c_v={c_v}, hit_count={hit_count}")
    return int(math.floor(current_frame + c_s + c_v * hit_count))


@numba.jit(nopython=True, cache=True)
def _amf(x, y, alpha):
    if x > y + alpha:
        return y + alpha
    if x < y - alpha:
        return y - alpha
    return x


@numba.jit(nopython=True, cache=True)
def _removal_frame(current, c_s, c_v, hits):
    return np.int64(np.floor(current + c_s + c_v * hits))


@numba.jit(nopython=True, cache=True)
def _move_mode(coeffs, creation, hits, last, removal, tags, track, r, c, src, dst):
    for i in range(coeffs.shape[3]):
        coeffs[r, c, dst, i] = coeffs[r, c, src, i]
    creation[r, c, dst] = creation[r, c, src]
    hits[r, c, dst] = hits[r, c, src]
    last[r, c, dst] = last[r, c, src]
    removal[r, c, dst] = removal[r, c, src]
    if track:
        tags[r, c, dst] = tags[r, c, src]


@numba.jit(nopython=True, cache=True)
def _eviction_victim(hits, creation, removal, n):
    # earliest removal frame, then fewer hits, then older creation
    victim = 0
    for j in range(1, n):
        if removal[j] < removal[victim]:
            victim = j
        elif removal[j] == removal[victim]:
            if hits[j] < hits[victim]:
                victim = j
            elif hits[j] == hits[victim] and creation[j] < creation[victim]:
                victim = j
    return victim


@numba.jit(nopython=True, cache=True)
def _apply_updates(coeffs, creation, hits, last, removal, count, tags, track,
                   mode_index, inputs, input_tags, current, alpha, c_s, c_v):
    rows, cols, max_modes = creation.shape
    for r in range(rows):
        for c in range(cols):
            m = mode_index[r, c]
            if m >= 0:
                for i in range(coeffs.shape[3]):
                    coeffs[r, c, m, i] = _amf(np.int64(inputs[r, c, i]), np.int64(coeffs[r, c, m, i]), alpha)
                hits[r, c, m] += 1
                last[r, c, m] = current
                removal[r, c, m] = _removal_frame(current, c_s, c_v, hits[r, c, m])
                continue
            n = np.int64(count[r, c])
            if n >= max_modes:
                victim = _eviction_victim(hits[r, c], creation[r, c], removal[r, c], n)
                for j in range(victim + 1, n):
                    _move_mode(coeffs, creation, hits, last, removal, tags, track, r, c, j, j - 1)
                n -= 1
            for i in range(coeffs.shape[3]):
                coeffs[r, c, n, i] = inputs[r, c, i]
            creation[r, c, n] = current
            hits[r, c, n] = 1
            last[r, c, n] = current
            removal[r, c, n] = _removal_frame(current, c_s, c_v, 1)
            if track:
                tags[r, c, n] = input_tags[r, c]
            count[r, c] = n + 1


@numba.jit(nopython=True, cache=True)
def _expire_modes(coeffs, creation, hits, last, removal, count, tags, track, current):
    rows, cols = count.shape
    removed = 0
    for r in range(rows):
        for c in range(cols):
            n = np.int64(count[r, c])
            if n == 0:
                continue
            keep = -1
            alive = 0
            for j in range(n):
                if removal[r, c, j] > current:
                    alive += 1
            if alive == 0:
                # never empty a block: keep the latest-expiring mode
                keep = 0
                for j in range(1, n):
                    if removal[r, c, j] > removal[r, c, keep]:
                        keep = j
            write = 0
            for j in range(n):
                if removal[r, c, j] > current or j == keep:
                    if write != j:
                        _move_mode(coeffs, creation, hits, last, removal, tags, track, r, c, j, write)
                    write += 1
            removed += n - write
            count[r, c] = write
    return removed


def quantize_features(features: npt.NDArray[Any]) -> npt.NDArray[np.int16]:
    """Rounds feature values to the int16 storage of mode coefficients."""
    return np.clip(np.rint(features), INT16_MIN, INT16_MAX).astype(np.int16)


class SceneModel:
    """Grid of per-block mode lists plus the frame counter.

    Parameters
    ----------
    height_blocks, width_blocks
        Grid size.
        Unit: blocks
    config
        Model parameters; `max_modes` sizes the storage.
    track_tags
        Keep an integer tag per mode that follows the mode through updates,
        evictions and expiry.
    """

    def __init__(self, height_blocks: int, width_blocks: int, config: Optional[ModelConfig] = None,
                 *, track_tags: bool = False):
        self.config = config or ModelConfig()
        shape = (height_blocks, width_blocks, self.config.max_modes)
        self.coeffs = np.zeros(shape + (N_FEATURES,), dtype=np.int16)
        self.creation = np.zeros(shape, dtype=np.int32)
        self.hits = np.zeros(shape, dtype=np.int32)
        self.last = np.zeros(shape, dtype=np.int32)
        self.removal = np.zeros(shape, dtype=np.int32)
        self.count = np.zeros(shape[:2], dtype=np.uint8)
        self.track_tags = track_tags
        self.tags = np.full(shape if track_tags else (1, 1, 1), -1, dtype=np.int64)
        self.current_frame = 0

    @property
    def grid_shape(self) -> tuple[int, int]:
        return (int(self.count.shape[0]), int(self.count.shape[1]))

    @property
    def max_modes(self) -> int:
        return self.config.max_modes

    def modes(self, row: int, col: int) -> list[ModeModel]:
        """Returns the modes of one block, in storage order."""
        return [
            ModeModel(tuple(int(v) for v in self.coeffs[row, col, m]), int(self.creation[row, col, m]),
                      int(self.hits[row, col, m]), int(self.last[row, col, m]), int(self.removal[row, col, m]))
            for m in range(int(self.count[row, col]))
        ]

    def set_modes(self, row: int, col: int, modes: list[ModeModel]) -> None:
        """Replaces the modes of one block."""
        if len(modes) > self.max_modes:
            raise ValueError(f"{len(modes)} modes exceed max_modes={self.max_modes}")
        for m, mode in enumerate(modes):
            self.coeffs[row, col, m] = mode.coeffs
            self.creation[row, col, m] = mode.creation_frame
            self.hits[row, col, m] = mode.hit_count
            self.last[row, col, m] = mode.last_matched_frame
            self.removal[row, col, m] = mode.removal_frame
        self.count[row, col] = len(modes)

    def mode_counts(self) -> npt.NDArray[np.uint8]:
        return self.count.copy()

    def model_bytes(self) -> int:
        """Persistent size of the mode records.

        Unit: bytes
        """
        return scene_model_bytes(self.count)

    def advance_frame(self) -> None:
        self.current_frame += 1

    def check_invariants(self) -> None:
        """Raises AssertionError if a structural invariant does not hold."""
        assert int(self.count.max(initial=0)) <= self.max_modes
        for r, c in zip(*np.nonzero(self.count)):
            n = int(self.count[r, c])
            creation, last = self.creation[r, c, :n], self.last[r, c, :n]
            assert np.all(creation <= last), f"creation after last match in block {(r, c)}"
            assert np.all(last <= self.current_frame), f"last match in the future in block {(r, c)}"
            assert np.all(self.hits[r, c, :n] >= 1), f"mode without hits in block {(r, c)}"


def apply_updates(scene: SceneModel, decisions: MatchOutcomes, features: npt.NDArray[Any],
                  tags: Optional[npt.NDArray[np.integer]] = None) -> None:
    """Applies one frame of match decisions to the scene model.

    Matched modes get an AMF coefficient update, one more hit, the current
    frame as last matched frame and a new removal frame. Blocks deciding to
    create a mode get one, seeded with the input features; a full block first
    evicts the mode with the earliest removal frame (ties: fewer hits, then
    older creation).

    Parameters
    ----------
    scene
        Updated in place.
    decisions
        Selected mode per block, -1 to create a mode.
    features
        Shape (rows, cols, 8) input features of the current frame.
    tags
        Shape (rows, cols). Tags given to created modes, used only when the
        scene tracks tags.
    """
    config = scene.config
    if features.shape[:2] != scene.grid_shape:
        raise ValueError(f"feature grid {features.shape[:2]} does not match scene grid {scene.grid_shape}")
    input_tags = np.zeros((1, 1), dtype=np.int64) if tags is None else np.asarray(tags, dtype=np.int64)
    track = scene.track_tags and tags is not None
    _apply_updates(scene.coeffs, scene.creation, scene.hits, scene.last, scene.removal, scene.count,
                   scene.tags, track, np.asarray(decisions.mode_index, dtype=np.int64), quantize_features(features),
                   input_tags, scene.current_frame, config.alpha_amf, float(config.c_s), float(config.c_v))


def expire_modes(scene: SceneModel) -> int:
    """Removes every mode whose removal frame has been reached.

    The last remaining mode of a block is never removed.

    Returns
    -------
    Number of modes removed.
    """
    removed = int(_expire_modes(scene.coeffs, scene.creation, scene.hits, scene.last, scene.removal,
                                scene.count, scene.tags, scene.track_tags, scene.current_frame))
    if removed:
        logging.debug(f"Frame {scene.current_frame}: expired {removed} modes.")
    return removed


def save_snapshot(scene: SceneModel, path: str | Path) -> None:
    """Writes the scene model as a little-endian binary snapshot.

    Layout: header (magic, version, width_blocks, height_blocks, max_modes,
    current_frame), then per block in row-major order one mode count byte and
    that many 32-byte mode records.
    """
    rows, cols = scene.grid_shape
    with open(path, "wb") as snapshot:
        snapshot.write(_HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, cols, rows, scene.max_modes,
                                    scene.current_frame))
        for r in range(rows):
            for c in range(cols):
                modes = scene.modes(r, c)
                snapshot.write(bytes((len(modes),)))
                for mode in modes:
                    snapshot.write(mode.to_bytes())
    logging.info(f"Saved scene snapshot ({scene.model_bytes()} bytes of modes) to {path}")


def load_snapshot(path: str | Path, config: Optional[ModelConfig] = None) -> SceneModel:
    """Reads a scene snapshot written by `save_snapshot`.

    The snapshot's `max_modes` replaces the one in `config`.
    """
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path} is too short to be a scene snapshot")
    magic, version, cols, rows, max_modes, current_frame = _HEADER.unpack_from(data)
    if magic != SNAPSHOT_MAGIC or version != SNAPSHOT_VERSION:
        raise ValueError(f"{path} is not a version {SNAPSHOT_VERSION} scene snapshot")
    config = (config or ModelConfig()).with_overrides(max_modes=max_modes)
    scene = SceneModel(rows, cols, config)
    scene.current_frame = current_frame
    pos = _HEADER.size
    for r in range(rows):
        for c in range(cols):
            if pos >= len(data):
                raise ValueError(f"{path} is truncated at block {(r, c)}")
            n = data[pos]
            pos += 1
            end = pos + n * MODE_RECORD_BYTES
            if n > max_modes or end > len(data):
                raise ValueError(f"{path} holds an invalid mode list at block {(r, c)}")
            scene.set_modes(r, c, [ModeModel.from_bytes(data[p:p + MODE_RECORD_BYTES])
                                   for p in range(pos, end, MODE_RECORD_BYTES)])
            pos = end
    return scene
