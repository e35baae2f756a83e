# -*- coding: utf-8 -*-
"""Connected components of the age image.

Blocks are merged into 4-connected components when their matched modes lie
on the same side of the age threshold, so every blob is either entirely
young (created after the threshold) or entirely old.
"""
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
import numpy.typing as npt
from scipy import ndimage

from dctscene.classifier import DecisionGrid
from dctscene.units import block_box_to_pixels

YOUNG = "young"
OLD = "old"
AgeImage = npt.NDArray[np.int64]

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class Blob:
    """A 4-connected set of blocks of one age class.

    Member blocks are stored in row-major order.
    """
    rows: npt.NDArray[np.intp]
    cols: npt.NDArray[np.intp]
    age_class: str
    min_creation: int
    max_creation: int
    mean_creation: float

    @property
    def count(self) -> int:
        return int(self.rows.size)

    @property
    def young(self) -> bool:
        return self.age_class == YOUNG

    @property
    def first_block(self) -> tuple[int, int]:
        return int(self.rows[0]), int(self.cols[0])

    @property
    def block_box(self) -> tuple[int, int, int, int]:
        """(row0, col0, row1, col1), end exclusive, in blocks."""
        return (int(self.rows.min()), int(self.cols.min()), int(self.rows.max()) + 1, int(self.cols.max()) + 1)

    @property
    def pixel_box(self) -> tuple[int, int, int, int]:
        """(x, y, w, h) in pixels."""
        return block_box_to_pixels(*self.block_box)

    def blocks(self) -> set[tuple[int, int]]:
        return set(zip(self.rows.tolist(), self.cols.tolist()))


def age_image(decisions: DecisionGrid) -> AgeImage:
    """Returns the creation frame of each block's matched mode.

    Blocks creating a new mode get the current frame.
    """
    return np.array(decisions.creation_frame, dtype=np.int64)


def _label(mask: npt.NDArray[np.bool_], age: npt.NDArray[np.int64], age_class: str) -> list[Blob]:
    labels, n = ndimage.label(mask, structure=_FOUR_CONNECTED)
    blobs = []
    for index, box in enumerate(ndimage.find_objects(labels), start=1):
        if box is None:
            continue
        rows, cols = np.nonzero(labels[box] == index)
        rows = rows + box[0].start
        cols = cols + box[1].start
        ages = age[rows, cols]
        blobs.append(Blob(rows, cols, age_class, int(ages.min()), int(ages.max()), float(ages.mean())))
    return blobs


def _canonical_order(blobs: list[Blob], width: int) -> list[Blob]:
    return sorted(blobs, key=lambda blob: blob.first_block[0] * width + blob.first_block[1])


def connected_components(age: AgeImage, t_age: int) -> list[Blob]:
    """Partitions the block grid into maximal 4-connected blobs.

    Two neighbouring blocks belong to the same blob when both creation frames
    are > `t_age` or both are <= `t_age`. Blobs are ordered by their first
    block in raster order.
    """
    age = np.asarray(age, dtype=np.int64)
    young = age > t_age
    blobs = _label(young, age, YOUNG) + _label(~young, age, OLD)
    return _canonical_order(blobs, age.shape[1])


def blobs_from_mask(mask: npt.NDArray[np.bool_], age: Optional[AgeImage] = None) -> list[Blob]:
    """Returns the 4-connected components of the set blocks of a foreground mask, as young blobs."""
    mask = np.asarray(mask, dtype=bool)
    if age is None:
        age = np.zeros(mask.shape, dtype=np.int64)
    return _canonical_order(_label(mask, np.asarray(age, dtype=np.int64), YOUNG), mask.shape[1])


def foreground_blobs(blobs: Iterable[Blob], current_frame: int, n_bg: int, min_blob_blocks: int = 1) -> list[Blob]:
    """Selects the young blobs of at least `min_blob_blocks` blocks.

    Nothing is reported during the first `n_bg` frames while the scene model
    initializes.
    """
    if current_frame < n_bg:
        return []
    return [blob for blob in blobs if blob.young and blob.count >= min_blob_blocks]


def foreground_mask(blobs: Iterable[Blob], shape: tuple[int, int]) -> npt.NDArray[np.bool_]:
    """Returns the block mask covered by `blobs`."""
    mask = np.zeros(shape, dtype=bool)
    for blob in blobs:
        mask[blob.rows, blob.cols] = True
    return mask


def format_blob_record(frame: int, blob_id: int, blob: Blob) -> str:
    """One report line: frame, blob id, x, y, w, h, block count, min and max creation frame, age class."""
    x, y, w, h = blob.pixel_box
    return f"{frame} {blob_id} {x} {y} {w} {h} {blob.count} {blob.min_creation} {blob.max_creation} {blob.age_class}"
