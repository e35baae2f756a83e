# -*- coding: utf-8 -*-
"""Block geometry and memory units.

This file provides the constants and small helper functions that relate the
8x8 block grid to pixels, frames and bytes.
"""
import math

import numpy as np
import numpy.typing as npt

# Constants
BLOCK_SIZE: int = 8   # pixels per block side
COEFFS_PER_BLOCK: int = 64   # DCT coefficients per block
N_FEATURES: int = 8   # features per block (6 Y + I DC + Q DC)
N_Y_FEATURES: int = 6   # leading zigzag Y coefficients used as features
YIQ_ROTATION_DEG: float = 33.0   # degrees, Cb/Cr plane -> I/Q plane
MODE_RECORD_BYTES: int = 32   # bytes, 8 x int16 coefficients + 4 x int32 metadata
MAX_NEIGHBOURS: int = 4   # 4-connectivity
INT16_MIN: int = -32768
INT16_MAX: int = 32767


def blocks_for_pixels(n_pixels: int) -> int:
    """Returns the number of blocks needed to cover `n_pixels`.

    Parameters
    ----------
    n_pixels
        Image extent along one axis.
        Unit: pixels

    Returns
    -------
    Number of blocks, partial blocks included.
        Unit: blocks
    """
    return int(math.ceil(n_pixels / BLOCK_SIZE))


def block_box_to_pixels(row0: int, col0: int, row1: int, col1: int) -> tuple[int, int, int, int]:
    """Converts a block bounding box to a pixel box.

    Parameters
    ----------
    row0, col0
        Top-left block (inclusive).
        Unit: blocks
    row1, col1
        Bottom-right block (exclusive).
        Unit: blocks

    Returns
    -------
    (x, y, w, h)
        Pixel box, top-left corner and extent.
        Unit: pixels
    """
    return (col0 * BLOCK_SIZE, row0 * BLOCK_SIZE, (col1 - col0) * BLOCK_SIZE, (row1 - row0) * BLOCK_SIZE)


def scene_model_bytes(mode_counts: npt.NDArray[np.integer]) -> int:
    """Returns the persistent scene model size for the given mode counts.

    Only the mode records are accounted, which is the memory held in between
    processing two frames.

    Parameters
    ----------
    mode_counts
        Number of modes per block, any shape.

    Returns
    -------
    Size of the scene model.
        Unit: bytes
    """
    return int(np.asarray(mode_counts, dtype=np.int64).sum()) * MODE_RECORD_BYTES


def yiq_rotation(degrees: float = YIQ_ROTATION_DEG) -> tuple[float, float]:
    """Returns (sin, cos) of the chroma plane rotation angle."""
    theta = math.radians(degrees)
    return math.sin(theta), math.cos(theta)
