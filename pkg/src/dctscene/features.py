# -*- coding: utf-8 -*-
"""Per-block feature vectors.

Each 8x8 luma block is described by 8 values: the first 6 luma coefficients
in zigzag order, followed by the I and Q chroma DC values.
"""
import numpy as np
import numpy.typing as npt

from dctscene.jpeg import CoefficientPlanes
from dctscene.units import N_FEATURES, N_Y_FEATURES, YIQ_ROTATION_DEG, yiq_rotation

FeatureGrid = npt.NDArray[np.float64]


def rotate_chroma(cb: npt.ArrayLike, cr: npt.ArrayLike,
                  degrees: float = YIQ_ROTATION_DEG) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Rotates Cb/Cr values into the I/Q plane.

    I = -Cb sin(t) + Cr cos(t), Q = Cb cos(t) + Cr sin(t). The rotation is
    orthonormal, so I^2 + Q^2 = Cb^2 + Cr^2.

    Parameters
    ----------
    cb, cr
        Chroma values, any matching shapes.
    degrees
        Rotation angle.
        Unit: degrees

    Returns
    -------
    (i, q)
    """
    sin, cos = yiq_rotation(degrees)
    cb = np.asarray(cb, dtype=np.float64)
    cr = np.asarray(cr, dtype=np.float64)
    return -cb * sin + cr * cos, cb * cos + cr * sin


def extract_features(planes: CoefficientPlanes, degrees: float = YIQ_ROTATION_DEG) -> FeatureGrid:
    """Returns the feature grid of a frame.

    Parameters
    ----------
    planes
        Decoded coefficients of the frame.
    degrees
        Chroma rotation angle.
        Unit: degrees

    Returns
    -------
    Array of shape (height_blocks, width_blocks, 8).
    """
    features = np.empty(planes.grid_shape + (N_FEATURES,), dtype=np.float64)
    features[:, :, :N_Y_FEATURES] = planes.y_coeffs[:, :, :N_Y_FEATURES]
    features[:, :, N_Y_FEATURES], features[:, :, N_Y_FEATURES + 1] = rotate_chroma(planes.cb_dc, planes.cr_dc, degrees)
    return features
