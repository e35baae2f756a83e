# -*- coding: utf-8 -*-
"""Visualization tools for the scene model.

This file provides functions for plotting filter responses, ROC curves and
age images with their blobs.
"""
from typing import Optional, Sequence

import numpy as np
import numpy.typing as npt
import matplotlib as mpl
import matplotlib.pyplot as plt

from dctscene.blobs import Blob
from dctscene.training import RocCurve


def plot_impulse_response(
        frames: npt.NDArray[np.int64],
        inputs: npt.NDArray[np.float64],
        amf: npt.NDArray[np.float64],
        ema: npt.NDArray[np.float64],
        *,
        ax: Optional[mpl.axes.Axes] = None,
        style: int = 1,
        show: bool = True):
    """Plots the model value of the median filter and the moving average for an input sequence.

    Parameters
    ----------
    frames
        Frame numbers.
    inputs
        Input coefficient per frame.
    amf, ema
        Model value after each frame.
    ax: mpl.Axes (optional, default: create a new axes)
        An Axes instance to re-use
    style: int
        1: lines with markers
        2: step plot
    show: bool
        Show the chart after plotting.

    Returns
    -------
    The matplotlib figure instance.
    """
    if ax is None:
        fig = plt.figure(figsize=(10, 6))
        ax = fig.add_subplot(111)
    else:
        fig = ax.figure

    if style == 1:
        ax.plot(frames, inputs, ls=':', color='k', marker='.', label="input")
        ax.plot(frames, amf, ls='-', color='#1f78b4', marker='o', mfc='w', label="median filter")
        ax.plot(frames, ema, ls='-', color='#e31a1c', marker='s', mfc='w', label="moving average")
    elif style == 2:
        ax.step(frames, inputs, where='post', color='k', alpha=0.5, label="input")
        ax.step(frames, amf, where='post', color='#1f78b4', label="median filter")
        ax.step(frames, ema, where='post', color='#e31a1c', label="moving average")
    else:
        raise RuntimeError(f"Unknown plot style \"{style}\".")

    ax.set_xlabel("frame")
    ax.set_ylabel("coefficient")
    ax.legend()

    if show:
        plt.show()

    return fig


def plot_roc(curve: RocCurve, threshold: Optional[float] = None, *, ax: Optional[mpl.axes.Axes] = None,
             show: bool = True):
    """Plots a ROC curve, the TPR + FPR = 1 line and the selected operating point."""
    if ax is None:
        fig = plt.figure(figsize=(6, 6))
        ax = fig.add_subplot(111)
    else:
        fig = ax.figure

    ax.plot(curve.fpr, curve.tpr, color='k', ls='-')
    ax.plot([0, 1], [1, 0], color='k', ls='--', alpha=0.5)
    if threshold is not None:
        k = int(np.argmin(np.abs(curve.thresholds - threshold)))
        ax.plot(curve.fpr[k], curve.tpr[k], 'o', color='#e31a1c', label=f"threshold {threshold:.3g}")
        ax.legend()
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_aspect('equal')

    if show:
        plt.show()

    return fig


def plot_age_image(age: npt.NDArray[np.int64], blobs: Sequence[Blob] = (), *, ax: Optional[mpl.axes.Axes] = None,
                   show: bool = True):
    """Shows the creation frame of each block's matched mode with blob bounding boxes."""
    if ax is None:
        fig = plt.figure(figsize=(8, 6))
        ax = fig.add_subplot(111)
    else:
        fig = ax.figure

    image = ax.imshow(age, cmap='viridis', interpolation='nearest')
    fig.colorbar(image, ax=ax, label="creation frame")
    for blob in blobs:
        row0, col0, row1, col1 = blob.block_box
        ax.add_patch(mpl.patches.Rectangle((col0 - 0.5, row0 - 0.5), col1 - col0, row1 - row0,
                                           fill=False, color='w' if blob.young else 'k', lw=1.5))
    ax.set_xlabel("block column")
    ax.set_ylabel("block row")

    if show:
        plt.show()

    return fig
