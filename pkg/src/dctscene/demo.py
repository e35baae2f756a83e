# -*- coding: utf-8 -*-
"""Median filter versus moving average demonstration.

A model coefficient is fed a constant input with a one frame impulse. The
approximated median filter returns to the baseline one frame after the
impulse, the exponential moving average only converges towards it.
"""
from pathlib import Path
import logging

import numpy as np
import numpy.typing as npt

from dctscene.scene import amf_update, ema_update


def impulse_response(baseline: int, impulse: int, alpha_amf: float, alpha_ema: float, n_frames: int = 10,
                     impulse_frame: int = 1) -> tuple[npt.NDArray[np.int64], npt.NDArray[np.float64],
                                                      npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """Feeds `baseline` with one frame of `baseline + impulse` to both filters.

    Both models start at the baseline.

    Returns
    -------
    (frames, inputs, amf, ema), model values after each frame.
    """
    frames = np.arange(n_frames)
    inputs = np.full(n_frames, float(baseline))
    inputs[impulse_frame] += impulse
    amf = np.empty(n_frames)
    ema = np.empty(n_frames)
    y_amf, y_ema = float(baseline), float(baseline)
    for t in frames:
        y_amf = float(amf_update(inputs[t], y_amf, alpha_amf))
        y_ema = float(ema_update(inputs[t], y_ema, alpha_ema))
        amf[t], ema[t] = y_amf, y_ema
    return frames, inputs, amf, ema


def run_demo(args):
    logging.info("Running demonstration.")
    logging.info(f"args={args}")

    frames, inputs, amf, ema = impulse_response(args.baseline, args.impulse, args.alpha_amf, args.alpha_ema,
                                                args.frames)
    print(f"{'frame':>5} {'input':>8} {'median':>8} {'average':>8}")
    for t in frames:
        print(f"{t:>5} {inputs[t]:>8.2f} {amf[t]:>8.2f} {ema[t]:>8.2f}")

    if args.noplot:
        return 0

    from dctscene.visualisation import plot_impulse_response
    fig = plot_impulse_response(frames, inputs, amf, ema, style=args.style, show=(not args.noshow))

    if args.save:
        filepath = Path(args.save)
        if (filepath.exists()):
            logging.error(f"Will not overwrite existing file: {filepath}")
            return 1
        logging.info(f"Saving plot output to {filepath}")
        fig.savefig(filepath)
    return 0
