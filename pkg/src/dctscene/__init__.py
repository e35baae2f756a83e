# -*- coding: utf-8 -*-
"""Compressed-domain background subtraction

This module detects foreground objects in JPEG and motion JPEG video directly
from the DCT coefficients, using a multi-mode scene model per 8x8 block.
"""
import lazy_loader as lazy

__version__ = "0.1.0"

subpackages = [
    'jpeg',
    'mjpeg',
    'features',
    'config',
    'scene',
    'classifier',
    'blobs',
    'training',
    'synthetic',
    'evaluation',
    'pipeline',
    'visualisation',
    'units'
]

__getattr__, __dir__, _ = lazy.attach(__name__, subpackages)

__all__ = [
    "units",
    "jpeg",
    "mjpeg",
    "features",
    "config",
    "scene",
    "classifier",
    "blobs",
    "training",
    "synthetic",
    "evaluation",
    "pipeline",
    "visualisation"
]
