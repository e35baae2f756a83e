import io

import numpy as np
import pytest
from PIL import Image

from dctscene.classifier import ClassifierModel, LambdaTable, MatchWeights
from dctscene.config import ModelConfig
from dctscene.synthetic import smooth_texture


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def model():
    """Classifier with uniform weights and a lambda table favouring similar neighbours."""
    return ClassifierModel(
        MatchWeights(np.full(8, -0.1), -12.0),
        LambdaTable(np.array([[-3.0, -1.5, 0.0, 1.5, 3.0]] * 3)))


@pytest.fixture
def config():
    return ModelConfig(n_bg=20)


@pytest.fixture
def encode():
    """Encodes a uint8 gray or RGB image to JPEG with Pillow."""
    def run(image, **save_args):
        buffer = io.BytesIO()
        mode = "L" if image.ndim == 2 else "RGB"
        Image.fromarray(image, mode).save(buffer, "JPEG", **save_args)
        return buffer.getvalue()
    return run


@pytest.fixture
def textured_image():
    def make(height, width, seed=0):
        return smooth_texture(np.random.default_rng(seed), height, width, (120, 110, 140), 80.0, sigma=1.0)
    return make
