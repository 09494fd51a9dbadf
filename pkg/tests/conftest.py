import numpy as np
import pytest

from eev.gen import (random_conv_layer as make_conv_layer,
                     random_dense_layer as make_dense_layer,
                     random_tiny_model as make_tiny_model)

__all__ = ["make_conv_layer", "make_dense_layer", "make_tiny_model", "rng"]


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
