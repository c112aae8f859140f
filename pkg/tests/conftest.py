from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cbirkit.feature_io import FeatureMap, FeatureMapSet


def random_feature_map(rng: np.random.Generator, layer_id: str = "conv",
                       max_side: int = 9, max_channels: int = 8) -> FeatureMap:
    h = int(rng.integers(1, max_side + 1))
    w = int(rng.integers(1, max_side + 1))
    k = int(rng.integers(1, max_channels + 1))
    values = rng.normal(scale=3.0, size=(h, w, k)).astype(np.float32)
    return FeatureMap(layer_id, values)


def random_feature_map_set(rng: np.random.Generator, image_id: str = "img",
                           max_layers: int = 3) -> FeatureMapSet:
    n = int(rng.integers(1, max_layers + 1))
    layers = tuple(random_feature_map(rng, f"conv_{i}") for i in range(n))
    return FeatureMapSet(image_id, layers)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
