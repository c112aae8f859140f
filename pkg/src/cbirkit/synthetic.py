"""Synthetic clustered feature maps for pipeline tests without any CNN.

Each class gets a center vector in activation space; each image is that
center plus bounded per-element noise, broadcast over the spatial grid.
Bounded (uniform) noise gives a hard guarantee on the ratio between the
inter-class margin and the intra-class spread, which is what end-to-end
retrieval tests need to assert recall@1 == 1.0 rather than hope for it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feature_io import FeatureMap, FeatureMapSet


@dataclass(frozen=True)
class ClusterSpec:
    n_classes: int = 10
    images_per_class: int = 5
    height: int = 6
    width: int = 6
    channels: int = 16
    layer_ids: tuple[str, ...] = ("conv_a", "conv_b")
    margin_ratio: float = 10.0  # inter-class margin / max intra-class spread
    seed: int = 0


def _class_centers(n_classes: int, channels: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm center per class with pairwise distance >= ~sqrt(2)*0.9."""
    centers = np.zeros((n_classes, channels))
    for c in range(n_classes):
        while True:
            v = rng.normal(size=channels)
            v /= np.linalg.norm(v)
            if all(np.linalg.norm(v - centers[p]) > 1.2 for p in range(c)):
                centers[c] = v
                break
    return centers


def make_cluster_sets(spec: ClusterSpec = ClusterSpec()) -> tuple[list[FeatureMapSet], dict[str, int]]:
    """Generate labelled FeatureMapSets with guaranteed cluster separation.

    Returns (sets, labels). The noise amplitude is chosen from the center
    geometry so that max intra-class spread * margin_ratio <= min
    inter-class center distance, for every pooling kind in the default
    branch set (max / mean over spatial positions stays within the
    per-element noise bound).
    """
    if spec.channels < spec.n_classes:
        raise ValueError("need channels >= n_classes for well-separated centers")
    rng = np.random.default_rng(spec.seed)
    centers = _class_centers(spec.n_classes, spec.channels, rng)
    min_margin = min(
        float(np.linalg.norm(centers[i] - centers[j]))
        for i in range(spec.n_classes) for j in range(i + 1, spec.n_classes)
    )
    # per-element noise in [-a, a]; pooled descriptors deviate from the
    # center by at most a per channel, i.e. a*sqrt(K) in L2
    amplitude = min_margin / (spec.margin_ratio * np.sqrt(spec.channels)) / 2.0

    sets: list[FeatureMapSet] = []
    labels: dict[str, int] = {}
    for class_id in range(spec.n_classes):
        for i in range(spec.images_per_class):
            image_id = f"img_{class_id:03d}_{i:03d}"
            layers = []
            for layer_id in spec.layer_ids:
                noise = rng.uniform(-amplitude, amplitude,
                                    size=(spec.height, spec.width, spec.channels))
                values = centers[class_id][None, None, :] + noise
                layers.append(FeatureMap(layer_id, values.astype(np.float32)))
            sets.append(FeatureMapSet(image_id, tuple(layers)))
            labels[image_id] = class_id
    return sets, labels


def permuted_labels(labels: dict[str, int], seed: int = 1) -> dict[str, int]:
    """Random reassignment of the label multiset across images (null model)."""
    rng = np.random.default_rng(seed)
    ids = sorted(labels)
    values = [labels[i] for i in ids]
    perm = rng.permutation(len(ids))
    return {ids[i]: values[perm[i]] for i in range(len(ids))}
