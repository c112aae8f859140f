"""Global descriptors pooled from convolutional feature maps.

The pooling family implemented here:

* ``mac``         per-channel maximum over the full spatial extent (dim K)
* ``region_mac``  per-channel maximum restricted to one rectangle (dim K)
* ``rmac``        sum of ``region_mac`` over a multi-scale grid of square
                  regions (dim K)
* ``msrmac``      concatenation of ``rmac`` across several layers of the
                  same image (dim sum of the K_j)
* ``avgpool``     per-channel spatial mean, offered as an alternative
                  branch kind (dim K)

All operations are pure; descriptors are immutable float32 vectors. Region
sums are accumulated in region emission order so results are reproducible
bit-for-bit despite float non-associativity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import RegionOutOfBounds
from .feature_io import FeatureMap, FeatureMapSet

#: Region-side scale indices used when a caller does not specify any.
DEFAULT_SCALES = (1, 2, 3)

#: Norms at or below this are treated as zero vectors by l2_normalize.
NORM_EPSILON = 1e-12

#: Minimum fractional overlap between consecutive regions along an axis.
MIN_OVERLAP = 0.4


@dataclass(frozen=True)
class Region:
    """Axis-aligned rectangle on the spatial grid of a feature map."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1 or self.x < 0 or self.y < 0:
            raise ValueError(f"degenerate region {self}")


@dataclass(frozen=True)
class RegionGrid:
    """Deterministic multi-scale grid of square regions over an H x W map."""

    scales: tuple[int, ...]
    regions: tuple[Region, ...]
    source_dims: tuple[int, int]  # (H, W)


@dataclass(frozen=True)
class GlobalDescriptor:
    """Flat real vector describing one image (or one pooling stage of it)."""

    values: np.ndarray  # float32
    provenance: dict[str, Any] = field(default_factory=dict)
    degenerate: bool = False

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float32).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


# ---------------------------------------------------------------------------
# Region grid construction
# ---------------------------------------------------------------------------

def region_side(height: int, width: int, scale: int) -> int:
    """Square-region side for scale ``l``: max(1, floor(2*min(W,H)/(l+1)))."""
    return max(1, (2 * min(height, width)) // (scale + 1))


def _axis_offsets(length: int, side: int) -> list[int]:
    """Placement offsets of a side-``side`` window along one axis.

    Uniform placements, first at 0 and last at length-side, spaced so that
    consecutive windows keep >= MIN_OVERLAP of the side in common. The
    integer step bound floor(0.6*side) (rather than 0.6*side itself) absorbs
    offset rounding; with side 1 no two distinct placements can overlap at
    all, so a single centered window is emitted instead.
    """
    if length == side:
        return [0]
    if side == 1:
        return [(length - 1) // 2]
    # exact integer floor(0.6 * side); binary floats would misround side=5
    max_step = (3 * side) // 5
    span = length - side
    n = max(2, -(-span // max_step) + 1)
    return [math.floor(i * span / (n - 1) + 0.5) for i in range(n)]


def generate_regions(height: int, width: int, scales: Sequence[int] = DEFAULT_SCALES) -> RegionGrid:
    """Build the multi-scale region grid for an H x W map.

    Pure function of (height, width, scales). Regions are emitted
    scale-major, then row-major within a scale.
    """
    if height < 1 or width < 1:
        raise ValueError(f"map dimensions must be positive, got {height}x{width}")
    scales = tuple(int(s) for s in scales)
    if not scales or any(s < 1 for s in scales):
        raise ValueError(f"scales must be a non-empty list of integers >= 1, got {scales}")

    regions: list[Region] = []
    for scale in scales:
        side = region_side(height, width, scale)
        for y in _axis_offsets(height, side):
            for x in _axis_offsets(width, side):
                regions.append(Region(x=x, y=y, w=side, h=side))
    return RegionGrid(scales=scales, regions=tuple(regions), source_dims=(height, width))


# ---------------------------------------------------------------------------
# Pooling operations
# ---------------------------------------------------------------------------

def mac(fmap: FeatureMap) -> GlobalDescriptor:
    """Per-channel maximum over all H*W spatial positions."""
    values = np.max(fmap.values, axis=(0, 1))
    return GlobalDescriptor(values, provenance={"kind": "MAC", "layer_id": fmap.layer_id})


def avgpool(fmap: FeatureMap) -> GlobalDescriptor:
    """Per-channel mean over all H*W spatial positions."""
    values = np.mean(fmap.values, axis=(0, 1), dtype=np.float64).astype(np.float32)
    return GlobalDescriptor(values, provenance={"kind": "AVGPOOL", "layer_id": fmap.layer_id})


def region_mac(fmap: FeatureMap, region: Region) -> GlobalDescriptor:
    """Per-channel maximum restricted to ``region``."""
    h, w = fmap.height, fmap.width
    if region.x + region.w > w or region.y + region.h > h:
        raise RegionOutOfBounds(f"{region} exceeds {h}x{w} map")
    window = fmap.values[region.y:region.y + region.h, region.x:region.x + region.w, :]
    values = np.max(window, axis=(0, 1))
    return GlobalDescriptor(
        values,
        provenance={"kind": "RegionMAC", "layer_id": fmap.layer_id,
                    "region": (region.x, region.y, region.w, region.h)},
    )


def rmac(fmap: FeatureMap, scales: Sequence[int] = DEFAULT_SCALES, *,
         region_l2: bool = False) -> GlobalDescriptor:
    """Sum of region maxima over the multi-scale grid.

    ``region_l2=True`` L2-normalizes each region vector before the sum
    (the normalize-then-sum variant); the default is the plain sum.
    Accumulation runs in float32 in region emission order.
    """
    grid = generate_regions(fmap.height, fmap.width, scales)
    acc = np.zeros(fmap.channels, dtype=np.float32)
    for region in grid.regions:
        vec = region_mac(fmap, region).values
        if region_l2:
            vec = _unit_or_zero(vec)
        acc = acc + vec
    return GlobalDescriptor(
        acc,
        provenance={"kind": "RMAC", "layer_id": fmap.layer_id,
                    "scales": list(grid.scales), "regions": len(grid.regions),
                    "region_l2": region_l2},
    )


def msrmac(fmap_set: FeatureMapSet, scales: Sequence[int] = DEFAULT_SCALES, *,
           region_l2: bool = False) -> GlobalDescriptor:
    """Concatenated per-layer region-sum descriptors, in set layer order."""
    if not fmap_set.layers:
        raise ValueError("feature-map set has no layers")
    parts = [rmac(fmap, scales, region_l2=region_l2) for fmap in fmap_set.layers]
    values = np.concatenate([p.values for p in parts])
    return GlobalDescriptor(
        values,
        provenance={
            "kind": "MSRMAC",
            "scales": [int(s) for s in scales],
            "region_l2": region_l2,
            "layers": [{"layer_id": f.layer_id, "dim": f.channels} for f in fmap_set.layers],
        },
    )


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------

def _unit_or_zero(values: np.ndarray) -> np.ndarray:
    norm = math.sqrt(float(np.sum(values.astype(np.float64) ** 2)))
    if norm <= NORM_EPSILON:
        return values
    return (values / np.float32(norm)).astype(np.float32)


def l2_normalize(descriptor: GlobalDescriptor) -> GlobalDescriptor:
    """Scale to unit L2 norm; zero vectors pass through flagged degenerate."""
    norm = math.sqrt(float(np.sum(descriptor.values.astype(np.float64) ** 2)))
    if norm <= NORM_EPSILON:
        return GlobalDescriptor(descriptor.values, provenance=descriptor.provenance,
                                degenerate=True)
    values = (descriptor.values / np.float32(norm)).astype(np.float32)
    return GlobalDescriptor(values, provenance=descriptor.provenance,
                            degenerate=descriptor.degenerate)
