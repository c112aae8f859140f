"""Combined global descriptors: several pooling branches fused into one vector.

Each branch is a declarative recipe (pooling kind, layer selection, scales);
branch outputs are concatenated in branch order and optionally L2-normalized
as a whole. Branches with very different output sizes drown each other out
in L2 distances, so a configurable dimension-balance check warns (but does
not fail) when the ratio between the largest and smallest branch exceeds a
tolerance.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import descriptors as desc
from .descriptors import DEFAULT_SCALES, GlobalDescriptor
from .errors import (
    BalanceWarning,
    BranchCountMismatch,
    EmptyScaleList,
    UnknownLayerId,
)
from .feature_io import FeatureMapSet

BRANCH_KINDS = ("MAC", "RMAC", "MSRMAC", "AVGPOOL")
_SCALED_KINDS = ("RMAC", "MSRMAC")


@dataclass(frozen=True)
class BranchConfig:
    """Recipe for one descriptor branch.

    ``layer_ids=None`` selects every layer of the input set, in set order.
    ``scales=None`` defers to the fusion-level default.
    """

    kind: str
    layer_ids: tuple[str, ...] | None = None
    scales: tuple[int, ...] | None = None
    normalize_branch: bool = False
    region_l2: bool = False

    def __post_init__(self):
        if self.kind not in BRANCH_KINDS:
            raise ValueError(f"unknown branch kind {self.kind!r}; expected one of {BRANCH_KINDS}")
        if self.layer_ids is not None:
            object.__setattr__(self, "layer_ids", tuple(self.layer_ids))
            if not self.layer_ids:
                raise ValueError("layer_ids must be non-empty when given")
        if self.scales is not None:
            object.__setattr__(self, "scales", tuple(int(s) for s in self.scales))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "layer_ids": list(self.layer_ids) if self.layer_ids is not None else None,
            "scales": list(self.scales) if self.scales is not None else None,
            "normalize_branch": self.normalize_branch,
            "region_l2": self.region_l2,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BranchConfig":
        return cls(
            kind=data["kind"],
            layer_ids=tuple(data["layer_ids"]) if data.get("layer_ids") else None,
            scales=tuple(data["scales"]) if data.get("scales") else None,
            normalize_branch=bool(data.get("normalize_branch", False)),
            region_l2=bool(data.get("region_l2", False)),
        )


def default_branches() -> tuple[BranchConfig, ...]:
    """Three diverse pooling branches over all layers of the input set."""
    return (
        BranchConfig(kind="MSRMAC"),
        BranchConfig(kind="MAC"),
        BranchConfig(kind="AVGPOOL"),
    )


@dataclass(frozen=True)
class FusionConfig:
    branches: tuple[BranchConfig, ...] = field(default_factory=default_branches)
    final_normalize: bool = True
    balance_tolerance: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        if not self.branches:
            raise ValueError("fusion requires at least one branch")

    def to_dict(self) -> dict:
        return {
            "branches": [b.to_dict() for b in self.branches],
            "final_normalize": self.final_normalize,
            "balance_tolerance": self.balance_tolerance,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FusionConfig":
        branches = data.get("branches")
        return cls(
            branches=tuple(BranchConfig.from_dict(b) for b in branches)
            if branches else default_branches(),
            final_normalize=bool(data.get("final_normalize", True)),
            balance_tolerance=float(data.get("balance_tolerance", 2.0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FusionConfig":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Branch evaluation
# ---------------------------------------------------------------------------

def _select_layers(fmap_set: FeatureMapSet, cfg: BranchConfig) -> FeatureMapSet:
    if cfg.layer_ids is None:
        return fmap_set
    by_id = {f.layer_id: f for f in fmap_set.layers}
    missing = [lid for lid in cfg.layer_ids if lid not in by_id]
    if missing:
        raise UnknownLayerId(f"layers {missing} not present (have {fmap_set.layer_ids})")
    return FeatureMapSet(fmap_set.image_id, tuple(by_id[lid] for lid in cfg.layer_ids))


def branch_descriptor(fmap_set: FeatureMapSet, cfg: BranchConfig, *,
                      default_scales: Sequence[int] = DEFAULT_SCALES) -> GlobalDescriptor:
    """Evaluate one branch over the selected layers of an image.

    MAC and AVGPOOL concatenate their per-layer vectors when more than one
    layer is selected; RMAC and MSRMAC both concatenate per-layer region
    sums (identical dispatch, two names kept for config readability).
    """
    subset = _select_layers(fmap_set, cfg)
    if cfg.kind in _SCALED_KINDS:
        scales = cfg.scales if cfg.scales is not None else tuple(default_scales)
        if not scales:
            raise EmptyScaleList(f"branch kind {cfg.kind} requires at least one scale")
        out = desc.msrmac(subset, scales, region_l2=cfg.region_l2)
    else:
        pool = desc.mac if cfg.kind == "MAC" else desc.avgpool
        parts = [pool(fmap) for fmap in subset.layers]
        values = np.concatenate([p.values for p in parts])
        out = GlobalDescriptor(
            values,
            provenance={
                "kind": cfg.kind,
                "layers": [{"layer_id": f.layer_id, "dim": f.channels} for f in subset.layers],
            },
        )
    if cfg.normalize_branch:
        out = desc.l2_normalize(out)
    return out


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------

def combine(branch_outputs: Sequence[GlobalDescriptor], cfg: FusionConfig) -> GlobalDescriptor:
    """Concatenate branch outputs into one combined descriptor.

    Emits a BalanceWarning when branch dimensions differ by more than
    cfg.balance_tolerance; warnings are advisory, unequal dims stay valid.
    """
    if len(branch_outputs) != len(cfg.branches):
        raise BranchCountMismatch(
            f"{len(branch_outputs)} descriptors for {len(cfg.branches)} configured branches"
        )
    dims = [d.dim for d in branch_outputs]
    if max(dims) > cfg.balance_tolerance * min(dims):
        warnings.warn(
            BalanceWarning(
                f"branch dims {dims} exceed balance tolerance {cfg.balance_tolerance}"
            ),
            stacklevel=2,
        )

    spans = []
    start = 0
    for i, d in enumerate(branch_outputs):
        spans.append({"branch": i, "kind": cfg.branches[i].kind,
                      "start": start, "end": start + d.dim})
        start += d.dim
    values = np.concatenate([d.values for d in branch_outputs])
    combined = GlobalDescriptor(
        values,
        provenance={"kind": "CGD", "spans": spans},
        degenerate=all(d.degenerate for d in branch_outputs),
    )
    if cfg.final_normalize:
        combined = desc.l2_normalize(combined)
    return combined


def describe_image(fmap_set: FeatureMapSet, cfg: FusionConfig, *,
                   default_scales: Sequence[int] = DEFAULT_SCALES) -> GlobalDescriptor:
    """Full pipeline for one image: evaluate every branch, then combine."""
    outputs = [branch_descriptor(fmap_set, b, default_scales=default_scales)
               for b in cfg.branches]
    return combine(outputs, cfg)
