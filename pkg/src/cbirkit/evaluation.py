"""Retrieval-quality metrics over a held-out query split.

The quality number reported here is recall@k: the fraction of queries whose
ground-truth class appears among the top k retrieved classes. This is a
retrieval metric over frozen descriptors, not a trained classifier's
accuracy; the two must not be compared directly.

Ground truth is a TSV mapping (one ``image_id<TAB>class_id`` line per
query). Reports serialize to JSON with sorted keys so identical runs are
byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import MissingResult, MissingTruth
from .fusion import FusionConfig, describe_image
from .index import (
    IndexEntry,
    QueryResult,
    RepresentativeMode,
    build_index,
    query_classes,
)
from .feature_io import FeatureMapSet


@dataclass(frozen=True)
class EvalReport:
    recall_at: dict[int, float]
    top1_accuracy: float
    per_class: dict[int, float]
    n_queries: int
    config_fingerprint: str

    def to_dict(self) -> dict:
        return {
            "recall_at": {str(k): v for k, v in sorted(self.recall_at.items())},
            "top1_accuracy": self.top1_accuracy,
            "per_class": {str(c): v for c, v in sorted(self.per_class.items())},
            "n_queries": self.n_queries,
            "config_fingerprint": self.config_fingerprint,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def config_fingerprint(fusion_cfg: FusionConfig, scales: Sequence[int]) -> str:
    """Stable hash of every parameter that shapes the descriptor pipeline."""
    payload = json.dumps(
        {"fusion": fusion_cfg.to_dict(), "scales": [int(s) for s in scales]},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def parse_ground_truth(text: str) -> dict[str, int]:
    """Parse ``image_id<TAB>class_id`` lines; duplicate query ids are rejected."""
    truth: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line:
            continue
        try:
            image_id, class_id = line.split("\t")
            parsed = int(class_id)
        except ValueError:
            raise ValueError(
                f"ground truth line {lineno} is not image_id<TAB>class_id: {line!r}"
            ) from None
        if image_id in truth:
            raise ValueError(f"duplicate query image_id {image_id!r} at line {lineno}")
        truth[image_id] = parsed
    return truth


def format_ground_truth(truth: Mapping[str, int]) -> str:
    return "".join(f"{image_id}\t{class_id}\n" for image_id, class_id in sorted(truth.items()))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def recall_at_k(results: Mapping[str, QueryResult], truth: Mapping[str, int],
                ks: Sequence[int], fingerprint: str = "") -> EvalReport:
    """recall@k = fraction of queries whose true class is in the top k.

    ``results`` holds one CLASS-stage ranking per query; every query must
    appear in both maps.
    """
    missing_truth = sorted(set(results) - set(truth))
    if missing_truth:
        raise MissingTruth(f"queries without ground truth: {missing_truth[:5]}")
    missing_result = sorted(set(truth) - set(results))
    if missing_result:
        raise MissingResult(f"queries without results: {missing_result[:5]}")
    if not truth:
        raise MissingResult("no queries to evaluate")

    ks = sorted({int(k) for k in ks} | {1})
    hits = {k: 0 for k in ks}
    class_hits: dict[int, int] = {}
    class_totals: dict[int, int] = {}
    for image_id in sorted(truth):
        true_class = truth[image_id]
        ranked_ids = [cid for cid, _ in results[image_id].ranked]
        for k in ks:
            if true_class in ranked_ids[:k]:
                hits[k] += 1
        class_totals[true_class] = class_totals.get(true_class, 0) + 1
        if ranked_ids and ranked_ids[0] == true_class:
            class_hits[true_class] = class_hits.get(true_class, 0) + 1

    n = len(truth)
    recall = {k: hits[k] / n for k in ks}
    per_class = {c: class_hits.get(c, 0) / class_totals[c] for c in class_totals}
    return EvalReport(
        recall_at=recall,
        top1_accuracy=recall[1],
        per_class=per_class,
        n_queries=n,
        config_fingerprint=fingerprint,
    )


# ---------------------------------------------------------------------------
# End-to-end experiment
# ---------------------------------------------------------------------------

def run_experiment(index_sets: Sequence[FeatureMapSet],
                   query_sets: Sequence[FeatureMapSet],
                   truth: Mapping[str, int],
                   fusion_cfg: FusionConfig,
                   scales: Sequence[int],
                   ks: Sequence[int],
                   index_labels: Mapping[str, int] | None = None,
                   mode: "str | RepresentativeMode" = RepresentativeMode.MEAN) -> EvalReport:
    """Descriptors -> index -> queries -> report, deterministic end to end.

    ``index_labels`` defaults to ``truth`` (self-retrieval); a disjoint
    index split passes its own labels.
    """
    labels = truth if index_labels is None else index_labels
    entries = []
    for fmap_set in sorted(index_sets, key=lambda s: s.image_id):
        if fmap_set.image_id not in labels:
            raise MissingTruth(f"index image {fmap_set.image_id!r} has no class label")
        descriptor = describe_image(fmap_set, fusion_cfg, default_scales=scales)
        entries.append(IndexEntry(fmap_set.image_id, labels[fmap_set.image_id], descriptor))
    index = build_index(entries, mode)

    n_classes = len(index.representatives)
    results: dict[str, QueryResult] = {}
    for fmap_set in sorted(query_sets, key=lambda s: s.image_id):
        descriptor = describe_image(fmap_set, fusion_cfg, default_scales=scales)
        results[fmap_set.image_id] = query_classes(index, descriptor, n_classes)

    return recall_at_k(results, truth, ks,
                       fingerprint=config_fingerprint(fusion_cfg, scales))
