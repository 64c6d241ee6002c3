"""Ranked-retrieval metrics: per-category average precision, mAP and
Recall@k over multi-label ground truth."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SchemaError


@dataclass
class EvalReport:
    per_category_ap: list[float | None]  # None = no test positives
    map_score: float
    recall_at: dict[int, float]
    n_images: int
    n_categories: int

    def to_json_dict(self, category_names=None) -> dict:
        names = category_names or [str(i) for i in range(self.n_categories)]
        return {
            "mAP": self.map_score,
            "recall": {str(k): v for k, v in sorted(self.recall_at.items())},
            "per_category": [{"name": names[j], "ap": ap}
                             for j, ap in enumerate(self.per_category_ap)],
            "n_images": self.n_images,
            "n_categories": self.n_categories,
        }


def average_precision(ranked_relevance) -> float:
    """Mean of precision-at-rank over the positive ranks."""
    rel = list(ranked_relevance)
    if not any(rel):
        raise SchemaError("average_precision: no positives in ranking")
    hits = 0
    precisions = []
    for rank, is_pos in enumerate(rel, 1):
        if is_pos:
            hits += 1
            precisions.append(hits / rank)
    return float(np.mean(precisions))


def evaluate(predictions: dict[str, np.ndarray], truth: dict[str, set[int]],
             ks=(1, 5)) -> EvalReport:
    """Score per-image category vectors against multi-label ground truth.

    mAP averages AP over categories with at least one positive; Recall@k
    counts an image as a hit when its top-k categories intersect its truth
    set. All ties break deterministically (image_id order for rankings,
    category index for top-k).
    """
    if not predictions:
        raise SchemaError("evaluate: no predictions")
    image_ids = sorted(predictions)
    m = len(predictions[image_ids[0]])
    for image_id in image_ids:
        if image_id not in truth:
            raise SchemaError(f"evaluate: no ground truth for {image_id!r}")
        if not truth[image_id]:
            raise SchemaError(f"evaluate: empty truth set for {image_id!r}")
        if len(predictions[image_id]) != m:
            raise SchemaError("evaluate: inconsistent score-vector lengths")
        for j in truth[image_id]:
            if not 0 <= j < m:
                raise SchemaError(f"evaluate: label {j} out of range for {image_id!r}")

    per_category_ap: list[float | None] = []
    for j in range(m):
        ranked = sorted(image_ids,
                        key=lambda i: (-predictions[i][j], i))
        relevance = [j in truth[i] for i in ranked]
        per_category_ap.append(
            average_precision(relevance) if any(relevance) else None)
    with_pos = [ap for ap in per_category_ap if ap is not None]
    map_score = float(np.mean(with_pos)) if with_pos else 0.0

    recall_at = {}
    for k in ks:
        hits = 0
        for i in image_ids:
            scores = predictions[i]
            top = sorted(range(m), key=lambda j: (-scores[j], j))[:k]
            if set(top) & truth[i]:
                hits += 1
        recall_at[int(k)] = hits / len(image_ids)

    return EvalReport(per_category_ap=per_category_ap, map_score=map_score,
                      recall_at=recall_at, n_images=len(image_ids),
                      n_categories=m)


def load_truth(path) -> dict[str, set[int]]:
    """`truth.json`: map image_id -> list of category indices."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(data, dict) or not data:
        raise SchemaError(f"{path}: expected a non-empty object")
    return {k: set(v) for k, v in data.items()}
