"""Target-category matching against the concept tree, fine-tuning, and
category prediction.

Matching: exact keyword hit (pre-order scan) seeds the acceptance
threshold; the best-scoring other node joins the match when it clears it.
Unmatched categories receive no training data.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .asa_model import (ALIGN_PARAMS, ENCODER_PARAMS, AsaModel, batch_scores,
                        encode_text, loss_and_grads, make_optimizers)
from .concept_discovery import ActNode, ActTree
from .errors import EmptyResultError, NumericError, SchemaError
from .vo_extract import VOPair


@dataclass
class TargetCategory:
    index: int
    name: str
    pair: VOPair

    @property
    def description_tokens(self) -> list[str]:
        return [self.pair.verb, self.pair.object]


def load_categories(path) -> list[TargetCategory]:
    """One `verb object` per line; index = line number."""
    cats = []
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise SchemaError(
                    f"{path}: expected 'verb object', got {line!r}")
            cats.append(TargetCategory(
                index=len(cats), name=line,
                pair=VOPair(verb=parts[0], object=parts[1])))
    if not cats:
        raise SchemaError(f"{path}: no categories")
    return cats


@dataclass
class MatchResult:
    category_index: int
    exact_match_node: ActNode | None
    best_node: ActNode | None
    best_score: float | None
    theta_used: float
    matched_nodes: list[ActNode] = field(default_factory=list)
    training_images: set[str] = field(default_factory=set)


def node_category_similarity(category: TargetCategory, node: ActNode,
                             model: AsaModel, features, embeddings) -> float:
    """Mean alignment score of the category description over node images."""
    if not node.images:
        raise SchemaError(f"node {node.name} has no images")
    s = encode_text(category.description_tokens, model, embeddings)
    V = np.array([features.entries[i] for i in sorted(node.images)])
    cs, _ = _forward_scores(model, V, s)
    return float(np.mean(cs))


def _forward_scores(model, V, s):
    from .asa_model import _align_forward
    return _align_forward(model.params, V, s[None, :])


def match_categories(categories, tree: ActTree, model: AsaModel, features,
                     embeddings, theta_init: float,
                     leaves_only: bool = False) -> list[MatchResult]:
    """Match every category to tree nodes (keyword pass, then scoring pass).

    `leaves_only` restricts the scan to leaf nodes, mirroring a flat
    concept list instead of the full hierarchy.
    """
    nodes = list(tree.preorder())
    if leaves_only:
        nodes = [n for n in nodes if n.is_leaf]
    if not nodes:
        raise EmptyResultError("match_categories: empty tree")

    results = []
    for cat in categories:
        exact = None
        for node in nodes:
            if node.name == (cat.pair.verb, cat.pair.object):
                exact = node
                break
        if exact is not None:
            theta = node_category_similarity(cat, exact, model, features, embeddings)
        else:
            theta = theta_init

        best = None
        best_score = None
        for node in nodes:
            if node is exact:
                continue
            score = node_category_similarity(cat, node, model, features, embeddings)
            if best_score is None or score > best_score:
                best, best_score = node, score

        matched = []
        if exact is not None:
            matched.append(exact)
        if best is not None and best_score is not None and best_score >= theta:
            matched.append(best)
        training = set()
        for node in matched:
            training |= node.images
        results.append(MatchResult(
            category_index=cat.index, exact_match_node=exact,
            best_node=best, best_score=best_score, theta_used=theta,
            matched_nodes=matched, training_images=training))
    return results


def finetune(match_results, categories, model: AsaModel, features, embeddings,
             config, n_steps: int | None = None):
    """Fine-tune on (image, category-label) pairs from the matched nodes.

    Every step scores its batch against all M category descriptions. An
    image matched by several categories contributes once per assignment.
    """
    items: list[tuple[str, int]] = []
    for result in match_results:
        for image_id in sorted(result.training_images):
            items.append((image_id, result.category_index))
    if not items:
        raise EmptyResultError(
            "no training images from matching; consider lowering theta_init")

    cat_seqs = [c.description_tokens for c in categories]
    steps = config.stage2_steps if n_steps is None else n_steps
    opt_states = make_optimizers(config)
    rng = np.random.default_rng(config.seed + 1)
    trace = []
    step = 0
    while step < steps:
        perm = rng.permutation(len(items))
        for start in range(0, len(items), config.batch_size):
            if step == steps:
                break
            batch = perm[start:start + config.batch_size]
            V = np.array([features.entries[items[i][0]] for i in batch])
            labels = np.array([items[i][1] for i in batch])
            loss, grads, _ = loss_and_grads(
                model, V, cat_seqs, embeddings, "stage2", labels=labels,
                alpha_c=config.alpha_c, alpha_w=config.alpha_w)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite stage-2 loss at step {step}")
            opt_states["encoder"].step(model.params, grads, ENCODER_PARAMS)
            opt_states["align"].step(model.params, grads, ALIGN_PARAMS)
            trace.append((step, loss))
            step += 1
    return model, opt_states, trace


def predict(image_feature: np.ndarray, categories, model: AsaModel,
            embeddings) -> tuple[int, np.ndarray]:
    """Argmax category by alignment score; ties resolve to the lowest index."""
    if not categories:
        raise SchemaError("predict: need at least one category")
    scores = batch_scores(model, np.asarray(image_feature)[None, :],
                          [c.description_tokens for c in categories],
                          embeddings)[0]
    return int(np.argmax(scores)), scores
