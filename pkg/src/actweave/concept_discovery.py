"""Action concept discovery and the hierarchical concept tree.

Pipeline: gather verb-object concepts from the filtered corpus, keep the
visually learnable ones (two-fold cross-validated linear scorer), build
multimodal representations, and cluster recursively with mutual-kNN
connected components into a named tree.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyResultError, NumericError, SchemaError
from .taxonomy import HypernymGraph, name_node
from .vo_extract import Lexicon, VOPair, extract_vo, has_human_subject


@dataclass
class ActionConcept:
    pair: VOPair
    image_ids: set[str]
    representation: np.ndarray | None = None
    visualness_ap: float | None = None


@dataclass
class SimilarityMatrix:
    size: int
    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.shape != (self.size, self.size):
            raise SchemaError("similarity matrix shape mismatch")
        if self.size == 0:
            return
        if not np.all(np.isfinite(v)):
            raise NumericError("similarity matrix has non-finite entries")
        if np.max(np.abs(v - v.T)) > 1e-12:
            raise NumericError("similarity matrix not symmetric")


@dataclass
class ActNode:
    name: tuple[str, str]
    children: list["ActNode"] = field(default_factory=list)
    concept: ActionConcept | None = None
    images: set[str] = field(default_factory=set)

    @property
    def is_leaf(self) -> bool:
        return self.concept is not None

    def preorder(self):
        yield self
        for child in self.children:
            yield from child.preorder()

    def leaves(self):
        return [n for n in self.preorder() if n.is_leaf]


@dataclass
class ActTree:
    root: ActNode

    def preorder(self):
        return self.root.preorder()

    def leaves(self):
        return self.root.leaves()


def gather_concepts(corpus, lexicon: Lexicon, min_samples: int) -> list[ActionConcept]:
    """One concept per distinct VO pair with >= min_samples distinct images.

    `corpus` must already be restricted to the train split; descriptions
    failing the human-subject filter contribute nothing.
    """
    by_pair: dict[VOPair, set[str]] = {}
    order: list[VOPair] = []
    for rec in corpus:
        if not has_human_subject(rec.description, lexicon):
            continue
        for pair in extract_vo(rec.description, lexicon):
            if pair not in by_pair:
                by_pair[pair] = set()
                order.append(pair)
            by_pair[pair].add(rec.image_id)
    return [ActionConcept(pair=p, image_ids=by_pair[p])
            for p in order if len(by_pair[p]) >= min_samples]


def _concept_rng(seed: int, pair: VOPair) -> np.random.Generator:
    digest = hashlib.blake2b(
        f"{seed}:{pair.verb}:{pair.object}".encode(), digest_size=8).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


def _average_precision_scores(scores: np.ndarray, labels: np.ndarray) -> float:
    order = np.argsort(-scores, kind="stable")
    rel = labels[order]
    positives = np.flatnonzero(rel)
    if positives.size == 0:
        return 0.0
    ranks = positives + 1
    hits = np.arange(1, positives.size + 1)
    return float(np.mean(hits / ranks))


def _concept_visualness_ap(concept, all_images, features, seed) -> float:
    pos = sorted(concept.image_ids)
    if len(pos) < 2:
        raise SchemaError(
            f"concept {concept.pair} has {len(pos)} image(s); need >= 2")
    rng = _concept_rng(seed, concept.pair)
    rng.shuffle(pos)
    neg_pool = [i for i in all_images if i not in concept.image_ids]
    n_neg = min(len(pos), len(neg_pool))
    negs = list(rng.choice(neg_pool, size=n_neg, replace=False)) if n_neg else []

    half = len(pos) // 2
    pos_folds = [pos[:half], pos[half:]]
    nhalf = len(negs) // 2
    neg_folds = [negs[:nhalf], negs[nhalf:]]
    aps = []
    for fold in (0, 1):
        train_p, test_p = pos_folds[fold], pos_folds[1 - fold]
        train_n, test_n = neg_folds[fold], neg_folds[1 - fold]
        if not test_n:
            aps.append(1.0)  # nothing to confuse with
            continue
        if not train_n:
            aps.append(0.0)
            continue
        X = np.array([features.entries[i] for i in train_p + train_n])
        y = np.array([1.0] * len(train_p) + [-1.0] * len(train_n))
        Xb = np.hstack([X, np.ones((len(X), 1))])
        w, *_ = np.linalg.lstsq(Xb, y, rcond=None)
        Xt = np.array([features.entries[i] for i in test_p + test_n])
        scores = np.hstack([Xt, np.ones((len(Xt), 1))]) @ w
        labels = np.array([1] * len(test_p) + [0] * len(test_n))
        aps.append(_average_precision_scores(scores, labels))
    return float(np.mean(aps))


def verify_visualness(concepts, features, config,
                      max_workers: int = 1) -> list[ActionConcept]:
    """Two-fold cross-validated linear visualness check.

    Each concept's images are split in half (seeded); a least-squares
    linear scorer trained on one half (+1 targets, equal-size negatives
    sampled from other concepts at -1) ranks the other half; the mean of
    the two average precisions must clear the configured threshold.
    Per-concept work is independent, so `max_workers` may exceed 1.
    """
    all_images = sorted({i for c in concepts for i in c.image_ids})

    def ap_of(concept):
        return _concept_visualness_ap(concept, all_images, features, config.seed)

    if max_workers > 1 and len(concepts) > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            aps = list(pool.map(ap_of, concepts))
    else:
        aps = [ap_of(c) for c in concepts]

    kept = []
    for concept, ap in zip(concepts, aps):
        concept.visualness_ap = ap
        if ap >= config.visualness_threshold:
            kept.append(concept)
    return kept


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise NumericError("zero-norm vector in representation")
    return v / norm


def build_representation(concept: ActionConcept, features, embeddings) -> np.ndarray:
    """Concatenate unit-normalized mean image feature and mean word embedding."""
    img_mean = np.mean([features.entries[i] for i in sorted(concept.image_ids)], axis=0)
    word_mean = 0.5 * (embeddings.vector(concept.pair.verb)
                       + embeddings.vector(concept.pair.object))
    rep = np.concatenate([_unit(img_mean), _unit(word_mean)])
    concept.representation = rep
    return rep


def similarity_matrix(concepts) -> SimilarityMatrix:
    """Pairwise cosine similarity of concept representations."""
    reps = np.array([c.representation for c in concepts], dtype=np.float64)
    norms = np.linalg.norm(reps, axis=1)
    if np.any(norms == 0.0):
        raise NumericError("zero-norm representation")
    unit = reps / norms[:, None]
    values = unit @ unit.T
    values = 0.5 * (values + values.T)
    np.clip(values, -1.0, 1.0, out=values)
    np.fill_diagonal(values, 1.0)
    return SimilarityMatrix(size=len(concepts), values=values)


def nn_clustering(matrix: SimilarityMatrix, items: list, c_nn: int) -> list[list[int]]:
    """Connected components of the mutual-kNN similarity graph.

    k = min(c_nn, l-1); (i, j) is an edge iff each is in the other's top-k
    (k-th place ties broken toward the lower index). Clusters are ordered
    by their smallest member index; members in index order.
    """
    l = len(items)
    if l == 0:
        raise EmptyResultError("nn_clustering: empty concept list")
    if matrix.size != l:
        raise SchemaError("nn_clustering: matrix/list size mismatch")
    if c_nn < 1:
        raise SchemaError("nn_clustering: C must be >= 1")
    k = min(c_nn, l - 1)

    top = []
    for i in range(l):
        others = [j for j in range(l) if j != i]
        others.sort(key=lambda j: (-matrix.values[i, j], j))
        top.append(set(others[:k]))

    parent = list(range(l))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(l):
        for j in top[i]:
            if i < j and i in top[j]:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)

    groups: dict[int, list[int]] = {}
    for i in range(l):
        groups.setdefault(find(i), []).append(i)
    return [groups[r] for r in sorted(groups)]


def build_act(matrix: SimilarityMatrix, concepts: list[ActionConcept],
              graph: HypernymGraph, c_nn: int) -> ActTree:
    """Recursive mutual-kNN clustering into a named concept tree.

    Each cluster becomes a node and is re-clustered on its sub-matrix until
    it is a fixed point or holds <= 2 concepts; leaves carry their concepts
    and every node is named from its descendant leaf names.
    """
    if not concepts:
        raise EmptyResultError("build_act: no concepts")

    def grow(indices: list[int]) -> ActNode:
        if len(indices) == 1:
            c = concepts[indices[0]]
            return ActNode(name=(c.pair.verb, c.pair.object),
                           concept=c, images=set(c.image_ids))
        node = ActNode(name=("", ""))
        if len(indices) <= 2:
            subclusters = [[i] for i in indices]
        else:
            sub = matrix.values[np.ix_(indices, indices)]
            parts = nn_clustering(
                SimilarityMatrix(size=len(indices), values=sub),
                indices, c_nn)
            if len(parts) == 1:
                subclusters = [[i] for i in indices]  # fixed point: flatten
            else:
                subclusters = [[indices[p] for p in part] for part in parts]
        node.children = [grow(cluster) for cluster in subclusters]
        for child in node.children:
            node.images |= child.images
        leaf_names = [leaf.name for leaf in node.leaves()]
        node.name = name_node(leaf_names, graph)
        return node

    all_indices = list(range(len(concepts)))
    root = ActNode(name=("", ""))
    clusters = nn_clustering(matrix, all_indices, c_nn)
    root.children = [grow(cluster) for cluster in clusters]
    for child in root.children:
        root.images |= child.images
    root.name = name_node([leaf.name for leaf in root.leaves()], graph)
    return ActTree(root=root)
