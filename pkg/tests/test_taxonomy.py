import numpy as np
import pytest

from actweave.errors import SchemaError
from actweave.taxonomy import (HypernymGraph, load_taxonomy,
                               lowest_common_hypernym, name_node)


def brute_force_lch(words, graph):
    """Independent oracle: intersect full ancestor-or-self sets, pick the
    deepest node, break depth ties lexicographically."""
    def ancestors(w):
        out = {w}
        frontier = [w]
        while frontier:
            nxt = []
            for x in frontier:
                for p in graph.parents.get(x, ()):
                    if p not in out:
                        out.add(p)
                        nxt.append(p)
            frontier = nxt
        return out

    common = set.intersection(*[ancestors(w) for w in words])
    best_depth = max(graph.depth[n] for n in common)
    return sorted(n for n in common if graph.depth[n] == best_depth)[0]


def test_dish_pan_container(graph):
    assert lowest_common_hypernym({"dish", "pan"}, graph) == "container"


def test_bike_family_wheeled_vehicle(graph):
    assert lowest_common_hypernym(
        {"bike", "bicycle", "motorcycle"}, graph) == "wheeled vehicle"


def test_singleton_is_self(graph):
    assert lowest_common_hypernym({"horse"}, graph) == "horse"


def test_empty_input_errors(graph):
    with pytest.raises(SchemaError):
        lowest_common_hypernym(set(), graph)


def test_unknown_word_errors(graph):
    with pytest.raises(SchemaError):
        lowest_common_hypernym({"notaword"}, graph)


def test_lch_is_common_ancestor(graph):
    rng = np.random.default_rng(3)
    nodes = sorted(graph.nodes)
    for _ in range(50):
        words = list(rng.choice(nodes, size=rng.integers(1, 5), replace=False))
        result = lowest_common_hypernym(words, graph)
        for w in words:
            assert result in graph.ancestors_or_self(w)


def test_lch_idempotent(graph):
    rng = np.random.default_rng(4)
    nodes = sorted(graph.nodes)
    for _ in range(30):
        words = set(rng.choice(nodes, size=3, replace=False))
        lch = lowest_common_hypernym(words, graph)
        assert lowest_common_hypernym(words | {lch}, graph) == lch


def test_lch_matches_brute_force(graph):
    rng = np.random.default_rng(5)
    nodes = sorted(graph.nodes)
    for _ in range(200):
        words = list(rng.choice(nodes, size=rng.integers(1, 6), replace=False))
        assert lowest_common_hypernym(words, graph) == brute_force_lch(words, graph)


def test_name_node_shared_verb(graph):
    assert name_node([("hold", "dish"), ("hold", "pan")], graph) == (
        "hold", "container")


def test_name_node_interact_with(graph):
    children = [("catch", "frisbee"), ("hold", "frisbee"),
                ("play", "frisbee"), ("throw", "frisbee")]
    assert name_node(children, graph) == ("interact with", "frisbee")


def test_name_node_singleton(graph):
    assert name_node([("ride", "bike")], graph) == ("ride", "bike")


def test_name_node_verbs_never_fabricated(graph):
    rng = np.random.default_rng(6)
    verbs = ["hold", "ride", "eat", "play"]
    nouns = sorted(graph.nodes)
    for _ in range(40):
        children = [(verbs[rng.integers(len(verbs))],
                     nouns[rng.integers(len(nouns))])
                    for _ in range(rng.integers(1, 5) + 1)]
        verb_part, _ = name_node(children, graph)
        assert verb_part in {v for v, _ in children} | {"interact with"}


def test_name_node_unknown_object_degrades_to_root(graph):
    verb_part, object_part = name_node(
        [("hold", "xyzzy"), ("hold", "dish")], graph)
    assert object_part == graph.root


def test_name_node_empty_errors(graph):
    with pytest.raises(SchemaError):
        name_node([], graph)


def test_load_rejects_cycle(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("a\tb\nb\ta\nb\troot\na\troot\n")
    with pytest.raises(SchemaError):
        load_taxonomy(p)


def test_load_rejects_multiple_roots(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("a\tr1\nb\tr2\n")
    with pytest.raises(SchemaError):
        load_taxonomy(p)


def test_depths(graph):
    assert graph.root == "entity"
    assert graph.depth["entity"] == 0
    assert all(graph.depth[n] >= 1 for n in graph.nodes if n != "entity")
