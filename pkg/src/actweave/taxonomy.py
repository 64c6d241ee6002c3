"""Hypernym DAG over nouns with lowest-common-hypernym queries.

Backs the naming of internal concept-tree nodes: shared verb (or the
fallback phrase "interact with") plus the lowest common hypernym of the
child objects.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

from .errors import SchemaError

INTERACT_WITH = "interact with"


@dataclass
class HypernymGraph:
    nodes: set[str]
    parents: dict[str, set[str]]
    root: str
    depth: dict[str, int]

    def ancestors_or_self(self, word: str) -> set[str]:
        seen = {word}
        stack = [word]
        while stack:
            cur = stack.pop()
            for p in self.parents.get(cur, ()):
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def canonical(self, word: str) -> str:
        """Unknown words degrade to the root node."""
        return word if word in self.nodes else self.root


def load_taxonomy(path) -> HypernymGraph:
    """Load `child<TAB>parent` rows into a rooted DAG and compute min depths."""
    parents: dict[str, set[str]] = {}
    nodes: set[str] = set()
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise SchemaError(f"{path}:{lineno}: expected 'child<TAB>parent'")
        child, parent = parts
        nodes.add(child)
        nodes.add(parent)
        parents.setdefault(child, set()).add(parent)
    if not nodes:
        raise SchemaError(f"{path}: empty taxonomy")

    roots = [n for n in sorted(nodes) if n not in parents]
    if len(roots) != 1:
        raise SchemaError(f"{path}: expected exactly one root, found {roots}")
    root = roots[0]

    # BFS from root over reversed edges gives minimum edge distance
    children: dict[str, set[str]] = {}
    for c, ps in parents.items():
        for p in ps:
            children.setdefault(p, set()).add(c)
    depth = {root: 0}
    q = deque([root])
    while q:
        cur = q.popleft()
        for ch in children.get(cur, ()):
            if ch not in depth:
                depth[ch] = depth[cur] + 1
                q.append(ch)
    unreachable = nodes - depth.keys()
    if unreachable:
        raise SchemaError(f"{path}: nodes not reachable from root: {sorted(unreachable)[:5]}")
    _check_acyclic(parents, nodes)
    return HypernymGraph(nodes=nodes, parents=parents, root=root, depth=depth)


def _check_acyclic(parents: dict[str, set[str]], nodes: set[str]) -> None:
    state: dict[str, int] = {}  # 1 = in progress, 2 = done

    def visit(n: str, trail: list[str]) -> None:
        state[n] = 1
        for p in parents.get(n, ()):
            s = state.get(p)
            if s == 1:
                raise SchemaError(f"taxonomy cycle through {p!r}")
            if s is None:
                visit(p, trail + [p])
        state[n] = 2

    for n in nodes:
        if n not in state:
            visit(n, [n])


def lowest_common_hypernym(words, graph: HypernymGraph) -> str:
    """Deepest node that is an ancestor-or-self of every input word.

    Depth ties break lexicographically. Callers map unknown words to the
    root first (see `HypernymGraph.canonical`).
    """
    words = list(words)
    if not words:
        raise SchemaError("lowest_common_hypernym: empty word set")
    for w in words:
        if w not in graph.nodes:
            raise SchemaError(f"word not in taxonomy: {w!r}")
    common = graph.ancestors_or_self(words[0])
    for w in words[1:]:
        common &= graph.ancestors_or_self(w)
    return min(common, key=lambda n: (-graph.depth[n], n))


def name_node(child_names, graph: HypernymGraph) -> tuple[str, str]:
    """Name a parent from its descendant leaf names (verb, object) pairs."""
    child_names = list(child_names)
    if not child_names:
        raise SchemaError("name_node: empty child list")
    verbs = {v for v, _ in child_names}
    objects = [o for _, o in child_names]
    verb_part = verbs.pop() if len(verbs) == 1 else INTERACT_WITH
    distinct = set(objects)
    if len(distinct) == 1:
        object_part = objects[0]
    else:
        object_part = lowest_common_hypernym(
            {graph.canonical(o) for o in distinct}, graph)
    return verb_part, object_part
