"""Deterministic synthetic ontologies for benchmarks and demos.

Node names are generated consonant-vowel syllable pairs, so every name
survives tokenization as a single lowercase token and cannot collide
with the template's connective words. Definitions are built from fixed
templates that name the node and every ancestor up to the root, which
makes the mapping from text to path learnable by construction.
"""

from __future__ import annotations

from collections import deque

from .corpus import make_examples
from .ontology import (PathMode, TreeOntology, dag_to_tree, parse_ontology,
                       validate_dag)
from .rng import Rng, derive_seed

_CONSONANTS = "bcdfgklmnprstvz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]

# (preposition, grouping noun) per ancestor level above the parent
_LEVEL_WORDS = (
    ("in", "group"), ("under", "branch"), ("within", "order"),
    ("among", "class"), ("inside", "realm"), ("of", "lineage"),
)


def _name(i: int) -> str:
    n = len(_SYLLABLES)
    if i >= n * n:
        raise ValueError(f"name index {i} exceeds {n * n} distinct names")
    return _SYLLABLES[i // n] + _SYLLABLES[i % n]


def _definition(node: str, chain: list) -> str:
    """Template text mentioning the node and its whole ancestor chain.

    chain lists ancestors nearest-first (parent, grandparent, ..., root).
    """
    if not chain:
        return f"the {node} is the top level category"
    parts = ["the", node, "is", "a", "form", "of", chain[0]]
    for level, ancestor in enumerate(chain[1:]):
        prep, noun = _LEVEL_WORDS[level % len(_LEVEL_WORDS)]
        parts.extend([prep, "the", ancestor, noun])
    return " ".join(parts)


def make_synthetic_ontology(n_nodes: int = 500, seed: int = 101,
                            max_depth: int = 6, min_children: int = 2,
                            max_children: int = 5):
    """Edge and definition records for a random single-rooted tree.

    Nodes are added breadth-first with a seeded child count per parent,
    so the result has exactly n_nodes nodes, depth at most max_depth,
    and is identical for identical arguments. Every node gets a
    definition.
    """
    if n_nodes < 2:
        raise ValueError("need at least a root and one child")
    rng = Rng(derive_seed(seed, "synthetic"))
    root = _name(0)
    parent_of = {}
    queue = deque([(root, 0)])
    created = 1
    next_idx = 1
    while queue and created < n_nodes:
        node, depth = queue.popleft()
        if depth >= max_depth:
            continue
        k = min_children + rng.randrange(max_children - min_children + 1)
        k = min(k, n_nodes - created)
        for _ in range(k):
            child = _name(next_idx)
            next_idx += 1
            parent_of[child] = node
            queue.append((child, depth + 1))
            created += 1
    edges = [(child, parent) for child, parent in parent_of.items()]
    definitions = []
    for node in [root] + list(parent_of):
        chain = []
        cursor = node
        while cursor in parent_of:
            cursor = parent_of[cursor]
            chain.append(cursor)
        definitions.append((node, _definition(node, chain)))
    return edges, definitions


def synthetic_tree(n_nodes: int = 500, seed: int = 101, max_depth: int = 6,
                   min_children: int = 2, max_children: int = 5) -> TreeOntology:
    """The generated ontology parsed, validated, and turned into a tree."""
    edges, definitions = make_synthetic_ontology(
        n_nodes, seed, max_depth, min_children, max_children)
    graph = validate_dag(parse_ontology(edges, definitions))
    return dag_to_tree(graph, derive_seed(seed, "tree"))


def toy_corpus(mode: PathMode = PathMode.EDGES, seed: int = 7):
    """A 51-node tree and its 50 definition examples.

    Every non-root node is defined, so the standard examples number
    exactly 50; dummy leaf examples are dropped. Useful as a quickly
    overfittable memorization target.
    """
    tree = synthetic_tree(n_nodes=51, seed=seed, max_depth=4,
                          min_children=2, max_children=4)
    examples = [ex for ex in make_examples(tree, mode)
                if ex.kind.value == "standard"]
    return tree, examples


def write_ontology_files(edges_path, definitions_path, edges, definitions) -> None:
    """Write records in the tab-separated on-disk layout."""
    with open(edges_path, "w", encoding="utf-8") as fh:
        fh.write("# child\tparent\n")
        for child, parent in edges:
            fh.write(f"{child}\t{parent}\n")
    with open(definitions_path, "w", encoding="utf-8") as fh:
        for node, text in definitions:
            fh.write(f"{node}\t{text}\n")
