"""Rooted-tree ontologies: parsing, DAG validation, tree conversion, paths, stats.

Input graphs are hypernymy edge lists (child, parent). They are validated
as single-rooted DAGs, converted to trees by keeping one parent per node,
and queried for root-anchored paths in two encodings: the node ids along
the path, or per-parent edge labels drawn from a small artificial alphabet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .errors import (
    CycleDetected,
    DanglingDefinition,
    DuplicateDefinition,
    EmptyGraph,
    MalformedRecord,
    OntologyError,
    RootHasNoParentPath,
    UnknownNode,
)
from .rng import Rng

ROOT_ID = "__ROOT__"   # reserved id for the synthetic root added to multi-root inputs


class PathMode(Enum):
    NODES = "nodes"
    EDGES = "edges"


class Terminus(Enum):
    TO_PARENT = "to_parent"
    TO_NODE = "to_node"


@dataclass(frozen=True)
class PathSpec:
    """A root-anchored path: node ids (NODES) or edge labels (EDGES)."""
    mode: PathMode
    symbols: tuple
    terminus: Terminus = Terminus.TO_PARENT


@dataclass
class OntologyGraph:
    """A raw hypernymy graph before tree conversion.

    Edges are (child, parent) pairs. Definitions map node ids to text.
    """
    nodes: set
    edges: set
    definitions: dict
    roots: list = field(default_factory=list)

    def __post_init__(self):
        has_parent = {c for c, _ in self.edges}
        self.roots = sorted(self.nodes - has_parent)

    def parents_of(self) -> dict:
        """Map node -> sorted list of parents."""
        out = {v: [] for v in self.nodes}
        for c, p in self.edges:
            out[c].append(p)
        for v in out:
            out[v].sort()
        return out


@dataclass
class GraphStats:
    node_count: int
    avg_depth: float
    max_depth: int
    avg_branch: float
    max_branch: int
    a_d: int

    def to_dict(self) -> dict:
        return {
            "node_count": self.node_count,
            "avg_depth": self.avg_depth,
            "max_depth": self.max_depth,
            "avg_branch": self.avg_branch,
            "max_branch": self.max_branch,
            "a_d": self.a_d,
        }


@dataclass
class DagStats:
    multi_parent_pct: float
    avg_parents_of_multi: float

    def to_dict(self) -> dict:
        return {
            "multi_parent_pct": self.multi_parent_pct,
            "avg_parents_of_multi": self.avg_parents_of_multi,
        }


def _check_id(value: str, what: str) -> str:
    if not isinstance(value, str) or not value:
        raise MalformedRecord(f"{what} must be a non-empty string, got {value!r}")
    if "\t" in value or "\n" in value or "\r" in value:
        raise MalformedRecord(f"{what} {value!r} contains tab or newline")
    return value


def parse_ontology(edge_records: Iterable[tuple],
                   definition_records: Iterable[tuple] = ()) -> OntologyGraph:
    """Build an OntologyGraph from (child, parent) pairs and (id, text) pairs.

    Duplicate edges are dropped silently; self-edges are rejected. Each
    definition id must occur in the edge set and appear at most once.
    """
    edges = set()
    nodes = set()
    for rec in edge_records:
        try:
            child, parent = rec
        except (TypeError, ValueError):
            raise MalformedRecord(f"edge record {rec!r} is not a (child, parent) pair")
        _check_id(child, "child id")
        _check_id(parent, "parent id")
        if child == parent:
            raise MalformedRecord(f"self-edge on {child!r}")
        edges.add((child, parent))
        nodes.add(child)
        nodes.add(parent)

    definitions = {}
    for rec in definition_records:
        try:
            node, text = rec
        except (TypeError, ValueError):
            raise MalformedRecord(f"definition record {rec!r} is not an (id, text) pair")
        _check_id(node, "definition id")
        if node in definitions:
            raise DuplicateDefinition(f"definition for {node!r} given twice")
        if node not in nodes:
            raise DanglingDefinition(f"definition id {node!r} does not occur in the edges")
        definitions[node] = text

    return OntologyGraph(nodes=nodes, edges=edges, definitions=definitions)


def read_edge_file(path) -> list:
    """Read `child<TAB>parent` records. `#` lines and blank lines are skipped."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise MalformedRecord(f"{path}:{lineno}: expected child<TAB>parent, got {line!r}")
            records.append((parts[0], parts[1]))
    return records


def read_definition_file(path) -> list:
    """Read `id<TAB>text` records; the text may itself contain tabs."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise MalformedRecord(f"{path}:{lineno}: expected id<TAB>text, got {line!r}")
            records.append((parts[0], parts[1]))
    return records


def _find_cycle(nodes: set, parents: dict):
    """Return one cycle as a node list following child->parent edges, or None."""
    WHITE, GREY, BLACK = 0, 1, 2
    color = {v: WHITE for v in nodes}
    for start in sorted(nodes):
        if color[start] != WHITE:
            continue
        stack = [(start, iter(parents[start]))]
        color[start] = GREY
        trail = [start]
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if color[nxt] == GREY:
                    i = trail.index(nxt)
                    return trail[i:]
                if color[nxt] == WHITE:
                    color[nxt] = GREY
                    trail.append(nxt)
                    stack.append((nxt, iter(parents[nxt])))
                    advanced = True
                    break
            if not advanced:
                color[node] = BLACK
                trail.pop()
                stack.pop()
    return None


def validate_dag(g: OntologyGraph) -> OntologyGraph:
    """Check acyclicity and single-rootedness.

    A multi-root graph gains a synthetic root (ROOT_ID) with one edge from
    each former root; an already single-rooted DAG is returned unchanged.
    """
    if not g.nodes:
        raise EmptyGraph("ontology has no nodes")
    cycle = _find_cycle(g.nodes, g.parents_of())
    if cycle is not None:
        raise CycleDetected(cycle)
    if len(g.roots) == 1:
        return g
    if ROOT_ID in g.nodes:
        raise MalformedRecord(f"reserved id {ROOT_ID!r} already present in a multi-root graph")
    edges = set(g.edges)
    for r in g.roots:
        edges.add((r, ROOT_ID))
    return OntologyGraph(nodes=g.nodes | {ROOT_ID}, edges=edges,
                         definitions=dict(g.definitions))


def compute_dag_stats(g: OntologyGraph) -> DagStats:
    """Multiple-inheritance statistics of a validated DAG."""
    parents = g.parents_of()
    multi = [len(ps) for ps in parents.values() if len(ps) > 1]
    if not g.nodes:
        raise EmptyGraph("ontology has no nodes")
    pct = 100.0 * len(multi) / len(g.nodes)
    avg = sum(multi) / len(multi) if multi else 0.0
    return DagStats(multi_parent_pct=pct, avg_parents_of_multi=avg)


class TreeOntology:
    """A rooted tree with per-parent edge labels and depth lookup.

    Immutable after construction; safe to share across threads. Children
    are kept sorted ascending by node id, and the i-th child of a parent
    carries edge label i.
    """

    def __init__(self, root: str, parent: dict, definitions: dict | None = None,
                 removed_edges: int = 0):
        self.root = root
        self.parent = dict(parent)
        self.definitions = dict(definitions or {})
        self.removed_edges = removed_edges
        if root in self.parent:
            raise OntologyError(f"root {root!r} has a parent")

        self.children: dict = {root: []}
        for child, par in self.parent.items():
            self.children.setdefault(child, [])
            self.children.setdefault(par, []).append(child)
        for v in self.children:
            self.children[v].sort()

        # child -> index within its parent's sorted children (== its edge label)
        self._child_index = {}
        for par, kids in self.children.items():
            for i, c in enumerate(kids):
                self._child_index[c] = i

        # depths via BFS; also proves every node hangs off the root
        self.depth = {root: 0}
        frontier = [root]
        while frontier:
            nxt = []
            for v in frontier:
                for c in self.children[v]:
                    self.depth[c] = self.depth[v] + 1
                    nxt.append(c)
            frontier = nxt
        if len(self.depth) != len(self.children):
            orphans = sorted(set(self.children) - set(self.depth))
            raise OntologyError(f"nodes not reachable from the root: {orphans[:5]}")

    @property
    def nodes(self) -> list:
        return sorted(self.children)

    def __contains__(self, node) -> bool:
        return node in self.children

    def __len__(self) -> int:
        return len(self.children)

    def is_leaf(self, node) -> bool:
        return not self.children[node]

    def leaves(self) -> list:
        return sorted(v for v, kids in self.children.items() if not kids)

    def edge_label(self, parent: str, child: str) -> int:
        return self._child_index[child]

    @property
    def label_vocab_size(self) -> int:
        """Size of the artificial edge alphabet: the maximum children count."""
        return max((len(kids) for kids in self.children.values()), default=0)


def dag_to_tree(g: OntologyGraph, seed: int) -> TreeOntology:
    """Keep exactly one parent per node, chosen uniformly under `seed`.

    Nodes are visited in ascending id order and a choice is drawn only for
    multi-parent nodes, so the result is reproducible. Any single choice
    per node yields a connected tree: following chosen parents from a node
    strictly ascends the DAG's topological order and must end at the root.
    """
    if len(g.roots) != 1:
        raise OntologyError("dag_to_tree requires a validated single-root graph")
    rng = Rng(seed)
    parents = g.parents_of()
    chosen = {}
    removed = 0
    for node in sorted(g.nodes):
        ps = parents[node]
        if not ps:
            continue
        if len(ps) == 1:
            chosen[node] = ps[0]
        else:
            chosen[node] = ps[rng.randrange(len(ps))]
            removed += len(ps) - 1
    return TreeOntology(root=g.roots[0], parent=chosen,
                        definitions=g.definitions, removed_edges=removed)


def assign_edge_labels(t: TreeOntology) -> TreeOntology:
    """Labels are fixed by construction (i-th sorted child gets label i);
    this re-derives them and is a no-op on any TreeOntology."""
    for par, kids in t.children.items():
        for i, c in enumerate(kids):
            if t.edge_label(par, c) != i:
                raise OntologyError("edge labels out of sync with children order")
    return t


def extract_path(t: TreeOntology, v: str, mode: PathMode,
                 terminus: Terminus = Terminus.TO_PARENT) -> PathSpec:
    """Root-anchored path for node v.

    TO_PARENT covers root..parent(v) (the training target form); TO_NODE
    covers root..v (used for the leaf examples with empty sources).
    """
    if v not in t:
        raise UnknownNode(f"node {v!r} not in tree")
    if terminus is Terminus.TO_PARENT:
        if v == t.root:
            raise RootHasNoParentPath("the root has no parent path")
        end = t.parent[v]
    else:
        end = v

    chain = []
    cur = end
    while cur != t.root:
        chain.append(cur)
        cur = t.parent[cur]
    chain.append(t.root)
    chain.reverse()

    if mode is PathMode.NODES:
        symbols = tuple(chain)
    else:
        symbols = tuple(t.edge_label(chain[i], chain[i + 1]) for i in range(len(chain) - 1))
    return PathSpec(mode=mode, symbols=symbols, terminus=terminus)


def resolve_path(t: TreeOntology, p: PathSpec) -> tuple:
    """Walk a PathSpec from the root; (reached node, whether fully valid).

    An invalid step stops the walk and returns the last reached node with
    valid=False. Empty paths resolve to the root.
    """
    if p.mode is PathMode.EDGES:
        cur = t.root
        for label in p.symbols:
            kids = t.children[cur]
            if isinstance(label, int) and 0 <= label < len(kids):
                cur = kids[label]
            else:
                return cur, False
        return cur, True

    if not p.symbols:
        return t.root, True
    if p.symbols[0] != t.root:
        return t.root, False
    cur = t.root
    for sym in p.symbols[1:]:
        if sym in t and t.parent.get(sym) == cur:
            cur = sym
        else:
            return cur, False
    return cur, True


def average_decisions(avg_depth: float, avg_branch: float) -> int:
    """avg depth x avg branch, rounded to nearest (ties away from zero)."""
    x = avg_depth * avg_branch
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def compute_stats(t: TreeOntology) -> GraphStats:
    """Depth averaged over non-root nodes, branch over internal nodes only."""
    non_root = [v for v in t.children if v != t.root]
    depths = [t.depth[v] for v in non_root]
    branches = [len(kids) for kids in t.children.values() if kids]
    avg_depth = sum(depths) / len(depths) if depths else 0.0
    max_depth = max(depths, default=0)
    avg_branch = sum(branches) / len(branches) if branches else 0.0
    max_branch = max(branches, default=0)
    return GraphStats(
        node_count=len(t.children),
        avg_depth=avg_depth,
        max_depth=max_depth,
        avg_branch=avg_branch,
        max_branch=max_branch,
        a_d=average_decisions(avg_depth, avg_branch),
    )
