"""Scoring decoded paths against the tree and emitting diagnostics.

A prediction is scored by where it lands: the decoded path is resolved
to the deepest tree node it validly reaches, and that node's ancestor
set is compared with the gold node's ancestor set via precision,
recall, and F1. Invalid paths are thus scored at their longest valid
prefix rather than discarded.

Two gold conventions exist for held-out leaves: "parent" takes the
target path's terminus (the leaf's parent), "leaf" takes the leaf
itself. Reports always carry both; the configured one fills the headline
numbers.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, UnknownNode, VocabMismatch
from .ontology import PathSpec, TreeOntology, resolve_path

REPORT_FORMAT_VERSION = 1

_CONVENTIONS = ("parent", "leaf")


def ancestor_set(t: TreeOntology, v, include_self: bool = True,
                 include_root: bool = True) -> frozenset:
    """Nodes on the root-to-v chain, membership of the ends configurable."""
    if v not in t:
        raise UnknownNode(f"node {v!r} is not in the tree")
    chain = []
    node = v
    while node != t.root:
        chain.append(node)
        node = t.parent[node]
    chain.append(t.root)
    out = set(chain)
    if not include_self:
        out.discard(v)
    if not include_root:
        out.discard(t.root)
    return frozenset(out)


def ancestor_f1(t: TreeOntology, predicted, gold, include_self: bool = True,
                include_root: bool = True) -> tuple:
    """(precision, recall, f1) of predicted vs gold ancestor sets.

    Empty intersections give 0.0 across the board; an empty set on
    either side (possible when both toggles are off) is handled the
    same way rather than dividing by zero.
    """
    p_set = ancestor_set(t, predicted, include_self, include_root)
    g_set = ancestor_set(t, gold, include_self, include_root)
    common = len(p_set & g_set)
    precision = common / len(p_set) if p_set else 0.0
    recall = common / len(g_set) if g_set else 0.0
    if precision + recall == 0.0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


@dataclass
class PredictionRecord:
    """One scored test example, with metrics under both gold conventions."""

    node: object
    kind: str
    gold_path: tuple
    predicted_path: tuple
    resolved_node: object
    valid: bool
    metrics: dict = field(default_factory=dict)   # convention -> (p, r, f1)


@dataclass
class EvalReport:
    """Aggregates over a test split."""

    convention: str
    n_total: int
    invalid_count: int
    invalid_pct: float
    mean_precision: float
    mean_recall: float
    mean_f1: float
    alt_convention: str
    alt_mean_f1: float
    include_self: bool
    include_root: bool
    train_length_hist: dict = field(default_factory=dict)
    decoded_length_by_gold: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "convention": self.convention,
            "n_total": self.n_total,
            "invalid_count": self.invalid_count,
            "invalid_pct": self.invalid_pct,
            "mean_precision": self.mean_precision,
            "mean_recall": self.mean_recall,
            "mean_f1": self.mean_f1,
            "alt_convention": self.alt_convention,
            "alt_mean_f1": self.alt_mean_f1,
            "include_self": self.include_self,
            "include_root": self.include_root,
            "train_length_hist": {str(k): v for k, v
                                  in sorted(self.train_length_hist.items())},
            "decoded_length_by_gold": {str(k): v for k, v in
                                       sorted(self.decoded_length_by_gold.items())},
        }


def _gold_node(t: TreeOntology, ex, convention: str):
    if convention == "leaf":
        return ex.node
    return t.parent[ex.node] if ex.node != t.root else t.root


def score_predictions(t: TreeOntology, pairs, gold_convention: str = "parent",
                      include_self: bool = True, include_root: bool = True):
    """Score (example, decoded PathSpec) pairs.

    Returns (EvalReport, records); the report's length tables are left
    empty for attach_length_tables to fill.
    """
    if gold_convention not in _CONVENTIONS:
        raise DegenerateInput(f"unknown gold convention {gold_convention!r}")
    pairs = list(pairs)
    if not pairs:
        raise DegenerateInput("nothing to score")
    records = []
    for ex, predicted in pairs:
        if predicted.mode is not ex.mode:
            raise VocabMismatch(
                f"prediction mode {predicted.mode.value} does not match "
                f"example mode {ex.mode.value}")
        reached, valid = resolve_path(t, predicted)
        metrics = {}
        for conv in _CONVENTIONS:
            gold = _gold_node(t, ex, conv)
            metrics[conv] = ancestor_f1(t, reached, gold,
                                        include_self, include_root)
        records.append(PredictionRecord(
            node=ex.node, kind=ex.kind.value, gold_path=ex.target,
            predicted_path=predicted.symbols, resolved_node=reached,
            valid=valid, metrics=metrics))
    n = len(records)
    invalid = sum(1 for r in records if not r.valid)
    alt = "leaf" if gold_convention == "parent" else "parent"
    report = EvalReport(
        convention=gold_convention,
        n_total=n,
        invalid_count=invalid,
        invalid_pct=100.0 * invalid / n,
        mean_precision=sum(r.metrics[gold_convention][0] for r in records) / n,
        mean_recall=sum(r.metrics[gold_convention][1] for r in records) / n,
        mean_f1=sum(r.metrics[gold_convention][2] for r in records) / n,
        alt_convention=alt,
        alt_mean_f1=sum(r.metrics[alt][2] for r in records) / n,
        include_self=include_self,
        include_root=include_root)
    return report, records


def evaluate(t: TreeOntology, checkpoint, examples,
             gold_convention: str = "parent", include_self: bool = True,
             include_root: bool = True, threads: int = 1,
             train_examples=None):
    """Greedy-decode and score a list of examples against the tree.

    Decoding order never affects results; records follow input order.
    threads > 1 decodes concurrently. When train_examples is given the
    report gains the length diagnostics tables.
    """
    examples = list(examples)
    if not examples:
        raise DegenerateInput("no examples to evaluate")
    mode = checkpoint.config.mode()
    for ex in examples:
        if ex.mode is not mode:
            raise VocabMismatch(
                f"example {ex.node} has mode {ex.mode.value}, "
                f"checkpoint expects {mode.value}")
    checkpoint.store()   # materialize before any worker threads exist

    def decode_one(ex):
        path, _ = checkpoint.decode(ex.source)
        return path

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            paths = list(pool.map(decode_one, examples))
    else:
        paths = [decode_one(ex) for ex in examples]
    report, records = score_predictions(
        t, zip(examples, paths), gold_convention, include_self, include_root)
    if train_examples is not None:
        attach_length_tables(report, train_examples, records)
    return report, records


def attach_length_tables(report: EvalReport, train_examples, records) -> None:
    """Fill the report's length diagnostics.

    train_length_hist counts training targets by path length (EOS not
    counted). decoded_length_by_gold groups test records by gold path
    length and summarizes decoded lengths with count/mean/std
    (population std).
    """
    hist = {}
    for ex in train_examples:
        hist[len(ex.target)] = hist.get(len(ex.target), 0) + 1
    report.train_length_hist = hist
    groups = {}
    for r in records:
        groups.setdefault(len(r.gold_path), []).append(len(r.predicted_path))
    table = {}
    for gold_len, lengths in sorted(groups.items()):
        arr = np.asarray(lengths, dtype=np.float64)
        table[gold_len] = {"count": len(lengths),
                           "mean": float(arr.mean()),
                           "std": float(arr.std())}
    report.decoded_length_by_gold = table


def frequency_baseline(train_examples) -> PathSpec:
    """The most frequent training target; ties break to the smallest.

    A constant predictor built on this is the floor any trained model
    must beat.
    """
    train_examples = list(train_examples)
    if not train_examples:
        raise DegenerateInput("no training examples")
    counts = {}
    for ex in train_examples:
        counts[ex.target] = counts.get(ex.target, 0) + 1
    best = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
    for ex in train_examples:
        if ex.target == best:
            return ex.target_path()
    raise DegenerateInput("unreachable: winning target lost")


def _rank(values) -> list:
    """Ranks starting at 1; tied values share the average of their ranks."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def pearson(xs, ys) -> float:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise DegenerateInput("inputs must be equal-length vectors")
    if xs.size < 2:
        raise DegenerateInput("need at least two points")
    dx = xs - xs.mean()
    dy = ys - ys.mean()
    sx = float((dx * dx).sum())
    sy = float((dy * dy).sum())
    if sx == 0.0 or sy == 0.0:
        raise DegenerateInput("zero variance input")
    # single sqrt keeps identical or negated inputs at exactly +/-1
    return float((dx * dy).sum()) / float(np.sqrt(sx * sy))


def spearman(xs, ys) -> float:
    """Rank correlation; ties get average ranks."""
    if len(xs) != len(ys):
        raise DegenerateInput("inputs must be equal-length vectors")
    return pearson(_rank(list(xs)), _rank(list(ys)))


# --- artifact writers ---

def _path_str(symbols) -> str:
    return "/".join(str(s) for s in symbols)


RECORD_COLUMNS = (
    "node", "kind", "gold_path", "predicted_path", "resolved_node",
    "valid", "precision", "recall", "f1", "alt_precision", "alt_recall",
    "alt_f1",
)


def write_report_files(report: EvalReport, records, out_dir) -> list:
    """Emit report.json, records.csv, the two length-table CSVs, and a
    schema description. Returns the created paths. Output is byte-stable
    for identical inputs.
    """
    import os
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def out(name):
        p = os.path.join(out_dir, name)
        paths.append(p)
        return p

    with open(out("report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    alt = report.alt_convention
    with open(out("records.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_COLUMNS)
        for r in records:
            p, rec, f1 = r.metrics[report.convention]
            ap, ar, af = r.metrics[alt]
            w.writerow([r.node, r.kind, _path_str(r.gold_path),
                        _path_str(r.predicted_path), r.resolved_node,
                        int(r.valid), f"{p:.6f}", f"{rec:.6f}", f"{f1:.6f}",
                        f"{ap:.6f}", f"{ar:.6f}", f"{af:.6f}"])

    with open(out("train_length_hist.csv"), "w", encoding="utf-8",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["target_length", "count"])
        for k in sorted(report.train_length_hist):
            w.writerow([k, report.train_length_hist[k]])

    with open(out("decoded_length_by_gold.csv"), "w", encoding="utf-8",
              newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gold_length", "count", "decoded_mean", "decoded_std"])
        for k in sorted(report.decoded_length_by_gold):
            row = report.decoded_length_by_gold[k]
            w.writerow([k, row["count"], f"{row['mean']:.6f}",
                        f"{row['std']:.6f}"])

    schema = {
        "report.json": "aggregate metrics; see keys within",
        "records.csv": {
            "node": "test node id",
            "kind": "example kind (standard or dummy_leaf)",
            "gold_path": "gold target symbols joined by /",
            "predicted_path": "decoded symbols joined by /",
            "resolved_node": "deepest valid node the decoded path reaches",
            "valid": "1 if the whole decoded path resolved, else 0",
            "precision": "ancestor precision under the configured convention",
            "recall": "ancestor recall under the configured convention",
            "f1": "ancestor F1 under the configured convention",
            "alt_precision": "ancestor precision under the other convention",
            "alt_recall": "ancestor recall under the other convention",
            "alt_f1": "ancestor F1 under the other convention",
        },
        "train_length_hist.csv": {
            "target_length": "training target path length (EOS not counted)",
            "count": "number of training examples with that length",
        },
        "decoded_length_by_gold.csv": {
            "gold_length": "gold path length of the test group",
            "count": "records in the group",
            "decoded_mean": "mean decoded path length",
            "decoded_std": "population std of decoded path lengths",
        },
    }
    with open(out("schema.json"), "w", encoding="utf-8") as fh:
        json.dump(schema, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
