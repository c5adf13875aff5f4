"""Corpus construction: tokenization, vocabularies, examples, leaf-split.

A TreeOntology yields one standard example per defined non-root node
(definition tokens -> path to its parent) and one dummy example per leaf
(the EMPTY marker -> path to the leaf itself), so that leaves can appear
as path termini. Held-out data is sampled at the leaf level, which keeps
the tree topology intact.
"""

from __future__ import annotations

import json
import string
import warnings
from dataclasses import dataclass
from enum import Enum

from .errors import MissingDefinitionWarning, TooFewLeaves, TruncationWarning, VocabMismatch
from .ontology import PathMode, PathSpec, Terminus, TreeOntology, extract_path
from .rng import Rng

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
EMPTY_TOKEN = "<empty>"

PAD_SYMBOL = "<pad>"
SOS_SYMBOL = "<sos>"
EOS_SYMBOL = "<eos>"

MAX_SOURCE_TOKENS = 60

CORPUS_FORMAT_VERSION = 1

_PUNCT = set(string.punctuation)


def tokenize(text: str) -> list:
    """Lowercase, split on whitespace, peel leading/trailing ASCII punctuation
    off each chunk into separate tokens."""
    tokens = []
    for chunk in text.lower().split():
        lead = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


class TokenVocab:
    """Source-token vocabulary with reserved PAD=0, UNK=1, EMPTY=2."""

    RESERVED = (PAD_TOKEN, UNK_TOKEN, EMPTY_TOKEN)

    def __init__(self, tokens_with_freq=()):
        self.index = {PAD_TOKEN: 0, UNK_TOKEN: 1, EMPTY_TOKEN: 2}
        self.freq = {}
        for token, count in tokens_with_freq:
            if token in self.index:
                raise VocabMismatch(f"token {token!r} collides with a reserved entry")
            self.index[token] = len(self.index)
            self.freq[token] = count
        self.tokens = [None] * len(self.index)
        for tok, i in self.index.items():
            self.tokens[i] = tok

    @classmethod
    def from_sources(cls, sources) -> "TokenVocab":
        """Build from token lists; entries ordered by (-frequency, token)."""
        freq = {}
        for toks in sources:
            for tok in toks:
                if tok == EMPTY_TOKEN:
                    continue
                freq[tok] = freq.get(tok, 0) + 1
        ordered = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls(ordered)

    def __len__(self):
        return len(self.tokens)

    def encode(self, tokens) -> list:
        unk = self.index[UNK_TOKEN]
        return [self.index.get(t, unk) for t in tokens]

    def decode(self, indices) -> list:
        return [self.tokens[i] for i in indices]

    def to_dict(self) -> dict:
        return {"tokens": self.tokens[3:], "freq": self.freq}

    @classmethod
    def from_dict(cls, d) -> "TokenVocab":
        freq = d.get("freq", {})
        return cls([(t, freq.get(t, 0)) for t in d["tokens"]])


class SymbolVocab:
    """Output-symbol vocabulary with reserved PAD=0, SOS=1, EOS=2.

    Symbols are node ids in node mode and integer edge labels in edge mode;
    size is |V|+3 or delta(G)+3 respectively.
    """

    def __init__(self, symbols, mode: PathMode):
        self.mode = mode
        self.index = {PAD_SYMBOL: 0, SOS_SYMBOL: 1, EOS_SYMBOL: 2}
        self.symbols = [PAD_SYMBOL, SOS_SYMBOL, EOS_SYMBOL]
        for sym in symbols:
            if sym in self.index:
                raise VocabMismatch(f"duplicate or reserved symbol {sym!r}")
            self.index[sym] = len(self.symbols)
            self.symbols.append(sym)

    @classmethod
    def for_tree(cls, t: TreeOntology, mode: PathMode) -> "SymbolVocab":
        if mode is PathMode.NODES:
            return cls(t.nodes, mode)
        return cls(range(t.label_vocab_size), mode)

    def __len__(self):
        return len(self.symbols)

    @property
    def pad(self) -> int:
        return 0

    @property
    def sos(self) -> int:
        return 1

    @property
    def eos(self) -> int:
        return 2

    def encode_path(self, p: PathSpec) -> list:
        """Symbol indices for a path, EOS appended."""
        try:
            out = [self.index[s] for s in p.symbols]
        except KeyError as e:
            raise VocabMismatch(f"path symbol {e.args[0]!r} not in vocabulary")
        out.append(self.eos)
        return out

    def decode_to_symbols(self, indices) -> tuple:
        """Raw path symbols for decoded indices; stops before EOS/PAD/SOS."""
        out = []
        for i in indices:
            if i in (self.pad, self.sos, self.eos):
                break
            out.append(self.symbols[i])
        return tuple(out)

    def to_dict(self) -> dict:
        return {"mode": self.mode.value, "symbols": self.symbols[3:]}

    @classmethod
    def from_dict(cls, d) -> "SymbolVocab":
        return cls(d["symbols"], PathMode(d["mode"]))


class ExampleKind(Enum):
    STANDARD = "standard"
    DUMMY_LEAF = "dummy_leaf"


@dataclass
class Example:
    """A (definition, path) training pair in surface form.

    `source` holds tokens (the single EMPTY marker for dummy examples) and
    `target` the raw path symbols without EOS; encoding to indices happens
    at batch time against the vocabularies.
    """
    node: str
    kind: ExampleKind
    source: tuple
    target: tuple
    mode: PathMode

    def target_path(self) -> PathSpec:
        terminus = Terminus.TO_PARENT if self.kind is ExampleKind.STANDARD else Terminus.TO_NODE
        return PathSpec(mode=self.mode, symbols=self.target, terminus=terminus)


def make_examples(t: TreeOntology, mode: PathMode,
                  max_source_tokens: int = MAX_SOURCE_TOKENS) -> list:
    """One standard example per defined non-root node, one dummy per leaf."""
    examples = []
    missing = []
    for v in t.nodes:
        if v == t.root:
            continue
        text = t.definitions.get(v, "")
        tokens = tokenize(text)
        if not tokens:
            missing.append(v)
        else:
            if len(tokens) > max_source_tokens:
                warnings.warn(
                    f"definition of {v!r} truncated from {len(tokens)} to "
                    f"{max_source_tokens} tokens", TruncationWarning)
                tokens = tokens[:max_source_tokens]
            path = extract_path(t, v, mode, Terminus.TO_PARENT)
            examples.append(Example(node=v, kind=ExampleKind.STANDARD,
                                    source=tuple(tokens), target=path.symbols, mode=mode))
    if missing:
        warnings.warn(
            f"{len(missing)} non-root nodes have no usable definition "
            f"(first few: {missing[:3]})", MissingDefinitionWarning)
    for leaf in t.leaves():
        path = extract_path(t, leaf, mode, Terminus.TO_NODE)
        examples.append(Example(node=leaf, kind=ExampleKind.DUMMY_LEAF,
                                source=(EMPTY_TOKEN,), target=path.symbols, mode=mode))
    return examples


@dataclass
class DatasetSplit:
    train: list
    dev: list
    test: list
    sampled_leaves: set
    seed: int


def split_counts(n_leaves: int) -> tuple:
    """(sampled, test, dev) sizes: 10% of leaves, split 90/10, floors, min 1."""
    if n_leaves < 20:
        raise TooFewLeaves(f"need at least 20 leaves to split, got {n_leaves}")
    sampled = n_leaves // 10
    dev = max(1, sampled // 10)
    test = sampled - dev
    return sampled, test, dev


def split_dataset(examples, t: TreeOntology, seed: int,
                  keep_test_dummy: bool = False) -> DatasetSplit:
    """Hold out a leaf sample: 10% of leaves, of those 90% test / 10% dev.

    Every example of a sampled leaf leaves the training set; its dummy
    example is kept in train only under `keep_test_dummy`. Dev and test
    hold the standard (definition) examples of the sampled leaves.
    """
    leaves = t.leaves()
    n_sampled, n_test, n_dev = split_counts(len(leaves))
    rng = Rng(seed)
    sampled = rng.sample(leaves, n_sampled)
    return assemble_split(examples, sampled[:n_test], sampled[n_test:],
                          keep_test_dummy, seed)


def assemble_split(examples, test_nodes, dev_nodes,
                   keep_test_dummy: bool = False, seed: int = 0) -> DatasetSplit:
    """Partition examples given explicit held-out node sets.

    This is the membership rule split_dataset applies after sampling;
    exposing it lets a persisted manifest reproduce a split exactly.
    """
    test_nodes = set(test_nodes)
    dev_nodes = set(dev_nodes)
    sampled_set = test_nodes | dev_nodes
    train, dev, test = [], [], []
    for ex in examples:
        if ex.node not in sampled_set:
            train.append(ex)
            continue
        if ex.kind is ExampleKind.DUMMY_LEAF:
            if keep_test_dummy:
                train.append(ex)
            continue
        if ex.node in test_nodes:
            test.append(ex)
        else:
            dev.append(ex)
    return DatasetSplit(train=train, dev=dev, test=test,
                        sampled_leaves=sampled_set, seed=seed)


def example_to_json(ex: Example) -> dict:
    return {
        "node": ex.node,
        "kind": ex.kind.value,
        "source": list(ex.source),
        "target": list(ex.target),
    }


def example_from_json(d: dict, mode: PathMode) -> Example:
    return Example(node=d["node"], kind=ExampleKind(d["kind"]),
                   source=tuple(d["source"]), target=tuple(d["target"]), mode=mode)


def dump_corpus(examples, path) -> None:
    """JSON-lines dump, one example per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_json(ex), sort_keys=True) + "\n")


def load_corpus(path, mode: PathMode) -> list:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                examples.append(example_from_json(json.loads(line), mode))
    return examples
