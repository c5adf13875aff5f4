"""Command-line pipeline: ingest, prepare, train, predict, evaluate.

Configuration is a flat key = value file plus per-key command-line
flags; flags beat the file, the file beats built-in defaults. Unknown
keys are rejected. Exit codes: 0 success, 1 usage or configuration
error, 2 data error (unreadable files, graph violations, vocabulary
mismatches), 3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import warnings
from dataclasses import dataclass

from . import __version__
from .corpus import (CORPUS_FORMAT_VERSION, assemble_split, dump_corpus,
                     load_corpus, make_examples, split_dataset, tokenize)
from .embeddings import load_embeddings
from .errors import (ConfigError, CycleDetected, NumericFailure,
                     TaxopathError, TruncationWarning, VocabMismatch)
from .evaluation import REPORT_FORMAT_VERSION, evaluate, write_report_files
from .model import (CHECKPOINT_FORMAT_VERSION, Checkpoint, ModelConfig,
                    train)
from .nn import PARAM_FORMAT_VERSION
from .ontology import (PathMode, compute_dag_stats, compute_stats,
                       dag_to_tree, parse_ontology, read_definition_file,
                       read_edge_file, resolve_path, validate_dag)
from .rng import derive_seed

_MODEL_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)}


@dataclass
class RunConfig:
    """Everything a run needs; model knobs mirror ModelConfig."""

    edges: str = ""
    definitions: str = ""
    embeddings: str = ""
    output_dir: str = "taxopath_out"
    gold_convention: str = "parent"
    split_seed: int = -1
    keep_test_dummy: bool = False
    include_self: bool = True
    include_root: bool = True
    threads: int = 1
    word_emb_dim: int = 64
    symbol_emb_dim: int = 64
    encoder_hidden: int = 64
    decoder_hidden: int = 0
    attn_dim: int = 0
    epochs: int = 300
    batch_size: int = 16
    learning_rate: float = 0.001
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    clip_norm: float = 5.0
    max_source_len: int = 60
    max_target_len: int = 0
    seed: int = 13
    eval_every: int = 10
    path_mode: str = "text2edges"
    use_pretrained: bool = False
    freeze_embeddings: bool = False
    attend_pre_update: bool = False

    def model_config(self) -> ModelConfig:
        values = {f: getattr(self, f) for f in _MODEL_FIELDS}
        return ModelConfig(**values)

    def mode(self) -> PathMode:
        return self.model_config().mode()

    def resolved_split_seed(self) -> int:
        return self.split_seed if self.split_seed >= 0 else derive_seed(
            self.seed, "split")


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    # ValueError so argparse reports a usage error for bad flag values
    raise ValueError(f"expected a boolean, got {raw!r}")


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "bool":
            return _parse_bool(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}")


def read_config_file(path) -> dict:
    """Parse `key = value` lines; # starts a comment, blanks are skipped."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _coerce(key, value)
    return values


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    converters = {"bool": _parse_bool, "int": int, "float": float, "str": str}
    for f in dataclasses.fields(RunConfig):
        parser.add_argument(_flag(f.name), dest=f.name,
                            type=converters[f.type], default=None,
                            metavar=f.type,
                            help=f"override config key {f.name}")


def build_parser() -> _Parser:
    version = (f"taxopath {__version__} (checkpoint format "
               f"{CHECKPOINT_FORMAT_VERSION}, parameter container "
               f"{PARAM_FORMAT_VERSION}, corpus format "
               f"{CORPUS_FORMAT_VERSION}, report format "
               f"{REPORT_FORMAT_VERSION})")
    parser = _Parser(prog="taxopath",
                     description="Map textual definitions to taxonomy paths.")
    parser.add_argument("--version", action="version", version=version)
    sub = parser.add_subparsers(dest="command", metavar="command")

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.error = parser.error   # keep usage failures at exit code 1
        p.add_argument("--config", default=None, help="key = value config file")
        _add_config_flags(p)
        return p

    p = command("ingest", "parse and validate an ontology, print statistics")
    p.add_argument("--stats-out", default=None, help="write stats JSON here")

    command("prepare", "build the example corpus and the leaf-level split")

    p = command("train", "fit the path predictor on the prepared corpus")
    p.add_argument("--resume", action="store_true",
                   help="not supported; present to fail loudly")

    p = command("predict", "decode a path for one definition from stdin")
    p.add_argument("--text", default=None, help="definition text (else stdin)")
    p.add_argument("--checkpoint", default=None, help="checkpoint path")
    p.add_argument("--attention-out", default=None,
                   help="write the attention matrix CSV here")

    p = command("evaluate", "score the held-out test split")
    p.add_argument("--checkpoint", default=None, help="checkpoint path")
    return parser


def load_run_config(args) -> RunConfig:
    values = dataclasses.asdict(RunConfig())
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for name in _FIELD_TYPES:
        override = getattr(args, name, None)
        if override is not None:
            values[name] = override
    return RunConfig(**values)


def _require(cfg: RunConfig, *names) -> None:
    for name in names:
        if not getattr(cfg, name):
            raise ConfigError(f"{name} path is required (flag {_flag(name)})")


def _build_tree(cfg: RunConfig):
    edges = read_edge_file(cfg.edges)
    definitions = (read_definition_file(cfg.definitions)
                   if cfg.definitions else ())
    graph = validate_dag(parse_ontology(edges, definitions))
    tree = dag_to_tree(graph, derive_seed(cfg.seed, "tree"))
    return graph, tree


def _corpus_paths(cfg: RunConfig):
    return (os.path.join(cfg.output_dir, "corpus.jsonl"),
            os.path.join(cfg.output_dir, "split.json"))


def _load_split(cfg: RunConfig):
    corpus_path, split_path = _corpus_paths(cfg)
    try:
        with open(split_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise TaxopathError(
            f"missing {split_path}; run `taxopath prepare` first")
    if manifest.get("path_mode") != cfg.path_mode:
        raise VocabMismatch(
            f"corpus was prepared with path_mode {manifest.get('path_mode')!r}, "
            f"config says {cfg.path_mode!r}")
    examples = load_corpus(corpus_path, cfg.mode())
    split = assemble_split(examples, manifest["test_nodes"],
                           manifest["dev_nodes"], manifest["keep_test_dummy"],
                           manifest["split_seed"])
    return examples, split


def _checkpoint_path(cfg: RunConfig, args) -> str:
    explicit = getattr(args, "checkpoint", None)
    return explicit or os.path.join(cfg.output_dir, "model.ckpt")


def cmd_ingest(cfg: RunConfig, args) -> int:
    _require(cfg, "edges")
    graph, tree = _build_tree(cfg)
    stats = {
        "nodes": len(tree),
        "leaves": len(tree.leaves()),
        "root": tree.root,
        "removed_edges": tree.removed_edges,
        "tree": compute_stats(tree).to_dict(),
        "dag": compute_dag_stats(graph).to_dict(),
    }
    text = json.dumps(stats, indent=2, sort_keys=True) + "\n"
    if args.stats_out:
        with open(args.stats_out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_prepare(cfg: RunConfig) -> int:
    _require(cfg, "edges", "definitions")
    _, tree = _build_tree(cfg)
    examples = make_examples(tree, cfg.mode(), cfg.max_source_len)
    split_seed = cfg.resolved_split_seed()
    split = split_dataset(examples, tree, split_seed, cfg.keep_test_dummy)
    os.makedirs(cfg.output_dir, exist_ok=True)
    corpus_path, split_path = _corpus_paths(cfg)
    dump_corpus(examples, corpus_path)
    manifest = {
        "format_version": CORPUS_FORMAT_VERSION,
        "path_mode": cfg.path_mode,
        "seed": cfg.seed,
        "split_seed": split_seed,
        "keep_test_dummy": cfg.keep_test_dummy,
        "test_nodes": sorted({ex.node for ex in split.test}),
        "dev_nodes": sorted({ex.node for ex in split.dev}),
        "counts": {"train": len(split.train), "dev": len(split.dev),
                   "test": len(split.test), "total": len(examples)},
    }
    with open(split_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"prepared {len(examples)} examples "
          f"(train {len(split.train)}, dev {len(split.dev)}, "
          f"test {len(split.test)}) in {cfg.output_dir}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    if args.resume:
        raise ConfigError("resuming from a checkpoint is not supported; "
                          "train from scratch instead")
    _require(cfg, "edges", "definitions")
    _, tree = _build_tree(cfg)
    _, split = _load_split(cfg)
    table = None
    if cfg.use_pretrained:
        _require(cfg, "embeddings")
        table = load_embeddings(cfg.embeddings)
    checkpoint = train(split, tree, cfg.model_config(), table)
    os.makedirs(cfg.output_dir, exist_ok=True)
    ckpt_path = os.path.join(cfg.output_dir, "model.ckpt")
    checkpoint.save(ckpt_path)
    log_path = os.path.join(cfg.output_dir, "train_log.csv")
    with open(log_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "dev_f1"])
        for row in checkpoint.train_log:
            dev = "" if row["dev_f1"] is None else f"{row['dev_f1']:.6f}"
            w.writerow([row["epoch"], f"{row['loss']:.6f}", dev])
    dev = ("n/a" if checkpoint.best_dev_f1 is None
           else f"{checkpoint.best_dev_f1:.4f}")
    print(f"saved {ckpt_path} (best epoch {checkpoint.best_epoch}, "
          f"dev F1 {dev})")
    return 0


def _check_tree_vocab(tree, checkpoint) -> None:
    vocab = checkpoint.symbol_vocab
    if vocab.mode is PathMode.NODES:
        missing = [s for s in vocab.symbols[3:] if s not in tree]
        if missing:
            raise VocabMismatch(
                f"checkpoint symbols not in tree: {missing[:5]}")
    elif tree.label_vocab_size > len(vocab.symbols) - 3:
        raise VocabMismatch(
            f"tree needs {tree.label_vocab_size} edge labels, checkpoint "
            f"has {len(vocab.symbols) - 3}")


def cmd_predict(cfg: RunConfig, args) -> int:
    _require(cfg, "edges", "definitions")
    checkpoint = Checkpoint.load(_checkpoint_path(cfg, args))
    _, tree = _build_tree(cfg)
    _check_tree_vocab(tree, checkpoint)
    text = args.text if args.text is not None else sys.stdin.read()
    tokens = tokenize(text)
    limit = checkpoint.config.max_source_len
    if len(tokens) > limit:
        warnings.warn(f"input truncated to {limit} tokens",
                      TruncationWarning, stacklevel=1)
        tokens = tokens[:limit]
    path, attention = checkpoint.decode(tokens)
    node, valid = resolve_path(tree, path)
    print(json.dumps({"symbols": list(path.symbols), "node": node,
                      "valid": valid}, sort_keys=True))
    if args.attention_out:
        shown = tokens if tokens else ["<empty>"]
        with open(args.attention_out, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["symbol"] + shown)
            for sym, row in zip(path.symbols, attention):
                w.writerow([sym] + [f"{x:.6f}" for x in row])
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    _require(cfg, "edges", "definitions")
    checkpoint = Checkpoint.load(_checkpoint_path(cfg, args))
    _, tree = _build_tree(cfg)
    _check_tree_vocab(tree, checkpoint)
    _, split = _load_split(cfg)
    report, records = evaluate(
        tree, checkpoint, split.test, gold_convention=cfg.gold_convention,
        include_self=cfg.include_self, include_root=cfg.include_root,
        threads=cfg.threads, train_examples=split.train)
    write_report_files(report, records, cfg.output_dir)
    print(f"n={report.n_total} mean_f1={report.mean_f1:.4f} "
          f"mean_precision={report.mean_precision:.4f} "
          f"mean_recall={report.mean_recall:.4f} "
          f"invalid_pct={report.invalid_pct:.2f}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        cfg = load_run_config(args)
        if args.command == "ingest":
            return cmd_ingest(cfg, args)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "train":
            return cmd_train(cfg, args)
        if args.command == "predict":
            return cmd_predict(cfg, args)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args)
        parser.print_usage(sys.stderr)
        return 1
    except ConfigError as e:
        print(f"taxopath: config error: {e}", file=sys.stderr)
        return 1
    except NumericFailure as e:
        print(f"taxopath: numeric failure: {e}", file=sys.stderr)
        return 3
    except CycleDetected as e:
        print(f"taxopath: {e}", file=sys.stderr)
        return 2
    except TaxopathError as e:
        print(f"taxopath: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"taxopath: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
