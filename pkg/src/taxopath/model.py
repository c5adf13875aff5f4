"""Sequence-to-sequence path predictor with additive attention.

A bidirectional LSTM reads the definition tokens; its concatenated
final states seed a unidirectional LSTM decoder that emits path symbols
conditioned, at every step, on an attention-weighted mix of encoder
states. Scores are additive: v' tanh(W h_enc + U h_dec). The output
projection takes [decoder state; context] and has no bias.

Training is teacher-forced cross entropy averaged over non-padding
target positions (EOS counts), optimized by RMSProp with global-norm
gradient clipping. All state (parameter init, batch order) derives
from the config seed, so runs are bit-reproducible.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .corpus import EMPTY_TOKEN, SymbolVocab, TokenVocab
from .embeddings import EmbeddingTable, pca_reduce
from .errors import (CheckpointError, ConfigError, DimensionMismatch,
                     EmptyBatch, NumericFailure, SourceTooLong)
from .nn import (NARROW, ParamStore, RmsPropState, clip_by_global_norm,
                 lstm_cell, read_params, rmsprop_step, write_params)
from .ontology import PathMode, PathSpec, Terminus
from .rng import Rng, derive_seed

CHECKPOINT_FORMAT_VERSION = 1

_PATH_MODES = {"text2nodes": PathMode.NODES, "text2edges": PathMode.EDGES}


@dataclass
class ModelConfig:
    """Architecture and training knobs.

    decoder_hidden, attn_dim, and max_target_len accept 0 meaning
    "derive": decoder width is twice the encoder width (it is seeded by
    the concatenated directional finals), attention width follows the
    decoder, and the decode cap follows the longest training target.
    """

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

    def validate(self) -> None:
        for name in ("word_emb_dim", "symbol_emb_dim", "encoder_hidden",
                     "batch_size", "max_source_len"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("epochs", "decoder_hidden", "attn_dim",
                     "max_target_len", "eval_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0 <= self.rmsprop_decay < 1:
            raise ConfigError("rmsprop_decay must lie in [0, 1)")
        if self.path_mode not in _PATH_MODES:
            raise ConfigError(
                f"path_mode must be one of {sorted(_PATH_MODES)}, got {self.path_mode!r}")
        if self.decoder_hidden and self.decoder_hidden != 2 * self.encoder_hidden:
            raise ConfigError(
                f"decoder_hidden must be 2x encoder_hidden "
                f"({2 * self.encoder_hidden}), got {self.decoder_hidden}")

    def resolved(self, max_target_len: int | None = None) -> "ModelConfig":
        """A copy with every derived field made concrete."""
        self.validate()
        cfg = dataclasses.replace(self)
        if cfg.decoder_hidden == 0:
            cfg.decoder_hidden = 2 * cfg.encoder_hidden
        if cfg.attn_dim == 0:
            cfg.attn_dim = cfg.decoder_hidden
        if cfg.max_target_len == 0 and max_target_len is not None:
            cfg.max_target_len = max_target_len
        return cfg

    def mode(self) -> PathMode:
        return _PATH_MODES[self.path_mode]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg


def build_params(config: ModelConfig, n_tokens: int, n_symbols: int,
                 dtype=NARROW) -> ParamStore:
    """All trainable tensors for a resolved config and vocab sizes."""
    h = config.encoder_hidden
    d = config.decoder_hidden
    a = config.attn_dim
    if d != 2 * h:
        raise ConfigError("build_params needs a resolved config")
    store = ParamStore(config.seed, dtype=dtype)
    store.add("emb.word", (n_tokens, config.word_emb_dim))
    store.add("emb.symbol", (n_symbols, config.symbol_emb_dim))
    for direction in ("fwd", "bwd"):
        store.add(f"enc.{direction}.wx", (config.word_emb_dim, 4 * h))
        store.add(f"enc.{direction}.wh", (h, 4 * h))
        store.add(f"enc.{direction}.b", (4 * h,))
    store.add("dec.wx", (config.symbol_emb_dim, 4 * d))
    store.add("dec.wh", (d, 4 * d))
    store.add("dec.b", (4 * d,))
    store.add("attn.wa", (d, a))   # encoder rows are 2h = d wide
    store.add("attn.ua", (d, a))
    store.add("attn.v", (a, 1))
    store.add("out.w", (2 * d, n_symbols))   # [state; context], no bias
    return store


def apply_pretrained(store: ParamStore, token_vocab: TokenVocab,
                     table: EmbeddingTable) -> int:
    """Overwrite word-embedding rows with pretrained vectors.

    Vectors wider than the embedding get PCA-reduced first; narrower is
    an error. Reserved tokens and tokens absent from the table get zero
    rows. Returns how many rows received a pretrained vector.
    """
    dim = store["emb.word"].data.shape[1]
    if table.dim > dim:
        table = pca_reduce(table, dim)
    elif table.dim < dim:
        raise DimensionMismatch(
            f"pretrained dim {table.dim} is below embedding dim {dim}")
    rows = np.zeros_like(store["emb.word"].data)
    hits = 0
    for i, token in enumerate(token_vocab.tokens):
        if token in TokenVocab.RESERVED:
            continue
        if token in table:
            rows[i] = table.lookup(token)
            hits += 1
    store.put("emb.word", rows)
    return hits


@dataclass
class EncoderOutput:
    """Per-position encoder states plus the decoder's starting state.

    h_rows is position-major: row t*batch + j is example j at position
    t. k_rows caches the attention key projection of h_rows.
    """

    h_rows: Tensor
    mask: np.ndarray
    batch: int
    positions: int
    final_h: Tensor
    final_c: Tensor
    k_rows: Tensor = None


def _run_direction(x_cols, mask, store, prefix, batch, hidden):
    """One LSTM sweep with carry masking; returns per-position h and c.

    At padded positions the previous state is carried through unchanged,
    so trailing PAD can never alter any example's states.
    """
    wx, wh, b = store[f"{prefix}.wx"], store[f"{prefix}.wh"], store[f"{prefix}.b"]
    dtype = wx.data.dtype
    h = Tensor(np.zeros((batch, hidden), dtype=dtype))
    c = Tensor(np.zeros((batch, hidden), dtype=dtype))
    hs, cs = [], []
    for t, x in x_cols:
        m = mask[:, t:t + 1]
        h_new, c_new = lstm_cell(x, h, c, wx, wh, b)
        h = ad.add(ad.mul_const(h_new, m), ad.mul_const(h, 1.0 - m))
        c = ad.add(ad.mul_const(c_new, m), ad.mul_const(c, 1.0 - m))
        hs.append((t, h))
        cs.append((t, c))
    return dict(hs), dict(cs)


def encode_batch(src_ids: np.ndarray, src_mask: np.ndarray,
                 store: ParamStore, config: ModelConfig) -> EncoderOutput:
    """Bidirectional encoding of a padded id matrix.

    The decoder start state concatenates the forward sweep's last state
    with the backward sweep's state at position 0.
    """
    batch, positions = src_ids.shape
    if batch == 0 or positions == 0:
        raise EmptyBatch("cannot encode an empty batch")
    if positions > config.max_source_len:
        raise SourceTooLong(
            f"source has {positions} tokens, limit is {config.max_source_len}")
    emb = store["emb.word"]
    x_cols = [(t, ad.gather_rows(emb, src_ids[:, t])) for t in range(positions)]
    hidden = config.encoder_hidden
    fwd_h, fwd_c = _run_direction(x_cols, src_mask, store, "enc.fwd", batch, hidden)
    bwd_h, bwd_c = _run_direction(list(reversed(x_cols)), src_mask, store,
                                  "enc.bwd", batch, hidden)
    h_rows = ad.concat_rows(
        [ad.concat(fwd_h[t], bwd_h[t]) for t in range(positions)])
    final_h = ad.concat(fwd_h[positions - 1], bwd_h[0])
    final_c = ad.concat(fwd_c[positions - 1], bwd_c[0])
    return EncoderOutput(h_rows=h_rows, mask=src_mask, batch=batch,
                         positions=positions, final_h=final_h, final_c=final_c)


def attend(h_star: Tensor, enc: EncoderOutput, store: ParamStore):
    """Additive-attention context for a batch of decoder states.

    Scores are v' tanh(W h_enc + U h_star); weights are a masked softmax
    over source positions. Returns (context, weights).
    """
    if enc.k_rows is None:
        enc.k_rows = ad.matmul(enc.h_rows, store["attn.wa"])
    q = ad.matmul(h_star, store["attn.ua"])
    u = ad.tanh(ad.add(enc.k_rows, ad.tile_posmajor(q, enc.positions)))
    scores = ad.posmajor_to_batch(ad.matmul(u, store["attn.v"]),
                                  enc.batch, enc.positions)
    weights = ad.masked_softmax_rows(scores, enc.mask)
    context = ad.attn_context(weights, enc.h_rows, enc.batch, enc.positions)
    return context, weights


def decode_step(prev_ids: np.ndarray, h: Tensor, c: Tensor,
                enc: EncoderOutput, store: ParamStore, config: ModelConfig):
    """One decoder step: embed previous symbol, update state, attend,
    project [state; context] to symbol logits.

    Returns (logits, h, c, attention weights). By default attention is
    conditioned on the updated state; attend_pre_update uses the state
    from before the LSTM update instead.
    """
    e = ad.gather_rows(store["emb.symbol"], prev_ids)
    h2, c2 = lstm_cell(e, h, c, store["dec.wx"], store["dec.wh"], store["dec.b"])
    h_star = h if config.attend_pre_update else h2
    context, weights = attend(h_star, enc, store)
    logits = ad.matmul(ad.concat(h2, context), store["out.w"])
    return logits, h2, c2, weights


def forward_loss(src_ids, src_mask, tgt_in, tgt_out, tgt_mask,
                 store: ParamStore, config: ModelConfig):
    """Teacher-forced mean cross entropy over non-padding target slots.

    EOS positions count; padding never contributes (its per-row loss is
    multiplied by a 0 mask column). Returns (loss tensor, slot count).
    """
    count = float(tgt_mask.sum())
    if count == 0:
        raise EmptyBatch("no unmasked target positions in batch")
    enc = encode_batch(src_ids, src_mask, store, config)
    h, c = enc.final_h, enc.final_c
    total = None
    for j in range(tgt_in.shape[1]):
        logits, h, c, _ = decode_step(tgt_in[:, j], h, c, enc, store, config)
        ce = ad.cross_entropy_rows(logits, tgt_out[:, j])
        ce = ad.mul_const(ce, tgt_mask[:, j:j + 1])
        total = ce if total is None else ad.add(total, ce)
    return ad.scale(ad.sum_all(total), 1.0 / count), count


def encode_example(ex, token_vocab: TokenVocab, symbol_vocab: SymbolVocab,
                   max_source_len: int):
    """(source ids, target ids with EOS) for one example."""
    if len(ex.source) > max_source_len:
        raise SourceTooLong(
            f"{ex.node}: source has {len(ex.source)} tokens, "
            f"limit is {max_source_len}")
    src = token_vocab.encode(ex.source if ex.source else (EMPTY_TOKEN,))
    tgt = symbol_vocab.encode_path(ex.target_path())
    return src, tgt


def assemble_batch(items, symbol_vocab: SymbolVocab):
    """Pad a list of (source ids, target ids) into training arrays.

    Targets are teacher-forced: tgt_in starts with SOS and trails the
    gold sequence by one; tgt_mask flags real (non-PAD) target slots.
    """
    if not items:
        raise EmptyBatch("empty batch")
    b = len(items)
    s_len = max(len(s) for s, _ in items)
    t_len = max(len(t) for _, t in items)
    src_ids = np.zeros((b, s_len), dtype=np.int64)
    src_mask = np.zeros((b, s_len), dtype=np.float32)
    tgt_in = np.full((b, t_len), symbol_vocab.pad, dtype=np.int64)
    tgt_out = np.full((b, t_len), symbol_vocab.pad, dtype=np.int64)
    tgt_mask = np.zeros((b, t_len), dtype=np.float32)
    for r, (src, tgt) in enumerate(items):
        src_ids[r, :len(src)] = src
        src_mask[r, :len(src)] = 1.0
        tgt_out[r, :len(tgt)] = tgt
        tgt_in[r, 0] = symbol_vocab.sos
        tgt_in[r, 1:len(tgt)] = tgt[:-1]
        tgt_mask[r, :len(tgt)] = 1.0
    return src_ids, src_mask, tgt_in, tgt_out, tgt_mask


def greedy_decode(store: ParamStore, config: ModelConfig,
                  token_vocab: TokenVocab, symbol_vocab: SymbolVocab,
                  tokens, max_target_len: int | None = None):
    """Decode one source greedily; argmax each step, stop at EOS.

    Returns (PathSpec, attention matrix) where the matrix has one row
    per emitted path symbol and one column per source token. Reserved
    symbols terminate decoding and are never part of the path.
    """
    tokens = list(tokens) if tokens else [EMPTY_TOKEN]
    if len(tokens) > config.max_source_len:
        raise SourceTooLong(
            f"source has {len(tokens)} tokens, limit is {config.max_source_len}")
    limit = config.max_target_len if max_target_len is None else max_target_len
    src_ids = np.asarray([token_vocab.encode(tokens)], dtype=np.int64)
    src_mask = np.ones_like(src_ids, dtype=np.float32)
    enc = encode_batch(src_ids, src_mask, store, config)
    h, c = enc.final_h, enc.final_c
    prev = symbol_vocab.sos
    reserved = (symbol_vocab.pad, symbol_vocab.sos, symbol_vocab.eos)
    out_symbols = []
    attn_rows = []
    for _ in range(limit):
        logits, h, c, weights = decode_step(
            np.asarray([prev]), h, c, enc, store, config)
        idx = int(np.argmax(logits.data[0]))
        if idx in reserved:
            break
        out_symbols.append(symbol_vocab.symbols[idx])
        attn_rows.append(np.array(weights.data[0], dtype=np.float64))
        prev = idx
    attn = (np.stack(attn_rows) if attn_rows
            else np.zeros((0, len(tokens)), dtype=np.float64))
    path = PathSpec(mode=symbol_vocab.mode, symbols=tuple(out_symbols),
                    terminus=Terminus.TO_PARENT)
    return path, attn


@dataclass
class Checkpoint:
    """A trained model: parameters, resolved config, and both vocabs."""

    params: dict
    config: ModelConfig
    token_vocab: TokenVocab
    symbol_vocab: SymbolVocab
    best_epoch: int = 0
    best_dev_f1: float | None = None
    train_log: list = field(default_factory=list, repr=False)
    _store: ParamStore = field(default=None, repr=False, compare=False)

    def store(self) -> ParamStore:
        if self._store is None:
            dtype = next(iter(self.params.values())).dtype
            s = ParamStore(self.config.seed, dtype=dtype)
            for name in sorted(self.params):
                s.put(name, self.params[name])
            self._store = s
        return self._store

    def decode(self, tokens, max_target_len: int | None = None):
        return greedy_decode(self.store(), self.config, self.token_vocab,
                             self.symbol_vocab, tokens, max_target_len)

    def sidecar(self) -> dict:
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": self.config.to_dict(),
            "token_vocab": self.token_vocab.to_dict(),
            "symbol_vocab": self.symbol_vocab.to_dict(),
            "best_epoch": self.best_epoch,
            "best_dev_f1": self.best_dev_f1,
        }

    def save(self, path) -> None:
        """Binary parameter container plus a JSON sidecar at path.json."""
        write_params(path, self.params)
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Checkpoint":
        params, _ = read_params(path)
        try:
            with open(str(path) + ".json", "r", encoding="utf-8") as fh:
                side = json.load(fh)
        except FileNotFoundError:
            raise CheckpointError(f"missing sidecar {path}.json")
        except json.JSONDecodeError as e:
            raise CheckpointError(f"unreadable sidecar {path}.json: {e}")
        if side.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint format {side.get('format_version')!r}")
        return cls(params=params,
                   config=ModelConfig.from_dict(side["config"]),
                   token_vocab=TokenVocab.from_dict(side["token_vocab"]),
                   symbol_vocab=SymbolVocab.from_dict(side["symbol_vocab"]),
                   best_epoch=side.get("best_epoch", 0),
                   best_dev_f1=side.get("best_dev_f1"))


def _dev_f1(store, config, token_vocab, symbol_vocab, dev_examples, tree):
    """Mean ancestor F1 of greedy decodes against each node's parent."""
    from .evaluation import ancestor_f1
    from .ontology import resolve_path
    total = 0.0
    for ex in dev_examples:
        predicted, _ = greedy_decode(store, config, token_vocab,
                                     symbol_vocab, ex.source)
        reached, _ = resolve_path(tree, predicted)
        gold = tree.parent[ex.node]
        total += ancestor_f1(tree, reached, gold)[2]
    return total / len(dev_examples)


def train(split, tree, config: ModelConfig,
          embeddings: EmbeddingTable | None = None) -> Checkpoint:
    """Fit the model on split.train; returns the checkpoint.

    Vocabularies come from the training sources and the full tree. Every
    eval_every epochs (and after the last) the dev split is decoded and
    scored; the parameters kept are those of the strictly best dev F1,
    or the final ones when dev is empty. epochs=0 yields the freshly
    initialized parameters.
    """
    if not split.train:
        raise EmptyBatch("training split is empty")
    token_vocab = TokenVocab.from_sources([ex.source for ex in split.train])
    symbol_vocab = SymbolVocab.for_tree(tree, config.mode())
    longest = max(len(ex.target) for ex in
                  (split.train + split.dev + split.test))
    config = config.resolved(max_target_len=longest + 1)
    store = build_params(config, len(token_vocab), len(symbol_vocab))
    if config.use_pretrained:
        if embeddings is None:
            raise ConfigError("use_pretrained set but no embeddings given")
        apply_pretrained(store, token_vocab, embeddings)

    items = [encode_example(ex, token_vocab, symbol_vocab, config.max_source_len)
             for ex in split.train]
    opt = RmsPropState(decay=config.rmsprop_decay, eps=config.rmsprop_eps)
    log = []
    best = None   # (f1, epoch, params)
    for epoch in range(config.epochs):
        order = list(range(len(items)))
        Rng(derive_seed(config.seed, "shuffle", epoch)).shuffle(order)
        epoch_loss = 0.0
        epoch_count = 0.0
        for lo in range(0, len(order), config.batch_size):
            chosen = [items[i] for i in order[lo:lo + config.batch_size]]
            arrays = assemble_batch(chosen, symbol_vocab)
            with Tape() as tape:
                loss, count = forward_loss(*arrays, store, config)
                grads = ad.backward(loss, tape, store)
            if not np.isfinite(loss.data):
                raise NumericFailure(f"non-finite loss at epoch {epoch}")
            if config.freeze_embeddings:
                grads["emb.word"][:] = 0.0
            grads, norm = clip_by_global_norm(grads, config.clip_norm)
            if not np.isfinite(norm):
                raise NumericFailure(f"non-finite gradients at epoch {epoch}")
            rmsprop_step(store, grads, opt, config.learning_rate)
            epoch_loss += float(loss.data) * count
            epoch_count += count
        mean_loss = epoch_loss / epoch_count
        dev_f1 = None
        last = epoch == config.epochs - 1
        if split.dev and ((epoch + 1) % config.eval_every == 0 or last):
            dev_f1 = _dev_f1(store, config, token_vocab, symbol_vocab,
                             split.dev, tree)
            if best is None or dev_f1 > best[0]:
                best = (dev_f1, epoch, store.state_dict())
        log.append({"epoch": epoch, "loss": mean_loss, "dev_f1": dev_f1})
    if best is not None:
        f1, best_epoch, params = best
        return Checkpoint(params=params, config=config,
                          token_vocab=token_vocab, symbol_vocab=symbol_vocab,
                          best_epoch=best_epoch, best_dev_f1=f1, train_log=log)
    return Checkpoint(params=store.state_dict(), config=config,
                      token_vocab=token_vocab, symbol_vocab=symbol_vocab,
                      best_epoch=max(config.epochs - 1, 0),
                      best_dev_f1=None, train_log=log)
