"""Parameter management, recurrent cells, optimization, and persistence.

Initialization is a pure function of (seed, parameter name, shape):
each parameter draws from its own splitmix64 stream, so adding or
reordering parameters never perturbs the values of the others.
"""

from __future__ import annotations

import struct

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .errors import CheckpointError, ShapeMismatch
from .rng import Rng, derive_seed, uniform_block

WIDE = np.float64    # gradient-check precision
NARROW = np.float32  # training precision

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}

PARAM_FORMAT_MAGIC = b"TXPPAR\x00\x01"
PARAM_FORMAT_VERSION = 1


def glorot_uniform(seed: int, name: str, shape: tuple) -> np.ndarray:
    """Uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out)).

    Rank-2 shapes use (rows, cols) as the fans; rank-1 shapes act as
    column vectors (fan_out = 1). The draw depends only on the three
    arguments, never on creation order.
    """
    if len(shape) == 2:
        fan_in, fan_out = shape
    elif len(shape) == 1:
        fan_in, fan_out = shape[0], 1
    else:
        raise ShapeMismatch(f"parameters must be rank 1 or 2, got {shape}")
    r = np.sqrt(6.0 / (fan_in + fan_out))
    size = int(np.prod(shape))
    u = uniform_block(derive_seed(seed, "param", name), size)
    return ((u * 2.0 - 1.0) * r).reshape(shape)


class ParamStore:
    """Named trainable tensors with deterministic seeded creation."""

    def __init__(self, seed: int, dtype=NARROW):
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, shape: tuple) -> Tensor:
        if name in self._params:
            raise ShapeMismatch(f"duplicate parameter name {name!r}")
        t = Tensor(glorot_uniform(self.seed, name, tuple(shape)).astype(self.dtype))
        self._params[name] = t
        return t

    def put(self, name: str, values) -> Tensor:
        """Install explicit values (pretrained rows, loaded checkpoints)."""
        t = Tensor(np.asarray(values, dtype=self.dtype))
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        """(name, tensor) pairs in sorted name order."""
        for name in self.names():
            yield name, self._params[name]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: np.array(t.data, copy=True) for name, t in self.items()}

    def scalar_count(self) -> int:
        return sum(t.data.size for t in self._params.values())


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              wx: Tensor, wh: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step for a batch of rows.

    Gate pre-activations sit in four contiguous column blocks ordered
    input, forget, output, candidate. Returns (h, c).
    """
    hidden = wx.data.shape[1] // 4
    z = ad.add(ad.add(ad.matmul(x, wx), ad.matmul(h_prev, wh)), b)
    i = ad.sigmoid(ad.slice_cols(z, 0, hidden))
    f = ad.sigmoid(ad.slice_cols(z, hidden, 2 * hidden))
    o = ad.sigmoid(ad.slice_cols(z, 2 * hidden, 3 * hidden))
    g = ad.tanh(ad.slice_cols(z, 3 * hidden, 4 * hidden))
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h = ad.mul(o, ad.tanh(c))
    return h, c


def global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float):
    """Scale all gradients so their joint norm is at most max_norm.

    Returns (grads, norm_before_clipping). max_norm <= 0 disables
    clipping.
    """
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        grads = {k: g * g.dtype.type(factor) for k, g in grads.items()}
    return grads, norm


class RmsPropState:
    """Per-parameter squared-gradient accumulators."""

    def __init__(self, decay: float = 0.9, eps: float = 1e-8):
        self.decay = decay
        self.eps = eps
        self.acc: dict[str, np.ndarray] = {}


def rmsprop_step(store: ParamStore, grads: dict[str, np.ndarray],
                 state: RmsPropState, lr: float) -> None:
    """acc <- d*acc + (1-d)*g^2;  p <- p - lr * g / sqrt(acc + eps)."""
    for name, param in store.items():
        g = grads[name]
        acc = state.acc.get(name)
        if acc is None:
            acc = np.zeros_like(param.data)
            state.acc[name] = acc
        acc *= state.decay
        acc += (1.0 - state.decay) * g * g
        param.data -= lr * g / np.sqrt(acc + state.eps)


def finite_diff_check(loss_fn, store: ParamStore, eps: float = 1e-5,
                      max_scalars: int = 10000, sample_seed: int = 0) -> float:
    """Compare tape gradients against central differences.

    loss_fn must be a deterministic closure over `store` returning a
    scalar Tensor. Every parameter scalar is probed, or a seeded sample
    of max_scalars when the store is larger. Returns the worst relative
    error |a - fd| / (|a| + |fd| + 1e-12).
    """
    with Tape() as tape:
        loss = loss_fn()
        grads = backward(loss, tape, store)
    coords = [(name, i) for name, p in store.items() for i in range(p.data.size)]
    if len(coords) > max_scalars:
        coords = Rng(derive_seed(sample_seed, "fdcheck")).sample(coords, max_scalars)
    worst = 0.0
    for name, i in coords:
        data = store[name].data
        orig = data.flat[i]
        data.flat[i] = orig + eps
        up = float(loss_fn().data)
        data.flat[i] = orig - eps
        down = float(loss_fn().data)
        data.flat[i] = orig
        fd = (up - down) / (2.0 * eps)
        a = float(grads[name].flat[i])
        rel = abs(a - fd) / (abs(a) + abs(fd) + 1e-12)
        if rel > worst:
            worst = rel
    return worst


def write_params(path, params: dict[str, np.ndarray]) -> None:
    """Serialize named arrays to the binary container.

    Layout: magic, version (u32), dtype code (u8), record count (u32),
    then per record: name length (u32), utf-8 name, rank (u32), each
    dim (u32), raw little-endian payload. Records are sorted by name.
    All integers are little-endian.
    """
    names = sorted(params)
    if not names:
        raise CheckpointError("refusing to write an empty parameter set")
    dtypes = {np.dtype(params[n].dtype) for n in names}
    if len(dtypes) != 1:
        raise CheckpointError(f"mixed parameter dtypes: {sorted(map(str, dtypes))}")
    dtype = dtypes.pop()
    if dtype not in _CODE_FOR:
        raise CheckpointError(f"unsupported parameter dtype {dtype}")
    with open(path, "wb") as fh:
        fh.write(PARAM_FORMAT_MAGIC)
        fh.write(struct.pack("<I", PARAM_FORMAT_VERSION))
        fh.write(struct.pack("<B", _CODE_FOR[dtype]))
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            arr = params[name]
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(np.ascontiguousarray(arr, dtype=dtype.newbyteorder("<")).tobytes())


def read_params(path) -> tuple[dict[str, np.ndarray], np.dtype]:
    """Inverse of write_params; round-trips bit-exactly."""
    def take(fh, n, what):
        buf = fh.read(n)
        if len(buf) != n:
            raise CheckpointError(f"truncated container while reading {what}")
        return buf

    with open(path, "rb") as fh:
        if take(fh, len(PARAM_FORMAT_MAGIC), "magic") != PARAM_FORMAT_MAGIC:
            raise CheckpointError(f"{path}: not a parameter container")
        version = struct.unpack("<I", take(fh, 4, "version"))[0]
        if version != PARAM_FORMAT_VERSION:
            raise CheckpointError(f"unsupported container version {version}")
        code = struct.unpack("<B", take(fh, 1, "dtype"))[0]
        if code not in _DTYPE_CODES:
            raise CheckpointError(f"unknown dtype code {code}")
        dtype = _DTYPE_CODES[code]
        count = struct.unpack("<I", take(fh, 4, "count"))[0]
        params = {}
        for _ in range(count):
            name_len = struct.unpack("<I", take(fh, 4, "name length"))[0]
            name = take(fh, name_len, "name").decode("utf-8")
            rank = struct.unpack("<I", take(fh, 4, "rank"))[0]
            shape = tuple(struct.unpack("<I", take(fh, 4, "dim"))[0]
                          for _ in range(rank))
            size = int(np.prod(shape)) if shape else 1
            raw = take(fh, size * dtype.itemsize, f"payload of {name!r}")
            params[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError("trailing bytes after last record")
    return params, np.dtype(dtype.newbyteorder("="))
