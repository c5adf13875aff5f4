"""Pretrained word vectors: loading, lookup, and PCA reduction.

The on-disk layout is the common text format: one token per line
followed by its vector components, with an optional leading header line
holding just the vocabulary size and dimension. Out-of-vocabulary
lookups return the zero vector so downstream code never branches on
membership.

PCA runs on a covariance eigendecomposition computed by a cyclic Jacobi
sweep written here; numpy's solver is deliberately not used so tests
can hold it up as an independent oracle.
"""

from __future__ import annotations

import warnings

import numpy as np

from .errors import DimensionMismatch, MalformedLine, RankDeficientWarning


class EmbeddingTable:
    """Token -> dense vector map with zero-vector OOV semantics."""

    def __init__(self, dim: int):
        if dim <= 0:
            raise DimensionMismatch(f"embedding dim must be positive, got {dim}")
        self.dim = dim
        self._index: dict[str, int] = {}
        self._rows: list[np.ndarray] = []
        self._zero = np.zeros(dim, dtype=np.float64)

    def add(self, token: str, vector) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise DimensionMismatch(
                f"vector for {token!r} has shape {vector.shape}, expected ({self.dim},)")
        if token in self._index:
            return   # first occurrence wins
        self._index[token] = len(self._rows)
        self._rows.append(vector)

    def lookup(self, token: str) -> np.ndarray:
        i = self._index.get(token)
        return self._zero if i is None else self._rows[i]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __len__(self) -> int:
        return len(self._rows)

    def tokens(self) -> list[str]:
        return list(self._index)

    def matrix(self) -> np.ndarray:
        """All vectors stacked in insertion order, shape (n, dim)."""
        if not self._rows:
            return np.zeros((0, self.dim), dtype=np.float64)
        return np.stack(self._rows)


def load_embeddings(path, expected_dim: int | None = None) -> EmbeddingTable:
    """Read a text-format vector file.

    Bad component counts or non-numeric values raise MalformedLine with
    the 1-based line number; a dimension disagreeing with expected_dim
    raises DimensionMismatch. Duplicate tokens keep the first vector.
    """
    table = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split()
            if lineno == 1 and len(parts) == 2:
                try:
                    int(parts[0]), int(parts[1])
                except ValueError:
                    pass
                else:
                    # header line: count and dimension
                    dim = int(parts[1])
                    if expected_dim is not None and dim != expected_dim:
                        raise DimensionMismatch(
                            f"file declares dim {dim}, expected {expected_dim}")
                    table = EmbeddingTable(dim)
                    continue
            if len(parts) < 2:
                raise MalformedLine(f"line {lineno}: no vector components")
            token = parts[0]
            try:
                vector = np.array([float(p) for p in parts[1:]], dtype=np.float64)
            except ValueError:
                raise MalformedLine(f"line {lineno}: non-numeric vector component")
            if table is None:
                if expected_dim is not None and vector.shape[0] != expected_dim:
                    raise DimensionMismatch(
                        f"line {lineno}: vector has dim {vector.shape[0]}, "
                        f"expected {expected_dim}")
                table = EmbeddingTable(vector.shape[0])
            if vector.shape[0] != table.dim:
                raise DimensionMismatch(
                    f"line {lineno}: vector has dim {vector.shape[0]}, "
                    f"expected {table.dim}")
            table.add(token, vector)
    if table is None:
        raise MalformedLine(f"{path}: no vectors found")
    return table


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors) with eigenvectors in columns,
    unordered. The sweep visits upper-triangle pivots in fixed row-major
    order, so the result is deterministic.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionMismatch(f"matrix must be square, got {a.shape}")
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale_ref = np.abs(a).max() or 1.0
    for _ in range(max_sweeps):
        off = np.sqrt(max((a ** 2).sum() - (a.diagonal() ** 2).sum(), 0.0))
        if off <= tol * scale_ref:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= tol * scale_ref * 1e-4:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if t == 0.0:
                    t = 1.0   # theta == 0: rotate by pi/4
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/cols p and q of a, and cols p and q of v
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return a.diagonal().copy(), v


def pca_reduce(table: EmbeddingTable, k: int) -> EmbeddingTable:
    """Project a table onto its top-k principal components.

    Vectors are centered, the covariance eigenbasis comes from
    jacobi_eigh, components are ordered by descending eigenvalue, and
    each component's sign is fixed so its largest-magnitude entry is
    positive. Requesting more components than the data's rank warns
    (RankDeficientWarning) and proceeds.
    """
    if k <= 0 or k > table.dim:
        raise DimensionMismatch(
            f"cannot reduce dim {table.dim} to {k}")
    x = table.matrix()
    if x.shape[0] < k + 1:
        raise DimensionMismatch(
            f"PCA onto {k} components needs at least {k + 1} vectors, "
            f"got {x.shape[0]}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / x.shape[0]
    eigvals, eigvecs = jacobi_eigh(cov)
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    positive = int((eigvals > max(eigvals[0], 1.0) * 1e-12).sum()) if eigvals.size else 0
    if positive < k:
        warnings.warn(
            f"data supports only {positive} informative components, "
            f"requested {k}", RankDeficientWarning, stacklevel=2)
    components = eigvecs[:, :k]
    for j in range(k):
        col = components[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            components[:, j] = -col
    projected = xc @ components
    out = EmbeddingTable(k)
    for token, row in zip(table.tokens(), projected):
        out.add(token, row)
    return out
