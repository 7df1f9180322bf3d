"""Matrix containers and the numeric kernels shared by the recommenders.

Sparse storage is CSR (row-major) backed by :mod:`scipy.sparse`; every kernel
here (cosine, pairwise-complete Pearson, randomized truncated SVD, brute-force
KNN and k-means) is implemented directly on top of numpy.

Binary layout of cached artifacts (all little-endian)::

    dense:  b"MRDM" | u32 version=1 | u64 rows | u64 cols | u8 has_labels
            | rows*cols f64 (row-major) | [rows i64 labels]
    svd:    b"MRSV" | u32 version=1 | u64 k | u64 rows | u64 cols | u8 has_labels
            | k f64 singular values | rows*k f64 latent | k*cols f64 basis
            | [rows i64 labels]
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_SEED = 42
SVD_OVERSAMPLES = 10
SVD_POWER_ITERATIONS = 10
# Ranked scores are snapped to this many decimals so values that differ only
# by floating-point rounding tie, and ties fall back to ascending label.
SCORE_DECIMALS = 12


class SparseVector(NamedTuple):
    """Labeled sparse column/row: strictly increasing ``indices`` with ``values``."""

    indices: np.ndarray
    values: np.ndarray

    @classmethod
    def from_dict(cls, d: dict[int, float]) -> "SparseVector":
        keys = sorted(d)
        return cls(np.asarray(keys, dtype=np.int64), np.asarray([d[k] for k in keys], dtype=np.float64))


class Neighbor(NamedTuple):
    movie: int
    value: float  # similarity (descending lists) or distance (ascending lists)


class SparseMatrix:
    """Immutable CSR matrix with optional integer row/column labels.

    Explicit zeros are dropped and column indices kept strictly increasing.
    """

    def __init__(self, csr, row_labels=None, col_labels=None):
        m = sp.csr_matrix(csr, dtype=np.float64, copy=True)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        if not np.all(np.isfinite(m.data)):
            raise ValueError("sparse matrix values must be finite")
        self._csr = m
        self._sq_norms = None
        self.row_labels = None if row_labels is None else np.asarray(row_labels, dtype=np.int64)
        self.col_labels = None if col_labels is None else np.asarray(col_labels, dtype=np.int64)
        if self.row_labels is not None and len(self.row_labels) != m.shape[0]:
            raise ValueError("row_labels length does not match n_rows")
        if self.col_labels is not None and len(self.col_labels) != m.shape[1]:
            raise ValueError("col_labels length does not match n_cols")

    @classmethod
    def from_triplets(cls, rows, cols, values, shape, row_labels=None, col_labels=None):
        coo = sp.coo_matrix((np.asarray(values, dtype=np.float64), (rows, cols)), shape=shape)
        return cls(coo.tocsr(), row_labels, col_labels)

    @classmethod
    def from_dense(cls, a, row_labels=None, col_labels=None):
        return cls(sp.csr_matrix(np.asarray(a, dtype=np.float64)), row_labels, col_labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self._csr.shape

    @property
    def n_rows(self) -> int:
        return self._csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self._csr.shape[1]

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def csr(self) -> sp.csr_matrix:
        return self._csr

    def row(self, i: int) -> SparseVector:
        lo, hi = self._csr.indptr[i], self._csr.indptr[i + 1]
        return SparseVector(self._csr.indices[lo:hi].astype(np.int64), self._csr.data[lo:hi].copy())

    def row_dense(self, i: int) -> np.ndarray:
        return self._csr.getrow(i).toarray().ravel()

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def take_rows(self, idx) -> "SparseMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        labels = None if self.row_labels is None else self.row_labels[idx]
        return SparseMatrix(self._csr[idx], labels, self.col_labels)

    def row_index(self, label: int) -> int:
        if self.row_labels is None:
            raise KeyError(label)
        pos = np.searchsorted(self.row_labels, label)
        if pos >= len(self.row_labels) or self.row_labels[pos] != label:
            # labels are not necessarily sorted
            hits = np.flatnonzero(self.row_labels == label)
            if len(hits) == 0:
                raise KeyError(label)
            return int(hits[0])
        return int(pos)

    def squared_row_norms(self) -> np.ndarray:
        # Same sequential accumulation as the row dot products in
        # row_dots, so identical rows give bit-identical dot and norm².
        if self._sq_norms is None:
            sq = self._csr.multiply(self._csr).tocsr()
            sq.sort_indices()
            self._sq_norms = sq @ np.ones(self.n_cols)
        return self._sq_norms

    def row_dots(self, i: int) -> np.ndarray:
        return self._csr @ self.row_dense(i)


@dataclass(frozen=True)
class DenseMatrix:
    values: np.ndarray
    row_labels: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("DenseMatrix needs a 2-D array")
        if not np.all(np.isfinite(v)):
            raise ValueError("DenseMatrix values must be finite")
        object.__setattr__(self, "values", v)
        if self.row_labels is not None:
            labels = np.asarray(self.row_labels, dtype=np.int64)
            if len(labels) != v.shape[0]:
                raise ValueError("row_labels length does not match n_rows")
            object.__setattr__(self, "row_labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SvdFactors:
    """Rank-k factors: ``latent`` = U_k·diag(S), ``basis`` = V_kᵀ."""

    singular_values: np.ndarray
    latent: DenseMatrix
    basis: DenseMatrix

    @property
    def k(self) -> int:
        return len(self.singular_values)

    def reconstruct(self) -> np.ndarray:
        return self.latent.values @ self.basis.values


# --------------------------------------------------------------------------
# similarity kernels


def _as_vector(x) -> np.ndarray:
    if sp.issparse(x):
        return np.asarray(x.toarray()).ravel().astype(np.float64)
    return np.asarray(x, dtype=np.float64).ravel()


def cosine(x, y) -> float:
    """x·y / (|x||y|); 0.0 when either vector is all zeros."""
    x, y = _as_vector(x), _as_vector(y)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    # Pre-scaling keeps the squared norms clear of underflow and overflow.
    sx = float(np.max(np.abs(x))) if x.size else 0.0
    sy = float(np.max(np.abs(y))) if y.size else 0.0
    if sx == 0.0 or sy == 0.0:
        return 0.0
    x, y = x / sx, y / sy
    xx = float(np.dot(x, x))
    yy = float(np.dot(y, y))
    if xx == 0.0 or yy == 0.0:
        return 0.0
    # sqrt(xx*yy) rather than sqrt(xx)*sqrt(yy): self-similarity comes out exactly 1.
    c = float(np.dot(x, y)) / math.sqrt(xx * yy)
    return min(1.0, max(-1.0, c))


def cosine_to_rows(mat: SparseMatrix | DenseMatrix | np.ndarray, query) -> np.ndarray:
    """Cosine between ``query`` and every row of ``mat`` (0 for zero rows)."""
    if isinstance(mat, SparseMatrix):
        q = _as_vector(query)
        dots = mat.csr @ q
        norms = mat.squared_row_norms()
        qq = float(q @ q)
    else:
        a = mat.values if isinstance(mat, DenseMatrix) else np.asarray(mat, dtype=np.float64)
        q = _as_vector(query)
        dots = a @ q
        norms = np.einsum("ij,ij->i", a, a)
        qq = float(q @ q)
    denom = np.sqrt(norms * qq)
    out = np.zeros(len(dots))
    ok = denom > 0
    out[ok] = dots[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def sparse_row_cosines(mat: SparseMatrix, i: int) -> np.ndarray:
    """Cosine between row ``i`` and every row; bit-exact 1.0 for duplicate rows."""
    dots = mat.row_dots(i)
    norms = mat.squared_row_norms()
    denom = np.sqrt(norms * norms[i])
    out = np.zeros(mat.n_rows)
    ok = denom > 0
    out[ok] = dots[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def pearson_pairwise(a: SparseVector, b: SparseVector, min_overlap: int = 1) -> float | None:
    """Pearson r over the positions stored in both vectors.

    Returns None when the overlap is shorter than ``min_overlap`` (or below 2)
    or either restricted vector is constant.
    """
    common, ia, ib = np.intersect1d(a.indices, b.indices, assume_unique=True, return_indices=True)
    n = len(common)
    if n < max(min_overlap, 2):
        return None
    x = np.asarray(a.values, dtype=np.float64)[ia]
    y = np.asarray(b.values, dtype=np.float64)[ib]
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


# --------------------------------------------------------------------------
# randomized truncated SVD


def _as_operator(mat):
    if isinstance(mat, SparseMatrix):
        return mat.csr, mat.row_labels
    if isinstance(mat, DenseMatrix):
        return mat.values, mat.row_labels
    if sp.issparse(mat):
        return sp.csr_matrix(mat, dtype=np.float64), None
    return np.asarray(mat, dtype=np.float64), None


def truncated_svd(
    mat,
    k: int,
    seed: int = DEFAULT_SEED,
    oversamples: int = SVD_OVERSAMPLES,
    power_iterations: int = SVD_POWER_ITERATIONS,
) -> SvdFactors:
    """Rank-``k`` SVD by a randomized range finder.

    Gaussian test matrix of width ``k + oversamples``, QR-normalized subspace
    (power) iterations, then an exact SVD of the small projected matrix.
    """
    a, labels = _as_operator(mat)
    n_rows, n_cols = a.shape
    if not 1 <= k <= min(n_rows, n_cols):
        raise ValueError(f"k must lie in [1, {min(n_rows, n_cols)}], got {k}")
    width = min(k + oversamples, n_rows, n_cols)
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((n_cols, width))
    q, _ = np.linalg.qr(np.asarray(a @ omega))
    for _ in range(power_iterations):
        z, _ = np.linalg.qr(np.asarray(a.T @ q))
        q, _ = np.linalg.qr(np.asarray(a @ z))
    b = np.asarray((a.T @ q).T)  # qᵀa without materialising aᵀ for sparse a
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    ub, s, vt = ub[:, :k], s[:k], vt[:k]
    # Fix the sign ambiguity: largest-magnitude entry of each basis row positive.
    signs = np.sign(vt[np.arange(k), np.argmax(np.abs(vt), axis=1)])
    signs[signs == 0] = 1.0
    ub, vt = ub * signs, vt * signs[:, None]
    latent = (q @ ub) * s
    return SvdFactors(
        singular_values=np.maximum(s, 0.0),
        latent=DenseMatrix(latent, labels),
        basis=DenseMatrix(vt),
    )


# --------------------------------------------------------------------------
# nearest neighbours


def rank_neighbors(labels: np.ndarray, values: np.ndarray, n: int, descending: bool) -> list[Neighbor]:
    """Top ``n`` (label, value) pairs; ties broken by ascending label."""
    labels = np.asarray(labels, dtype=np.int64)
    values = np.round(np.asarray(values, dtype=np.float64), SCORE_DECIMALS) + 0.0  # + 0.0 drops -0.0
    key = -values if descending else values
    order = np.lexsort((labels, key))[:n]
    return [Neighbor(int(labels[j]), float(values[j])) for j in order]


def knn_brute(mat: SparseMatrix, query_row: int, k: int) -> list[Neighbor]:
    """``k`` nearest rows by cosine distance, excluding ``query_row``.

    ``Neighbor.movie`` is the row label when the matrix has labels, else the
    row index.
    """
    if not 0 <= query_row < mat.n_rows:
        raise IndexError(f"query_row {query_row} out of range for {mat.n_rows} rows")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > mat.n_rows - 1:
        warnings.warn(f"k={k} exceeds the {mat.n_rows - 1} other rows; truncating", stacklevel=2)
        k = mat.n_rows - 1
    dist = 1.0 - sparse_row_cosines(mat, query_row)
    labels = mat.row_labels if mat.row_labels is not None else np.arange(mat.n_rows)
    keep = np.arange(mat.n_rows) != query_row
    return rank_neighbors(labels[keep], dist[keep], k, descending=False)


# --------------------------------------------------------------------------
# k-means


@dataclass(frozen=True)
class KMeansResult:
    assignments: np.ndarray
    centroids: DenseMatrix
    inertia: float
    n_iter: int
    history: tuple[float, ...]  # inertia after every assignment step


def _sq_distances(x: np.ndarray, c: np.ndarray, chunk: int = 4096) -> np.ndarray:
    # Direct differences (no |x|²-2x·c+|c|² expansion): identical points get
    # bit-identical distances and therefore identical labels.
    out = np.empty((x.shape[0], c.shape[0]))
    for lo in range(0, x.shape[0], chunk):
        diff = x[lo:lo + chunk, None, :] - c[None, :, :]
        out[lo:lo + chunk] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def _kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sq_distances(x, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        closest = np.minimum(closest, _sq_distances(x, centers[j:j + 1])[:, 0])
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int) -> KMeansResult:
    k = centers.shape[0]
    d = _sq_distances(x, centers)
    labels = np.argmin(d, axis=1)
    history = [float(d[np.arange(len(x)), labels].sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = np.empty_like(centers)
        point_dist = d[np.arange(len(x)), labels]
        taken: set[int] = set()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
        for j in range(k):
            if not (labels == j).any():
                # Empty cluster: re-seed at the point farthest from its centroid.
                order = np.lexsort((np.arange(len(x)), -point_dist))
                pick = next(int(i) for i in order if int(i) not in taken)
                taken.add(pick)
                new[j] = x[pick]
        centers = new
        d = _sq_distances(x, centers)
        new_labels = np.argmin(d, axis=1)
        history.append(float(d[np.arange(len(x)), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    inertia = float(d[np.arange(len(x)), labels].sum())
    return KMeansResult(labels.astype(np.int64), DenseMatrix(centers), inertia, n_iter, tuple(history))


def kmeans(
    mat: DenseMatrix | np.ndarray,
    k: int,
    seed: int = DEFAULT_SEED,
    max_iter: int = 300,
    n_init: int = 10,
) -> KMeansResult:
    """Lloyd's k-means from k-means++ seeds; best of ``n_init`` seeded restarts."""
    x = mat.values if isinstance(mat, DenseMatrix) else np.asarray(mat, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("kmeans needs a 2-D matrix")
    if not 1 <= k <= x.shape[0]:
        raise ValueError(f"k must lie in [1, {x.shape[0]}], got {k}")
    if max_iter < 1 or n_init < 1:
        raise ValueError("max_iter and n_init must be >= 1")
    rng = np.random.default_rng(seed)
    best: KMeansResult | None = None
    for _ in range(n_init):
        result = _lloyd(x, _kmeans_plusplus(x, k, rng), max_iter)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def inertia_curve(
    mat: DenseMatrix | np.ndarray, k_max: int, seed: int = DEFAULT_SEED, n_init: int = 10
) -> list[tuple[int, float]]:
    x = mat.values if isinstance(mat, DenseMatrix) else np.asarray(mat)
    if not 1 <= k_max <= x.shape[0]:
        raise ValueError(f"k_max must lie in [1, {x.shape[0]}], got {k_max}")
    return [(k, kmeans(x, k, seed=seed, n_init=n_init).inertia) for k in range(1, k_max + 1)]


# --------------------------------------------------------------------------
# binary artifacts

_DENSE_MAGIC = b"MRDM"
_SVD_MAGIC = b"MRSV"
_VERSION = 1


def _read_array(fh, count: int, dtype: str) -> np.ndarray:
    size = np.dtype(dtype).itemsize * count
    buf = fh.read(size)
    if len(buf) != size:
        raise ValueError("truncated matrix artifact")
    native = np.float64 if dtype.endswith("f8") else np.int64
    return np.frombuffer(buf, dtype=dtype).astype(native)


def save_dense(m: DenseMatrix, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_DENSE_MAGIC + struct.pack("<IQQ", _VERSION, m.n_rows, m.n_cols))
        fh.write(struct.pack("<B", m.row_labels is not None))
        fh.write(m.values.astype("<f8").tobytes())
        if m.row_labels is not None:
            fh.write(m.row_labels.astype("<i8").tobytes())


def load_dense(path: str | Path) -> DenseMatrix:
    with open(path, "rb") as fh:
        if fh.read(4) != _DENSE_MAGIC:
            raise ValueError(f"{path}: not a dense matrix artifact")
        version, rows, cols = struct.unpack("<IQQ", fh.read(20))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (flag,) = struct.unpack("<B", fh.read(1))
        values = _read_array(fh, rows * cols, "<f8").reshape(rows, cols)
        labels = _read_array(fh, rows, "<i8") if flag else None
    return DenseMatrix(values, labels)


def save_svd(f: SvdFactors, path: str | Path) -> None:
    latent = f.latent
    with open(path, "wb") as fh:
        fh.write(_SVD_MAGIC + struct.pack("<IQQQ", _VERSION, f.k, latent.n_rows, f.basis.n_cols))
        fh.write(struct.pack("<B", latent.row_labels is not None))
        fh.write(np.asarray(f.singular_values, dtype="<f8").tobytes())
        fh.write(latent.values.astype("<f8").tobytes())
        fh.write(f.basis.values.astype("<f8").tobytes())
        if latent.row_labels is not None:
            fh.write(latent.row_labels.astype("<i8").tobytes())


def load_svd(path: str | Path) -> SvdFactors:
    with open(path, "rb") as fh:
        if fh.read(4) != _SVD_MAGIC:
            raise ValueError(f"{path}: not an SVD artifact")
        version, k, rows, cols = struct.unpack("<IQQQ", fh.read(28))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (flag,) = struct.unpack("<B", fh.read(1))
        s = _read_array(fh, k, "<f8")
        latent = _read_array(fh, rows * k, "<f8").reshape(rows, k)
        basis = _read_array(fh, k * cols, "<f8").reshape(k, cols)
        labels = _read_array(fh, rows, "<i8") if flag else None
    return SvdFactors(s, DenseMatrix(latent, labels), DenseMatrix(basis))


def stack_rows(vectors: Sequence[SparseVector], n_cols: int, row_labels=None) -> SparseMatrix:
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    for i, v in enumerate(vectors):
        indptr[i + 1] = indptr[i] + len(v.indices)
    indices = np.concatenate([v.indices for v in vectors]) if vectors else np.zeros(0, np.int64)
    data = np.concatenate([v.values for v in vectors]) if vectors else np.zeros(0)
    csr = sp.csr_matrix((data, indices, indptr), shape=(len(vectors), n_cols))
    return SparseMatrix(csr, row_labels)
