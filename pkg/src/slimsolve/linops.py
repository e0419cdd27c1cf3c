"""Row-block access to linear least-squares systems.

A system (A, b) with A of shape (m, n) is partitioned into M blocks of
``ell`` consecutive rows each (m must be divisible by ell; non-uniform
partitions are rejected because every solver and every theory constant
in this package assumes uniform block weights).  Block indices are
1-based throughout the public API.

Operators come in two access modes:

* ``random_access``: any block may be fetched any number of times, and
  repeated fetches of the same index return bit-identical data.
* ``single_pass``: blocks must be consumed exactly once, in order
  1..M; this models streamed acquisition.  Header metadata (m, n, M,
  ell) is available up front so solvers can size their buffers.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

STREAM_MAGIC = b"SLIM1"


class StreamOrderError(RuntimeError):
    """A single-pass operator was asked for an out-of-order block."""


@dataclass(frozen=True)
class SampleBlock:
    """One sampled pair (A_k, b_k) plus the 1-based block index."""

    block_index: int
    a_block: np.ndarray  # (ell, n)
    b_block: np.ndarray  # (ell,)

    def __post_init__(self):
        if self.a_block.shape[0] != self.b_block.shape[0]:
            raise ValueError(
                "a_block and b_block row counts disagree: "
                f"{self.a_block.shape[0]} vs {self.b_block.shape[0]}"
            )

    @property
    def n_rows(self) -> int:
        return self.a_block.shape[0]

    @property
    def n_cols(self) -> int:
        return self.a_block.shape[1]


def gram_block(blk: SampleBlock) -> np.ndarray:
    """Exact n-by-n block Gram matrix A_k^T A_k."""
    a = blk.a_block
    return a.T @ a


def _check_partition(m: int, ell: int) -> int:
    if ell < 1:
        raise ValueError(f"block size must be >= 1, got {ell}")
    if m % ell != 0:
        raise ValueError(
            f"m = {m} is not divisible by block size ell = {ell}; "
            "only uniform partitions are supported"
        )
    return m // ell


class RowBlockOperator:
    """Base class; concrete operators implement ``fetch_block``."""

    n_rows: int
    n_cols: int
    n_blocks: int
    block_rows: int
    access_mode: str  # "random_access" or "single_pass"

    def row_range(self, i: int) -> tuple[int, int]:
        """Half-open row range [start, stop) of 1-based block i."""
        self._check_index(i)
        start = (i - 1) * self.block_rows
        return start, start + self.block_rows

    def _check_index(self, i: int):
        if not 1 <= i <= self.n_blocks:
            raise IndexError(
                f"block index {i} out of range 1..{self.n_blocks}"
            )

    def fetch_block(self, i: int) -> SampleBlock:
        raise NotImplementedError

    def has_rhs(self) -> bool:
        raise NotImplementedError

    # -- dense products, assembled block-wise (random access only) --

    def _require_random_access(self, what: str):
        if self.access_mode != "random_access":
            raise RuntimeError(f"{what} requires a random_access operator")

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Exact product A x, assembled block by block."""
        self._require_random_access("apply")
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_cols,):
            raise ValueError(
                f"x has shape {x.shape}, expected ({self.n_cols},)"
            )
        out = np.empty(self.n_rows)
        for i in range(1, self.n_blocks + 1):
            start, stop = self.row_range(i)
            out[start:stop] = self.fetch_block(i).a_block @ x
        return out

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        """Exact product A^T y, assembled block by block."""
        self._require_random_access("apply_adjoint")
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n_rows,):
            raise ValueError(
                f"y has shape {y.shape}, expected ({self.n_rows},)"
            )
        out = np.zeros(self.n_cols)
        for i in range(1, self.n_blocks + 1):
            start, stop = self.row_range(i)
            out += self.fetch_block(i).a_block.T @ y[start:stop]
        return out

    def blocks(self):
        """Iterate over all blocks in index order."""
        for i in range(1, self.n_blocks + 1):
            yield self.fetch_block(i)


class DenseBlockOperator(RowBlockOperator):
    """Random-access operator over a dense matrix held in memory."""

    access_mode = "random_access"

    def __init__(self, a: np.ndarray, ell: int, b: np.ndarray | None = None):
        a = np.array(a, dtype=float, order="C")
        if a.ndim != 2:
            raise ValueError("A must be a 2-D array")
        a.flags.writeable = False
        self._a = a
        self.n_rows, self.n_cols = a.shape
        self.block_rows = int(ell)
        self.n_blocks = _check_partition(self.n_rows, self.block_rows)
        self._b = None
        if b is not None:
            self._bind_rhs(b)

    def _bind_rhs(self, b: np.ndarray):
        b = np.array(b, dtype=float).reshape(-1)
        if b.shape != (self.n_rows,):
            raise ValueError(
                f"b has length {b.shape[0]}, expected {self.n_rows}"
            )
        b.flags.writeable = False
        self._b = b

    def with_rhs(self, b: np.ndarray) -> "DenseBlockOperator":
        """Copy of this operator with the right-hand side bound."""
        op = DenseBlockOperator.__new__(DenseBlockOperator)
        op._a = self._a
        op.n_rows, op.n_cols = self.n_rows, self.n_cols
        op.block_rows, op.n_blocks = self.block_rows, self.n_blocks
        op._b = None
        op._bind_rhs(b)
        return op

    def has_rhs(self) -> bool:
        return self._b is not None

    @property
    def matrix(self) -> np.ndarray:
        return self._a

    @property
    def rhs(self) -> np.ndarray:
        if self._b is None:
            raise ValueError("operator has no right-hand side bound")
        return self._b

    def fetch_block(self, i: int) -> SampleBlock:
        self._check_index(i)
        if self._b is None:
            raise ValueError(
                "operator has no right-hand side bound; use with_rhs(b)"
            )
        cache = self.__dict__.setdefault("_block_cache", {})
        blk = cache.get(i)
        if blk is None:
            start, stop = self.row_range(i)
            # views into the frozen arrays, so repeated fetches are
            # bit-identical by construction
            blk = SampleBlock(i, self._a[start:stop], self._b[start:stop])
            cache[i] = blk
        return blk


class SparseBlockOperator(RowBlockOperator):
    """Random-access operator over per-block sparse matrices.

    Used by the tomography projectors, where each block (one view) is
    extremely sparse.  Fetches densify on demand; the densification is
    deterministic, so repeated fetches stay bit-identical.
    """

    access_mode = "random_access"

    def __init__(self, blocks: list, b: np.ndarray | None = None):
        if not blocks:
            raise ValueError("need at least one block")
        self._blocks = [sp.csr_matrix(blk) for blk in blocks]
        ell, n = self._blocks[0].shape
        for blk in self._blocks:
            if blk.shape != (ell, n):
                raise ValueError("all blocks must share the same shape")
        self.block_rows = ell
        self.n_cols = n
        self.n_blocks = len(blocks)
        self.n_rows = ell * self.n_blocks
        self._b = None
        if b is not None:
            self._bind_rhs(b)

    def _bind_rhs(self, b: np.ndarray):
        b = np.array(b, dtype=float).reshape(-1)
        if b.shape != (self.n_rows,):
            raise ValueError(
                f"b has length {b.shape[0]}, expected {self.n_rows}"
            )
        b.flags.writeable = False
        self._b = b

    def with_rhs(self, b: np.ndarray) -> "SparseBlockOperator":
        op = SparseBlockOperator.__new__(SparseBlockOperator)
        op._blocks = self._blocks
        op.block_rows, op.n_cols = self.block_rows, self.n_cols
        op.n_blocks, op.n_rows = self.n_blocks, self.n_rows
        op._b = None
        op._bind_rhs(b)
        return op

    def has_rhs(self) -> bool:
        return self._b is not None

    @property
    def rhs(self) -> np.ndarray:
        if self._b is None:
            raise ValueError("operator has no right-hand side bound")
        return self._b

    def sparse_block(self, i: int) -> sp.csr_matrix:
        self._check_index(i)
        return self._blocks[i - 1]

    @property
    def matrix(self) -> np.ndarray:
        return sp.vstack(self._blocks).toarray()

    def fetch_block(self, i: int) -> SampleBlock:
        self._check_index(i)
        if self._b is None:
            raise ValueError(
                "operator has no right-hand side bound; use with_rhs(b)"
            )
        start, stop = self.row_range(i)
        return SampleBlock(
            i, self._blocks[i - 1].toarray(), self._b[start:stop]
        )

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_cols,):
            raise ValueError(
                f"x has shape {x.shape}, expected ({self.n_cols},)"
            )
        return np.concatenate([blk @ x for blk in self._blocks])

    def apply_adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.n_rows,):
            raise ValueError(
                f"y has shape {y.shape}, expected ({self.n_rows},)"
            )
        out = np.zeros(self.n_cols)
        ell = self.block_rows
        for i, blk in enumerate(self._blocks):
            out += blk.T @ y[i * ell : (i + 1) * ell]
        return out


class SinglePassAdapter(RowBlockOperator):
    """Wrap a random-access operator as a strict single-pass stream.

    Blocks must be requested in order 1..M and each exactly once;
    anything else raises :class:`StreamOrderError`.
    """

    access_mode = "single_pass"

    def __init__(self, op: RowBlockOperator):
        if op.access_mode != "random_access":
            raise ValueError("can only adapt a random_access operator")
        self._op = op
        self.n_rows = op.n_rows
        self.n_cols = op.n_cols
        self.n_blocks = op.n_blocks
        self.block_rows = op.block_rows
        self._next = 1

    def has_rhs(self) -> bool:
        return self._op.has_rhs()

    def fetch_block(self, i: int) -> SampleBlock:
        self._check_index(i)
        if i != self._next:
            raise StreamOrderError(
                f"single-pass stream expected block {self._next}, got {i}"
            )
        self._next += 1
        return self._op.fetch_block(i)


# ---------------------------------------------------------------------------
# Streamed-matrix container format
#
# Fixed header: magic bytes "SLIM1", then m, n, M, ell as 64-bit
# little-endian unsigned integers.  Followed by M records; each record
# is ell*n block entries then ell right-hand-side entries, 64-bit IEEE
# floats, row-major.
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<5sQQQQ")


def write_stream_file(path, op: RowBlockOperator):
    """Write a random-access operator (with rhs) to the container format."""
    op._require_random_access("write_stream_file")
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                STREAM_MAGIC, op.n_rows, op.n_cols, op.n_blocks, op.block_rows
            )
        )
        for blk in op.blocks():
            fh.write(np.ascontiguousarray(blk.a_block, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(blk.b_block, dtype="<f8").tobytes())


def read_stream_header(path) -> tuple[int, int, int, int]:
    """Return (m, n, M, ell) from a container file."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, m, n, big_m, ell = _HEADER.unpack(raw)
    if magic != STREAM_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {STREAM_MAGIC!r}")
    if big_m * ell != m:
        raise ValueError(f"{path}: header inconsistent, M*ell != m")
    return m, n, big_m, ell


class FileStreamOperator(RowBlockOperator):
    """Single-pass operator reading blocks from a container file."""

    access_mode = "single_pass"

    def __init__(self, path):
        self._path = path
        self.n_rows, self.n_cols, self.n_blocks, self.block_rows = (
            read_stream_header(path)
        )
        self._fh: io.BufferedReader = open(path, "rb")
        self._fh.seek(_HEADER.size)
        self._next = 1

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def has_rhs(self) -> bool:
        return True

    def fetch_block(self, i: int) -> SampleBlock:
        self._check_index(i)
        if i != self._next:
            raise StreamOrderError(
                f"single-pass stream expected block {self._next}, got {i}"
            )
        ell, n = self.block_rows, self.n_cols
        raw = self._fh.read((ell * n + ell) * 8)
        if len(raw) != (ell * n + ell) * 8:
            raise ValueError(f"{self._path}: truncated record {i}")
        a = np.frombuffer(raw, dtype="<f8", count=ell * n).reshape(ell, n)
        b = np.frombuffer(raw, dtype="<f8", offset=ell * n * 8, count=ell)
        self._next += 1
        return SampleBlock(i, a, b)


def load_stream_file(path) -> DenseBlockOperator:
    """Load an entire container file as a random-access dense operator."""
    m, n, big_m, ell = read_stream_header(path)
    a = np.empty((m, n))
    b = np.empty(m)
    with FileStreamOperator(path) as stream:
        for i in range(1, big_m + 1):
            blk = stream.fetch_block(i)
            start, stop = (i - 1) * ell, i * ell
            a[start:stop] = blk.a_block
            b[start:stop] = blk.b_block
    return DenseBlockOperator(a, ell, b)


def augment_with_tikhonov(
    op: RowBlockOperator, lam: float, l_matrix: np.ndarray | None = None
) -> DenseBlockOperator:
    """Tikhonov-augmented operator for the sampled regularized problem.

    Every block A_i of the source operator is extended with the scaled
    regularization rows (lam/sqrt(M)) L and the right-hand side with
    zeros, realizing the augmented sampling model in which each draw
    sees its data block plus a 1/sqrt(M) share of the penalty rows.
    Running slimLS with C = L^T L on the result reproduces slimTik.
    """
    op._require_random_access("augment_with_tikhonov")
    n = op.n_cols
    l_matrix = np.eye(n) if l_matrix is None else np.asarray(l_matrix, float)
    if l_matrix.shape != (n, n):
        raise ValueError(f"L must be ({n}, {n}), got {l_matrix.shape}")
    scaled = (lam / np.sqrt(op.n_blocks)) * l_matrix
    a_parts, b_parts = [], []
    for blk in op.blocks():
        a_parts.append(np.vstack([blk.a_block, scaled]))
        b_parts.append(np.concatenate([blk.b_block, np.zeros(n)]))
    ell_aug = op.block_rows + n
    return DenseBlockOperator(
        np.vstack(a_parts), ell_aug, np.concatenate(b_parts)
    )
