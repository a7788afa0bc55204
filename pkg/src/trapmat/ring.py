"""Dense and sparse matrices over Z/2^32Z.

A dense matrix is a C-contiguous 2-D ``numpy.uint32`` array; numpy's
unsigned arithmetic already wraps modulo 2^32, so addition and subtraction
are plain array ops.  Products go through :func:`mat_mul`, which computes
the exact ring product with float64 BLAS on 16-bit limbs.

Every product takes an optional :class:`OpCounter` so protocol code can be
audited against the per-operation cost model (ring multiplications counted
as ``m*n*l`` for dense products and ``nnz*width`` for sparse ones).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError

RING_BITS = 32
MODULUS = 1 << RING_BITS
WORD = np.uint32

# Products with m*n*l at or below this use numpy's native uint32 kernel.
DIRECT_THRESHOLD = 1 << 15
# Inner-dimension tile for the limb kernel.  Each limb product is < 2^32 and
# the cross term sums 2*K_TILE of them, so K_TILE <= 2^20 keeps every
# float64 partial sum below 2^53 (exact).
K_TILE = 1 << 20

_LO16 = np.uint64(0xFFFF)
_LO32 = np.uint64(0xFFFFFFFF)


@dataclass
class OpCounter:
    """Running tally of ring multiplications and additions.

    With ``trace=True`` every product is also logged as
    ``(kind, a, b, c)``: ``("dense", m, n, l)`` or ``("sparse", rows, nnz, width)``.
    """

    ring_muls: int = 0
    ring_adds: int = 0
    trace: bool = False
    events: list = field(default_factory=list)

    def dense(self, m, n, l):
        self.ring_muls += m * n * l
        self.ring_adds += m * n * l
        if self.trace:
            self.events.append(("dense", m, n, l))

    def sparse(self, rows, nnz, width):
        self.ring_muls += nnz * width
        self.ring_adds += nnz * width
        if self.trace:
            self.events.append(("sparse", rows, nnz, width))

    def adds(self, k):
        self.ring_adds += k

    def snapshot(self):
        return (self.ring_muls, self.ring_adds)

    def since(self, snap):
        """Multiplications performed since ``snap`` was taken."""
        return self.ring_muls - snap[0]

    def reset(self):
        self.ring_muls = 0
        self.ring_adds = 0
        self.events.clear()


def _count(counter):
    return counter if counter is not None else _NULL


class _NullCounter(OpCounter):
    def dense(self, m, n, l):
        pass

    def sparse(self, rows, nnz, width):
        pass

    def adds(self, k):
        pass


_NULL = _NullCounter()


def _words(values) -> np.ndarray:
    """Reduce arbitrary integers (python or numpy) to uint32 words."""
    if isinstance(values, np.ndarray) and values.dtype == WORD:
        return values
    arr = np.asarray(values)
    if arr.dtype.kind not in "iuO" and arr.size:
        raise ShapeError(f"ring values must be integers, got dtype {arr.dtype}")
    if arr.dtype.kind == "u":
        return (arr.astype(np.uint64) & _LO32).astype(WORD)
    if arr.dtype.kind == "i":
        # two's complement: the low 32 bits are the residue mod 2^32
        return (arr.astype(np.int64).view(np.uint64) & _LO32).astype(WORD)
    return (np.asarray(arr, dtype=object) % MODULUS).astype(np.uint64).astype(WORD)


def as_dense(x) -> np.ndarray:
    """Coerce ``x`` to a contiguous 2-D uint32 matrix (values taken mod 2^32)."""
    arr = _words(x)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def zeros(rows, cols) -> np.ndarray:
    return np.zeros((rows, cols), dtype=WORD)


def identity(n) -> np.ndarray:
    return np.eye(n, dtype=WORD)


def _shape(M):
    return f"{M.shape[0]}x{M.shape[1]}"


def _limb_product(A, B):
    """Exact (A @ B) mod 2^32 via two float64 GEMMs on 16-bit limbs.

    With A = Ah*2^16 + Al and B likewise, the Ah*Bh term vanishes mod 2^32,
    leaving Al*Bl + 2^16*(Ah*Bl + Al*Bh).
    """
    m, n = A.shape
    l = B.shape[1]
    out = np.zeros((m, l), dtype=np.uint64)
    for k0 in range(0, n, K_TILE):
        a = A[:, k0:k0 + K_TILE]
        b = B[k0:k0 + K_TILE]
        a_lo = (a & 0xFFFF).astype(np.float64)
        b_lo = (b & 0xFFFF).astype(np.float64)
        low = (a_lo @ b_lo).astype(np.uint64)
        cross = np.hstack([(a >> 16).astype(np.float64), a_lo]) @ np.vstack(
            [b_lo, (b >> 16).astype(np.float64)]
        )
        cross = (cross.astype(np.uint64) & _LO16) << np.uint64(16)
        out += low
        out += cross
        out &= _LO32
    return out.astype(WORD)


def mat_mul(A, B, counter=None) -> np.ndarray:
    """Ring product ``A @ B``; bit-identical to the schoolbook triple loop."""
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"cannot multiply {_shape(A)} by {_shape(B)}")
    m, n = A.shape
    l = B.shape[1]
    _count(counter).dense(m, n, l)
    if m * n * l <= DIRECT_THRESHOLD:
        return np.ascontiguousarray(A @ B)
    return _limb_product(A, B)


def mat_add(A, B) -> np.ndarray:
    if A.shape != B.shape:
        raise ShapeError(f"cannot add {_shape(A)} and {_shape(B)}")
    return A + B


def mat_sub(A, B) -> np.ndarray:
    if A.shape != B.shape:
        raise ShapeError(f"cannot subtract {_shape(B)} from {_shape(A)}")
    return A - B


def transpose(A) -> np.ndarray:
    return np.ascontiguousarray(A.T)


class SparseMatrix:
    """Coordinate-list matrix in canonical form.

    Entries are sorted by (row, col), unique, and never zero.  Construction
    drops explicit zeros and rejects duplicate coordinates.
    """

    __slots__ = ("rows", "cols", "row_idx", "col_idx", "values", "_csr")

    def __init__(self, rows, cols, row_idx=(), col_idx=(), values=()):
        r = np.asarray(row_idx, dtype=np.int64).ravel()
        c = np.asarray(col_idx, dtype=np.int64).ravel()
        v = _words(values).ravel()
        if not (len(r) == len(c) == len(v)):
            raise ShapeError("row, col and value arrays differ in length")
        if rows < 0 or cols < 0:
            raise ShapeError(f"negative shape {rows}x{cols}")
        if len(r) and (r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols):
            raise ShapeError(f"entry index out of range for {rows}x{cols}")
        keep = v != 0
        r, c, v = r[keep], c[keep], v[keep]
        order = np.lexsort((c, r))
        r, c, v = r[order], c[order], v[order]
        if len(r) > 1:
            dup = (r[1:] == r[:-1]) & (c[1:] == c[:-1])
            if dup.any():
                i = int(np.flatnonzero(dup)[0])
                raise ShapeError(f"duplicate entry at ({r[i]}, {c[i]})")
        self.rows = int(rows)
        self.cols = int(cols)
        self.row_idx = r
        self.col_idx = c
        self.values = v
        self._csr = None

    @classmethod
    def from_entries(cls, rows, cols, entries):
        entries = list(entries)
        if not entries:
            return cls(rows, cols)
        r, c, v = zip(*entries)
        return cls(rows, cols, r, c, v)

    @classmethod
    def from_dense(cls, D):
        D = as_dense(D)
        r, c = np.nonzero(D)
        return cls(D.shape[0], D.shape[1], r, c, D[r, c])

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self):
        return len(self.values)

    def entries(self):
        return [(int(r), int(c), int(v)) for r, c, v in zip(self.row_idx, self.col_idx, self.values)]

    def to_dense(self) -> np.ndarray:
        out = zeros(self.rows, self.cols)
        out[self.row_idx, self.col_idx] = self.values
        return out

    @property
    def csr(self):
        if self._csr is None:
            self._csr = sp.csr_matrix(
                (self.values, (self.row_idx, self.col_idx)), shape=self.shape, dtype=WORD
            )
        return self._csr

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.row_idx, other.row_idx)
            and np.array_equal(self.col_idx, other.col_idx)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"SparseMatrix({self.rows}x{self.cols}, nnz={self.nnz})"

    def zeroize(self):
        self.values[:] = 0
        self._csr = None


def sparse_dense_mul(S: SparseMatrix, B, counter=None) -> np.ndarray:
    """``S @ B`` for sparse S; costs nnz(S) * B.cols multiplications."""
    if S.cols != B.shape[0]:
        raise ShapeError(f"cannot multiply sparse {S.rows}x{S.cols} by {_shape(B)}")
    l = B.shape[1]
    _count(counter).sparse(S.rows, S.nnz, l)
    if S.nnz == 0 or l == 0:
        return zeros(S.rows, l)
    return np.ascontiguousarray(S.csr @ B, dtype=WORD)


def dense_sparse_mul(A, T: SparseMatrix, counter=None) -> np.ndarray:
    """``A @ T`` for sparse T; costs nnz(T) * A.rows multiplications."""
    if A.shape[1] != T.rows:
        raise ShapeError(f"cannot multiply {_shape(A)} by sparse {T.rows}x{T.cols}")
    m = A.shape[0]
    _count(counter).sparse(T.cols, T.nnz, m)
    if T.nnz == 0 or m == 0:
        return zeros(m, T.cols)
    return np.ascontiguousarray((T.csr.T @ A.T).T, dtype=WORD)


def add_sparse_into(A, S: SparseMatrix) -> np.ndarray:
    """Return ``A + S`` as a new dense matrix."""
    if A.shape != S.shape:
        raise ShapeError(f"cannot add sparse {S.rows}x{S.cols} to {_shape(A)}")
    out = A.copy()
    out[S.row_idx, S.col_idx] += S.values
    return out
