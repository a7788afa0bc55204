"""Trapdoored pseudorandom matrices built from a chain of LPN subspaces.

Notation used throughout (all lists are indexed 0..d):

* ``fwd[i]  = L_1 L_2 ... L_i``            (n x n_i; ``fwd[0]`` is the identity, stored as None)
* ``gram[j][i] = fwd[j]^T fwd[i]``         (n_j x n_i; ``gram[0][0]`` is None)
* right mask  ``B' = fwd[d] G + sum_i fwd[i] T_{i+1}``
* left mask   ``A' = H fwd[d]^T + sum_i S_{i+1} fwd[i]^T``

Products with ``fwd[0]`` are special-cased instead of materialising an
n x n identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeneratorExhausted, ShapeError
from .lpn import LpnSchedule, sample_noise, sample_uniform
from .ring import (
    SparseMatrix,
    add_sparse_into,
    dense_sparse_mul,
    mat_mul,
    sparse_dense_mul,
    transpose,
    zeros,
)


@dataclass
class SubspaceChain:
    L: list

    @property
    def d(self):
        return len(self.L)

    @property
    def dims(self):
        if not self.L:
            return ()
        return (self.L[0].shape[0],) + tuple(Li.shape[1] for Li in self.L)

    def check(self):
        for i in range(1, len(self.L)):
            if self.L[i - 1].shape[1] != self.L[i].shape[0]:
                raise ShapeError(
                    f"chain link {i} is {self.L[i - 1].shape}, link {i + 1} is {self.L[i].shape}"
                )
        return self


@dataclass
class ChainProducts:
    fwd: list   # length d+1, fwd[0] None
    gram: list  # (d+1) x (d+1), gram[0][0] None

    @property
    def d(self):
        return len(self.fwd) - 1


@dataclass
class LeftMaskSecret:
    H: np.ndarray
    S: list  # S[i] is S_{i+1}: m x n_i sparse

    def zeroize(self):
        self.H.fill(0)
        for s in self.S:
            s.zeroize()


@dataclass
class RightMaskSecret:
    G: np.ndarray
    T: list  # T[i] is T_{i+1}: n_i x l sparse

    def zeroize(self):
        self.G.fill(0)
        for t in self.T:
            t.zeroize()


def gen_chain(schedule: LpnSchedule, rng) -> SubspaceChain:
    dims = schedule.dims
    return SubspaceChain([sample_uniform(dims[i - 1], dims[i], rng) for i in range(1, len(dims))])


def sample_left_secret(schedule: LpnSchedule, m, rng) -> LeftMaskSecret:
    dims, mus = schedule.dims, schedule.mus
    H = sample_uniform(m, dims[-1], rng)
    S = [sample_noise(m, dims[i], mus[i], rng) for i in range(schedule.d)]
    return LeftMaskSecret(H, S)


def sample_right_secret(schedule: LpnSchedule, l, rng) -> RightMaskSecret:
    dims, mus = schedule.dims, schedule.mus
    G = sample_uniform(dims[-1], l, rng)
    T = [sample_noise(dims[i], l, mus[i], rng) for i in range(schedule.d)]
    return RightMaskSecret(G, T)


def chain_products_local(chain: SubspaceChain, counter=None) -> ChainProducts:
    """All forward and gram products of the chain.

    For each i the products ``gram[j][i] = gram[j][i-1] L_i`` (j < i) are
    formed as one stacked multiply, then ``gram[i][i] = gram[i-1][i]^T L_i``;
    the lower triangle is filled by transposition.
    """
    chain.check()
    d = chain.d
    gram = [[None] * (d + 1) for _ in range(d + 1)]
    for i in range(1, d + 1):
        Li = chain.L[i - 1]
        if i == 1:
            gram[0][1] = Li
        else:
            stacked = np.vstack([gram[j][i - 1] for j in range(i)])
            prod = mat_mul(stacked, Li, counter)
            row = 0
            for j in range(i):
                h = gram[j][i - 1].shape[0]
                gram[j][i] = np.ascontiguousarray(prod[row:row + h])
                row += h
        gram[i][i] = mat_mul(transpose(gram[i - 1][i]), Li, counter)
        for j in range(i):
            gram[i][j] = transpose(gram[j][i])
    fwd = [None] + [gram[0][i] for i in range(1, d + 1)]
    return ChainProducts(fwd=fwd, gram=gram)


def _times_fwd(F, T: SparseMatrix, counter):
    """fwd-factor times sparse; F None means the identity."""
    if F is None:
        return T.to_dense()
    return dense_sparse_mul(F, T, counter)


def expand_right_mask(fwd, secret: RightMaskSecret, counter=None) -> np.ndarray:
    """B' = fwd[d] G + T_1 + sum_{i>=1} fwd[i] T_{i+1}."""
    d = len(fwd) - 1
    if len(secret.T) != d:
        raise ShapeError(f"right secret has {len(secret.T)} noise terms for a depth-{d} chain")
    out = mat_mul(fwd[d], secret.G, counter)
    for i in range(d):
        T = secret.T[i]
        if i == 0:
            if T.shape != out.shape:
                raise ShapeError(f"T_1 is {T.shape}, expected {out.shape}")
            out = add_sparse_into(out, T)
        else:
            out += dense_sparse_mul(fwd[i], T, counter)
    return out


def expand_right_mask_horner(chain: SubspaceChain, secret: RightMaskSecret, counter=None) -> np.ndarray:
    """B' = T_1 + L_1(T_2 + L_2(... (T_d + L_d G)))."""
    acc = secret.G
    for i in range(chain.d, 0, -1):
        acc = add_sparse_into(mat_mul(chain.L[i - 1], acc, counter), secret.T[i - 1])
    return acc


def expand_left_mask(fwd, secret: LeftMaskSecret, counter=None) -> np.ndarray:
    """A' = H fwd[d]^T + S_1 + sum_{i>=1} S_{i+1} fwd[i]^T."""
    d = len(fwd) - 1
    if len(secret.S) != d:
        raise ShapeError(f"left secret has {len(secret.S)} noise terms for a depth-{d} chain")
    out = mat_mul(secret.H, transpose(fwd[d]), counter)
    for i in range(d):
        S = secret.S[i]
        if i == 0:
            if S.shape != out.shape:
                raise ShapeError(f"S_1 is {S.shape}, expected {out.shape}")
            out = add_sparse_into(out, S)
        else:
            out += sparse_dense_mul(S, transpose(fwd[i]), counter)
    return out


def expand_left_mask_horner(chain: SubspaceChain, secret: LeftMaskSecret, counter=None) -> np.ndarray:
    """A' = S_1 + (S_2 + (... (S_d + H L_d^T) ...) L_2^T) L_1^T."""
    acc = secret.H
    for i in range(chain.d, 0, -1):
        acc = add_sparse_into(mat_mul(acc, transpose(chain.L[i - 1]), counter), secret.S[i - 1])
    return acc


def left_partials_from_secret(gram, secret: LeftMaskSecret, counter=None) -> list:
    """[None, A'L_1, A'L_1L_2, ..., A'L_1...L_d] using only gram entries.

    A' fwd[i] = H gram[d][i] + sum_j S_{j+1} gram[j][i]; no product here has
    a dimension of size n other than the sparse factor's.
    """
    d = len(gram) - 1
    out = [None]
    for i in range(1, d + 1):
        acc = mat_mul(secret.H, gram[d][i], counter)
        for j in range(d):
            acc += sparse_dense_mul(secret.S[j], gram[j][i], counter)
        out.append(acc)
    return out


def fast_AB_prime(AL, secret: RightMaskSecret, counter=None) -> np.ndarray:
    """A B' = AL[d] G + sum_i AL[i] T_{i+1}, where AL[i] = A fwd[i] and AL[0] = A."""
    d = len(AL) - 1
    if len(secret.T) != d:
        raise ShapeError(f"right secret has {len(secret.T)} noise terms for a depth-{d} chain")
    out = mat_mul(AL[d], secret.G, counter)
    for i in range(d):
        out += dense_sparse_mul(AL[i], secret.T[i], counter)
    return out


def fast_Aprime_Benc(secret: LeftMaskSecret, probes, counter=None) -> np.ndarray:
    """A' B_enc = H probes[d] + sum_i S_{i+1} probes[i], probes[i] = fwd[i]^T B_enc."""
    d = len(probes) - 1
    if len(secret.S) != d:
        raise ShapeError(f"left secret has {len(secret.S)} noise terms, got {d} probes")
    out = mat_mul(secret.H, probes[d], counter)
    for i in range(d):
        out += sparse_dense_mul(secret.S[i], probes[i], counter)
    return out


class TargetedGenerator:
    """Amortised stream of (B'_k, A B'_k) pairs for a fixed left operand.

    One delegated product ``A M`` with a trapdoored ``M`` of width ``t*l``
    is computed up front; each pull hands out the next l-column block of
    ``M`` and ``A M``.
    """

    def __init__(self, delegate, t, l, rng=None):
        if t < 1 or l < 1:
            raise ValueError("batch size and width must be positive")
        state = delegate.state
        rng = rng if rng is not None else state.rng
        self.t, self.l = t, l
        secret = sample_right_secret(state.schedule, t * l, rng)
        M = expand_right_mask(state.chain_products.fwd, secret, state.counter)
        secret.zeroize()
        AM = delegate.multiply(M)
        n, m = M.shape[0], AM.shape[0]
        # block k is M[:, k*l:(k+1)*l]; store blocks contiguously
        self._M = np.ascontiguousarray(M.reshape(n, t, l).transpose(1, 0, 2))
        self._AM = np.ascontiguousarray(AM.reshape(m, t, l).transpose(1, 0, 2))
        self._next = 0

    @property
    def remaining(self):
        return self.t - self._next

    def __iter__(self):
        return self

    def __next__(self):
        if self._next >= self.t:
            raise StopIteration
        k = self._next
        self._next += 1
        return self._M[k], self._AM[k]

    def pull(self):
        try:
            return next(self)
        except StopIteration:
            raise GeneratorExhausted(f"all {self.t} precomputed blocks used; refill required") from None

    def matrices(self):
        """(M, A M) reassembled from the stored blocks."""
        return (
            np.hstack(list(self._M)) if self.t else zeros(0, 0),
            np.hstack(list(self._AM)) if self.t else zeros(0, 0),
        )


def targeted_generator(delegate, t, l, rng=None) -> TargetedGenerator:
    return TargetedGenerator(delegate, t, l, rng)
