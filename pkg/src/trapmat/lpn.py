"""LPN noise sampling and the dimension/sparsity schedule.

Noise entries follow the distribution that is 0 with probability 1 - mu and
uniform over the ring with probability mu.  The schedule is the geometric
ladder n_0 = n > n_1 > ... > n_d = nu with n_i = max(ceil(delta*n_{i-1}), nu)
and mu_i = n_{i-1}^(epsilon-1), rounded up to a rational.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, FallbackError
from .ring import RING_BITS, SparseMatrix, WORD
from .rng import SeededRng

MU_MAX_DENOMINATOR = 1 << 20
TABLE_ENV = "TRAPMAT_SECURITY_TABLE"

# Bernoulli draws are processed this many entries at a time.
_CHUNK = 1 << 22


def noise_rate(mu) -> Fraction:
    mu = Fraction(mu)
    if not 0 <= mu <= 1:
        raise ConfigError(f"noise rate must lie in [0, 1], got {mu}")
    return mu


class SecurityTable:
    """Map (delta, epsilon, lambda) -> iota, loaded from a plain-text file.

    Lines are ``delta epsilon lambda iota`` with rationals written ``p/q``;
    ``#`` starts a comment.  Any other content is rejected.
    """

    def __init__(self, entries=None, source="<memory>"):
        self.entries = {}
        self.source = source
        for (delta, eps, lam), iota in (entries or {}).items():
            self.add(delta, eps, lam, iota)

    def add(self, delta, epsilon, lam, iota):
        iota = int(iota)
        if iota <= 0:
            raise ConfigError(f"iota must be positive, got {iota}")
        self.entries[(Fraction(delta), Fraction(epsilon), int(lam))] = iota

    @classmethod
    def parse(cls, text, source="<string>"):
        table = cls(source=source)
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 4:
                raise ConfigError(f"{source}:{lineno}: expected 'delta epsilon lambda iota', got {raw!r}")
            try:
                delta, eps = Fraction(fields[0]), Fraction(fields[1])
                lam, iota = int(fields[2]), int(fields[3])
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: {exc}") from None
            table.add(delta, eps, lam, iota)
        return table

    @classmethod
    def load(cls, path):
        path = Path(path)
        return cls.parse(path.read_text(), source=str(path))

    @classmethod
    def default(cls):
        """The bundled placeholder table, or the file named by $TRAPMAT_SECURITY_TABLE."""
        override = os.environ.get(TABLE_ENV)
        if override:
            return cls.load(override)
        text = resources.files("trapmat").joinpath("data/security_table.txt").read_text()
        return cls.parse(text, source="<bundled placeholder table>")

    def lookup(self, delta, epsilon, lam) -> int:
        key = (Fraction(delta), Fraction(epsilon), int(lam))
        try:
            return self.entries[key]
        except KeyError:
            avail = ", ".join(f"({d}, {e}, {l})" for d, e, l in sorted(self.entries)) or "none"
            raise ConfigError(
                f"no security-table entry for delta={key[0]}, epsilon={key[1]}, "
                f"lambda={key[2]} in {self.source}; available: {avail}"
            ) from None

    def __len__(self):
        return len(self.entries)


def nu(delta, epsilon, lam, ring_bits=RING_BITS, table=None) -> int:
    """Recursion floor: max(ceil(lambda / ring_bits), iota)."""
    table = table if table is not None else SecurityTable.default()
    iota = table.lookup(delta, epsilon, lam)
    return max(-(-int(lam) // ring_bits), iota)


def lambda_prime(lam, ring_bits=RING_BITS) -> int:
    """Probe columns per check so that |R|^-lambda' <= 2^-lambda."""
    return -(-int(lam) // ring_bits)


def lambda_prime_union(lam, total_checks, ring_bits=RING_BITS) -> int:
    """Probe columns with a union bound over ``total_checks`` checks."""
    extra = math.ceil(math.log2(total_checks)) if total_checks > 1 else 0
    return -(-(int(lam) + extra) // ring_bits)


def mu_upper(n, epsilon, max_den=MU_MAX_DENOMINATOR) -> Fraction:
    """Smallest rational with denominator <= max_den that is >= n^(epsilon-1).

    Comparisons are exact: with epsilon = a/b, p/q >= n^((a-b)/b) iff
    p^b * n^(b-a) >= q^b.  The search walks the Stern-Brocot tree, taking
    runs of same-direction steps at once.
    """
    eps = Fraction(epsilon)
    a, b = eps.numerator, eps.denominator
    if n < 1 or not 0 <= eps <= 1:
        raise ConfigError(f"invalid (n, epsilon) = ({n}, {eps})")
    if n == 1 or eps == 1:
        return Fraction(1)
    npow = n ** (b - a)

    def ge(p, q):
        return p ** b * npow >= q ** b

    lo_p, lo_q = 0, 1   # < x (x > 0 always)
    hi_p, hi_q = 1, 1   # >= x since x <= 1
    while lo_q + hi_q <= max_den:
        mp, mq = lo_p + hi_p, lo_q + hi_q
        if ge(mp, mq):
            # hi_k = hi + k*lo moves down toward lo; take the largest k still >= x
            kmax = (max_den - hi_q) // lo_q
            k = _last_true(lambda k: ge(hi_p + k * lo_p, hi_q + k * lo_q), kmax)
            hi_p, hi_q = hi_p + k * lo_p, hi_q + k * lo_q
        else:
            kmax = (max_den - lo_q) // hi_q
            k = _last_true(lambda k: not ge(lo_p + k * hi_p, lo_q + k * hi_q), kmax)
            lo_p, lo_q = lo_p + k * hi_p, lo_q + k * hi_q
    return Fraction(hi_p, hi_q)


def _last_true(pred, kmax):
    """Largest k in [1, kmax] with pred(k), given pred(1) holds and pred is monotone."""
    lo, step = 1, 1
    while lo + step <= kmax and pred(lo + step):
        lo += step
        step *= 2
    hi = min(lo + step, kmax + 1)  # pred(hi) false or hi out of range
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class LpnSchedule:
    dims: tuple
    mus: tuple
    lam: int
    lambda_prime: int
    nu: int
    delta: Fraction = Fraction(1, 4)
    epsilon: Fraction = Fraction(1, 2)

    @property
    def n(self):
        return self.dims[0]

    @property
    def d(self):
        return len(self.dims) - 1

    def validate(self, deltas=None, epsilons=None):
        """Raise ConfigError unless every schedule invariant holds."""
        d = self.d
        deltas = deltas or [self.delta] * d
        epsilons = epsilons or [self.epsilon] * d
        if len(self.mus) != d:
            raise ConfigError(f"{len(self.mus)} noise rates for {d} layers")
        if self.n > self.nu and d < 1:
            raise ConfigError("schedule has no layers although n > nu")
        if d and self.dims[-1] != self.nu:
            raise ConfigError(f"last dimension {self.dims[-1]} != nu {self.nu}")
        for i in range(1, d + 1):
            prev, cur = self.dims[i - 1], self.dims[i]
            if not cur < prev:
                raise ConfigError(f"dims not strictly decreasing at layer {i}")
            if cur < math.ceil(deltas[i - 1] * prev) or cur < self.nu:
                raise ConfigError(f"layer {i}: n_i={cur} below ceil(delta*{prev}) or nu")
            mu = self.mus[i - 1]
            if not 0 <= mu <= 1 or mu_upper(prev, epsilons[i - 1]) > mu:
                raise ConfigError(f"layer {i}: mu={mu} below {prev}^(epsilon-1)")
        if self.lambda_prime < 1:
            raise ConfigError("lambda' must be at least 1")
        return self


def build_schedule(n, delta, epsilon, lam, ring_bits=RING_BITS, table=None, overrides=None,
                   nu_value=None) -> LpnSchedule:
    """Geometric (n_i, mu_i) ladder from n down to nu.

    ``overrides`` optionally lists per-layer ``(delta_i, epsilon_i)`` pairs
    (layer 1 first); layers past its end use the global pair.  ``nu_value``
    bypasses the table lookup.
    """
    delta, epsilon = Fraction(delta), Fraction(epsilon)
    layer_params = [(Fraction(dl), Fraction(ep)) for dl, ep in (overrides or [])]
    for dl, ep in [(delta, epsilon)] + layer_params:
        if not 0 < dl < Fraction(1, 2):
            raise ConfigError(f"delta must lie in (0, 1/2), got {dl}")
        if not 0 < ep < 1:
            raise ConfigError(f"epsilon must lie in (0, 1), got {ep}")
    floor = nu_value if nu_value is not None else nu(delta, epsilon, lam, ring_bits, table)
    if n <= floor:
        raise FallbackError(
            f"n={n} does not exceed nu={floor}: delegation cannot beat sending the "
            "input; compute the product locally"
        )
    dims, mus, deltas, epsilons = [n], [], [], []
    while dims[-1] > floor:
        i = len(dims) - 1
        dl, ep = layer_params[i] if i < len(layer_params) else (delta, epsilon)
        prev = dims[-1]
        dims.append(max(math.ceil(dl * prev), floor))
        mus.append(mu_upper(prev, ep))
        deltas.append(dl)
        epsilons.append(ep)
    sched = LpnSchedule(
        dims=tuple(dims),
        mus=tuple(mus),
        lam=int(lam),
        lambda_prime=lambda_prime(lam, ring_bits),
        nu=floor,
        delta=delta,
        epsilon=epsilon,
    )
    return sched.validate(deltas, epsilons)


def _bernoulli_threshold(mu: Fraction) -> int:
    # P(w < t) for uniform 64-bit w equals t / 2^64 >= mu
    return -(-(mu.numerator << 64) // mu.denominator)


def sample_noise(rows, cols, mu, rng: SeededRng) -> SparseMatrix:
    """Sparse matrix with i.i.d. entries: uniform word w.p. mu, else 0.

    Draw order: one 64-bit Bernoulli word per cell in row-major order, then
    one 32-bit value word per selected cell.
    """
    mu = noise_rate(mu)
    total = rows * cols
    if mu == 0 or total == 0:
        return SparseMatrix(rows, cols)
    thresh = _bernoulli_threshold(mu)
    hits = []
    for start in range(0, total, _CHUNK):
        count = min(_CHUNK, total - start)
        if thresh >= 1 << 64:
            rng.seek(rng.position + 8 * count)
            hits.append(np.arange(start, start + count, dtype=np.int64))
        else:
            w = rng.words64(count)
            hits.append(np.flatnonzero(w < np.uint64(thresh)) + start)
    flat = np.concatenate(hits)
    values = rng.words(len(flat))
    return SparseMatrix(rows, cols, flat // cols, flat % cols, values)


def sample_uniform(rows, cols, rng: SeededRng) -> np.ndarray:
    return rng.words(rows * cols).reshape(rows, cols).astype(WORD, copy=False)
