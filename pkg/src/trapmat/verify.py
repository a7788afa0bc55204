"""Server-honesty checks.

Freivalds-style checks compare ``P X`` with ``A (B X)`` for a uniform probe
``X`` with lambda' columns.  Over a field a wrong ``P`` survives with
probability at most |R|^-lambda'.  Over Z/2^32Z an error whose entries all
share a large power of two survives more often: an error of 2^31 is missed
with probability 2^-lambda'.  Random or structured errors with small 2-adic
valuation behave like the field case.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DishonestServerError, ShapeError
from .lpn import sample_uniform
from .ring import mat_mul, zeros


@dataclass
class CheckConfig:
    lambda_prime: int
    rng: object
    counter: object = None

    def __post_init__(self):
        if self.lambda_prime < 1:
            raise ValueError("lambda' must be at least 1")


def freivalds_check(A, B, P, cfg: CheckConfig) -> bool:
    """True if P == A B; a wrong P passes only with small probability."""
    m, n = A.shape
    if B.shape[0] != n or P.shape != (m, B.shape[1]):
        raise ShapeError(f"Freivalds shapes disagree: A {A.shape}, B {B.shape}, P {P.shape}")
    l = B.shape[1]
    if l == 0 or m == 0:
        return True
    X = sample_uniform(l, cfg.lambda_prime, cfg.rng)
    lhs = mat_mul(P, X, cfg.counter)
    rhs = mat_mul(A, mat_mul(B, X, cfg.counter), cfg.counter)
    return bool(np.array_equal(lhs, rhs))


def check_partial_products(M, P, cfg: CheckConfig) -> bool:
    """Check claimed prefix products P_i = M_1 ... M_i for i = 2..d.

    ``P`` holds P_2..P_d (so ``len(P) == len(M) - 1``).  A fresh probe is
    drawn for every level.
    """
    d = len(M)
    if d == 0:
        return True
    if len(P) != d - 1:
        raise ShapeError(f"expected {d - 1} partial products for {d} factors, got {len(P)}")
    for i in range(1, d):
        if M[i - 1].shape[1] != M[i].shape[0]:
            raise ShapeError(f"factors {i} and {i + 1} are {M[i - 1].shape} and {M[i].shape}")
    rows = M[0].shape[0]
    for i in range(1, d):
        want = (rows, M[i].shape[1])
        if P[i - 1].shape != want:
            raise ShapeError(f"partial product {i + 1} is {P[i - 1].shape}, expected {want}")
    prev = M[0]
    for i in range(1, d):
        X = sample_uniform(M[i].shape[1], cfg.lambda_prime, cfg.rng)
        cur = P[i - 1]
        if not np.array_equal(
            mat_mul(cur, X, cfg.counter), mat_mul(prev, mat_mul(M[i], X, cfg.counter), cfg.counter)
        ):
            return False
        prev = cur
    return True


class Verdict(enum.Enum):
    NO_EVIDENCE = "no-evidence"
    DISHONEST = "dishonest"


@dataclass
class AuditReport:
    verdict: Verdict
    audit_queries: int
    flagged: list = field(default_factory=list)   # positions of failing audit queries
    results: list = field(default_factory=list)   # products for the real queries, in order
    schedule: list = field(default_factory=list)  # True where an audit query was issued


def audit_count(alpha, c) -> int:
    """ceil(c / alpha) zero queries, computed exactly."""
    q = Fraction(c) / Fraction(alpha)
    return -(-q.numerator // q.denominator)


def zero_query_auditor(session, alpha, c, real_queries=(), width=None, rng=None) -> AuditReport:
    """Interleave ceil(c/alpha) multiplications by B = 0 among real queries.

    ``session`` needs ``multiply(B)`` and ``state`` (schedule, rng).  Any
    nonzero answer to a zero query, or a session abort, yields DISHONEST.
    Against a server deviating on a fraction alpha of online calls the
    detection probability is at least 1 - e^-c.
    """
    state = session.state
    rng = rng if rng is not None else state.rng
    real_queries = list(real_queries)
    n = state.schedule.n
    if width is None:
        width = real_queries[0].shape[1] if real_queries else 1
    k = audit_count(alpha, c)
    total = k + len(real_queries)
    # audit slots: a uniformly random k-subset of the positions
    slots = list(range(total))
    for i in range(total - 1, 0, -1):
        j = rng.below(i + 1)
        slots[i], slots[j] = slots[j], slots[i]
    is_audit = [False] * total
    for pos in slots[:k]:
        is_audit[pos] = True

    report = AuditReport(Verdict.NO_EVIDENCE, k, schedule=is_audit)
    real = iter(real_queries)
    zero = zeros(n, width)
    for pos, audit in enumerate(is_audit):
        B = zero if audit else next(real)
        try:
            out = session.multiply(B)
        except DishonestServerError:
            report.verdict = Verdict.DISHONEST
            report.flagged.append(pos)
            break
        if audit:
            if out.any():
                report.verdict = Verdict.DISHONEST
                report.flagged.append(pos)
        else:
            report.results.append(out)
    return report
