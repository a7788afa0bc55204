from fractions import Fraction

import numpy as np
import pytest

from trapmat.lpn import SecurityTable, build_schedule
from trapmat.rng import SeededRng

M32 = 1 << 32

# desk-mode table: small iota so schedules exist for n in the tens
DESK = SecurityTable({(Fraction(1, 4), Fraction(1, 2), 40): 4})

ACCEPTANCE_LINES = []


def schoolbook(A, B):
    """Independent oracle: triple loop over Python ints, reduced mod 2^32."""
    A = [[int(x) for x in row] for row in np.asarray(A)]
    B = [[int(x) for x in row] for row in np.asarray(B)]
    m, n = len(A), len(B)
    l = len(B[0]) if B else 0
    out = np.zeros((m, l), dtype=np.uint32)
    for i in range(m):
        for j in range(l):
            s = 0
            for k in range(n):
                s += A[i][k] * B[k][j]
            out[i, j] = s % M32
    return out


def object_mul(A, B):
    """Exact product via numpy object arrays (faster oracle for mid sizes)."""
    P = np.asarray(A).astype(object) @ np.asarray(B).astype(object)
    return (P % M32).astype(np.uint32) if P.size else np.zeros(P.shape, np.uint32)


def desk_schedule(n, nu_value=None):
    return build_schedule(n, Fraction(1, 4), Fraction(1, 2), 40, table=DESK, nu_value=nu_value)


@pytest.fixture
def rng():
    return SeededRng(12345)


def rand(rng, rows, cols):
    return rng.words(rows * cols).reshape(rows, cols)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def bump(M, i, j, delta):
    """M[i, j] += delta in the ring, in place."""
    M[i, j] = (int(M[i, j]) + int(delta)) % M32
