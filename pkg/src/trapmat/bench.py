"""Timing harness: local baseline against loopback delegation.

Server time is the wall time spent inside the server's handler; client time
is the remainder of the client's wall time.  For the matrix-vector workload
initialisation is amortised over n products, and the ratios are
``(init + online) / local``.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .client import DelegationClient
from .lpn import build_schedule, nu as nu_floor
from .protocol import DelegationServer
from .ring import mat_mul
from .rng import SeededRng
from .transport import loopback_pair
from .verify import zero_query_auditor

log = logging.getLogger(__name__)

COLUMNS = ["n", "local_s", "client_init_s", "server_init_s", "client_s", "server_s",
           "client_ratio", "total_ratio"]
GRID = [Fraction(2) ** k for k in range(-4, 9)]


class TimedServer:
    """Wraps a DelegationServer and accumulates time spent handling messages."""

    def __init__(self, server=None):
        self.server = server if server is not None else DelegationServer()
        self.elapsed = 0.0

    def handle(self, msg):
        t0 = time.perf_counter()
        try:
            return self.server.handle(msg)
        finally:
            self.elapsed += time.perf_counter() - t0

    def take(self):
        out, self.elapsed = self.elapsed, 0.0
        return out


@dataclass
class BenchRow:
    n: int
    local_s: float
    client_init_s: float
    server_init_s: float
    client_s: float
    server_s: float

    @property
    def client_ratio(self):
        return (self.client_init_s + self.client_s) / self.local_s

    @property
    def total_ratio(self):
        return (self.client_init_s + self.server_init_s + self.client_s + self.server_s) / self.local_s

    def as_list(self):
        return [self.n, self.local_s, self.client_init_s, self.server_init_s, self.client_s,
                self.server_s, self.client_ratio, self.total_ratio]


def ratio_overrides(n, ratio, delta, epsilon, floor):
    """Per-layer (delta_i, epsilon) holding n_i / (n_{i-1} mu_i) near ``ratio``.

    delta_i = ratio * n_{i-1}^(epsilon-1), clamped to [delta/16, delta] and
    rounded to a denominator of at most 1024.
    """
    delta, epsilon = Fraction(delta), Fraction(epsilon)
    out, prev = [], n
    while prev > floor:
        target = Fraction(ratio) * Fraction(prev ** (float(epsilon) - 1)).limit_denominator(1 << 20)
        dl = min(max(target, delta / 16), delta).limit_denominator(1024)
        dl = max(dl, Fraction(1, 1024))
        out.append((dl, epsilon))
        prev = max(math.ceil(dl * prev), floor)
    return out


def _time(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def run_matvec(n, schedule, rng, steps):
    """One delegated matrix-vector session; init amortised over n products."""
    A = rng.words(n * n).reshape(n, n)
    vs = [rng.words(n).reshape(n, 1) for _ in range(steps)]
    local = min(_time(mat_mul, A, v)[1] for v in vs[: min(steps, 3)])

    server = TimedServer()
    client_ep, _ = loopback_pair(server)
    client = DelegationClient(client_ep, schedule, rng.fork())
    _, t_init = _time(client.initialize, A)
    s_init = server.take()
    t_online = 0.0
    for v in vs:
        out, t = _time(client.multiply, v)
        t_online += t
    s_online = server.take()
    if not np.array_equal(out, mat_mul(A, vs[-1])):
        raise AssertionError("delegated product differs from the local one")
    return BenchRow(
        n=n,
        local_s=local,
        client_init_s=(t_init - s_init) / n,
        server_init_s=s_init / n,
        client_s=(t_online - s_online) / steps,
        server_s=s_online / steps,
    )


def run_matmul(n, schedule, rng):
    A = rng.words(n * n).reshape(n, n)
    B = rng.words(n * n).reshape(n, n)
    expect, local = _time(mat_mul, A, B)
    server = TimedServer()
    client_ep, _ = loopback_pair(server)
    client = DelegationClient(client_ep, schedule, rng.fork())
    out, total = _time(client.multiply_once, A, B)
    s = server.take()
    if not np.array_equal(out, expect):
        raise AssertionError("delegated product differs from the local one")
    return BenchRow(n=n, local_s=local, client_init_s=0.0, server_init_s=0.0,
                    client_s=total - s, server_s=s)


def _average(rows):
    n = rows[0].n
    fields = ["local_s", "client_init_s", "server_init_s", "client_s", "server_s"]
    return BenchRow(n, *[sum(getattr(r, f) for r in rows) / len(rows) for f in fields])


def run_audit(n, schedule, rng, alpha, c):
    server = TimedServer()
    client_ep, _ = loopback_pair(server)
    client = DelegationClient(client_ep, schedule, rng.fork())
    A = rng.words(n * n).reshape(n, n)
    client.initialize(A)
    report, t = _time(zero_query_auditor, client, alpha, c, (), 1)
    log.info("audit n=%d alpha=%s c=%s: %s after %d zero queries (%.3fs)",
             n, alpha, c, report.verdict.value, report.audit_queries, t)
    return report


def bench(sizes, trials=5, delta=Fraction(1, 4), epsilon=Fraction(1, 2), lam=40, table=None,
          workload="matvec", steps=8, seed=0, grid_search=False, audit=None, csv_path=None,
          out=None):
    """Run the benchmark; returns the rows and writes CSV to ``csv_path`` and/or ``out``."""
    rng = SeededRng(seed)
    floor = nu_floor(delta, epsilon, lam, table=table)
    rows = []
    for n in sizes:
        candidates = [None]
        if grid_search:
            candidates = GRID
        best = None
        for ratio in candidates:
            overrides = ratio_overrides(n, ratio, delta, epsilon, floor) if ratio is not None else None
            schedule = build_schedule(n, delta, epsilon, lam, table=table, overrides=overrides)
            runs = []
            for _ in range(trials):
                if workload == "matmul":
                    runs.append(run_matmul(n, schedule, rng))
                else:
                    runs.append(run_matvec(n, schedule, rng, steps))
            row = _average(runs)
            if ratio is not None:
                log.info("grid n=%d ratio=%s dims=%s client_ratio=%.4f", n, ratio, schedule.dims,
                         row.client_ratio)
            if best is None or row.client_ratio < best.client_ratio:
                best = row
        rows.append(best)
        if audit is not None:
            run_audit(n, build_schedule(n, delta, epsilon, lam, table=table), rng, *audit)
    targets = []
    if csv_path is not None:
        targets.append(open(csv_path, "w", newline=""))
    if out is not None:
        targets.append(out)
    for fh in targets:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([r.n] + [f"{x:.6g}" for x in r.as_list()[1:]])
        if fh is not out:
            fh.close()
    return rows
