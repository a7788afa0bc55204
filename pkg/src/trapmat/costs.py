"""Predicted ring-multiplication counts per protocol phase (cubic accounting).

Dense products cost m*n*l; sparse ones cost nnz times the dense width, with
nnz taken at its expectation (rows*cols*mu).  Server figures are exact;
client figures are exact up to the noise draws.
"""

from __future__ import annotations

from dataclasses import dataclass

from .protocol import check_lambda_prime
from .transport import input_bytes, predict_session_bytes


def _check_cost(a, lam_p):
    """check_partial_products over factors with dims a_1..a_{d+1}."""
    total = 0
    for i in range(2, len(a)):
        # M_i X, P_{i-1}(M_i X), P_i X
        total += a[i - 1] * a[i] * lam_p + a[0] * a[i - 1] * lam_p + a[0] * a[i] * lam_p
    return total


@dataclass
class CostPrediction:
    server_init: int
    client_init: float
    client_init_checks: int
    server_online: int
    client_online: float
    naive_online: int
    bytes_total: int
    bytes_input: int

    @property
    def server_overhead(self):
        return self.server_online - self.naive_online

    def rows(self):
        return [
            ("server init muls", self.server_init),
            ("client init muls (incl. checks)", round(self.client_init)),
            ("  of which verification", self.client_init_checks),
            ("server online muls", self.server_online),
            ("  overhead beyond A_enc*B_enc", self.server_overhead),
            ("client online muls", round(self.client_online)),
            ("naive product muls", self.naive_online),
            ("client/naive ratio", f"{self.client_online / max(self.naive_online, 1):.4f}"),
            ("server overhead/naive", f"{self.server_overhead / max(self.naive_online, 1):.4f}"),
            ("session bytes", self.bytes_total),
            ("input bytes", self.bytes_input),
            ("bytes/input", f"{self.bytes_total / max(self.bytes_input, 1):.4f}"),
        ]


def predict(m, l, schedule) -> CostPrediction:
    dims, mus, lp = schedule.dims, schedule.mus, check_lambda_prime(schedule)
    n, d = dims[0], schedule.d
    nd = dims[-1]

    server_init = 0
    for i in range(1, d + 1):
        if i > 1:
            server_init += sum(dims[:i]) * dims[i - 1] * dims[i]
        server_init += dims[i] * dims[i - 1] * dims[i]
    server_init += sum(m * dims[i - 1] * dims[i] for i in range(1, d + 1))

    # noise nnz expectations: S_{i+1} is m x n_i, T_{i+1} is n_i x l
    s_nnz = [m * dims[i] * float(mus[i]) for i in range(d)]
    t_nnz = [dims[i] * l * float(mus[i]) for i in range(d)]

    checks = _check_cost(list(dims), lp)
    for j in range(1, d + 1):
        checks += _check_cost([dims[j]] + list(dims), lp)
    checks += _check_cost([m] + list(dims), lp)

    a_prime = m * nd * n + sum(s_nnz[i] * n for i in range(1, d))
    partials = sum(m * nd * dims[i] + sum(s_nnz[j] * dims[i] for j in range(d)) for i in range(1, d + 1))
    client_init = a_prime + partials + checks

    b_prime = n * nd * l + sum(t_nnz[i] * n for i in range(1, d))
    ab_prime = m * nd * l + sum(t_nnz[i] * m for i in range(d))
    ap_benc = m * nd * l + sum(s_nnz[i] * l for i in range(d))
    client_online = b_prime + ab_prime + ap_benc

    server_online = m * n * l + sum(dims[i - 1] * dims[i] * l for i in range(1, d + 1))

    return CostPrediction(
        server_init=server_init,
        client_init=client_init,
        client_init_checks=checks,
        server_online=server_online,
        client_online=client_online,
        naive_online=m * n * l,
        bytes_total=predict_session_bytes(m, dims, [l]),
        bytes_input=input_bytes(m, n, [l]),
    )
