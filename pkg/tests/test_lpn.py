import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import DESK
from trapmat.errors import ConfigError, FallbackError
from trapmat.lpn import (
    SecurityTable,
    build_schedule,
    lambda_prime,
    lambda_prime_union,
    mu_upper,
    nu,
    sample_noise,
    sample_uniform,
)
from trapmat.rng import SeededRng

Q, H = Fraction(1, 4), Fraction(1, 2)


def test_nu_takes_larger_of_bits_bound_and_iota():
    t = SecurityTable({(Q, H, 128): 64, (Q, H, 40): 1})
    assert nu(Q, H, 128, table=t) == 64
    assert nu(Q, H, 40, table=t) == 2  # ceil(40/32) dominates iota=1


def test_lambda_prime_examples():
    assert lambda_prime(128, 32) == 4
    assert lambda_prime(32, 32) == 1
    assert lambda_prime(40, 32) == 2


def test_lambda_prime_union_adds_log_checks():
    assert lambda_prime_union(128, 1) == 4
    assert lambda_prime_union(128, 2) == 5
    assert lambda_prime_union(120, 256) == 4


def test_schedule_4096_nu_64():
    s = build_schedule(4096, Q, H, 128, nu_value=64)
    assert s.dims == (4096, 1024, 256, 64)
    assert s.mus == (Fraction(1, 64), Fraction(1, 32), Fraction(1, 16))
    assert s.lambda_prime == 4


def test_schedule_single_layer():
    s = build_schedule(100, Q, H, 128, nu_value=64)
    assert s.dims == (100, 64)
    assert s.d == 1


def test_fallback_when_n_not_above_nu():
    with pytest.raises(FallbackError, match="compute the product locally"):
        build_schedule(64, Q, H, 128, nu_value=64)


def test_parameter_range_errors():
    with pytest.raises(ConfigError):
        build_schedule(1000, Fraction(1, 2), H, 40, table=DESK)
    with pytest.raises(ConfigError):
        build_schedule(1000, Q, Fraction(1), 40, table=DESK)


def test_bundled_table_is_used_and_env_override(tmp_path, monkeypatch):
    assert build_schedule(4096, Q, H, 128).nu == 64
    path = tmp_path / "t.txt"
    path.write_text("1/4 1/2 128 200  # local estimate\n")
    monkeypatch.setenv("TRAPMAT_SECURITY_TABLE", str(path))
    assert build_schedule(4096, Q, H, 128).nu == 200


def test_table_parse_errors_and_missing_key():
    with pytest.raises(ConfigError, match="line|:1:"):
        SecurityTable.parse("1/4 1/2 40\n")
    with pytest.raises(ConfigError):
        SecurityTable.parse("1/4 1/2 40 zero\n")
    with pytest.raises(ConfigError):
        SecurityTable.parse("1/4 1/2 40 0\n")
    t = SecurityTable.parse("# comment\n\n1/4 1/2 40 4\n")
    with pytest.raises(ConfigError, match=r"available: \(1/4, 1/2, 40\)"):
        t.lookup(Q, H, 128)


def _mu_brute(n, eps, max_den):
    x = n ** (float(eps) - 1)
    best = Fraction(1)
    a, b = eps.numerator, eps.denominator
    for q in range(1, max_den + 1):
        p = max(0, math.floor(x * q) - 1)
        while p ** b * n ** (b - a) < q ** b:
            p += 1
        best = min(best, Fraction(p, q))
    return best


@pytest.mark.parametrize("n,eps", [(100, H), (1000, Fraction(1, 3)), (4097, H), (77, Fraction(2, 3))])
def test_mu_upper_matches_brute_force(n, eps):
    assert mu_upper(n, eps, 300) == _mu_brute(n, eps, 300)


def test_mu_upper_exact_powers():
    assert mu_upper(4096, H) == Fraction(1, 64)
    assert mu_upper(1, H) == 1


@settings(max_examples=100, deadline=None)
@given(st.integers(5, 10**6), st.sampled_from([Fraction(1, 8), Fraction(1, 5), Fraction(1, 4), Fraction(1, 3)]),
       st.sampled_from([Fraction(1, 3), H, Fraction(2, 3)]), st.integers(1, 64))
def test_schedule_invariants(n, delta, eps, floor):
    if n <= floor:
        with pytest.raises(FallbackError):
            build_schedule(n, delta, eps, 40, nu_value=floor)
        return
    s = build_schedule(n, delta, eps, 40, nu_value=floor)
    assert s.dims[0] == n and s.dims[-1] == floor
    for i in range(1, s.d + 1):
        prev, cur = s.dims[i - 1], s.dims[i]
        assert cur < prev
        assert cur == max(math.ceil(delta * prev), floor)
        mu = s.mus[i - 1]
        # mu >= prev^(eps-1), exactly
        assert mu ** eps.denominator * prev ** (eps.denominator - eps.numerator) >= 1
        assert float(mu) < prev ** (float(eps) - 1) * (1 + 1e-4) + 2.0 ** -19
    assert s.d <= math.ceil(math.log(n / floor) / math.log(1 / delta)) + 1


def test_noise_trivial_rates():
    r = SeededRng(1)
    assert sample_noise(4, 5, 0, r).nnz == 0
    full = sample_noise(2, 2, 1, r)
    assert full.nnz == 4  # a zero value word has probability 2^-32 per cell


def test_noise_nnz_concentration():
    mu = Fraction(1, 64)
    cells = 4096 * 100
    mean, sd = cells * mu, math.sqrt(cells * mu * (1 - mu))
    for seed in range(100):
        nnz = sample_noise(4096, 100, mu, SeededRng(seed)).nnz
        assert abs(nnz - mean) <= 5 * sd, (seed, nnz)


def test_noise_values_uniform_low_byte():
    S = sample_noise(1000, 1000, 1, SeededRng(2))
    low = (S.values & 0xFF).astype(np.int64)
    counts = np.bincount(low, minlength=256)
    assert stats.chisquare(counts).pvalue > 0.001


def test_noise_deterministic_and_draw_order():
    a = sample_noise(30, 40, Fraction(1, 8), SeededRng(3))
    b = sample_noise(30, 40, Fraction(1, 8), SeededRng(3))
    assert a == b
    # Bernoulli words first, then one value word per hit
    r = SeededRng(3)
    w = r.words64(30 * 40)
    thresh = -(-(1 << 64) // 8)
    hits = np.flatnonzero(w < np.uint64(thresh))
    vals = r.words(len(hits))
    assert np.array_equal(a.row_idx * 40 + a.col_idx, hits[vals != 0])


def test_uniform_shape_and_determinism():
    U = sample_uniform(3, 7, SeededRng(4))
    assert U.shape == (3, 7) and U.dtype == np.uint32
    assert np.array_equal(U, SeededRng(4).words(21).reshape(3, 7))
