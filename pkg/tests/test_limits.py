import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corrsbl.limits import (
    LimitsReport,
    c_of_w,
    mc_error_rate,
    ml_support_decode,
    subset_term,
    threshold_measurements,
    wilson_interval,
)


def dense_c(W, snr):
    """Plain double loop over subsets with an explicit determinant."""
    K, L = W.shape
    best = math.inf
    for t in range(1, K + 1):
        for T in itertools.combinations(range(K), t):
            Wt = W[list(T)]
            best = min(best, math.log(np.linalg.det(np.eye(L) + snr * Wt.T @ Wt)) / (2 * t))
    return best


def nonzero_matrix(rng, K, L):
    W = rng.standard_normal((K, L))
    W[np.abs(W) < 0.05] = 0.5
    return W


def test_single_entry():
    r = c_of_w([[2.0]], 3.0, 1.5)
    assert r.c_value == pytest.approx(0.5 * math.log(1 + 2.0 * 4.0), rel=1e-14)
    assert r.argmin_subset == (0,)


def test_random_3x2_matches_enumeration():
    W = nonzero_matrix(np.random.default_rng(0), 3, 2)
    r = c_of_w(W, 1.0, 0.5)
    assert r.c_value == pytest.approx(dense_c(W, 2.0), abs=1e-12)
    assert subset_term(W, r.argmin_subset, 2.0) == pytest.approx(r.c_value, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 4), st.floats(0.1, 10))
def test_matches_dense_oracle(seed, K, L, snr):
    W = nonzero_matrix(np.random.default_rng(seed), K, L)
    r = c_of_w(W, snr, 1.0)
    assert abs(r.c_value - dense_c(W, snr)) <= 1e-10
    assert len(r.argmin_subset) >= 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 5))
def test_identical_columns_closed_form(seed, K, L):
    w = nonzero_matrix(np.random.default_rng(seed), K, 1)[:, 0]
    W = np.repeat(w[:, None], L, axis=1)
    r = c_of_w(W, 2.0, 1.0)
    T = list(r.argmin_subset)
    closed = math.log(1 + L * 2.0 * np.sum(w[T] ** 2)) / (2 * len(T))
    assert abs(r.c_value - closed) <= 1e-10
    # same as the single-vector value with the noise variance divided by L
    assert abs(r.c_value - c_of_w(w[:, None], 2.0, 1.0 / L).c_value) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 4))
def test_permutation_and_orthogonal_invariance(seed, K, L):
    rng = np.random.default_rng(seed)
    W = nonzero_matrix(rng, K, L)
    base = c_of_w(W, 1.0, 0.3).c_value
    assert abs(c_of_w(W[rng.permutation(K)], 1.0, 0.3).c_value - base) <= 1e-10
    Q, _ = np.linalg.qr(rng.standard_normal((L, L)))
    WQ = W @ Q
    WQ[WQ == 0] = 1e-300  # keep the nonzero contract; the value is unaffected
    assert abs(c_of_w(WQ, 1.0, 0.3).c_value - base) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 5), st.floats(1.01, 10))
def test_monotone_in_snr_and_bounded_by_terms(seed, snr, factor):
    W = nonzero_matrix(np.random.default_rng(seed), 4, 2)
    lo = c_of_w(W, snr, 1.0)
    hi = c_of_w(W, snr * factor, 1.0)
    assert hi.c_value >= lo.c_value
    assert lo.c_value <= subset_term(W, range(4), snr) + 1e-15
    for k in range(4):
        assert lo.c_value <= subset_term(W, [k], snr) + 1e-15


def test_argmin_examples():
    # log(1 + t) / 2t decreases in t, so equal rows favour the full set
    assert c_of_w(np.ones((3, 1)), 1.0, 1.0).argmin_subset == (0, 1, 2)
    assert c_of_w([[10.0], [0.1], [0.1]], 1.0, 1.0).argmin_subset == (1, 2)


def test_input_validation():
    with pytest.raises(ValueError):
        c_of_w([[1.0, 0.0]])
    with pytest.raises(ValueError):
        c_of_w(np.ones((21, 1)))
    with pytest.raises(ValueError):
        c_of_w([[1.0]], 0.0, 1.0)


def report(c, K=2):
    return LimitsReport(c, (0,), 1.0, 1.0, K, 1)


def test_threshold_arithmetic():
    assert threshold_measurements(round(math.exp(10)), report(1.0)) == 10
    assert threshold_measurements(64, report(2.0)) == math.ceil(math.ceil(math.log(64)) / 2)
    W = nonzero_matrix(np.random.default_rng(0), 3, 2)
    r = c_of_w(W, 1.0, 0.5)
    assert r.threshold(64) == math.ceil(math.log(64) / dense_c(W, 2.0) - 1e-9)
    eps = 0.1 * r.c_value
    assert threshold_measurements(64, r, eps) <= threshold_measurements(64, r, -eps)


@pytest.mark.parametrize("kw", [dict(M=2), dict(M=64, epsilon=5.0)])
def test_threshold_errors(kw):
    M = kw.pop("M")
    with pytest.raises(ValueError):
        threshold_measurements(M, report(1.0), **kw)


# --- decoder --------------------------------------------------------------------


def nested_loop_decoder(phi, Y, K):
    best, best_s = math.inf, None
    for S in itertools.combinations(range(phi.shape[1]), K):
        P = phi[:, S] @ np.linalg.pinv(phi[:, S])
        r = float(np.sum((Y - P @ Y) ** 2))
        if r < best - 1e-12:
            best, best_s = r, S
    return best_s


def test_decoder_exact_fit():
    rng = np.random.default_rng(1)
    phi = rng.standard_normal((5, 12))
    Y = phi[:, [2, 9]] @ rng.standard_normal((2, 3))
    assert ml_support_decode(phi, Y, 2) == (2, 9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_decoder_matches_nested_loops(seed):
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((6, 8))
    Y = phi[:, [1, 6]] @ np.array([[1.0], [-1.0]]) + 0.05 * rng.standard_normal((6, 1))
    assert ml_support_decode(phi, Y, 2) == nested_loop_decoder(phi, Y, 2)


def test_decoder_zero_data_tie_break():
    phi = np.random.default_rng(2).standard_normal((4, 6))
    assert ml_support_decode(phi, np.zeros(4), 3) == (0, 1, 2)


def test_decoder_skips_rank_deficient():
    phi = np.array([[1.0, 2.0, 0.0], [1.0, 2.0, 1.0]])
    Y = phi[:, [0, 2]] @ np.ones(2)
    with pytest.warns(RuntimeWarning, match="rank-deficient"):
        assert ml_support_decode(phi, Y, 2) == (0, 2)


def test_decoder_bound():
    with pytest.raises(ValueError):
        ml_support_decode(np.ones((2, 60)), np.ones(2), 10)


# --- Monte Carlo -------------------------------------------------------------------


def test_wilson_matches_reference():
    lo, hi = wilson_interval(3, 10)
    # closed-form Wilson score interval
    z, p, n = 1.959963984540054, 0.3, 10
    c = (p + z * z / (2 * n)) / (1 + z * z / n)
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    assert (lo, hi) == (pytest.approx(c - h), pytest.approx(c + h))


def test_error_rate_extremes():
    W = np.array([[1.0], [1.0]])
    tiny = mc_error_rate(W, 12, 8, 1e-12, 30, seed=1)
    assert tiny.errors == 0
    under = mc_error_rate(W, 12, 2, 100.0, 30, seed=2)
    assert under.rate > 0.7
    assert under.ci_low <= under.rate <= under.ci_high


def test_error_rate_deterministic_and_thread_invariant():
    W = np.array([[1.0, 1.0], [1.0, -1.0]])
    a = mc_error_rate(W, 16, 3, 0.5, 40, seed=9)
    b = mc_error_rate(W, 16, 3, 0.5, 40, seed=9, threads=3)
    assert a == b
