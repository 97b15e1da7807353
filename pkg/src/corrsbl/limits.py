"""Support-recovery limits for row-sparse signals with a fixed value matrix ``W``.

``c(W)`` is the smallest per-row log-determinant rate over nonempty row
subsets ``T`` of ``W``::

    c(W) = min_T  1/(2|T|) * log det(I + (s_phi/s_v) W_T^T W_T)

and roughly ``log(M) / c(W)`` measurements per vector are necessary and
sufficient for support recovery.  Natural logs throughout.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import stats

from .seeding import derive_seed

MAX_K = 20
MAX_SUPPORTS = 2_000_000
_CHUNK = 1 << 15


@dataclass(frozen=True)
class LimitsReport:
    c_value: float
    argmin_subset: tuple[int, ...]
    sigma_phi_sq: float
    sigma_v_sq: float
    K: int
    L: int

    def threshold(self, M: int, epsilon: float = 0.0) -> int:
        return threshold_measurements(M, self, epsilon)


def _check_w(W) -> np.ndarray:
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.ndim != 2 or W.size == 0:
        raise ValueError("W must be a nonempty K x L matrix")
    if np.any(W == 0):
        raise ValueError("every entry of W must be nonzero")
    return W


def subset_term(W, subset, snr: float) -> float:
    """``1/(2|T|) log det(I_L + snr * W_T^T W_T)`` for one row subset."""
    Wt = np.asarray(W, dtype=float)[list(subset)]
    _, logdet = np.linalg.slogdet(np.eye(Wt.shape[1]) + snr * Wt.T @ Wt)
    return logdet / (2 * len(subset))


def c_of_w(W, sigma_phi_sq: float = 1.0, sigma_v_sq: float = 1.0) -> LimitsReport:
    """Exhaustive minimization of the subset rate.

    Ties go to the smaller subset, then the lexicographically first one.
    """
    W = _check_w(W)
    K, L = W.shape
    if K > MAX_K:
        raise ValueError(f"K={K} is too large for exhaustive search (max {MAX_K})")
    if not (sigma_phi_sq > 0 and sigma_v_sq > 0):
        raise ValueError("variances must be positive")
    snr = sigma_phi_sq / sigma_v_sq

    best, best_set = math.inf, ()
    for t in range(1, K + 1):
        combos = np.array(list(combinations(range(K), t)))
        for start in range(0, len(combos), _CHUNK):
            idx = combos[start:start + _CHUNK]
            Wt = W[idx]  # (C, t, L)
            # Sylvester: det(I_L + s A^T A) = det(I_t + s A A^T); use the smaller side
            if t <= L:
                G = np.eye(t) + snr * np.einsum("cil,cjl->cij", Wt, Wt)
            else:
                G = np.eye(L) + snr * np.einsum("cti,ctj->cij", Wt, Wt)
            _, logdet = np.linalg.slogdet(G)
            terms = logdet / (2 * t)
            j = int(np.argmin(terms))
            if best_set == () or terms[j] < best - 1e-12 * abs(best):
                best, best_set = float(terms[j]), tuple(int(i) for i in idx[j])
    return LimitsReport(best, best_set, float(sigma_phi_sq), float(sigma_v_sq), K, L)


def threshold_measurements(M: int, report: LimitsReport, epsilon: float = 0.0) -> int:
    """``ceil(log M / (c + epsilon))``.

    A small negative ``epsilon`` gives the achievable side of the threshold,
    a positive one the converse side.
    """
    c = report.c_value
    if not c > 0:
        raise ValueError("c(W) must be positive")
    if abs(epsilon) >= c:
        raise ValueError("|epsilon| must be smaller than c(W)")
    if M <= report.K:
        raise ValueError("M must exceed K")
    n = math.log(M) / (c + epsilon)
    # guard against 10.000000000002 rounding up to 11
    return math.ceil(n - 1e-9)


def ml_support_decode(phi, Y, K: int, max_supports: int = MAX_SUPPORTS) -> tuple[int, ...]:
    """Size-``K`` support minimizing the total projection residual of ``Y``.

    All ``C(M, K)`` supports are scored in lexicographic order; the first
    minimizer wins.  Supports whose columns are (numerically) rank deficient
    are skipped with a warning.
    """
    phi = np.asarray(phi, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    N, M = phi.shape
    if not 1 <= K <= M:
        raise ValueError("K must lie in [1, M]")
    n_sup = math.comb(M, K)
    if n_sup > max_supports:
        raise ValueError(f"C({M},{K}) = {n_sup} supports exceeds the bound {max_supports}")

    gram = phi.T @ phi
    corr = phi.T @ Y  # (M, L)
    energy = float(np.sum(Y ** 2))
    it = combinations(range(M), K)
    best, best_set, skipped = math.inf, None, 0
    while True:
        block = np.fromiter((i for s in _take(it, _CHUNK) for i in s), dtype=np.intp)
        if block.size == 0:
            break
        idx = block.reshape(-1, K)
        G = gram[idx[:, :, None], idx[:, None, :]]  # (C, K, K)
        C = corr[idx]  # (C, K, L)
        eig = np.linalg.eigvalsh(G)
        ok = eig[:, 0] > 1e-10 * np.maximum(eig[:, -1], 1e-300)
        resid = np.full(len(idx), np.inf)
        if ok.any():
            sol = np.linalg.solve(G[ok], C[ok])
            resid[ok] = energy - np.sum(C[ok] * sol, axis=(1, 2))
        skipped += int(np.sum(~ok))
        j = int(np.argmin(resid))
        if resid[j] < best:
            best, best_set = resid[j], tuple(int(i) for i in idx[j])
    if skipped:
        warnings.warn(f"skipped {skipped} rank-deficient supports", RuntimeWarning, stacklevel=2)
    if best_set is None:
        raise np.linalg.LinAlgError("every candidate support is rank deficient")
    return best_set


def _take(it, n):
    for _, item in zip(range(n), it):
        yield item


@dataclass(frozen=True)
class ErrorRate:
    errors: int
    trials: int
    ci_low: float
    ci_high: float

    @property
    def rate(self) -> float:
        return self.errors / self.trials


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(k, n).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def _one_trial(W: np.ndarray, M: int, N: int, sigma_phi_sq: float, sigma_v_sq: float,
               seed: int) -> bool:
    K, L = W.shape
    rng = np.random.default_rng(seed)
    S = rng.choice(M, size=K, replace=False)
    phi = rng.standard_normal((N, M)) * np.sqrt(sigma_phi_sq)
    Y = phi[:, S] @ W
    if sigma_v_sq > 0:
        Y = Y + rng.standard_normal((N, L)) * np.sqrt(sigma_v_sq)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        est = ml_support_decode(phi, Y, K)
    return set(est) != set(S.tolist())


def mc_error_rate(W, M: int, N: int, sigma_v_sq: float, trials: int, seed: int,
                  sigma_phi_sq: float = 1.0, threads: int = 1) -> ErrorRate:
    """Monte-Carlo support-recovery error of the ML decoder.

    Each trial draws a uniform support, an i.i.d. Gaussian dictionary with
    entry variance ``sigma_phi_sq`` and Gaussian noise, all from a seed
    derived from ``(seed, trial index)``.
    """
    W = _check_w(W)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    seeds = [derive_seed(seed, t) for t in range(trials)]

    def run(s):
        return _one_trial(W, M, N, sigma_phi_sq, sigma_v_sq, s)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            errs = sum(pool.map(run, seeds))
    else:
        errs = sum(map(run, seeds))
    lo, hi = wilson_interval(errs, trials)
    return ErrorRate(int(errs), trials, lo, hi)
