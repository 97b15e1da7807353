"""Seeded synthetic data for the block, MMV and time-varying experiments.

Every AR(1) sequence is stationary with unit marginal variance
(``x[j+1] = a x[j] + sqrt(1 - a**2) e[j]``) so that signal power does not
depend on the correlation coefficient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linmodel import BlockPartition, Dictionary


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def ar1_rows(rng: np.random.Generator, n_rows: int, length: int, coeff) -> np.ndarray:
    """``n_rows`` independent stationary AR(1) sequences; ``coeff`` scalar or per row."""
    coeff = np.broadcast_to(np.asarray(coeff, dtype=float), (n_rows,))
    if np.any(np.abs(coeff) >= 1):
        raise ValueError("AR(1) coefficient must satisfy |a| < 1")
    out = np.empty((n_rows, length))
    if length == 0:
        return out
    eps = rng.standard_normal((n_rows, length))
    innov = np.sqrt(1.0 - coeff ** 2)
    out[:, 0] = eps[:, 0]
    for j in range(1, length):
        out[:, j] = coeff * out[:, j - 1] + innov * eps[:, j]
    return out


def gen_dictionary(N: int, M: int, seed) -> Dictionary:
    """Gaussian matrix with unit-norm columns."""
    if N < 1 or M < 1:
        raise ValueError("N and M must be positive")
    phi = _rng(seed).standard_normal((N, M))
    phi /= np.linalg.norm(phi, axis=0, keepdims=True)
    return Dictionary(phi)


def gen_block_signal(partition: BlockPartition, k_active: int, beta: float,
                     amplitude: float = 1.0, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Block-sparse vector with AR(1) entries inside each active block.

    Returns the signal and the sorted indices of the active blocks.
    """
    if not 0 <= k_active <= partition.n_blocks:
        raise ValueError("k_active must lie in [0, n_blocks]")
    if abs(beta) >= 1:
        raise ValueError("|beta| must be < 1")
    rng = _rng(seed)
    support = np.sort(rng.choice(partition.n_blocks, size=k_active, replace=False))
    x = np.zeros(partition.total)
    for i in support:
        d = partition.sizes[i]
        x[partition.block_slice(i)] = amplitude * ar1_rows(rng, 1, d, beta)[0]
    return x, support


def gen_mmv_signal(M: int, L: int, K: int, rho: float, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Row-sparse ``M x L`` matrix whose ``K`` nonzero rows are AR(1) in ``rho``."""
    if not 0 <= K <= M:
        raise ValueError("K must lie in [0, M]")
    if abs(rho) >= 1:
        raise ValueError("|rho| must be < 1")
    rng = _rng(seed)
    support = np.sort(rng.choice(M, size=K, replace=False))
    X = np.zeros((M, L))
    X[support] = ar1_rows(rng, K, L, rho)
    return X, support


@dataclass(frozen=True)
class TvEvent:
    start: int
    added: frozenset[int] = frozenset()
    removed: frozenset[int] = frozenset()


@dataclass(frozen=True)
class TvSignalSpec:
    """Support schedule for a time-varying sparse sequence.

    Each event switches rows on or off from column ``start`` onward.  While a
    row is on, its values follow AR(1) segments of at most ``max_duration``
    columns, each with a fresh coefficient drawn from ``ar_coeff_range``.
    """

    M: int
    T: int
    events: tuple[TvEvent, ...]
    ar_coeff_range: tuple[float, float] = (0.7, 0.99)
    max_duration: int = 20

    def __post_init__(self):
        lo, hi = self.ar_coeff_range
        if not -1 < lo <= hi < 1:
            raise ValueError("ar_coeff_range must lie inside (-1, 1)")
        if self.max_duration < 1:
            raise ValueError("max_duration must be >= 1")
        events = tuple(
            TvEvent(int(e.start), frozenset(e.added), frozenset(e.removed)) for e in self.events
        )
        object.__setattr__(self, "events", events)
        starts = [e.start for e in events]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("event columns must be strictly increasing")
        if starts and not (0 <= starts[0] and starts[-1] < self.T):
            raise ValueError("event columns must lie in [0, T)")
        self.supports()  # validates membership changes

    def supports(self) -> list[frozenset[int]]:
        """Active row set for every column, derived from the event list alone."""
        active: set[int] = set()
        out = []
        it = iter(self.events)
        nxt = next(it, None)
        for t in range(self.T):
            while nxt is not None and nxt.start == t:
                if nxt.added & nxt.removed:
                    raise ValueError(f"event at column {t} adds and removes the same row")
                if nxt.added & active:
                    raise ValueError(f"event at column {t} re-adds an active row")
                if not nxt.removed <= active:
                    raise ValueError(f"event at column {t} removes an inactive row")
                if any(not 0 <= r < self.M for r in nxt.added):
                    raise ValueError("row index out of range")
                active = (active | nxt.added) - nxt.removed
                if not active:
                    raise ValueError(f"no active rows after event at column {t}")
                nxt = next(it, None)
            out.append(frozenset(active))
        return out


def experiment3_spec(seed=None, M: int = 256, T: int = 50, k_initial: int = 15,
                     n_added: int = 10, add_at: int = 15, n_removed: int = 5,
                     remove_at: int = 25, ar_coeff_range: tuple[float, float] = (0.7, 0.99),
                     max_duration: int = 20) -> TvSignalSpec:
    """Default time-varying schedule with randomly drawn row indices.

    ``k_initial`` rows from column 0, ``n_added`` new rows switched on in a
    single step at ``add_at`` and ``n_removed`` of the initial rows switched
    off at ``remove_at`` (0-based columns).
    """
    rng = _rng(seed)
    rows = rng.choice(M, size=k_initial + n_added, replace=False)
    initial, added = rows[:k_initial], rows[k_initial:]
    removed = rng.choice(initial, size=n_removed, replace=False)
    events = [TvEvent(0, frozenset(initial.tolist()))]
    if n_added:
        events.append(TvEvent(add_at, frozenset(added.tolist())))
    if n_removed:
        events.append(TvEvent(remove_at, removed=frozenset(removed.tolist())))
    events.sort(key=lambda e: e.start)
    return TvSignalSpec(M, T, tuple(events), tuple(ar_coeff_range), max_duration)


def gen_tv_signal(spec: TvSignalSpec, seed=None) -> tuple[np.ndarray, list[frozenset[int]]]:
    """``M x T`` signal following ``spec`` plus the per-column supports."""
    rng = _rng(seed)
    supports = spec.supports()
    X = np.zeros((spec.M, spec.T))
    lo, hi = spec.ar_coeff_range
    for row in sorted(set().union(*supports)):
        on = np.array([row in s for s in supports])
        # contiguous on-intervals
        edges = np.flatnonzero(np.diff(np.concatenate([[0], on.astype(int), [0]])))
        for start, stop in zip(edges[::2], edges[1::2]):
            for seg in range(start, stop, spec.max_duration):
                end = min(seg + spec.max_duration, stop)
                a = rng.uniform(lo, hi)
                X[row, seg:end] = ar1_rows(rng, 1, end - seg, a)[0]
    return X, supports


def add_noise(clean: np.ndarray, snr_db: float, seed=None) -> tuple[np.ndarray, float]:
    """Add white Gaussian noise at ``10 log10(mean(clean**2) / var)`` = ``snr_db``.

    ``snr_db = inf`` returns a copy of ``clean`` and zero variance.
    """
    clean = np.asarray(clean, dtype=float)
    if np.isposinf(snr_db):
        return clean.copy(), 0.0
    power = float(np.mean(clean ** 2))
    if power == 0.0:
        raise ValueError("cannot set a finite SNR on an all-zero signal")
    var = power * 10.0 ** (-snr_db / 10.0)
    noise = _rng(seed).standard_normal(clean.shape) * np.sqrt(var)
    return clean + noise, var
