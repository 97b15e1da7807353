"""Time-varying sparsity as a concatenation of independent MMV windows."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .bsbl import BsblOptions
from .linmodel import Dictionary
from .mmv import MmvProblem, msbl, tmsbl

log = logging.getLogger(__name__)

SOLVERS = {"tmsbl": tmsbl, "msbl": msbl}


@dataclass(frozen=True)
class TvProblem:
    dictionary: Dictionary
    Y: np.ndarray
    window: int

    def __post_init__(self):
        d = self.dictionary if isinstance(self.dictionary, Dictionary) else Dictionary(self.dictionary)
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim != 2 or Y.shape[0] != d.N:
            raise ValueError(f"Y must be {d.N} x T, got shape {Y.shape}")
        if not 1 <= self.window <= Y.shape[1]:
            raise ValueError(f"window must lie in [1, T={Y.shape[1]}]")
        object.__setattr__(self, "dictionary", d)
        object.__setattr__(self, "Y", Y)

    @property
    def T(self) -> int:
        return self.Y.shape[1]


@dataclass
class WindowReport:
    columns: range
    support: frozenset[int] = frozenset()
    corr_coeff: float = 0.0
    iters: int = 0
    nmse: float | None = None
    error: str | None = None


@dataclass
class TvResult:
    X_hat: np.ndarray
    windows: list[WindowReport] = field(default_factory=list)

    @property
    def failed(self) -> list[WindowReport]:
        return [w for w in self.windows if w.error is not None]


def window_partition(T: int, W: int) -> list[range]:
    """Consecutive non-overlapping column ranges of length ``W``; the last may be shorter."""
    if W < 1:
        raise ValueError("window must be >= 1")
    return [range(s, min(s + W, T)) for s in range(0, T, W)]


def solve_time_varying(problem: TvProblem, solver: Literal["tmsbl", "msbl"] = "tmsbl",
                       options: BsblOptions | None = None,
                       X_true: np.ndarray | None = None) -> TvResult:
    """Solve every window as its own MMV problem and stitch the columns together.

    A window whose solve raises is left at zero and reported through
    ``WindowReport.error``; the remaining windows are still solved.
    """
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}") from None
    X_hat = np.zeros((problem.dictionary.M, problem.T))
    reports = []
    for cols in window_partition(problem.T, problem.window):
        sl = slice(cols.start, cols.stop)
        rep = WindowReport(cols)
        try:
            res = fn(MmvProblem(problem.dictionary, problem.Y[:, sl]), options)
        except (np.linalg.LinAlgError, ValueError) as exc:
            log.warning("window %s failed: %s", cols, exc)
            rep.error = str(exc)
        else:
            X_hat[:, sl] = res.X_hat
            rep.support = res.support_estimate
            rep.corr_coeff = res.corr_coeff
            rep.iters = res.iters
        if X_true is not None:
            truth = X_true[:, sl]
            denom = float(np.sum(truth ** 2))
            if denom > 0:
                rep.nmse = float(np.sum((X_hat[:, sl] - truth) ** 2)) / denom
        reports.append(rep)
    return TvResult(X_hat, reports)
