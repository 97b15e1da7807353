"""Multiple-measurement-vector solvers built on BSBL-EM.

``Y = Phi X + V`` is rewritten as ``vec(Y^T) = (Phi kron I_L) vec(X^T) + v``,
which is block sparse with one block of length ``L`` per row of ``X``.
T-MSBL learns the shared inter-vector AR(1) coefficient; M-SBL fixes
``B_i = I``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .bsbl import BsblOptions, bsbl_em
from .linmodel import BlockPartition, Dictionary


@dataclass(frozen=True)
class MmvProblem:
    dictionary: Dictionary
    Y: np.ndarray

    def __post_init__(self):
        d = self.dictionary
        if not isinstance(d, Dictionary):
            d = Dictionary(d)
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.ndim != 2 or Y.shape[0] != d.N:
            raise ValueError(f"Y must be {d.N} x L, got shape {Y.shape}")
        if Y.shape[1] < 1:
            raise ValueError("need at least one measurement vector")
        object.__setattr__(self, "dictionary", d)
        object.__setattr__(self, "Y", Y)

    @property
    def L(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class MmvResult:
    X_hat: np.ndarray
    row_gammas: np.ndarray
    corr_coeff: float
    support_estimate: frozenset[int]
    lam: float
    iters: int
    converged: bool


def vectorize_mmv(problem: MmvProblem) -> tuple[np.ndarray, np.ndarray, BlockPartition]:
    """Expanded dictionary ``Phi kron I_L``, ``vec(Y^T)`` and the row partition."""
    phi = problem.dictionary.matrix
    L = problem.L
    D = np.kron(phi, np.eye(L))
    y = problem.Y.reshape(-1)
    return D, y, BlockPartition.equal(phi.shape[1], L)


def devectorize(x, M: int, L: int) -> np.ndarray:
    """Inverse of ``vec(X^T)``: row ``i`` is ``x[i*L:(i+1)*L]``."""
    x = np.asarray(x)
    if x.shape != (M * L,):
        raise ValueError(f"expected a vector of length {M * L}, got shape {x.shape}")
    return x.reshape(M, L).copy()


def _row_block_order(row_partition: BlockPartition, L: int) -> np.ndarray:
    # position k of the block ordering holds column perm[k] of Phi kron I_L
    perm = []
    for i in range(row_partition.n_blocks):
        rows = np.arange(row_partition.block_slice(i).start, row_partition.block_slice(i).stop)
        perm.extend((rows[None, :] * L + np.arange(L)[:, None]).reshape(-1))
    return np.asarray(perm, dtype=int)


def vectorize_block_mmv(problem: MmvProblem, row_partition: BlockPartition
                        ) -> tuple[np.ndarray, np.ndarray, BlockPartition]:
    """Vectorization for blocks of consecutive rows of ``X``.

    Block ``i`` collects rows ``S_i`` of ``X`` and is ordered column by column
    (``vec(X[S_i, :])``), so its prior correlation is ``Rt kron Rs`` with
    ``Rt`` across measurement vectors and ``Rs`` across the rows of the block.
    """
    M, L = problem.dictionary.M, problem.L
    if row_partition.total != M:
        raise ValueError(f"row partition covers {row_partition.total} rows, dictionary has {M}")
    D, y, _ = vectorize_mmv(problem)
    perm = _row_block_order(row_partition, L)
    return D[:, perm], y, BlockPartition(tuple(d * L for d in row_partition.sizes))


def devectorize_block_mmv(x, row_partition: BlockPartition, L: int) -> np.ndarray:
    x = np.asarray(x)
    M = row_partition.total
    if x.shape != (M * L,):
        raise ValueError(f"expected a vector of length {M * L}, got shape {x.shape}")
    flat = np.empty(M * L, dtype=x.dtype)
    flat[_row_block_order(row_partition, L)] = x
    return flat.reshape(M, L)


def tmsbl(problem: MmvProblem, options: BsblOptions | None = None) -> MmvResult:
    """T-MSBL: BSBL-EM on the vectorized model, learning inter-vector correlation."""
    opts = replace(options or BsblOptions(), learn_corr=True)
    return _solve_mmv(problem, opts)


def msbl(problem: MmvProblem, options: BsblOptions | None = None) -> MmvResult:
    """M-SBL: the same solver with ``B_i = I``."""
    opts = replace(options or BsblOptions(), learn_corr=False)
    return _solve_mmv(problem, opts)


def _solve_mmv(problem: MmvProblem, opts: BsblOptions) -> MmvResult:
    D, y, part = vectorize_mmv(problem)
    M, L = problem.dictionary.M, problem.L
    fast = opts.fixed_corr is None or opts.fixed_corr.shape == (L, L)
    res = bsbl_em(D, y, part, opts, kron_base=problem.dictionary.matrix if fast else None)
    X_hat = devectorize(res.x_hat, M, L)
    return MmvResult(
        X_hat=X_hat,
        row_gammas=res.gammas,
        corr_coeff=res.corr_coeff,
        support_estimate=frozenset(np.flatnonzero(res.gammas > 0).tolist()),
        lam=res.lam,
        iters=res.iters,
        converged=res.converged,
    )


def build_kron_prior(Rt, Rs) -> np.ndarray:
    """Combined block correlation ``Rt kron Rs`` from inter- and intra-vector factors."""
    out = []
    for name, R in (("Rt", Rt), ("Rs", Rs)):
        R = np.atleast_2d(np.asarray(R, dtype=float))
        if R.shape[0] != R.shape[1] or not np.allclose(R, R.T):
            raise ValueError(f"{name} must be square and symmetric")
        try:
            linalg.cholesky(R, lower=True)
        except linalg.LinAlgError as exc:
            raise ValueError(f"{name} is not positive definite") from exc
        out.append(R)
    return np.kron(out[0], out[1])

