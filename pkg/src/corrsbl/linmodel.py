"""Linear measurement model and the Gaussian posterior shared by all solvers.

The model is ``y = Phi x + v`` with a block-structured Gaussian prior
``x ~ N(0, Sigma0)``, ``Sigma0 = blockdiag(gamma_i * B_i)`` and white noise of
variance ``lam``.  Every posterior quantity is computed in the dual
(N x N) form so that blocks with ``gamma_i = 0`` drop out exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from scipy import linalg

MAX_CORR = 0.99


class IllConditionedError(np.linalg.LinAlgError):
    """Raised when ``lam*I + Phi Sigma0 Phi^T`` cannot be factorized."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockPartition:
    """Ordered block sizes partitioning a length-M coefficient vector."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(d) for d in self.sizes)
        if not sizes:
            raise ValueError("a partition needs at least one block")
        if any(d < 1 for d in sizes):
            raise ValueError(f"block sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def equal(cls, n_blocks: int, size: int) -> "BlockPartition":
        return cls((size,) * n_blocks)

    @property
    def n_blocks(self) -> int:
        return len(self.sizes)

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @cached_property
    def offsets(self) -> np.ndarray:
        """Start index of every block (strictly increasing)."""
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(int)

    def block_slice(self, i: int) -> slice:
        start = int(self.offsets[i])
        return slice(start, start + self.sizes[i])

    @cached_property
    def groups(self) -> tuple["_SizeGroup", ...]:
        """Blocks bucketed by size so per-block algebra can be batched."""
        out = []
        sizes = np.asarray(self.sizes)
        for d in sorted(set(self.sizes)):
            blocks = np.flatnonzero(sizes == d)
            cols = self.offsets[blocks][:, None] + np.arange(d)[None, :]
            out.append(_SizeGroup(d, blocks, cols))
        return tuple(out)


@dataclass(frozen=True)
class _SizeGroup:
    size: int
    blocks: np.ndarray  # (nb,) block indices
    cols: np.ndarray  # (nb, size) coefficient indices


@dataclass(frozen=True)
class Dictionary:
    """Real N x M dictionary with no all-zero column."""

    matrix: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.matrix, dtype=float)
        if phi.ndim != 2:
            raise ValueError("dictionary must be a 2-D matrix")
        if phi.shape[0] > phi.shape[1]:
            raise ValueError(f"expected N <= M, got shape {phi.shape}")
        if np.any(~phi.any(axis=0)):
            raise ValueError("dictionary has an all-zero column")
        phi.setflags(write=False)
        object.__setattr__(self, "matrix", phi)

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    @property
    def M(self) -> int:
        return self.matrix.shape[1]


DictLike = Union[Dictionary, np.ndarray]


def as_matrix(phi: DictLike) -> np.ndarray:
    if isinstance(phi, Dictionary):
        return phi.matrix
    return np.asarray(phi, dtype=float)


def ar1_toeplitz(r: float, d: int) -> np.ndarray:
    """``Toeplitz([1, r, ..., r**(d-1)])``."""
    return linalg.toeplitz(r ** np.arange(d))


@dataclass(frozen=True)
class BlockPrior:
    """Per-block variance scales plus one shared AR(1) coefficient.

    ``fixed_corr``, when given, replaces the AR(1) matrix for every block
    whose size matches it (e.g. a Kronecker-structured correlation).
    """

    gammas: np.ndarray
    corr_coeff: float = 0.0
    fixed_corr: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        g = np.array(self.gammas, dtype=float).ravel()
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            raise ValueError("gammas must be finite and nonnegative")
        if abs(self.corr_coeff) > MAX_CORR + 1e-12:
            raise ValueError(f"|corr_coeff| must be <= {MAX_CORR}")
        g.setflags(write=False)
        object.__setattr__(self, "gammas", g)
        if self.fixed_corr is not None:
            fc = np.atleast_2d(np.asarray(self.fixed_corr, dtype=float))
            if fc.shape[0] != fc.shape[1]:
                raise ValueError("fixed_corr must be square")
            object.__setattr__(self, "fixed_corr", fc)
        object.__setattr__(self, "corr_coeff", float(self.corr_coeff))

    def block_corr(self, d: int) -> np.ndarray:
        if self.fixed_corr is not None and self.fixed_corr.shape[0] == d:
            return self.fixed_corr
        return ar1_toeplitz(self.corr_coeff, d)


@dataclass(frozen=True)
class GaussianPosterior:
    """Posterior mean plus the principal diagonal blocks of the covariance.

    ``group_covs[k]`` has shape ``(nb, d, d)`` and is aligned with
    ``partition.groups[k]``; off-diagonal blocks are never formed.
    """

    mean: np.ndarray
    partition: BlockPartition
    group_covs: tuple[np.ndarray, ...] = field(repr=False)

    def block_mean(self, i: int) -> np.ndarray:
        return self.mean[self.partition.block_slice(i)]

    def block_cov(self, i: int) -> np.ndarray:
        for grp, covs in zip(self.partition.groups, self.group_covs):
            hit = np.flatnonzero(grp.blocks == i)
            if hit.size:
                return covs[hit[0]]
        raise IndexError(i)

    def block_second_moments(self) -> tuple[np.ndarray, ...]:
        """``Sigma_x^i + mu_i mu_i^T`` per size group."""
        out = []
        for grp, covs in zip(self.partition.groups, self.group_covs):
            mu = self.mean[grp.cols]
            out.append(covs + mu[:, :, None] * mu[:, None, :])
        return tuple(out)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def _check_dims(prior: BlockPrior, partition: BlockPartition, M: int | None = None):
    if prior.gammas.size != partition.n_blocks:
        raise ValueError(
            f"prior has {prior.gammas.size} gammas but partition has "
            f"{partition.n_blocks} blocks"
        )
    if M is not None and partition.total != M:
        raise ValueError(f"partition covers {partition.total} coefficients, dictionary has {M}")


def build_sigma0(prior: BlockPrior, partition: BlockPartition) -> np.ndarray:
    """Dense block-diagonal prior covariance ``blockdiag(gamma_i B_i)``."""
    _check_dims(prior, partition)
    M = partition.total
    sigma0 = np.zeros((M, M))
    for i, d in enumerate(partition.sizes):
        s = partition.block_slice(i)
        sigma0[s, s] = prior.gammas[i] * prior.block_corr(d)
    return sigma0


def _factor(sigma_y: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with a single jitter retry."""
    try:
        return linalg.cholesky(sigma_y, lower=True)
    except linalg.LinAlgError:
        pass
    n = sigma_y.shape[0]
    jitter = 1e-12 * np.trace(sigma_y) / n
    if not jitter > 0:
        raise IllConditionedError("Sigma_y has nonpositive trace; set lam > 0")
    try:
        return linalg.cholesky(sigma_y + jitter * np.eye(n), lower=True)
    except linalg.LinAlgError as exc:
        raise IllConditionedError(
            "lam*I + Phi Sigma0 Phi^T is not positive definite; use a larger lam"
        ) from exc


@dataclass
class _Solve:
    posterior: GaussianPosterior
    nll: float


def _solve(phi: np.ndarray, y: np.ndarray, lam: float, prior: BlockPrior,
           partition: BlockPartition, need_cov: bool = True) -> _Solve:
    N, M = phi.shape
    _check_dims(prior, partition, M)
    if y.shape != (N,):
        raise ValueError(f"y must have shape ({N},), got {y.shape}")
    if lam < 0:
        raise ValueError("lam must be nonnegative")

    gam = prior.gammas
    # Phi_i (gamma_i B_i) per active block, kept per size group
    weighted = []
    sigma_y = lam * np.eye(N)
    for grp in partition.groups:
        act = gam[grp.blocks] > 0
        if not act.any():
            weighted.append(None)
            continue
        cols = grp.cols[act]
        phi_b = phi[:, cols]  # (N, na, d)
        B = prior.block_corr(grp.size)
        pb = np.einsum("nbi,ij->nbj", phi_b, B) * gam[grp.blocks[act]][None, :, None]
        sigma_y += pb.reshape(N, -1) @ phi_b.reshape(N, -1).T
        weighted.append((act, pb))

    chol = _factor(sigma_y)
    white_y = linalg.solve_triangular(chol, y, lower=True)
    alpha = linalg.solve_triangular(chol, white_y, lower=True, trans="T")
    nll = 2.0 * np.sum(np.log(np.diag(chol))) + float(white_y @ white_y)

    mean = np.zeros(M)
    covs = []
    for grp, w in zip(partition.groups, weighted):
        d = grp.size
        cov = np.zeros((grp.blocks.size, d, d))
        if w is not None:
            act, pb = w
            mean[grp.cols[act]] = np.einsum("nbj,n->bj", pb, alpha)
            if need_cov:
                na = pb.shape[1]
                v = linalg.solve_triangular(chol, pb.reshape(N, -1), lower=True)
                v = v.reshape(N, na, d)
                B = prior.block_corr(d)
                g = gam[grp.blocks[act]]
                cov[act] = g[:, None, None] * B[None] - np.einsum("nbi,nbj->bij", v, v)
        covs.append(cov)
    return _Solve(GaussianPosterior(mean, partition, tuple(covs)), nll)


def _solve_kron(base: np.ndarray, L: int, y: np.ndarray, lam: float, prior: BlockPrior,
                partition: BlockPartition, need_cov: bool = True) -> _Solve:
    """``_solve`` for the dictionary ``base kron I_L`` with one shared ``B``.

    With ``B = U diag(e) U^T`` the covariance ``lam I + (base G base^T) kron B``
    splits into ``L`` independent ``N x N`` systems
    ``A_k = lam I + e_k base G base^T``, one per eigenvector of ``B``, and
    one eigendecomposition of ``base G base^T`` diagonalizes all of them.
    """
    N, M = base.shape
    if partition.sizes != (L,) * M:
        raise ValueError("the Kronecker path needs M blocks of size L")
    _check_dims(prior, partition)
    if y.shape != (N * L,):
        raise ValueError(f"y must have shape ({N * L},), got {y.shape}")
    if lam < 0:
        raise ValueError("lam must be nonnegative")

    e, U = linalg.eigh(prior.block_corr(L))
    gam = prior.gammas
    act = gam > 0
    phi_a = base[:, act]
    g = gam[act]
    gram = (phi_a * g) @ phi_a.T
    y_rot = y.reshape(N, L) @ U

    # every A_k shares the eigenvectors of the gram term
    s_g, Q = linalg.eigh(gram)
    s_g = np.maximum(s_g, 0.0)
    spec = lam + e[None, :] * s_g[:, None]  # (N, L) eigenvalues of the A_k
    if not np.all(spec > 0):
        jitter = 1e-12 * np.max(np.sum(spec, axis=0)) / N
        if not jitter > 0:
            raise IllConditionedError("Sigma_y has nonpositive trace; set lam > 0")
        spec = np.maximum(spec, jitter)
    q = Q.T @ y_rot
    nll = float(np.sum(np.log(spec)) + np.sum(q * q / spec))
    z = Q @ (q / spec)  # column k is A_k^{-1} y_rot[:, k]
    mean_rot = np.zeros((M, L))
    mean_rot[act] = g[:, None] * (phi_a.T @ z) * e[None, :]
    if need_cov:
        P = Q.T @ phi_a
        # phi_i^T A_k^{-1} phi_i for every active column and eigen-index
        shrink = (P * P).T @ (1.0 / spec)

    covs = np.zeros((M, L, L))
    if need_cov and act.any():
        c = g[:, None] * e[None, :] - (g[:, None] * e[None, :]) ** 2 * shrink
        covs[act] = np.einsum("jk,bk,lk->bjl", U, c, U)
    mean = (mean_rot @ U.T).reshape(-1)
    return _Solve(GaussianPosterior(mean, partition, (covs,)), nll)


def posterior(phi: DictLike, y, lam: float, prior: BlockPrior,
              partition: BlockPartition) -> GaussianPosterior:
    """Posterior of ``x`` given ``y`` under the block prior.

    Uses ``mu = Sigma0 Phi^T Sigma_y^{-1} y`` and
    ``Sigma_x = Sigma0 - Sigma0 Phi^T Sigma_y^{-1} Phi Sigma0`` with
    ``Sigma_y = lam I + Phi Sigma0 Phi^T``.  Only the diagonal blocks of
    ``Sigma_x`` are returned.

    Raises
    ------
    IllConditionedError
        If ``Sigma_y`` is not positive definite even after jitter.
    """
    return _solve(as_matrix(phi), np.asarray(y, dtype=float), lam, prior, partition).posterior


def neg_log_likelihood(phi: DictLike, y, lam: float, prior: BlockPrior,
                       partition: BlockPartition) -> float:
    """Type-II cost ``log|Sigma_y| + y^T Sigma_y^{-1} y``."""
    phi = as_matrix(phi)
    y = np.asarray(y, dtype=float)
    sigma_y = lam * np.eye(phi.shape[0]) + phi @ build_sigma0(prior, partition) @ phi.T
    try:
        chol = linalg.cholesky(sigma_y, lower=True)
    except linalg.LinAlgError as exc:
        raise IllConditionedError("Sigma_y is not positive definite") from exc
    white = linalg.solve_triangular(chol, y, lower=True)
    return 2.0 * float(np.sum(np.log(np.diag(chol)))) + float(white @ white)


def full_block_cov(post: GaussianPosterior) -> np.ndarray:
    """Dense M x M block-diagonal matrix assembled from the posterior blocks."""
    part = post.partition
    out = np.zeros((part.total, part.total))
    for grp, covs in zip(part.groups, post.group_covs):
        for b, cols in enumerate(grp.cols):
            out[np.ix_(cols, cols)] = covs[b]
    return out

