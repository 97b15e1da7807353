"""Experiment orchestration, metrics and CSV output.

Every trial draws its data from a seed derived from
``(master seed, experiment id, parameter index, trial index)``.  Solvers that
are compared at the same parameter value see the same data.  Trials may run
in a process pool; results are always reduced in trial order, so the CSV is
independent of the worker count.
"""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .bsbl import BsblOptions, bsbl_em
from .datagen import (
    add_noise,
    experiment3_spec,
    gen_block_signal,
    gen_dictionary,
    gen_mmv_signal,
    gen_tv_signal,
)
from .limits import c_of_w, mc_error_rate, threshold_measurements, wilson_interval
from .linmodel import BlockPartition
from .mmv import MmvProblem, msbl, tmsbl
from .seeding import derive_seed
from .tvs import TvProblem, solve_time_varying

SUCCESS_NMSE = 1e-6

SWEEP_COLUMNS = ("experiment", "solver", "param_name", "param_value", "trials",
                 "mean_nmse", "success_rate", "ci_halfwidth", "mean_wall_time_s")
LIMITS_COLUMNS = ("N", "trials", "errors", "error_rate", "ci_low", "ci_high",
                  "c_value", "threshold_N")

DEFAULT_GRID = (-0.99, -0.9, -0.5, 0.0, 0.5, 0.9, 0.95, 0.99)


def nmse(estimate, truth) -> float:
    """``||estimate - truth||_F^2 / ||truth||_F^2``."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    denom = float(np.sum(truth ** 2))
    if denom == 0.0:
        raise ValueError("nmse is undefined for an all-zero truth")
    return float(np.sum((estimate - truth) ** 2)) / denom


@dataclass(frozen=True)
class TrialRecord:
    experiment: str
    solver: str
    param_name: str
    param_value: float
    seed: int
    nmse: float
    success: bool
    wall_time: float
    failed: bool = False


@dataclass(frozen=True)
class SweepResult:
    experiment: str
    solver: str
    param_name: str
    param_value: float
    trials: int
    successes: int
    mean_nmse: float
    ci_halfwidth: float
    mean_wall_time_s: float

    @property
    def success_rate(self) -> float:
        return self.successes / self.trials


def aggregate(records: Sequence[TrialRecord], timing: bool = False) -> SweepResult:
    """Collapse the trials of one (solver, parameter) cell.

    Failed trials count as non-successes and are left out of the mean NMSE.
    ``ci_halfwidth`` is half the width of the 95% Wilson interval on the
    success rate.  Wall time is reported only when ``timing`` is set, since
    it would otherwise break byte-identical reruns.
    """
    if not records:
        raise ValueError("no trials to aggregate")
    first = records[0]
    n = len(records)
    k = sum(r.success for r in records)
    vals = [r.nmse for r in records if not r.failed]
    lo, hi = wilson_interval(k, n)
    return SweepResult(
        experiment=first.experiment,
        solver=first.solver,
        param_name=first.param_name,
        param_value=first.param_value,
        trials=n,
        successes=k,
        mean_nmse=float(np.mean(vals)) if vals else math.nan,
        ci_halfwidth=(hi - lo) / 2,
        mean_wall_time_s=float(np.mean([r.wall_time for r in records])) if timing else math.nan,
    )


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------


@dataclass
class Exp1Config:
    N: int = 100
    M: int = 300
    block_size: int = 4
    k_active: int = 20
    betas: tuple[float, ...] = DEFAULT_GRID
    amplitude: float = 1.0
    snr_db: float = math.inf
    trials: int = 100
    seed: int = 0
    threads: int = 1
    timing: bool = False
    max_iters: int = 500
    tol: float = 1e-6
    prune_gamma: float = BsblOptions.prune_gamma
    lambda_denominator: str = "M"
    solvers: tuple[str, ...] = ("bsbl_learn_corr", "bsbl_no_corr")


@dataclass
class Exp2Config:
    N: int = 25
    M: int = 125
    L: int = 4
    K: int = 18
    rhos: tuple[float, ...] = DEFAULT_GRID
    snr_db: float = math.inf
    trials: int = 100
    seed: int = 0
    threads: int = 1
    timing: bool = False
    max_iters: int = 500
    tol: float = 1e-6
    prune_gamma: float = BsblOptions.prune_gamma
    lambda_denominator: str = "M"
    solvers: tuple[str, ...] = ("tmsbl", "msbl")


@dataclass
class Exp3Config:
    N: int = 60
    M: int = 256
    T: int = 50
    k_initial: int = 15
    n_added: int = 10
    add_at: int = 15
    n_removed: int = 5
    remove_at: int = 25
    ar_low: float = 0.7
    ar_high: float = 0.99
    max_duration: int = 20
    windows: tuple[int, ...] = (2, 5)
    snr_db: float = 20.0
    trials: int = 100
    seed: int = 0
    threads: int = 1
    timing: bool = False
    max_iters: int = 500
    tol: float = 1e-6
    prune_gamma: float = BsblOptions.prune_gamma
    lambda_denominator: str = "M"
    solvers: tuple[str, ...] = ("tmsbl", "msbl")


@dataclass
class LimitsConfig:
    """``W`` defaults to ``K`` rows of +-1 entries with mutually orthogonal
    rows when ``L`` allows it (``w_file`` overrides)."""

    M: int = 32
    K: int = 2
    L: int = 1
    sigma_phi_sq: float = 1.0
    sigma_v_sq: float = 0.1
    n_min: int = 2
    n_max: int = 16
    trials: int = 500
    seed: int = 0
    threads: int = 1
    w_file: str = ""
    W: np.ndarray | None = field(default=None, repr=False)


def default_w(K: int, L: int) -> np.ndarray:
    """Rows of a Sylvester-Hadamard matrix, truncated to ``L`` columns."""
    n = 1
    while n < max(K, L):
        n *= 2
    H = np.ones((1, 1))
    while H.shape[0] < n:
        H = np.block([[H, H], [H, -H]])
    return H[:K, :L].copy()


# ---------------------------------------------------------------------------
# trial runners (module level so they pickle into worker processes)
# ---------------------------------------------------------------------------


def _options(cfg, noiseless: bool) -> BsblOptions:
    return BsblOptions(learn_lambda=not noiseless, max_iters=cfg.max_iters, tol=cfg.tol,
                       prune_gamma=cfg.prune_gamma, lambda_denominator=cfg.lambda_denominator)


def _timed(fn: Callable[[], np.ndarray], truth: np.ndarray) -> tuple[float, bool, float]:
    t0 = time.perf_counter()
    try:
        est = fn()
    except (np.linalg.LinAlgError, ValueError, FloatingPointError):
        return math.nan, True, time.perf_counter() - t0
    return nmse(est, truth), False, time.perf_counter() - t0


def _exp1_trial(cfg: Exp1Config, p_idx: int, t_idx: int) -> list[TrialRecord]:
    beta = cfg.betas[p_idx]
    seed = derive_seed(cfg.seed, "exp1", p_idx, t_idx)
    rng = np.random.default_rng(seed)
    if cfg.M % cfg.block_size:
        raise ValueError("M must be a multiple of block_size")
    part = BlockPartition.equal(cfg.M // cfg.block_size, cfg.block_size)
    phi = gen_dictionary(cfg.N, cfg.M, rng).matrix
    x, _ = gen_block_signal(part, cfg.k_active, beta, cfg.amplitude, rng)
    y, _ = add_noise(phi @ x, cfg.snr_db, rng)
    base = _options(cfg, math.isinf(cfg.snr_db))
    out = []
    for solver in cfg.solvers:
        if solver not in EXP1_SOLVERS:
            raise ValueError(f"unknown exp1 solver {solver!r}")
        opts = replace(base, learn_corr=EXP1_SOLVERS[solver])
        err, failed, wall = _timed(lambda: bsbl_em(phi, y, part, opts).x_hat, x)
        out.append(TrialRecord("exp1", solver, "beta", beta, seed, err,
                               not failed and err <= SUCCESS_NMSE, wall, failed))
    return out


EXP1_SOLVERS = {"bsbl_learn_corr": True, "bsbl_no_corr": False}
MMV_SOLVERS = {"tmsbl": tmsbl, "msbl": msbl}


def _exp2_trial(cfg: Exp2Config, p_idx: int, t_idx: int) -> list[TrialRecord]:
    rho = cfg.rhos[p_idx]
    seed = derive_seed(cfg.seed, "exp2", p_idx, t_idx)
    rng = np.random.default_rng(seed)
    phi = gen_dictionary(cfg.N, cfg.M, rng)
    X, _ = gen_mmv_signal(cfg.M, cfg.L, cfg.K, rho, rng)
    Y, _ = add_noise(phi.matrix @ X, cfg.snr_db, rng)
    problem = MmvProblem(phi, Y)
    opts = _options(cfg, math.isinf(cfg.snr_db))
    out = []
    for solver in cfg.solvers:
        fn = _lookup(MMV_SOLVERS, solver, "exp2")
        err, failed, wall = _timed(lambda: fn(problem, opts).X_hat, X)
        out.append(TrialRecord("exp2", solver, "rho", rho, seed, err,
                               not failed and err <= SUCCESS_NMSE, wall, failed))
    return out


def _exp3_trial(cfg: Exp3Config, p_idx: int, t_idx: int) -> list[TrialRecord]:
    window = cfg.windows[p_idx]
    # the signal must not depend on the window, so the window index stays out of the seed
    seed = derive_seed(cfg.seed, "exp3", 0, t_idx)
    rng = np.random.default_rng(seed)
    spec = experiment3_spec(rng, M=cfg.M, T=cfg.T, k_initial=cfg.k_initial,
                            n_added=cfg.n_added, add_at=cfg.add_at,
                            n_removed=cfg.n_removed, remove_at=cfg.remove_at,
                            ar_coeff_range=(cfg.ar_low, cfg.ar_high),
                            max_duration=cfg.max_duration)
    X, _ = gen_tv_signal(spec, rng)
    phi = gen_dictionary(cfg.N, cfg.M, rng)
    Y, _ = add_noise(phi.matrix @ X, cfg.snr_db, rng)
    problem = TvProblem(phi, Y, window)
    opts = _options(cfg, math.isinf(cfg.snr_db))
    out = []
    for solver in cfg.solvers:
        _lookup(MMV_SOLVERS, solver, "exp3")

        def solve():
            res = solve_time_varying(problem, solver, opts)
            if res.failed:
                raise np.linalg.LinAlgError(f"{len(res.failed)} windows failed")
            return res.X_hat

        err, failed, wall = _timed(solve, X)
        out.append(TrialRecord("exp3", solver, "window", float(window), seed, err,
                               not failed and err <= SUCCESS_NMSE, wall, failed))
    return out


def _lookup(table, name, exp):
    try:
        return table[name]
    except KeyError:
        raise ValueError(f"unknown {exp} solver {name!r}; choose from {sorted(table)}") from None


def _worker_init():
    from threadpoolctl import threadpool_limits

    # one BLAS thread per worker process; the pool supplies the parallelism
    threadpool_limits(1)


def _call(args):
    fn, cfg, p_idx, t_idx = args
    return fn(cfg, p_idx, t_idx)


def _run_grid(fn, cfg, n_params: int) -> list[SweepResult]:
    if cfg.trials < 1:
        raise ValueError("trials must be >= 1")
    jobs = [(fn, cfg, p, t) for p in range(n_params) for t in range(cfg.trials)]
    if cfg.threads > 1:
        with ProcessPoolExecutor(cfg.threads, initializer=_worker_init) as pool:
            outs = list(pool.map(_call, jobs, chunksize=max(1, len(jobs) // (4 * cfg.threads))))
    else:
        outs = [_call(j) for j in jobs]
    results = []
    for p in range(n_params):
        cell = outs[p * cfg.trials:(p + 1) * cfg.trials]
        for s in range(len(cell[0])):
            results.append(aggregate([recs[s] for recs in cell], cfg.timing))
    return results


def run_experiment1(cfg: Exp1Config) -> list[SweepResult]:
    """Success rate of BSBL-EM with and without correlation learning over ``beta``."""
    return _run_grid(_exp1_trial, cfg, len(cfg.betas))


def run_experiment2(cfg: Exp2Config) -> list[SweepResult]:
    return _run_grid(_exp2_trial, cfg, len(cfg.rhos))


def run_experiment3(cfg: Exp3Config) -> list[SweepResult]:
    return _run_grid(_exp3_trial, cfg, len(cfg.windows))


@dataclass(frozen=True)
class LimitsRow:
    N: int
    trials: int
    errors: int
    ci_low: float
    ci_high: float
    c_value: float
    threshold_N: int

    @property
    def error_rate(self) -> float:
        return self.errors / self.trials


def limits_w(cfg: LimitsConfig) -> np.ndarray:
    if cfg.W is not None:
        W = np.atleast_2d(np.asarray(cfg.W, dtype=float))
    elif cfg.w_file:
        from .matio import read_matrix

        W = read_matrix(cfg.w_file)
    else:
        return default_w(cfg.K, cfg.L)
    if W.shape != (cfg.K, cfg.L):
        raise ValueError(f"W has shape {W.shape}, expected ({cfg.K}, {cfg.L})")
    return W


def run_limits_sweep(cfg: LimitsConfig) -> list[LimitsRow]:
    """ML-decoder error rate for every ``N`` in ``[n_min, n_max]``."""
    W = limits_w(cfg)
    if not 1 <= cfg.n_min <= cfg.n_max:
        raise ValueError("need 1 <= n_min <= n_max")
    report = c_of_w(W, cfg.sigma_phi_sq, cfg.sigma_v_sq)
    thr = threshold_measurements(cfg.M, report)
    rows = []
    for i, N in enumerate(range(cfg.n_min, cfg.n_max + 1)):
        er = mc_error_rate(W, cfg.M, N, cfg.sigma_v_sq, cfg.trials,
                           derive_seed(cfg.seed, "limits", i),
                           sigma_phi_sq=cfg.sigma_phi_sq, threads=cfg.threads)
        rows.append(LimitsRow(N, er.trials, er.errors, er.ci_low, er.ci_high,
                              report.c_value, thr))
    return rows


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.12g}"
    return str(v)


def _csv(header: Iterable[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def sweep_csv(results: Sequence[SweepResult]) -> str:
    return _csv(SWEEP_COLUMNS, (
        (r.experiment, r.solver, r.param_name, r.param_value, r.trials, r.mean_nmse,
         r.success_rate, r.ci_halfwidth, r.mean_wall_time_s) for r in results))


def limits_csv(rows: Sequence[LimitsRow]) -> str:
    return _csv(LIMITS_COLUMNS, (
        (r.N, r.trials, r.errors, r.error_rate, r.ci_low, r.ci_high, r.c_value, r.threshold_N)
        for r in rows))
