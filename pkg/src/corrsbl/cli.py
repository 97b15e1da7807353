"""Command-line entry point: ``corrsbl {solve,exp1,exp2,exp3,limits}``.

Settings resolve as dataclass default, then ``--config FILE``, then flags.
Every config key ``some_key`` is also a flag ``--some-key``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import harness
from .bsbl import BsblOptions, bsbl_em
from .linmodel import BlockPartition
from .matio import ConfigError, apply_overrides, read_kv, read_matrix, settable_fields, write_matrix
from .mmv import MmvProblem, msbl, tmsbl
from .tvs import TvProblem, solve_time_varying

log = logging.getLogger("corrsbl")


@dataclass
class SolveConfig:
    phi: str = ""
    y: str = ""
    solver: str = "bsbl"
    block_size: int = 1
    blocks: tuple[int, ...] = ()
    window: int = 0
    learn_corr: bool = True
    learn_lambda: bool = True
    lambda_fixed: float = 0.0
    max_iters: int = 500
    tol: float = 1e-6
    prune_gamma: float = BsblOptions.prune_gamma
    # accepted so every subcommand shares the same flags; a single solve is deterministic
    seed: int = 0
    trials: int = 1
    threads: int = 1


COMMANDS = {
    "solve": SolveConfig,
    "exp1": harness.Exp1Config,
    "exp2": harness.Exp2Config,
    "exp3": harness.Exp3Config,
    "limits": harness.LimitsConfig,
}

HELP = {
    "solve": "recover X from matrix files PHI and Y",
    "exp1": "block-sparse success rate versus intra-block correlation",
    "exp2": "MMV success rate versus inter-vector correlation",
    "exp3": "windowed recovery of a time-varying support",
    "limits": "ML support-recovery error rate versus N",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrsbl", description="Correlation-aware sparse Bayesian learning and experiment sweeps.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, cls in COMMANDS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", metavar="FILE", help="key = value settings file")
        p.add_argument("--out", metavar="FILE", help="output file (default: stdout)")
        for key in settable_fields(cls):
            p.add_argument("--" + key.replace("_", "-"), dest=f"set_{key}", metavar="VALUE")
    return parser


def resolve_config(command: str, args: argparse.Namespace):
    cfg = COMMANDS[command]()
    if args.config:
        apply_overrides(cfg, read_kv(args.config))
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("set_") and v is not None}
    return apply_overrides(cfg, flags)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def run_solve(cfg: SolveConfig, out: str | None) -> None:
    if not cfg.phi or not cfg.y:
        raise ConfigError("solve needs --phi and --y matrix files")
    phi = read_matrix(cfg.phi)
    Y = read_matrix(cfg.y)
    if Y.shape[0] != phi.shape[0] and Y.shape[1] == phi.shape[0]:
        Y = Y.T
    opts = BsblOptions(
        learn_corr=cfg.learn_corr,
        learn_lambda=cfg.learn_lambda,
        lambda_fixed=cfg.lambda_fixed or None,
        max_iters=cfg.max_iters,
        tol=cfg.tol,
        prune_gamma=cfg.prune_gamma,
    )
    if cfg.solver == "bsbl":
        if Y.shape[1] != 1:
            raise ConfigError("bsbl expects a single measurement vector")
        M = phi.shape[1]
        if cfg.blocks:
            part = BlockPartition(cfg.blocks)
        elif M % cfg.block_size == 0:
            part = BlockPartition.equal(M // cfg.block_size, cfg.block_size)
        else:
            raise ConfigError(f"block_size {cfg.block_size} does not divide M={M}")
        res = bsbl_em(phi, Y[:, 0], part, opts)
        X = res.x_hat[:, None]
        log.info("bsbl: %d iterations, r=%.4f, lambda=%.3g", res.iters, res.corr_coeff, res.lam)
    elif cfg.solver in ("tmsbl", "msbl"):
        if cfg.window:
            X = solve_time_varying(TvProblem(phi, Y, cfg.window), cfg.solver, opts).X_hat
        else:
            res = (tmsbl if cfg.solver == "tmsbl" else msbl)(MmvProblem(phi, Y), opts)
            X = res.X_hat
            log.info("%s: %d iterations, r=%.4f", cfg.solver, res.iters, res.corr_coeff)
    else:
        raise ConfigError(f"unknown solver {cfg.solver!r}; choose bsbl, tmsbl or msbl")
    if out:
        write_matrix(out, X)
    else:
        np.savetxt(sys.stdout, X, delimiter=",", fmt="%.17g")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        if args.command == "solve":
            run_solve(cfg, args.out)
        elif args.command == "limits":
            _emit(harness.limits_csv(harness.run_limits_sweep(cfg)), args.out)
        else:
            runner = getattr(harness, "run_experiment" + args.command[-1])
            _emit(harness.sweep_csv(runner(cfg)), args.out)
    except (ConfigError, ValueError, np.linalg.LinAlgError, OSError) as exc:
        print(f"corrsbl {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
