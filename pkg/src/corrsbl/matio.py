"""Plain-text matrix files and flat ``key = value`` config files.

A matrix file is comma-separated numbers, one row per line, no header.  Its
dimensions live in a sidecar ``<file>.dims`` holding ``rows`` and ``cols``.
"""
from __future__ import annotations

import typing
from dataclasses import fields
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


def sidecar(path) -> Path:
    return Path(str(path) + ".dims")


def read_kv(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        if key in out:
            raise ConfigError(f"{path}:{n}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def write_kv(path, values: dict) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in values.items()))


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    try:
        A = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read matrix {path}: {exc}") from exc
    meta = sidecar(path)
    if meta.exists():
        dims = read_kv(meta)
        try:
            shape = (int(dims["rows"]), int(dims["cols"]))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{meta}: needs integer 'rows' and 'cols'") from exc
        if A.shape != shape:
            if A.shape == shape[::-1] and 1 in shape:
                A = A.reshape(shape)
            else:
                raise ConfigError(f"{path} has shape {A.shape}, sidecar says {shape}")
    return A


def write_matrix(path, A) -> None:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    np.savetxt(path, A, delimiter=",", fmt="%.17g")
    write_kv(sidecar(path), {"rows": A.shape[0], "cols": A.shape[1]})


def _convert(text: str, tp, key: str):
    text = text.strip()
    try:
        if tp is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
        origin = typing.get_origin(tp)
        if origin is tuple:
            inner = typing.get_args(tp)[0]
            parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
            return tuple(_convert(p, inner, key) for p in parts)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {text!r}") from None
    raise ConfigError(f"{key!r} cannot be set from text")


def settable_fields(cls) -> dict[str, type]:
    """Config fields that can be set from text, with their resolved types."""
    hints = typing.get_type_hints(cls)
    out = {}
    for f in fields(cls):
        tp = hints[f.name]
        if tp in (bool, int, float, str) or typing.get_origin(tp) is tuple:
            out[f.name] = tp
    return out


def apply_overrides(cfg, values: dict[str, str]):
    """Set fields of the dataclass ``cfg`` from text values, in place."""
    known = settable_fields(type(cfg))
    for key, text in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for {type(cfg).__name__}")
        setattr(cfg, key, _convert(text, known[key], key))
    return cfg
