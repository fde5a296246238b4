"""
Flat ``key = value`` run configuration.

Lines starting with ``#`` are comments; blank lines are ignored. Model
parameters use the ``param.`` prefix (``param.g = 0.5``). ``canonical``
renders a config back to text; parsing that text reproduces the config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from .errors import ConfigError


def _int(text: str) -> int:
    return int(text)


def _float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("must be finite")
    return value


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _int_list(text: str) -> tuple[int, ...]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise ValueError("empty list")
    return tuple(out)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text

    return parse


def _str(text: str) -> str:
    if not text:
        raise ValueError("empty value")
    return text


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], object]
    default: object
    help: str


SCHEMA: dict[str, Key] = {
    "model": Key(_str, "tfim", "preset name or file:<path> to a binary term dump"),
    "n": Key(_int, 10, "number of sites"),
    "d": Key(_int, 2, "local dimension"),
    "k": Key(_int, 2, "locality (random_klocal only)"),
    "beta": Key(_float, 1.0, "inverse temperature"),
    "method": Key(_choice("window_ratio", "explicit_qbp", "explicit_dyson"), "window_ratio", "step method"),
    "l": Key(_int, 4, "window radius"),
    "l1": Key(_int, 2, "radius kept for A (explicit methods, budget)"),
    "l2": Key(_int, 1, "boundary radius (budget)"),
    "l_list": Key(_int_list, (1, 2, 3, 4, 5, 6), "window radii for sweep, e.g. 1..8"),
    "target_eps": Key(_float, 0.0, "sweep: suggest l reaching this error (0 disables)"),
    "term": Key(_int, 0, "budget: term index (0 = every term)"),
    "grid": Key(_int, 8, "Gauss-Legendre nodes per axis (budget)"),
    "t_max": Key(_float, 0.0, "QBP time cutoff (0 = 8 beta)"),
    "n_t": Key(_int, 400, "QBP quadrature nodes"),
    "m_trotter": Key(_int, 64, "QBP Trotter steps"),
    "quadrature": Key(_choice("gauss_legendre", "trapezoid"), "gauss_legendre", "QBP quadrature rule"),
    "n_tau": Key(_int, 64, "Dyson integrator steps"),
    "pad": Key(_int, 4, "extra radius used to build A before truncation"),
    "seed": Key(_int, 0, "master seed"),
    "seeds": Key(_int, 100, "certify: number of seeds"),
    "tau_min": Key(_float, 1e-3, "certify: smallest imaginary time (log-uniform draw)"),
    "tau_max": Key(_float, 0.5, "certify: largest imaginary time"),
    "l2_max": Key(_int, 8, "certify: largest truncation radius"),
    "m_max": Key(_int, 6, "certify: largest commutator depth"),
    "bound_scale": Key(_float, 1.0, "certify: multiply every bound (self-test hook)"),
    "op": Key(_choice("x", "y", "z"), "z", "clustering: single-site Pauli observable"),
    "site": Key(_int, 1, "clustering: site of the fixed observable"),
    "transfer": Key(_choice("auto", "yes", "no"), "auto", "oracle: transfer-matrix comparison"),
    "out": Key(_str, "gibbs1d_out", "output directory"),
    "cap": Key(_int, 0, "matrix dimension cap (0 = GIBBS1D_CAP or default)"),
    "threads": Key(_int, 1, "worker threads for the step map"),
    "timings": Key(_bool, False, "add a time_ms column to steps CSV"),
}

PARAM_PREFIX = "param."


def defaults() -> dict:
    return {key: spec.default for key, spec in SCHEMA.items()}


def parse_value(key: str, text: str, where: str = "") -> object:
    if key.startswith(PARAM_PREFIX):
        if len(key) == len(PARAM_PREFIX):
            raise ConfigError(f"{where}empty parameter name")
        try:
            return _float(text)
        except ValueError as exc:
            raise ConfigError(f"{where}bad value {text!r} for {key}: {exc}") from None
    if key not in SCHEMA:
        raise ConfigError(f"{where}unknown key {key!r}")
    try:
        return SCHEMA[key].parse(text)
    except ValueError as exc:
        raise ConfigError(f"{where}bad value {text!r} for {key}: {exc}") from None


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse config text into a ``{key: value}`` dict of the keys present."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in raw:
            col = len(raw) - len(raw.lstrip()) + 1
            raise ConfigError(f"{source}:{lineno}:{col}: expected key = value")
        key_part, value_part = raw.split("=", 1)
        key = key_part.strip()
        key_col = len(key_part) - len(key_part.lstrip()) + 1
        if not key:
            raise ConfigError(f"{source}:{lineno}:{key_col}: missing key")
        value = value_part.split("#", 1)[0].strip()
        value_col = len(key_part) + 2 + len(value_part) - len(value_part.lstrip())
        if key in out:
            raise ConfigError(f"{source}:{lineno}:{key_col}: duplicate key {key!r}")
        if key not in SCHEMA and not key.startswith(PARAM_PREFIX):
            raise ConfigError(f"{source}:{lineno}:{key_col}: unknown key {key!r}")
        out[key] = parse_value(key, value, f"{source}:{lineno}:{value_col}: ")
    return out


def _format(value: object) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def canonical(config: dict) -> str:
    """Sorted ``key = value`` lines; schema keys first, then model parameters."""
    lines = [f"{key} = {_format(config[key])}" for key in SCHEMA if key in config]
    lines += [f"{key} = {_format(config[key])}" for key in sorted(config) if key.startswith(PARAM_PREFIX)]
    return "\n".join(lines) + "\n"


def model_params(config: dict) -> dict:
    return {key[len(PARAM_PREFIX) :]: value for key, value in config.items() if key.startswith(PARAM_PREFIX)}
