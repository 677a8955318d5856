"""Flat ``key = value`` run configuration files.

Keys mirror the command-line flags (``n``, ``rho``, ``d``, ``reps``,
``estimators``, ``seed``, ``out``, ``summary``, ``dump_chains``, ``cell_id``,
``workers``) plus the per-estimator hyperparameters understood by
:func:`bsar.harness.estimator_configs` (``gibbs.sweeps``, ``ris.R``, ...).
Lines starting with ``#`` or ``;`` are comments.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ConfigError
from .harness import HYPERPARAMETER_KEYS

__all__ = ["RUN_KEYS", "load_config", "parse_config"]

RUN_KEYS = {
    "n": int,
    "rho": float,
    "d": float,
    "reps": int,
    "estimators": lambda s: tuple(e.strip() for e in s.split(",") if e.strip()),
    "seed": int,
    "out": str,
    "summary": str,
    "dump_chains": bool,
    "cell_id": int,
    "workers": int,
}

_SECTION = "run"
_BOOLEANS = configparser.ConfigParser.BOOLEAN_STATES


def _convert(key: str, raw: str, kind):
    if kind is bool:
        try:
            return _BOOLEANS[raw.lower()]
        except KeyError:
            raise ConfigError(f"{key}: expected a boolean, got {raw!r}") from None
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def parse_config(text: str) -> tuple[dict, dict]:
    """Return ``(run_options, hyperparameters)`` from config text."""
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                       interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    run, hyper = {}, {}
    for key, raw in parser.items(_SECTION):
        if key in RUN_KEYS:
            run[key] = _convert(key, raw, RUN_KEYS[key])
        elif key in HYPERPARAMETER_KEYS:
            hyper[key] = _convert(key, raw, HYPERPARAMETER_KEYS[key])
        else:
            raise ConfigError(f"unknown key {key!r}")
    return run, hyper


def load_config(path) -> tuple[dict, dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text)
