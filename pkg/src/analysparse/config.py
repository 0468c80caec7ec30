"""Flat key=value configuration files with dotted section prefixes.

Example::

    data.p=32
    data.L=20000
    data.sigma=1.0
    train.eta2=1.0

Lines starting with '#' and blank lines are ignored.
"""
from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Bad or missing configuration key."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


def parse_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def require(cfg: dict, key: str, cast):
    if key not in cfg:
        raise ConfigError(f"missing required config key: {key}", key=key)
    return _cast(cfg, key, cast)


def optional(cfg: dict, key: str, cast, default):
    if key not in cfg:
        return default
    return _cast(cfg, key, cast)


def _cast(cfg, key, cast):
    try:
        return cast(cfg[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for config key {key}: {cfg[key]!r} ({exc})",
                          key=key) from exc


def float_list(text: str) -> list[float]:
    return [float(tok) for tok in text.replace(",", " ").split()]
