"""Flat ``key = value`` run configuration with dotted section names.

Example::

    # fit a linear model with borrowing
    command = fit
    model = blm
    prior = flat-half
    B = 1000
    data.path = trial.csv
    schema.outcome = cpd
    schema.covariates = age, ftnd
    blm.formula = age, ftnd, A:age

Lines starting with ``#`` are comments; later keys override earlier ones.
"""

from __future__ import annotations

import hashlib
import platform
from pathlib import Path

from .errors import ConfigError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def load(path) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_text(p.read_text(), str(p))


def dumps(cfg: dict[str, str]) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def config_hash(cfg: dict[str, str]) -> str:
    return hashlib.sha256(dumps(cfg).encode()).hexdigest()


class Options:
    """Typed accessors over a resolved key/value mapping."""

    def __init__(self, values: dict[str, str]):
        self.values = dict(values)
        self.used: set[str] = set()
        self.defaults: dict[str, str] = {}

    def has(self, key: str) -> bool:
        return key in self.values and self.values[key] != ""

    def str(self, key: str, default=None):
        self.used.add(key)
        if not self.has(key):
            if default is None:
                raise ConfigError(f"missing required option {key!r}")
            self.defaults[key] = str(default)
            return default
        return self.values[key]

    def opt_str(self, key: str):
        self.used.add(key)
        return self.values[key] if self.has(key) else None

    def int(self, key: str, default=None):
        v = self.str(key, None if default is None else str(default))
        try:
            return int(v)
        except ValueError:
            raise ConfigError(f"option {key!r} must be an integer (got {v!r})") from None

    def float(self, key: str, default=None):
        v = self.str(key, None if default is None else repr(float(default)))
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"option {key!r} must be a number (got {v!r})") from None

    def bool(self, key: str, default: bool = False) -> bool:
        v = self.str(key, "true" if default else "false").lower()
        if v in _TRUE:
            return True
        if v in _FALSE:
            return False
        raise ConfigError(f"option {key!r} must be true/false (got {v!r})")

    def list(self, key: str, default=None):
        self.used.add(key)
        if not self.has(key):
            return default
        return [t.strip() for t in self.values[key].split(",") if t.strip()]

    def section(self, prefix: str) -> dict[str, str]:
        pre = prefix + "."
        keys = [k for k in self.values if k.startswith(pre)]
        self.used.update(keys)
        return {k[len(pre):]: self.values[k] for k in keys}

    def resolved(self) -> dict[str, str]:
        """Explicit values plus every default that was consulted."""
        return {**self.defaults, **self.values}

    def unknown(self) -> list[str]:
        return sorted(k for k in self.values if k not in self.used)


def versions() -> dict[str, str]:
    import numpy
    import scipy

    from . import __version__
    from .bart import backend

    return {"version.mempate": __version__, "version.numpy": numpy.__version__,
            "version.scipy": scipy.__version__, "version.python": platform.python_version(),
            "version.kernels": backend.NAME}


def write_manifest(path, resolved: dict[str, str], outputs: list[str]) -> None:
    data = dict(resolved)
    data["manifest.config_hash"] = config_hash(resolved)
    data["manifest.outputs"] = ", ".join(outputs)
    data.update(versions())
    Path(path).write_text(dumps(data))
