"""Plain-text key-value files used for chains, puck parameters and scenario configs.

Format::

    # airhockey-kv 1
    # comment lines start with '#'
    key = value
    joint1.axis = 0 0 1

The first non-blank line must be the version header ``# airhockey-kv 1``.
Values are kept as strings; ``floats``/``float_value`` convert them.
"""
from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError

HEADER = "# airhockey-kv 1"


class KeyValueFile(dict):
    """Mapping ``key -> raw string`` that remembers the source line of every key."""

    def __init__(self, path=None):
        super().__init__()
        self.path = path
        self.lines = {}

    def _error(self, key, message):
        return ConfigError(message, self.path, self.lines.get(key))

    def require(self, key):
        if key not in self:
            raise ConfigError(f"missing key '{key}'", self.path)
        return self[key]

    def float_value(self, key, default=None):
        if key not in self:
            if default is None:
                raise ConfigError(f"missing key '{key}'", self.path)
            return float(default)
        try:
            return float(self[key])
        except ValueError:
            raise self._error(key, f"'{key}' is not a number: {self[key]!r}") from None

    def floats(self, key, size=None, default=None):
        if key not in self:
            if default is None:
                raise ConfigError(f"missing key '{key}'", self.path)
            return np.asarray(default, dtype=float)
        try:
            arr = np.array([float(tok) for tok in self[key].replace(",", " ").split()])
        except ValueError:
            raise self._error(key, f"'{key}' must be a list of numbers") from None
        if size is not None and arr.size != size:
            raise self._error(key, f"'{key}' needs {size} values, got {arr.size}")
        return arr

    def int_value(self, key, default=None):
        if key not in self:
            if default is None:
                raise ConfigError(f"missing key '{key}'", self.path)
            return int(default)
        try:
            return int(self[key])
        except ValueError:
            raise self._error(key, f"'{key}' is not an integer: {self[key]!r}") from None

    def str_value(self, key, default=None):
        if key not in self:
            if default is None:
                raise ConfigError(f"missing key '{key}'", self.path)
            return default
        return self[key]


def parse_kv(text, path=None):
    kv = KeyValueFile(path)
    seen_header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if not seen_header:
            if line.split() != HEADER.split():
                raise ConfigError(f"expected header '{HEADER}'", path, lineno)
            seen_header = True
            continue
        if line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", path, lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", path, lineno)
        if key in kv:
            raise ConfigError(f"duplicate key '{key}'", path, lineno)
        kv[key] = value
        kv.lines[key] = lineno
    if not seen_header:
        raise ConfigError(f"empty file, expected header '{HEADER}'", path, 1)
    return kv


def read_kv(path):
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read: {exc.strerror}", path) from None
    return parse_kv(text, path)


def format_kv(items):
    """Render ``(key, value)`` pairs; array values are space-joined with full precision."""
    out = [HEADER]
    for key, value in items:
        if isinstance(value, (list, tuple, np.ndarray)):
            value = " ".join(repr(float(v)) for v in np.ravel(value))
        elif isinstance(value, float):
            value = repr(value)
        out.append(f"{key} = {value}")
    return "\n".join(out) + "\n"
