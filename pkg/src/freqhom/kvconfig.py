"""Flat ``key = value`` configuration files with ``#`` comments."""

from pathlib import Path

from .errors import ConfigError


def parse_kv(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_kv(path):
    return parse_kv(Path(path).read_text())


def format_kv(mapping):
    return "".join(f"{k} = {v}\n" for k, v in mapping.items())
