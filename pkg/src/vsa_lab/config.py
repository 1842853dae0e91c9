"""Plain-text ``section.key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Values stay strings here; typed
views are built by the consumers (:class:`ModelConfig`, :class:`TrainConfig`).
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def parse_config(text: str) -> dict:
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or any(not seg for seg in key.split(".")):
            raise ConfigError(f"line {lineno}: malformed key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def dump_config(values: dict) -> str:
    """Canonical form: keys sorted, one ``key = value`` per line."""
    return "".join(f"{k} = {values[k]}\n" for k in sorted(values))


def load_config(path) -> dict:
    return parse_config(Path(path).read_text())


def section(values: dict, name: str) -> dict:
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix)}


def int_list(text: str) -> tuple:
    text = str(text).strip()
    if not text or text.lower() == "none":
        return ()
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from exc


def as_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")
