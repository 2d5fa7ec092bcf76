"""Flat key=value configuration files.

One `key=value` pair per line; `#` starts a comment line; blank lines
are skipped.  Whitespace around the key and value is trimmed.  Values
stay strings here; the CLI coerces them through the same typed flag
registry it uses for command-line arguments, so a config file and a
flag cannot disagree about a value's type.

Run manifests are these same files, written by every CLI command with
the fully resolved settings of the run, so `--config manifest.cfg`
replays it exactly.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_config(path) -> dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such config file: {p}")
    return parse_config_text(p.read_text())


def write_config(path, values: dict[str, str],
                 header: str | None = None) -> None:
    """Keys are written in the given order; values via str()."""
    lines = []
    if header:
        for h in header.split("\n"):
            lines.append(f"# {h}" if h else "#")
    for k, v in values.items():
        k = str(k).strip()
        if not k or "=" in k or "\n" in k:
            raise ConfigError(f"bad config key: {k!r}")
        s = str(v)
        if "\n" in s:
            raise ConfigError(f"config value for {k!r} contains a newline")
        lines.append(f"{k}={s}")
    Path(path).write_text("\n".join(lines) + "\n")
