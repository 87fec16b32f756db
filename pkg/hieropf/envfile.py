"""Parse simple ``KEY=value`` env files and TOML-style ``key = value`` run-config files."""

from __future__ import annotations

from pathlib import Path


def _unquote(value: str) -> str:
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        return value[1:-1]
    return value


def _strip_inline_comment(value: str) -> str:
    if value[:1] in "\"'":
        close = value.find(value[0], 1)
        if close != -1:
            return value[: close + 1]
        return value
    hash_at = value.find("#")
    if hash_at != -1:
        value = value[:hash_at]
    return value.strip()


def parse_env_file(path: Path) -> dict[str, str]:
    text = Path(path).read_text(encoding="utf-8-sig")
    out: dict[str, str] = {}
    for raw_line in text.splitlines():
        line = raw_line.rstrip("\r\n").strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("export "):
            line = line[7:].lstrip()
        if "=" not in line:
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            continue
        out[key] = _unquote(value.strip())
    return out


def parse_config_file(path: Path) -> dict[str, str]:
    """
    Read a run-config file: ``key = value`` lines, ``#`` comments (also inline),
    optional ``[section]`` headers (ignored). Keys are lower-cased with dashes
    turned into underscores so ``eps-abs`` and ``eps_abs`` mean the same thing.
    """
    text = Path(path).read_text(encoding="utf-8-sig")
    out: dict[str, str] = {}
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            continue
        if "=" not in line:
            continue
        key, _, value = line.partition("=")
        key = key.strip().lower().replace("-", "_")
        if not key:
            continue
        out[key] = _unquote(_strip_inline_comment(value.strip()))
    return out
