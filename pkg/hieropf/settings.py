"""
Environment-driven configuration.

Loads optional env files from the **project root** (parent of the ``hieropf``
package), not only the process cwd, so ``HIEROPF_*`` variables work when running
``python app.py`` from any working directory.

Files are loaded in order. A variable is only skipped if it is **already set to a
non-empty value** in the process environment.

1. ``.env.development``: local overrides (gitignored)
2. ``.env``: generic local overrides

Run-level knobs (rho, workers, ...) read here are only the *defaults*; a run-config
file and CLI flags override them (see ``hieropf.config``).
"""

from __future__ import annotations

import os
from pathlib import Path

from hieropf.envfile import parse_env_file


def _project_root() -> Path:
    return Path(__file__).resolve().parent.parent


def _env_nonempty(name: str) -> bool:
    v = os.environ.get(name)
    return v is not None and str(v).strip() != ""


def _load_dotenv_files() -> None:
    root = _project_root()
    for name in (".env.development", ".env"):
        path = root / name
        if not path.is_file():
            continue
        for key, value in parse_env_file(path).items():
            if _env_nonempty(key):
                continue
            os.environ[key] = value


_load_dotenv_files()


def _env_str(name: str, default: str) -> str:
    raw = os.environ.get(name)
    if raw is None or not raw.strip():
        return default
    return raw.strip()


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or not str(raw).strip():
        return default
    try:
        return int(str(raw).strip(), 10)
    except ValueError:
        return default


def _env_float(name: str, default: float) -> float:
    raw = os.environ.get(name)
    if raw is None or not str(raw).strip():
        return default
    try:
        return float(str(raw).strip())
    except ValueError:
        return default


def log_level() -> str:
    return _env_str("HIEROPF_LOG_LEVEL", "WARNING").upper()


def default_workers() -> int:
    n = _env_int("HIEROPF_WORKERS", 1)
    return n if n >= 1 else 1


def default_out_dir() -> str:
    return _env_str("HIEROPF_OUT_DIR", "runs")


def default_rho() -> float:
    return _env_float("HIEROPF_RHO", 1.0e6)


def default_slack_cost() -> float:
    return _env_float("HIEROPF_SLACK_COST", 1.0e4)


def database_path() -> str | None:
    """SQLite run-history file; ``None`` when persistence is switched off."""
    raw = _env_str("HIEROPF_DATABASE_PATH", "hieropf_runs.db")
    if raw.lower() in ("off", "none", "0", "false"):
        return None
    return raw
