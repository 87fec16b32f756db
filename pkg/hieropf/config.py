"""
Run configuration.

``resolve_config`` merges, in decreasing precedence: CLI flags, a ``key = value``
run-config file, ``HIEROPF_*`` environment defaults (``hieropf.settings``) and the
built-in defaults below.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from hieropf import settings
from hieropf.envfile import parse_config_file
from hieropf.errors import ArgumentError

SCHEMES = ("centralized", "decentralized", "hierarchical")
COARSE_MODES = ("central", "admm")

DEFAULT_EPS = 5.0e-4
DEFAULT_MAX_STEPS = 500


@dataclass(frozen=True)
class RunConfig:
    case_path: str | None = None
    scheme: str = "hierarchical"
    partitions: int = 2
    subparts_per_partition: int | None = None  # None: about four fine nodes per subpartition
    rho: float = 1.0e6
    eps_abs: float = DEFAULT_EPS
    eps_rel: float = DEFAULT_EPS
    max_steps: int = DEFAULT_MAX_STEPS
    seed: int = 0
    workers: int = 1
    slack_cost: float = 1.0e4
    out_dir: str = "runs"
    coarse_mode: str = "central"
    partition_file: str | None = None
    database_path: str | None = None

    def validate(self) -> None:
        if self.scheme not in SCHEMES:
            raise ArgumentError(f"scheme must be one of {', '.join(SCHEMES)}", module="harness-cli")
        if self.coarse_mode not in COARSE_MODES:
            raise ArgumentError(
                f"coarse mode must be one of {', '.join(COARSE_MODES)}", module="harness-cli"
            )
        if self.partitions < 1:
            raise ArgumentError("partitions must be >= 1", module="harness-cli")
        if self.subparts_per_partition is not None and self.subparts_per_partition < 1:
            raise ArgumentError("subparts per partition must be >= 1", module="harness-cli")
        if not self.rho > 0:
            raise ArgumentError("rho must be positive", module="harness-cli")
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ArgumentError("tolerances must be positive", module="harness-cli")
        if self.max_steps < 1:
            raise ArgumentError("max steps must be >= 1", module="harness-cli")
        if self.workers < 1:
            raise ArgumentError("workers must be >= 1", module="harness-cli")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def with_scheme(self, scheme: str) -> "RunConfig":
        return replace(self, scheme=scheme)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value: Any) -> Any:
    kind = _FIELD_TYPES[name]
    if value is None:
        return None
    if isinstance(value, str):
        value = value.strip()
        if kind.endswith("| None") and value.lower() in ("", "none", "off"):
            return None
    try:
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
    except (TypeError, ValueError) as e:
        raise ArgumentError(f"invalid value for {name}: {value!r}", module="harness-cli") from e
    return str(value)


def _environment_defaults() -> dict[str, Any]:
    return {
        "rho": settings.default_rho(),
        "workers": settings.default_workers(),
        "slack_cost": settings.default_slack_cost(),
        "out_dir": settings.default_out_dir(),
        "database_path": settings.database_path(),
    }


def resolve_config(
    cli_values: Mapping[str, Any] | None = None, config_path: str | Path | None = None
) -> RunConfig:
    merged: dict[str, Any] = dict(_environment_defaults())
    if config_path is not None:
        try:
            file_values = parse_config_file(Path(config_path))
        except OSError as e:
            raise ArgumentError(f"cannot read config file {config_path}: {e}", module="harness-cli") from e
        for key, value in file_values.items():
            if key not in _FIELD_TYPES:
                raise ArgumentError(f"unknown config key '{key}' in {config_path}", module="harness-cli")
            merged[key] = _coerce(key, value)
    for key, value in (cli_values or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise ArgumentError(f"unknown option '{key}'", module="harness-cli")
        merged[key] = _coerce(key, value)
    config = RunConfig(**merged)
    config.validate()
    return config
