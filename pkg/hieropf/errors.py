"""
Exception hierarchy shared by every hieropf module.

Each error carries the name of the module that raised it so the CLI can print a
tagged message (``[partitioner] ...``) and map it to an exit code.
"""

from __future__ import annotations


class HieropfError(Exception):
    """Base class; ``module`` names the subsystem that failed."""

    default_module = "hieropf"

    def __init__(self, message: str, *, module: str | None = None) -> None:
        super().__init__(message)
        self.message = message
        self.module = module or self.default_module

    def __str__(self) -> str:
        return f"[{self.module}] {self.message}"


class CaseParseError(HieropfError):
    """Case text is malformed or uses an unsupported feature."""

    default_module = "network-model"

    def __init__(self, message: str, *, section: str | None = None, module: str | None = None) -> None:
        if section:
            message = f"section '{section}': {message}"
        super().__init__(message, module=module)
        self.section = section


class CaseIntegrityError(HieropfError):
    """Case data refers to unknown ids or violates a structural invariant."""

    default_module = "network-model"


class SingularBranchError(HieropfError):
    default_module = "network-model"


class ArgumentError(HieropfError, ValueError):
    """Caller passed an argument outside an operation's precondition."""


class PartitionValidationError(HieropfError):
    default_module = "partitioner"


class NumericalFailure(HieropfError):
    """An NLP solve could not produce a usable step or solution."""

    default_module = "nlp-solver"

    def __init__(
        self,
        message: str,
        *,
        partition: int | None = None,
        step: int | None = None,
        module: str | None = None,
    ) -> None:
        where = []
        if partition is not None:
            where.append(f"partition {partition}")
        if step is not None:
            where.append(f"step {step}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message, module=module)
        self.partition = partition
        self.step = step
