"""
SQLAlchemy ORM models for the hieropf run history (SQLite).

One `runs` row per solved scheme; per-step ADMM diagnostics live in `trace_rows`.
"""

from __future__ import annotations

from sqlalchemy import Float, ForeignKey, Integer, Text
from sqlalchemy.orm import DeclarativeBase, Mapped, mapped_column


class Base(DeclarativeBase):
    pass


class RunORM(Base):
    """Summary of one run. `report_json` holds the full serialized report."""

    __tablename__ = "runs"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    scheme: Mapped[str] = mapped_column(Text, nullable=False)
    case_name: Mapped[str] = mapped_column(Text, nullable=False, default="")
    converged: Mapped[int] = mapped_column(Integer, nullable=False, default=0)
    steps: Mapped[int] = mapped_column(Integer, nullable=False, default=0)
    objective: Mapped[float | None] = mapped_column(Float, nullable=True)
    coarse_seconds: Mapped[float] = mapped_column(Float, nullable=False, default=0.0)
    coordination_seconds: Mapped[float] = mapped_column(Float, nullable=False, default=0.0)
    total_seconds: Mapped[float] = mapped_column(Float, nullable=False, default=0.0)
    report_json: Mapped[str] = mapped_column(Text, nullable=False, default="{}")
    created_at: Mapped[str] = mapped_column(Text, nullable=False)


class TraceRowORM(Base):
    """One ADMM step of a run; FK to runs.id with ON DELETE CASCADE."""

    __tablename__ = "trace_rows"

    id: Mapped[int] = mapped_column(Integer, primary_key=True, autoincrement=True)
    run_id: Mapped[int] = mapped_column(
        Integer,
        ForeignKey("runs.id", ondelete="CASCADE"),
        nullable=False,
        index=True,
    )
    step: Mapped[int] = mapped_column(Integer, nullable=False)
    r_norm: Mapped[float] = mapped_column(Float, nullable=False)
    s_norm: Mapped[float] = mapped_column(Float, nullable=False)
    objective: Mapped[float] = mapped_column(Float, nullable=False)
    aug_lagrangian: Mapped[float] = mapped_column(Float, nullable=False)
    step_seconds: Mapped[float] = mapped_column(Float, nullable=False)
