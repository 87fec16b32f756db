"""
Run reports, trace files, scheme comparisons and the SQLite run history.

The JSON report is the record of a run; the database mirror is best effort and a
run never fails because the history could not be written.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Any, Mapping, Sequence

from hieropf import __version__
from hieropf.admm import TRACE_HEADER, TraceRow
from hieropf.errors import ArgumentError

logger = logging.getLogger(__name__)

COLD_START_NOTE = (
    "flat start: V=1 clipped into its box, theta=0, generators at box midpoints, "
    "artificial slack P at its lower bound, y=0, z averaged from x"
)
WARM_START_NOTE = "coarse solution projected to the fine lifted space"
CENTRAL_START_NOTE = "single interior-point solve from the flat start"

TRACE_COLUMNS = TRACE_HEADER[1:5]


@dataclass
class RunReport:
    scheme: str
    case_name: str
    converged: bool
    steps: int
    objective: float | None
    status: str = ""
    coarse_seconds: float = 0.0
    projection_seconds: float = 0.0
    coordination_seconds: float = 0.0
    total_seconds: float = 0.0
    overhead_seconds: float = 0.0
    r_norm: float | None = None
    s_norm: float | None = None
    eps_pr: float | None = None
    eps_du: float | None = None
    certificate: dict[str, float] = field(default_factory=dict)
    coarse_objective: float | None = None
    coarse_status: str | None = None
    slack_active_power: float = 0.0
    start: str = COLD_START_NOTE
    config: dict[str, Any] = field(default_factory=dict)
    solver_options: dict[str, Any] = field(default_factory=dict)
    version: str = __version__

    def close_timings(self) -> None:
        """Set ``overhead_seconds`` so the four parts add up to ``total_seconds``."""
        parts = self.coarse_seconds + self.projection_seconds + self.coordination_seconds
        self.overhead_seconds = max(0.0, self.total_seconds - parts)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def write_report_json(report: RunReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2)


class TraceWriter:
    """Trace CSV written row by row; each row is flushed so an aborted run keeps its steps."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._file: IO[str] | None = None
        self._writer = None
        self.rows = 0

    def __enter__(self) -> "TraceWriter":
        self._file = open(self.path, "w", encoding="utf-8", newline="")
        self._writer = csv.writer(self._file)
        self._writer.writerow(TRACE_HEADER)
        self._file.flush()
        return self

    def write(self, row: TraceRow) -> None:
        if self._writer is None or self._file is None:
            raise RuntimeError("TraceWriter used outside its context")
        self._writer.writerow(row.as_tuple())
        self._file.flush()
        self.rows += 1

    def __exit__(self, *exc) -> None:
        if self._file is not None:
            self._file.close()
        self._file = None
        self._writer = None


def read_trace_csv(path: str | Path) -> list[TraceRow]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        return [
            TraceRow(
                step=int(r["step"]),
                r_norm=float(r["r_norm"]),
                s_norm=float(r["s_norm"]),
                objective=float(r["objective"]),
                aug_lagrangian=float(r["aug_lagrangian"]),
                step_seconds=float(r["step_seconds"]),
            )
            for r in reader
        ]


# ============================================================================
# Scheme comparison
# ============================================================================


def objective_gap_percent(objective: float, reference: float) -> float:
    """Relative objective gap to ``reference`` in percent."""
    if reference == 0 or not math.isfinite(reference):
        raise ArgumentError("reference objective must be finite and nonzero", module="harness-cli")
    return (objective - reference) / abs(reference) * 100.0


def step_reduction_percent(baseline_steps: int, steps: int) -> float:
    if baseline_steps <= 0:
        raise ArgumentError("baseline step count must be positive", module="harness-cli")
    return (baseline_steps - steps) / baseline_steps * 100.0


@dataclass
class Comparison:
    reports: dict[str, RunReport]
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.failures

    def gaps(self) -> dict[str, float]:
        central = self.reports.get("centralized")
        if central is None or central.objective is None:
            return {}
        return {
            scheme: objective_gap_percent(report.objective, central.objective)
            for scheme, report in self.reports.items()
            if scheme != "centralized" and report.objective is not None
        }

    def step_reduction(self) -> float | None:
        dec = self.reports.get("decentralized")
        hier = self.reports.get("hierarchical")
        if dec is None or hier is None or dec.steps <= 0:
            return None
        return step_reduction_percent(dec.steps, hier.steps)

    def to_dict(self) -> dict[str, Any]:
        return {
            "complete": self.complete,
            "reports": {scheme: report.to_dict() for scheme, report in self.reports.items()},
            "failures": dict(self.failures),
            "objective_gap_percent": self.gaps(),
            "step_reduction_percent": self.step_reduction(),
            "version": __version__,
        }


def write_comparison_json(comparison: Comparison, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(comparison.to_dict(), f, indent=2)


def write_comparison_trace(traces: Mapping[str, Sequence[TraceRow]], path: str | Path) -> None:
    """Traces side by side, one row per step; schemes that stopped early leave blank cells."""
    schemes = [s for s, rows in traces.items() if rows]
    header = ["step"] + [f"{s}_{col}" for s in schemes for col in TRACE_COLUMNS]
    by_step = {s: {row.step: row for row in traces[s]} for s in schemes}
    last = max((row.step for s in schemes for row in traces[s]), default=0)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for step in range(1, last + 1):
            line: list[Any] = [step]
            for s in schemes:
                row = by_step[s].get(step)
                line.extend([""] * 4 if row is None else row.as_tuple()[1:5])
            writer.writerow(line)


def _fmt(value: float | None, spec: str) -> str:
    return "-" if value is None else format(value, spec)


def format_summary(comparison: Comparison) -> str:
    gaps = comparison.gaps()
    lines = [f"{'scheme':<14}{'conv':>6}{'steps':>7}{'objective':>16}{'gap %':>10}{'coarse s':>10}{'total s':>10}"]
    for scheme, report in comparison.reports.items():
        lines.append(
            f"{scheme:<14}{('yes' if report.converged else 'no'):>6}{report.steps:>7}"
            f"{_fmt(report.objective, '.6f'):>16}{_fmt(gaps.get(scheme), '.3f'):>10}"
            f"{report.coarse_seconds:>10.3f}{report.total_seconds:>10.3f}"
        )
    for scheme, message in comparison.failures.items():
        lines.append(f"{scheme:<14}failed: {message}")
    reduction = comparison.step_reduction()
    if reduction is not None:
        lines.append(f"step reduction (hierarchical vs decentralized): {reduction:.1f}%")
    return "\n".join(lines)


# ============================================================================
# Run history (SQLite)
# ============================================================================


def record_run(report: RunReport, trace: Sequence[TraceRow]) -> int | None:
    """Insert the run and its trace; returns the new run id, or None without a database."""
    from hieropf.database import history_ready, session_scope
    from hieropf.orm_models import RunORM, TraceRowORM

    if not history_ready():
        return None
    with session_scope() as session:
        run = RunORM(
            scheme=report.scheme,
            case_name=report.case_name,
            converged=1 if report.converged else 0,
            steps=report.steps,
            objective=report.objective,
            coarse_seconds=report.coarse_seconds,
            coordination_seconds=report.coordination_seconds,
            total_seconds=report.total_seconds,
            report_json=json.dumps(report.to_dict()),
            created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )
        session.add(run)
        session.flush()
        for row in trace:
            session.add(
                TraceRowORM(
                    run_id=run.id,
                    step=row.step,
                    r_norm=row.r_norm,
                    s_norm=row.s_norm,
                    objective=row.objective,
                    aug_lagrangian=row.aug_lagrangian,
                    step_seconds=row.step_seconds,
                )
            )
    return run.id


def load_runs(limit: int = 20) -> list[dict[str, Any]]:
    """Most recent runs first, as dicts."""
    from sqlalchemy import select

    from hieropf.database import history_ready, session_scope
    from hieropf.orm_models import RunORM

    if not history_ready():
        return []
    with session_scope() as session:
        rows = session.scalars(select(RunORM).order_by(RunORM.id.desc()).limit(limit)).all()
        return [
            {
                "id": row.id,
                "scheme": row.scheme,
                "case_name": row.case_name,
                "converged": bool(row.converged),
                "steps": row.steps,
                "objective": row.objective,
                "total_seconds": row.total_seconds,
                "created_at": row.created_at,
            }
            for row in rows
        ]


def load_trace(run_id: int) -> list[TraceRow]:
    from sqlalchemy import select

    from hieropf.database import history_ready, session_scope
    from hieropf.orm_models import TraceRowORM

    if not history_ready():
        return []
    with session_scope() as session:
        rows = session.scalars(
            select(TraceRowORM).where(TraceRowORM.run_id == run_id).order_by(TraceRowORM.step)
        ).all()
        return [
            TraceRow(
                step=r.step,
                r_norm=r.r_norm,
                s_norm=r.s_norm,
                objective=r.objective,
                aug_lagrangian=r.aug_lagrangian,
                step_seconds=r.step_seconds,
            )
            for r in rows
        ]


def format_runs(runs: Sequence[Mapping[str, Any]]) -> str:
    lines = [f"{'id':>5}  {'scheme':<14}{'case':<16}{'conv':>6}{'steps':>7}{'objective':>16}"]
    for r in runs:
        lines.append(
            f"{r['id']:>5}  {r['scheme']:<14}{r['case_name']:<16}"
            f"{('yes' if r['converged'] else 'no'):>6}{r['steps']:>7}{_fmt(r['objective'], '.6f'):>16}"
        )
    return "\n".join(lines)
