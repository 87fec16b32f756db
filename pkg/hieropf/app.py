"""
hieropf command line.

Subcommands:
  solve      run one scheme (centralized, decentralized, hierarchical) on a case
  compare    run several schemes with shared settings and compare them
  partition  write a partition file and print partition statistics
  coarsen    write the coarse case and the fine-to-coarse map
  runs       list the recorded run history

Exit codes: 0 converged, 2 finished without converging, 1 error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from hieropf import __version__, admm
from hieropf.coarsener import (
    aggregate_data,
    build_coarse_graph,
    project_solution,
    solve_coarse,
    subpartition,
    write_coarse_case_json,
    write_fine_to_coarse,
)
from hieropf.config import SCHEMES, RunConfig, resolve_config
from hieropf.errors import ArgumentError, HieropfError, NumericalFailure
from hieropf.logs import configure_logging
from hieropf.matpower import load_case
from hieropf.network import NetworkCase, add_slack_generators
from hieropf.nlp import STATUS_INFEASIBLE_STEP, STATUS_NUMERICAL_FAILURE, STATUS_OPTIMAL, SolverOptions
from hieropf.opf import GridData, grid_from_case, solve_central
from hieropf.partitioner import (
    Partitioning,
    build_lifted,
    load_partition_file,
    partition_graph,
    write_partition_file,
)
from hieropf.reports import (
    CENTRAL_START_NOTE,
    COLD_START_NOTE,
    WARM_START_NOTE,
    Comparison,
    RunReport,
    TraceWriter,
    format_runs,
    format_summary,
    load_runs,
    load_trace,
    record_run,
    write_comparison_json,
    write_comparison_trace,
    write_report_json,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

_db_available: bool = False


class _Parser(argparse.ArgumentParser):
    """Usage errors become ArgumentError so they share the exit-code mapping."""

    def error(self, message: str):  # type: ignore[override]
        raise ArgumentError(message, module="harness-cli")


# ============================================================================
# Setup helpers
# ============================================================================


def _db_init(database_path: str | None) -> None:
    global _db_available
    _db_available = False
    if database_path is None:
        return
    try:
        from hieropf.database import init_engine

        _db_available = init_engine(database_path)
        if not _db_available:
            print("Run history unavailable (continuing without it): init_engine returned False", file=sys.stderr)
    except Exception as e:
        print(f"Run history unavailable (continuing without it): {e}", file=sys.stderr)


def _record(report: RunReport, trace: Sequence[admm.TraceRow]) -> None:
    if not _db_available:
        return
    try:
        run_id = record_run(report, trace)
        logger.info("recorded run %s", run_id)
    except Exception as e:
        print(f"Could not record run in history: {e}", file=sys.stderr)


def _load_with_slack(config: RunConfig) -> NetworkCase:
    if not config.case_path:
        raise ArgumentError("--case is required", module="harness-cli")
    return add_slack_generators(load_case(config.case_path), config.slack_cost)


def _partitioning(case: NetworkCase, config: RunConfig) -> Partitioning:
    if config.partition_file:
        return load_partition_file(config.partition_file, nodes=case.bus_ids)
    return partition_graph(case.graph(), config.partitions, seed=config.seed)


def _admm_options(config: RunConfig) -> admm.AdmmOptions:
    return admm.AdmmOptions(
        rho=config.rho,
        eps_abs=config.eps_abs,
        eps_rel=config.eps_rel,
        max_steps=config.max_steps,
        workers=config.workers,
    )


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _slack_output(grid: GridData, states: dict[int, np.ndarray]) -> float:
    total = 0.0
    for node, state in sorted(states.items()):
        for n, g in enumerate(grid.generators_at(node)):
            if g.is_artificial_slack:
                total += float(state[2 + n])
    return total


def _owned_states(result: admm.AdmmResult) -> dict[int, np.ndarray]:
    states: dict[int, np.ndarray] = {}
    for base, x in zip(result.problem.bases, result.state.x):
        node_states = base.layout.node_states(x)
        for i in base.owned:
            states[i] = node_states[i]
    return states


# ============================================================================
# Scheme runner
# ============================================================================


def run_scheme(
    config: RunConfig, case: NetworkCase, out_dir: Path
) -> tuple[RunReport, list[admm.TraceRow]]:
    """Run ``config.scheme`` on ``case`` (slack generators already added); writes report and trace."""
    started = time.perf_counter()
    options = _admm_options(config)
    grid = grid_from_case(case)
    report = RunReport(
        scheme=config.scheme,
        case_name=case.name,
        converged=False,
        steps=0,
        objective=None,
        config=config.to_dict(),
        solver_options=SolverOptions().to_dict(),
    )
    trace: list[admm.TraceRow] = []
    trace_path = out_dir / f"{config.scheme}_trace.csv"

    if config.scheme == "centralized":
        with TraceWriter(trace_path):
            t0 = time.perf_counter()
            model, solution = solve_central(grid, options.solver)
            report.coordination_seconds = time.perf_counter() - t0
        if solution.status in (STATUS_NUMERICAL_FAILURE, STATUS_INFEASIBLE_STEP):
            raise NumericalFailure(f"central solve ended with status {solution.status}")
        report.converged = solution.status == STATUS_OPTIMAL
        report.status = solution.status
        report.objective = solution.objective
        report.certificate = {
            "stationarity": solution.stationarity,
            "feasibility": solution.feasibility,
            "complementarity": solution.complementarity,
        }
        report.slack_active_power = _slack_output(grid, model.layout.node_states(solution.x))
        report.start = CENTRAL_START_NOTE
    else:
        graph = case.graph()
        partitioning = _partitioning(case, config)
        lifted = build_lifted(graph, partitioning)
        warm = None
        if config.scheme == "hierarchical":
            structure = subpartition(graph, partitioning, config.subparts_per_partition, config.seed)
            coarse_graph = build_coarse_graph(graph, structure)
            coarse_case = aggregate_data(case, coarse_graph, structure)
            coarse = solve_coarse(coarse_case, coarse_graph, options, mode=config.coarse_mode)
            report.coarse_seconds = coarse.seconds
            report.coarse_objective = coarse.objective
            report.coarse_status = coarse.status
            t0 = time.perf_counter()
            warm = project_solution(coarse, coarse_case, lifted, grid)
            report.projection_seconds = time.perf_counter() - t0
            report.start = WARM_START_NOTE
        else:
            report.start = COLD_START_NOTE
        with TraceWriter(trace_path) as writer:

            def on_step(row: admm.TraceRow) -> None:
                trace.append(row)
                writer.write(row)

            t0 = time.perf_counter()
            result = admm.run(lifted, grid, options, warm_start=warm, on_step=on_step)
            report.coordination_seconds = time.perf_counter() - t0
        state = result.state
        report.converged = result.converged
        report.status = "converged" if result.converged else "max-steps"
        report.steps = state.step
        report.objective = state.objective
        report.r_norm = state.r_norm
        report.s_norm = state.s_norm
        report.eps_pr = state.eps_pr
        report.eps_du = state.eps_du
        report.certificate = dict(result.certificate)
        report.slack_active_power = _slack_output(grid, _owned_states(result))

    report.total_seconds = time.perf_counter() - started
    report.close_timings()
    try:
        write_report_json(report, out_dir / f"{config.scheme}_report.json")
    except OSError as e:
        print(f"Could not write report for {config.scheme}: {e}", file=sys.stderr)
    return report, trace


# ============================================================================
# Commands
# ============================================================================


def cmd_solve(config: RunConfig) -> int:
    case = _load_with_slack(config)
    out_dir = _out_dir(config)
    _db_init(config.database_path)
    report, trace = run_scheme(config, case, out_dir)
    _record(report, trace)
    print(
        f"{report.scheme}: converged={'yes' if report.converged else 'no'} steps={report.steps} "
        f"objective={report.objective:.6f} coarse={report.coarse_seconds:.3f}s "
        f"coordination={report.coordination_seconds:.3f}s total={report.total_seconds:.3f}s"
    )
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_compare(config: RunConfig, schemes: Sequence[str]) -> int:
    schemes = list(dict.fromkeys(schemes))
    if len(schemes) < 2:
        raise ArgumentError("compare needs at least two schemes", module="harness-cli")
    unknown = [s for s in schemes if s not in SCHEMES]
    if unknown:
        raise ArgumentError(f"unknown scheme(s): {', '.join(unknown)}", module="harness-cli")
    case = _load_with_slack(config)
    out_dir = _out_dir(config)
    _db_init(config.database_path)
    comparison = Comparison(reports={})
    traces: dict[str, list[admm.TraceRow]] = {}
    for scheme in schemes:
        try:
            report, trace = run_scheme(config.with_scheme(scheme), case, out_dir)
        except HieropfError as e:
            logger.error("%s run failed: %s", scheme, e)
            comparison.failures[scheme] = str(e)
            continue
        comparison.reports[scheme] = report
        traces[scheme] = trace
        _record(report, trace)
    try:
        write_comparison_json(comparison, out_dir / "comparison.json")
        write_comparison_trace(traces, out_dir / "comparison_trace.csv")
    except OSError as e:
        print(f"Could not write comparison files: {e}", file=sys.stderr)
    print(format_summary(comparison))
    if not comparison.reports:
        return EXIT_ERROR
    if comparison.complete and all(r.converged for r in comparison.reports.values()):
        return EXIT_OK
    return EXIT_NOT_CONVERGED


def _graph_stats(label: str, nodes: int, edges: int, coupling: int, generators: int, variables: int) -> str:
    return f"{label:<8}{nodes:>8}{edges:>8}{coupling:>10}{generators:>12}{variables:>11}"


def _stats_header() -> str:
    return f"{'':<8}{'nodes':>8}{'edges':>8}{'coupling':>10}{'generators':>12}{'variables':>11}"


def cmd_partition(config: RunConfig) -> int:
    case = _load_with_slack(config)
    out_dir = _out_dir(config)
    graph = case.graph()
    partitioning = _partitioning(case, config)
    lifted = build_lifted(graph, partitioning)
    path = out_dir / "partition.txt"
    write_partition_file(partitioning, path)
    print(f"wrote {path}")
    print(_stats_header())
    print(
        _graph_stats(
            "fine",
            graph.number_of_nodes(),
            graph.number_of_edges(),
            len(lifted.global_coupling),
            len(case.generators),
            2 * len(case.buses) + 2 * len(case.generators),
        )
    )
    for k in range(1, partitioning.num_parts + 1):
        view = lifted.view(k)
        print(f"  partition {k}: {len(view.owned)} owned, {len(view.ghosts)} ghost, {len(view.coupling)} coupling")
    return EXIT_OK


def cmd_coarsen(config: RunConfig) -> int:
    case = _load_with_slack(config)
    out_dir = _out_dir(config)
    graph = case.graph()
    partitioning = _partitioning(case, config)
    lifted = build_lifted(graph, partitioning)
    structure = subpartition(graph, partitioning, config.subparts_per_partition, config.seed)
    coarse_graph = build_coarse_graph(graph, structure)
    coarse_case = aggregate_data(case, coarse_graph, structure)
    write_partition_file(partitioning, out_dir / "partition.txt")
    write_coarse_case_json(coarse_case, out_dir / "coarse_case.json")
    write_fine_to_coarse(coarse_case, out_dir / "fine_to_coarse.txt")
    print(f"wrote partition.txt, coarse_case.json and fine_to_coarse.txt to {out_dir}")
    print(_stats_header())
    print(
        _graph_stats(
            "fine",
            graph.number_of_nodes(),
            graph.number_of_edges(),
            len(lifted.global_coupling),
            len(case.generators),
            2 * len(case.buses) + 2 * len(case.generators),
        )
    )
    print(
        _graph_stats(
            "coarse",
            len(coarse_graph.nodes),
            len(coarse_graph.edges),
            len(coarse_graph.coupling.nodes),
            len(coarse_case.grid.generators),
            coarse_case.variable_count,
        )
    )
    return EXIT_OK


def cmd_runs(database_path: str | None, limit: int, run_id: int | None) -> int:
    if limit < 1:
        raise ArgumentError("--limit must be >= 1", module="harness-cli")
    _db_init(database_path)
    if not _db_available:
        print("No run history available.")
        return EXIT_ERROR
    if run_id is not None:
        rows = load_trace(run_id)
        if not rows:
            print(f"No trace recorded for run {run_id}.")
            return EXIT_OK
        print(",".join(admm.TRACE_HEADER))
        for row in rows:
            print(",".join(str(v) for v in row.as_tuple()))
        return EXIT_OK
    runs = load_runs(limit)
    if not runs:
        print("No runs recorded yet.")
        return EXIT_OK
    print(format_runs(runs))
    return EXIT_OK


# ============================================================================
# Argument parsing
# ============================================================================

_RUN_FLAGS = (
    "case_path",
    "scheme",
    "partitions",
    "subparts_per_partition",
    "rho",
    "eps_abs",
    "eps_rel",
    "max_steps",
    "seed",
    "workers",
    "slack_cost",
    "out_dir",
    "coarse_mode",
    "partition_file",
    "database_path",
)


def _add_run_flags(p: argparse.ArgumentParser, with_scheme: bool = True) -> None:
    p.add_argument("--case", dest="case_path", help="MATPOWER .m or canonical .json case file")
    if with_scheme:
        p.add_argument("--scheme", help="centralized, decentralized or hierarchical")
    p.add_argument("--partitions", "-K", type=int, help="number of partitions K")
    p.add_argument("--subparts-per-partition", type=int, help="coarse nodes per partition")
    p.add_argument("--rho", type=float, help="ADMM penalty parameter")
    p.add_argument("--eps-abs", type=float, help="absolute stopping tolerance")
    p.add_argument("--eps-rel", type=float, help="relative stopping tolerance")
    p.add_argument("--max-steps", type=int, help="coordination step limit")
    p.add_argument("--seed", type=int, help="partitioner seed")
    p.add_argument("--workers", type=int, help="worker threads for subproblem solves")
    p.add_argument("--slack-cost", type=float, help="unit cost of artificial slack generators")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--coarse-mode", help="central or admm")
    p.add_argument("--partition-file", help="use this partitioning instead of the built-in one")
    p.add_argument("--database", dest="database_path", help="SQLite run-history file")
    p.add_argument("--config", dest="config_path", help="key = value run-config file")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hieropf", description="Hierarchical ADMM for AC optimal power flow.")
    parser.add_argument("--version", action="version", version=f"hieropf {__version__}")
    parser.add_argument("--log-level", help="DEBUG, INFO, WARNING, ERROR (default from HIEROPF_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("solve", help="run one scheme")
    _add_run_flags(p)

    p = sub.add_parser("compare", help="run several schemes on the same case")
    _add_run_flags(p, with_scheme=False)
    p.add_argument(
        "--schemes",
        default=",".join(SCHEMES),
        help="comma-separated schemes (default: all three)",
    )

    p = sub.add_parser("partition", help="partition a case")
    _add_run_flags(p, with_scheme=False)

    p = sub.add_parser("coarsen", help="build the coarse case")
    _add_run_flags(p, with_scheme=False)

    p = sub.add_parser("runs", help="list recorded runs")
    p.add_argument("--database", dest="database_path", help="SQLite run-history file")
    p.add_argument("--limit", type=int, default=20)
    p.add_argument("--trace", dest="run_id", type=int, help="print the trace of this run id")
    return parser


def _resolve(args: argparse.Namespace) -> RunConfig:
    values: dict[str, Any] = {name: getattr(args, name, None) for name in _RUN_FLAGS}
    return resolve_config(values, args.config_path)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        configure_logging(args.log_level)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_ERROR
        if args.command == "runs":
            path = resolve_config({"database_path": args.database_path}).database_path
            return cmd_runs(path, args.limit, args.run_id)
        config = _resolve(args)
        if args.command == "solve":
            return cmd_solve(config)
        if args.command == "compare":
            schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
            return cmd_compare(config, schemes)
        if args.command == "partition":
            return cmd_partition(config)
        return cmd_coarsen(config)
    except (HieropfError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        print("\nInterrupted.", file=sys.stderr)
        return EXIT_ERROR
