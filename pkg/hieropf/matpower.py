"""
MATPOWER ``.m`` case reader.

Only the ``mpc.baseMVA``, ``mpc.bus``, ``mpc.gen``, ``mpc.branch`` and
``mpc.gencost`` assignments are read; everything is converted to per unit.
"""

from __future__ import annotations

import logging
import math
import re
from pathlib import Path

from hieropf.errors import CaseIntegrityError, CaseParseError
from hieropf.network import Branch, Bus, Generator, NetworkCase, DEFAULT_ANGLE_LIMITS

logger = logging.getLogger(__name__)

REQUIRED_SECTIONS = ("bus", "gen", "branch", "gencost")

_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)
_BASE_MVA_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;")
_NAME_RE = re.compile(r"function\s+\w+\s*=\s*(\w+)")

# Column positions (0-based) in the MATPOWER tables.
BUS_I, BUS_TYPE, PD, QD, GS, BS = 0, 1, 2, 3, 4, 5
VMAX, VMIN = 11, 12
GEN_BUS, QMAX, QMIN, GEN_STATUS, PMAX, PMIN = 0, 3, 4, 7, 8, 9
F_BUS, T_BUS, BR_R, BR_X, BR_B, TAP, SHIFT, BR_STATUS, ANGMIN, ANGMAX = 0, 1, 2, 3, 4, 8, 9, 10, 11, 12
MODEL, NCOST, COST = 0, 3, 4

REF_BUS_TYPE = 3
ISOLATED_BUS_TYPE = 4
POLYNOMIAL_COST, PIECEWISE_COST = 2, 1


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_rows(section: str, body: str, min_cols: int) -> list[list[float]]:
    rows: list[list[float]] = []
    for raw in body.replace(";", "\n").splitlines():
        raw = raw.replace(",", " ").strip()
        if not raw:
            continue
        try:
            row = [float(tok) for tok in raw.split()]
        except ValueError as e:
            raise CaseParseError(f"non-numeric entry in row '{raw}'", section=section) from e
        if len(row) < min_cols:
            raise CaseParseError(
                f"row has {len(row)} columns, expected at least {min_cols}", section=section
            )
        rows.append(row)
    return rows


def _angle_limit(deg: float) -> float | None:
    if abs(deg) >= 360.0:
        return None
    return math.radians(deg)


def _linear_cost(row: list[float], gen_id: int) -> tuple[float, bool]:
    """Per-MW linear coefficient of a gencost row and whether higher-order terms were dropped."""
    model = int(row[MODEL])
    n = int(row[NCOST])
    coeffs = row[COST : COST + (2 * n if model == PIECEWISE_COST else n)]
    if model == POLYNOMIAL_COST:
        if len(coeffs) < n:
            raise CaseParseError(f"generator {gen_id}: expected {n} cost coefficients", section="gencost")
        if n < 2:
            return 0.0, False
        dropped = any(c != 0.0 for c in coeffs[: n - 2])
        return coeffs[n - 2], dropped
    if model == PIECEWISE_COST:
        if len(coeffs) < 2 * n or n < 2:
            raise CaseParseError(f"generator {gen_id}: malformed piecewise cost", section="gencost")
        p0, c0, p1, c1 = coeffs[0], coeffs[1], coeffs[-2], coeffs[-1]
        logger.warning("generator %d: piecewise-linear cost reduced to its average slope", gen_id)
        return ((c1 - c0) / (p1 - p0) if p1 != p0 else 0.0), False
    raise CaseParseError(f"generator {gen_id}: unknown cost model {model}", section="gencost")


def parse_matpower(text: str) -> NetworkCase:
    text = _strip_comments(text)
    sections = {m.group(1): m.group(2) for m in _MATRIX_RE.finditer(text)}
    base_match = _BASE_MVA_RE.search(text)
    if base_match is None:
        raise CaseParseError("missing mpc.baseMVA", section="baseMVA")
    base = float(base_match.group(1))
    if not base > 0:
        raise CaseParseError(f"baseMVA must be positive, got {base}", section="baseMVA")
    for name in REQUIRED_SECTIONS:
        if name not in sections:
            raise CaseParseError(f"missing mpc.{name}", section=name)
    name_match = _NAME_RE.search(text)
    case_name = name_match.group(1) if name_match else "case"

    bus_rows = _parse_rows("bus", sections["bus"], VMIN + 1)
    gen_rows = _parse_rows("gen", sections["gen"], PMIN + 1)
    branch_rows = _parse_rows("branch", sections["branch"], BR_STATUS + 1)
    cost_rows = _parse_rows("gencost", sections["gencost"], COST)

    buses: list[Bus] = []
    isolated: set[int] = set()
    seen: set[int] = set()
    vmin, vmax = [], []
    for row in bus_rows:
        bus_id = int(row[BUS_I])
        if bus_id in seen:
            raise CaseIntegrityError(f"duplicate bus id {bus_id}")
        seen.add(bus_id)
        if int(row[BUS_TYPE]) == ISOLATED_BUS_TYPE:
            isolated.add(bus_id)
            continue
        buses.append(
            Bus(
                id=bus_id,
                active_load=-row[PD] / base,
                reactive_load=-row[QD] / base,
                is_reference=int(row[BUS_TYPE]) == REF_BUS_TYPE,
                shunt_conductance=row[GS] / base,
                shunt_susceptance=row[BS] / base,
            )
        )
        vmin.append(row[VMIN])
        vmax.append(row[VMAX])
    if isolated:
        logger.warning("skipping %d isolated bus(es): %s", len(isolated), sorted(isolated))
    known = {b.id for b in buses}

    def _check_bus(bus_id: int, what: str) -> bool:
        if bus_id in known:
            return True
        if bus_id in isolated:
            return False
        raise CaseIntegrityError(f"{what} references unknown bus {bus_id}")

    branches: list[Branch] = []
    skipped_branches = 0
    for n, row in enumerate(branch_rows, start=1):
        f, t = int(row[F_BUS]), int(row[T_BUS])
        status = row[BR_STATUS]
        if not (_check_bus(f, f"branch {n}") and _check_bus(t, f"branch {n}")) or status == 0:
            skipped_branches += 1
            continue
        if row[SHIFT] != 0.0:
            raise CaseParseError(f"branch {n}: phase shifters are unsupported", section="branch")
        angmin = _angle_limit(row[ANGMIN]) if len(row) > ANGMAX else None
        angmax = _angle_limit(row[ANGMAX]) if len(row) > ANGMAX else None
        if angmin == 0.0 and angmax == 0.0:
            angmin = angmax = None
        branches.append(
            Branch(
                from_bus=f,
                to_bus=t,
                resistance=row[BR_R],
                reactance=row[BR_X],
                charging_susceptance=row[BR_B],
                tap_ratio=row[TAP] if row[TAP] != 0.0 else 1.0,
                angle_min=angmin,
                angle_max=angmax,
            )
        )
    if skipped_branches:
        logger.warning("skipping %d out-of-service or isolated branch(es)", skipped_branches)

    if len(cost_rows) < len(gen_rows):
        raise CaseParseError(
            f"{len(cost_rows)} cost rows for {len(gen_rows)} generators", section="gencost"
        )
    generators: list[Generator] = []
    dropped_terms = 0
    for n, (row, cost_row) in enumerate(zip(gen_rows, cost_rows), start=1):
        bus_id = int(row[GEN_BUS])
        if not _check_bus(bus_id, f"generator {n}") or row[GEN_STATUS] <= 0:
            continue
        per_mw, dropped = _linear_cost(cost_row, n)
        dropped_terms += dropped
        generators.append(
            Generator(
                id=n,
                bus=bus_id,
                unit_cost=per_mw * base,
                p_min=row[PMIN] / base,
                p_max=row[PMAX] / base,
                q_min=row[QMIN] / base,
                q_max=row[QMAX] / base,
            )
        )
    if dropped_terms:
        logger.warning(
            "ignored quadratic/higher cost terms on %d generator(s); using linear coefficients",
            dropped_terms,
        )
    if len(generators) < len(gen_rows):
        logger.warning("skipping %d out-of-service generator(s)", len(gen_rows) - len(generators))

    if not buses:
        raise CaseParseError("no in-service buses", section="bus")
    if len(set(vmin)) > 1 or len(set(vmax)) > 1:
        logger.warning(
            "bus voltage limits differ; using the envelope [%g, %g]", min(vmin), max(vmax)
        )
    case = NetworkCase(
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(generators),
        angle_limits=DEFAULT_ANGLE_LIMITS,
        voltage_limits=(min(vmin), max(vmax)),
        base_mva=base,
        name=case_name,
    )
    case.validate()
    return case


def read_matpower(path: str | Path) -> NetworkCase:
    return parse_matpower(Path(path).read_text(encoding="utf-8"))


def load_case(path: str | Path) -> NetworkCase:
    """Read a MATPOWER ``.m`` file or a canonical ``.json`` case."""
    from hieropf.network import read_case_json

    path = Path(path)
    if path.suffix.lower() == ".json":
        return read_case_json(path)
    return read_matpower(path)
