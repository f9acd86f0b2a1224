"""Session metrics: # tests, comp pass, exec pass, line and branch coverage."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Optional

from .model import TestArtifact, TestStatus
from .runner import CoverageOutcome

_COMPILED = {TestStatus.COMPILED, TestStatus.PASSED, TestStatus.FAILED}


def percent(num: int, den: int) -> Optional[float]:
    """100 * num / den rounded half-up to 2 decimals; None when den is 0."""
    if den == 0:
        return None
    value = (Decimal(100 * num) / Decimal(den)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    return float(value)


@dataclass(frozen=True)
class ReportRow:
    scope: str  # "crate" or "focal"
    name: str
    n_tests: int
    comp_pass_pct: Optional[float]
    exec_pass_pct: Optional[float]
    line_cov_pct: Optional[float]
    branch_cov_pct: Optional[float]
    tokens_in: int
    tokens_out: int
    repair_rounds_total: int
    valid: bool = True
    note: Optional[str] = None


@dataclass(frozen=True)
class SessionReport:
    rows: tuple[ReportRow, ...] = ()
    truncated: bool = False

    def to_json(self):
        return {"truncated": self.truncated, "rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_json(cls, data):
        names = [f.name for f in fields(ReportRow)]
        return cls(rows=tuple(ReportRow(**{k: r[k] for k in names}) for r in data["rows"]),
                   truncated=bool(data["truncated"]))


def _row(scope, name, arts, cov: Optional[CoverageOutcome]):
    generated = len(arts)
    compiled = sum(a.status in _COMPILED for a in arts)
    passed = sum(a.status is TestStatus.PASSED for a in arts)
    return ReportRow(
        scope=scope,
        name=name,
        n_tests=generated,
        comp_pass_pct=percent(compiled, generated),
        exec_pass_pct=percent(passed, compiled),
        line_cov_pct=percent(cov.lines_covered, cov.lines_total) if cov and generated else None,
        branch_cov_pct=percent(cov.branches_covered, cov.branches_total) if cov and generated else None,
        tokens_in=sum(a.tokens_in for a in arts),
        tokens_out=sum(a.tokens_out for a in arts),
        repair_rounds_total=sum(a.repair_rounds_used for a in arts),
    )


def aggregate(artifacts: Iterable[TestArtifact], cov: Optional[CoverageOutcome] = None,
              crate: str = "crate", invalid: Iterable[tuple[str, str]] = (),
              truncated: bool = False) -> SessionReport:
    """Fold artifacts into one crate row plus one row per focal function.

    Coverage is measured for the whole suite, so only the crate row carries
    it. ``invalid`` lists ``(focal_id, reason)`` pairs for records that could
    not be read; they appear as rows flagged ``valid=False``.
    """
    artifacts = list(artifacts)
    by_focal: dict[str, list] = {}
    for a in artifacts:
        by_focal.setdefault(a.focal_id, []).append(a)
    rows = [_row("crate", crate, artifacts, cov)]
    bad = dict(invalid)
    for fid in sorted(set(by_focal) | set(bad)):
        if fid in bad:
            rows.append(ReportRow("focal", fid, 0, None, None, None, None, 0, 0, 0, valid=False, note=bad[fid]))
        else:
            rows.append(_row("focal", fid, by_focal[fid], None))
    return SessionReport(tuple(rows), truncated)


_COLUMNS = ["Scope", "Name", "# Tests", "Comp Pass (%)", "Exec Pass (%)", "Line Cov (%)",
            "Branch Cov (%)", "Tokens In", "Tokens Out", "Repair Rounds"]


def _cell(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.2f}"
    return str(v)


def render(report: SessionReport, fmt: str = "json") -> bytes:
    if fmt == "json":
        return (json.dumps(report.to_json(), indent=2) + "\n").encode("utf-8")
    if fmt not in ("markdown", "md"):
        raise ValueError(f"unknown report format {fmt!r}")
    lines = ["| " + " | ".join(_COLUMNS) + " |", "|" + "|".join(["---"] * len(_COLUMNS)) + "|"]
    for r in report.rows:
        name = r.name if r.valid else f"{r.name} (invalid: {r.note})"
        cells = [r.scope, name, r.n_tests, r.comp_pass_pct, r.exec_pass_pct, r.line_cov_pct,
                 r.branch_cov_pct, r.tokens_in, r.tokens_out, r.repair_rounds_total]
        lines.append("| " + " | ".join(_cell(c) for c in cells) + " |")
    if report.truncated:
        lines.append("")
        lines.append("Session truncated: the token budget ran out before every focal function was processed.")
    return ("\n".join(lines) + "\n").encode("utf-8")
