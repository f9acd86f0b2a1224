"""Toolchain adapter: compile generated tests, run them, measure coverage.

``CommandRunner`` shells out to configured commands (cargo by default);
``StubRunner`` replays scripted outcomes for offline runs. Both expose
``compile``, ``run_tests`` and ``measure_coverage``.

Command strings may use ``{workspace}``, ``{test_file}``, ``{test_stem}``,
``{filter}`` and ``{suite}`` placeholders.
"""

from __future__ import annotations

import enum
import fnmatch
import json
import re
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import (
    BuildTimeout,
    CoverageError,
    CoverageToolMissing,
    DiagnosticParseError,
    ToolchainMissing,
)
from .repair import Diagnostic


@dataclass(frozen=True)
class BuildOutcome:
    success: bool
    diagnostics: tuple[Diagnostic, ...] = ()
    duration_ms: int = 0
    raw: Optional[str] = None
    parse_error: Optional[str] = None

    def __post_init__(self):
        if self.success and any(d.is_error for d in self.diagnostics):
            raise ValueError("a successful build cannot carry error diagnostics")


class RunStatus(str, enum.Enum):
    PASSED = "Passed"
    FAILED = "Failed"
    PANICKED = "Panicked"
    TIMED_OUT = "TimedOut"


@dataclass(frozen=True)
class RunOutcome:
    statuses: dict = field(default_factory=dict)
    duration_ms: int = 0

    @property
    def pass_ratio(self) -> Optional[float]:
        if not self.statuses:
            return None
        return sum(s is RunStatus.PASSED for s in self.statuses.values()) / len(self.statuses)

    @property
    def all_passed(self):
        return bool(self.statuses) and all(s is RunStatus.PASSED for s in self.statuses.values())


@dataclass(frozen=True)
class CoverageOutcome:
    lines_covered: int
    lines_total: int
    branches_covered: int = 0
    branches_total: int = 0

    def __post_init__(self):
        if self.lines_total <= 0:
            raise CoverageError("coverage target has no lines")
        if not (0 <= self.lines_covered <= self.lines_total and 0 <= self.branches_covered <= self.branches_total):
            raise CoverageError(f"inconsistent coverage counters: {self}")

    @property
    def line_ratio(self):
        return self.lines_covered / self.lines_total

    @property
    def branch_ratio(self):
        return None if self.branches_total == 0 else self.branches_covered / self.branches_total

    def to_json(self):
        return {"lines_covered": self.lines_covered, "lines_total": self.lines_total,
                "branches_covered": self.branches_covered, "branches_total": self.branches_total}


@dataclass(frozen=True)
class RunnerConfig:
    compile_cmd: str = "cargo test --offline --no-run --message-format=json --test {test_stem}"
    test_cmd: str = "cargo test --offline --test {filter}"
    coverage_cmd: Optional[str] = None
    diagnostic_format: str = "json-lines"
    build_timeout_s: float = 300
    test_timeout_s: float = 60
    test_dir: str = "tests"
    workspace: Optional[str] = None

    @classmethod
    def from_dict(cls, data):
        known = {k: v for k, v in (data or {}).items() if k in cls.__dataclass_fields__}
        return cls(**known)


# ---------------------------------------------------------------------------
# parsers


def _diagnostic_from_message(msg: dict) -> Optional[Diagnostic]:
    level = msg.get("level")
    if level not in ("error", "warning"):
        return None
    spans = msg.get("spans") or []
    primary = next((s for s in spans if s.get("is_primary")), None)
    if primary is None:
        return None  # summary lines such as "aborting due to previous error"
    code = (msg.get("code") or {}).get("code") or ""
    return Diagnostic(
        code=code,
        message=msg.get("message", ""),
        file=primary.get("file_name", ""),
        line=int(primary.get("line_start", 1)),
        column=int(primary.get("column_start", 0)),
        level=level,
    )


def parse_diagnostics(stream: str) -> list[Diagnostic]:
    """Diagnostics from cargo/rustc JSON-lines output (either wrapper)."""
    out = []
    for n, line in enumerate(stream.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DiagnosticParseError(f"line {n}: {exc.msg}") from exc
        if not isinstance(obj, dict):
            raise DiagnosticParseError(f"line {n}: expected a JSON object")
        if "reason" in obj:
            if obj["reason"] != "compiler-message":
                continue
            msg = obj.get("message")
        elif obj.get("$message_type", "diagnostic") == "diagnostic" and "spans" in obj:
            msg = obj
        else:
            continue
        if not isinstance(msg, dict):
            raise DiagnosticParseError(f"line {n}: compiler-message without a message object")
        try:
            diag = _diagnostic_from_message(msg)
        except (TypeError, ValueError) as exc:
            raise DiagnosticParseError(f"line {n}: {exc}") from exc
        if diag is not None:
            out.append(diag)
    return out


_TEST_LINE = re.compile(r"^test (\S+) \.\.\. (ok|FAILED|ignored)\s*$", re.M)
_STDOUT_HEADER = re.compile(r"^---- (\S+) stdout ----$", re.M)


def parse_test_output(text: str) -> dict:
    """Per-test statuses from libtest's human output."""
    sections = {}
    headers = list(_STDOUT_HEADER.finditer(text))
    for i, h in enumerate(headers):
        end = headers[i + 1].start() if i + 1 < len(headers) else len(text)
        sections[h.group(1)] = text[h.end():end]
    statuses = {}
    for m in _TEST_LINE.finditer(text):
        name, result = m.groups()
        if result == "ok":
            statuses[name] = RunStatus.PASSED
        elif result == "FAILED":
            body = sections.get(name, "")
            statuses[name] = RunStatus.FAILED if "assertion" in body else RunStatus.PANICKED
    return statuses


def parse_coverage_summary(text: str) -> CoverageOutcome:
    """Totals from an llvm-cov JSON export or an lcov tracefile."""
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
            totals = data["data"][0]["totals"]
            lines, branches = totals["lines"], totals.get("branches", {"count": 0, "covered": 0})
            return CoverageOutcome(int(lines["covered"]), int(lines["count"]),
                                   int(branches["covered"]), int(branches["count"]))
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise CoverageError(f"unreadable llvm-cov export: {exc}") from exc
    counters = {"LH": 0, "LF": 0, "BRH": 0, "BRF": 0}
    found = False
    for line in stripped.splitlines():
        key, _, value = line.partition(":")
        if key in counters:
            counters[key] += int(value)
            found = True
    if not found:
        raise CoverageError("coverage output is neither llvm-cov JSON nor lcov")
    return CoverageOutcome(counters["LH"], counters["LF"], counters["BRH"], counters["BRF"])


# ---------------------------------------------------------------------------
# runners


def _fill(cmd: str, **values) -> list[str]:
    for key, val in values.items():
        cmd = cmd.replace("{" + key + "}", str(val))
    return shlex.split(cmd)


class CommandRunner:
    def __init__(self, config: RunnerConfig):
        self.config = config

    def _run(self, argv, cwd, timeout):
        start = time.monotonic()
        try:
            proc = subprocess.run(argv, cwd=cwd, capture_output=True, text=True, timeout=timeout)
        except FileNotFoundError as exc:
            raise ToolchainMissing(f"{argv[0]}: not found") from exc
        return proc, int((time.monotonic() - start) * 1000)

    def compile(self, workspace, test_file) -> BuildOutcome:
        test_file = Path(test_file)
        argv = _fill(self.config.compile_cmd, workspace=workspace, test_file=test_file, test_stem=test_file.stem)
        try:
            proc, ms = self._run(argv, workspace, self.config.build_timeout_s)
        except subprocess.TimeoutExpired as exc:
            raise BuildTimeout(f"build exceeded {self.config.build_timeout_s}s") from exc
        try:
            diags = parse_diagnostics(proc.stdout)
        except DiagnosticParseError as exc:
            return BuildOutcome(False, (), ms, raw=proc.stdout + proc.stderr, parse_error=str(exc))
        ok = proc.returncode == 0 and not any(d.is_error for d in diags)
        return BuildOutcome(ok, tuple(diags), ms, raw=None if ok else proc.stderr[-4000:])

    def run_tests(self, workspace, filter) -> RunOutcome:
        argv = _fill(self.config.test_cmd, workspace=workspace, filter=filter)
        try:
            proc, ms = self._run(argv, workspace, self.config.test_timeout_s)
        except subprocess.TimeoutExpired:
            return RunOutcome({filter: RunStatus.TIMED_OUT}, int(self.config.test_timeout_s * 1000))
        return RunOutcome(parse_test_output(proc.stdout + "\n" + proc.stderr), ms)

    def measure_coverage(self, workspace, suite) -> CoverageOutcome:
        if not self.config.coverage_cmd:
            raise CoverageToolMissing("no coverage_cmd configured")
        argv = _fill(self.config.coverage_cmd, workspace=workspace, suite=" ".join(Path(s).stem for s in suite))
        try:
            proc, _ = self._run(argv, workspace, self.config.build_timeout_s)
        except ToolchainMissing as exc:
            raise CoverageToolMissing(str(exc)) from exc
        except subprocess.TimeoutExpired as exc:
            raise BuildTimeout("coverage run timed out") from exc
        if proc.returncode != 0:
            raise CoverageToolMissing(f"coverage command failed: {proc.stderr[-500:]}")
        return parse_coverage_summary(proc.stdout)


def _lookup(table: dict, name: str):
    if name in table:
        return table[name]
    for pattern, value in table.items():
        if fnmatch.fnmatchcase(name, pattern):
            return value
    return None


class StubRunner:
    """Scripted stand-in for a toolchain.

    Script layout::

        {"compile": {<test file name or glob>: "ok" | [diag...] | {"stream": str}},
         "run":     {<filter glob>: status | {"status", "delay_s"} | {"tests": {name: status}}},
         "coverage": {"lines_covered", "lines_total", "branches_covered", "branches_total"}
                     | {"summary": <llvm-cov json or lcov text>}}

    A scripted diagnostic with ``fixed_by`` is reported only while that
    substring is missing from the test source.
    """

    def __init__(self, script: dict, config: RunnerConfig = RunnerConfig()):
        self.script = script
        self.config = config

    @classmethod
    def from_file(cls, path, config: RunnerConfig = RunnerConfig()):
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), config)

    def compile(self, workspace, test_file) -> BuildOutcome:
        test_file = Path(test_file)
        spec = _lookup(self.script.get("compile", {}), test_file.name)
        if spec is None or spec == "ok":
            return BuildOutcome(True)
        if isinstance(spec, dict) and "stream" in spec:
            try:
                diags = parse_diagnostics(spec["stream"])
            except DiagnosticParseError as exc:
                return BuildOutcome(False, (), 0, raw=spec["stream"], parse_error=str(exc))
            ok = spec.get("exit_code", 1) == 0 and not any(d.is_error for d in diags)
            return BuildOutcome(ok, tuple(diags))
        items = spec["diagnostics"] if isinstance(spec, dict) else spec
        path = Path(workspace) / test_file
        source = path.read_text(encoding="utf-8") if path.exists() else ""
        diags = []
        for d in items:
            if d.get("fixed_by") and d["fixed_by"] in source:
                continue
            diags.append(Diagnostic(
                code=d.get("code", ""), message=d.get("message", ""),
                file=d.get("file", str(test_file)), line=int(d.get("line", 1)),
                column=int(d.get("column", 0)), level=d.get("level", "error"),
            ))
        return BuildOutcome(not any(d.is_error for d in diags), tuple(diags))

    def _status(self, spec):
        if isinstance(spec, str):
            return RunStatus(_STATUS_ALIASES.get(spec.lower(), spec))
        if spec.get("delay_s", 0) > self.config.test_timeout_s:
            return RunStatus.TIMED_OUT
        return self._status(spec.get("status", "passed"))

    def run_tests(self, workspace, filter) -> RunOutcome:
        spec = _lookup(self.script.get("run", {}), filter)
        if spec is None:
            return RunOutcome({})
        if isinstance(spec, dict) and "tests" in spec:
            return RunOutcome({name: self._status(s) for name, s in spec["tests"].items()})
        return RunOutcome({filter: self._status(spec)})

    def measure_coverage(self, workspace, suite) -> CoverageOutcome:
        spec = self.script.get("coverage")
        if spec is None:
            raise CoverageToolMissing("stub script has no coverage section")
        if "summary" in spec:
            return parse_coverage_summary(spec["summary"])
        return CoverageOutcome(int(spec["lines_covered"]), int(spec["lines_total"]),
                               int(spec.get("branches_covered", 0)), int(spec.get("branches_total", 0)))


_STATUS_ALIASES = {
    "passed": "Passed", "ok": "Passed", "failed": "Failed",
    "panicked": "Panicked", "timeout": "TimedOut", "timedout": "TimedOut",
}


def runner_from_config(cfg: dict, stub_script=None):
    config = RunnerConfig.from_dict(cfg)
    path = stub_script or (cfg or {}).get("stub_script")
    if path:
        return StubRunner.from_file(path, config)
    return CommandRunner(config)
