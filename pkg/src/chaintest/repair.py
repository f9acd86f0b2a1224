"""Compile-error repair through line-addressed change logs.

For each compiler error the model sees the diagnostic and a numbered snippet
around it and answers with a change log::

    LINE: <n>
    ORIGINAL:
    <exact line>
    REPLACEMENT:
    <new line(s)>
    END

The edits are applied and the test recompiled. One error gets at most
``max_iterations_per_error`` attempts and one test at most
``max_errors_per_test`` distinct errors.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional

from .errors import GatewayError, StaleEdit, UnparseableChangeLog
from .llm import REPAIR_TEMPERATURE, ChatRequest, Gateway
from .model import TestArtifact, TestStatus

DEFAULT_RADIUS = 3


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    file: str
    line: int
    column: int = 0
    level: str = "error"

    def __post_init__(self):
        if self.line < 1:
            raise ValueError(f"diagnostic line must be >= 1, got {self.line}")

    @property
    def is_error(self):
        return self.level == "error"

    @property
    def key(self):
        return (self.code, self.file, self.line)

    def headline(self):
        return f"error[{self.code}]: {self.message}" if self.code else f"error: {self.message}"

    def to_json(self):
        return {"code": self.code, "message": self.message, "file": self.file,
                "line": self.line, "column": self.column, "level": self.level}


@dataclass(frozen=True)
class Edit:
    line: int
    original: str
    replacement: str


@dataclass(frozen=True)
class ChangeLog:
    edits: tuple[Edit, ...] = ()


@dataclass(frozen=True)
class RepairBudget:
    max_errors_per_test: int = 10
    max_iterations_per_error: int = 3

    def __post_init__(self):
        if self.max_errors_per_test < 1 or self.max_iterations_per_error < 1:
            raise ValueError("repair budget limits must be >= 1")


def snippet_around(source: str, line: int, radius: int = DEFAULT_RADIUS) -> str:
    lines = source.splitlines()
    if not 1 <= line <= len(lines):
        raise ValueError(f"line {line} outside 1..{len(lines)}")
    lo, hi = max(1, line - radius), min(len(lines), line + radius)
    width = len(str(hi))
    return "\n".join(f"{n:>{width}} | {lines[n - 1]}" for n in range(lo, hi + 1))


REPAIR_SYSTEM = "You fix Rust compilation errors with minimal line edits."

CHANGE_LOG_FORMAT = """\
LINE: <line number>
ORIGINAL:
<the original line, copied exactly>
REPLACEMENT:
<the new line or lines>
END"""


def build_repair_prompt(diag: Diagnostic, snippet: str, tag: str = "repair") -> ChatRequest:
    user = (
        "A generated Rust test does not compile.\n\n"
        f"{diag.headline()}\n"
        f" --> {diag.file}:{diag.line}:{diag.column}\n\n"
        f"The error occurs at line {diag.line}. Code around it (line numbers on the left):\n"
        f"{snippet}\n\n"
        "Reply only with a change log that fixes this error, one block per edited line, "
        "in exactly this format:\n"
        f"{CHANGE_LOG_FORMAT}\n"
        "Do not repeat unchanged lines and do not add explanations."
    )
    return ChatRequest(system=REPAIR_SYSTEM, user=user, temperature=REPAIR_TEMPERATURE, request_tag=tag)


_LINE_RE = re.compile(r"^\s*LINE:\s*(\d+)\s*$")
_NUMBERED = re.compile(r"^\s*(\d+) \| (.*)$")


def parse_change_log(text: str) -> ChangeLog:
    lines = [ln for ln in text.splitlines() if not ln.strip().startswith("```")]
    edits = []
    i = 0
    while i < len(lines):
        m = _LINE_RE.match(lines[i])
        if not m:
            i += 1
            continue
        number = int(m.group(1))
        try:
            if lines[i + 1].strip() != "ORIGINAL:":
                raise UnparseableChangeLog(f"expected ORIGINAL: after LINE: {number}")
            j = i + 2
            original = []
            while lines[j].strip() != "REPLACEMENT:":
                original.append(lines[j])
                j += 1
            j += 1
            replacement = []
            while lines[j].strip() != "END":
                replacement.append(lines[j])
                j += 1
        except IndexError:
            raise UnparseableChangeLog(f"unterminated change-log block at LINE: {number}") from None
        if len(original) != 1 or not original[0].strip():
            raise UnparseableChangeLog(f"LINE: {number} needs exactly one non-empty ORIGINAL line")
        orig = original[0]
        numbered = _NUMBERED.match(orig)
        if numbered and int(numbered.group(1)) == number:
            orig = numbered.group(2)  # model echoed the snippet prefix
        if number < 1:
            raise UnparseableChangeLog(f"bad line number {number}")
        edits.append(Edit(number, orig, "\n".join(replacement)))
        i = j + 1
    if not edits:
        raise UnparseableChangeLog("no change-log blocks found")
    return ChangeLog(tuple(edits))


def apply_change_log(source: str, log: ChangeLog) -> str:
    """Apply edits bottom-up. Raises StaleEdit if an original no longer matches."""
    if not log.edits:
        return source
    lines = source.splitlines()
    trailing_newline = source.endswith("\n")
    seen = set()
    for e in log.edits:
        if e.line in seen:
            raise StaleEdit(f"two edits target line {e.line}")
        seen.add(e.line)
        if not 1 <= e.line <= len(lines) or lines[e.line - 1].rstrip() != e.original.rstrip():
            current = lines[e.line - 1] if 1 <= e.line <= len(lines) else "<past end of file>"
            raise StaleEdit(f"line {e.line} is {current!r}, change log expected {e.original!r}")
    for e in sorted(log.edits, key=lambda e: e.line, reverse=True):
        lines[e.line - 1:e.line] = e.replacement.split("\n") if e.replacement else []
    out = "\n".join(lines)
    return out + "\n" if trailing_newline else out


def repair_test(test: TestArtifact, budget: RepairBudget, gateway: Gateway,
                compile_fn: Callable[[str], "object"], first_outcome=None,
                transcript: Optional[list] = None) -> TestArtifact:
    """Drive the diagnose -> change log -> patch -> recompile loop for one test.

    ``compile_fn(source)`` returns a BuildOutcome for the given test source.
    Pass ``first_outcome`` to reuse a compile result the caller already has.
    Returns the artifact as Compiled or Unrepairable; ``repair_rounds_used``
    counts gateway calls.
    """
    if test.status is not TestStatus.GENERATED:
        raise ValueError(f"{test.test_id} is {test.status.value}, repair needs Generated")
    source = test.source
    rounds = 0
    tokens_in = test.tokens_in
    tokens_out = test.tokens_out
    errors_taken = 0
    outcome = first_outcome if first_outcome is not None else compile_fn(source)

    def finish(status, cause=None):
        return test.advance(status, source=source, repair_rounds_used=rounds,
                            tokens_in=tokens_in, tokens_out=tokens_out, cause=cause)

    while not outcome.success:
        errors = [d for d in outcome.diagnostics if d.is_error]
        if not errors:
            return finish(TestStatus.UNREPAIRABLE, "build failed without actionable diagnostics")
        if errors_taken >= budget.max_errors_per_test:
            return finish(TestStatus.UNREPAIRABLE, f"error budget of {budget.max_errors_per_test} exhausted")
        target = errors[0]
        errors_taken += 1
        resolved = False
        for iteration in range(1, budget.max_iterations_per_error + 1):
            line = min(target.line, max(1, len(source.splitlines())))
            req = build_repair_prompt(target, snippet_around(source, line),
                                      tag=f"repair:{test.test_id}:{target.code}:{target.line}:{iteration}")
            try:
                resp = gateway.complete(req)
            except GatewayError as exc:
                return finish(TestStatus.UNREPAIRABLE, f"gateway: {type(exc).__name__}: {exc}")
            rounds += 1
            tokens_in += resp.input_tokens
            tokens_out += resp.output_tokens
            if transcript is not None:
                transcript.append({"tag": req.request_tag, "prompt": req.user, "response": resp.text})
            try:
                source = apply_change_log(source, parse_change_log(resp.text))
            except (UnparseableChangeLog, StaleEdit) as exc:
                if iteration == budget.max_iterations_per_error:
                    return finish(TestStatus.UNREPAIRABLE, f"{type(exc).__name__}: {exc}")
                continue
            outcome = compile_fn(source)
            if outcome.success or target.key not in {d.key for d in outcome.diagnostics if d.is_error}:
                resolved = True
                break
        if not resolved:
            return finish(TestStatus.UNREPAIRABLE,
                          f"{target.headline()} unresolved after {budget.max_iterations_per_error} iterations")
    return finish(TestStatus.COMPILED)
