"""Per-path test prompts and the test plan for a focal function."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional

from .context import FocalContext, render_context, render_test_context
from .errors import BudgetTooSmall
from .model import ConditionChain, FocalMethod, Shape, outcome_to_label, parse_comparison, split_range

TEMPLATE_NAME = "test_prompt.v1.txt"
SLOTS = ("role", "task", "chain", "focal_context", "focal_method", "test_context")
_SLOT_RE = re.compile(r"\{(" + "|".join(SLOTS) + r")\}")

SYSTEM_PREAMBLE = "You write small, compilable Rust unit tests."
ROLE_LINE = "You are working as a software testing expert on a Rust code base."


class EntryKind(str, enum.Enum):
    PATH_TEST = "PathTest"
    BOUNDARY_LOW = "BoundaryLow"
    BOUNDARY_HIGH = "BoundaryHigh"


@dataclass(frozen=True)
class PlanEntry:
    path_id: int
    kind: EntryKind
    bound: Optional[str] = None  # the comparison the boundary test targets
    index: int = 0  # position among this path's boundary entries

    @property
    def tag(self) -> str:
        if self.kind is EntryKind.PATH_TEST:
            return f"path{self.path_id}"
        side = "low" if self.kind is EntryKind.BOUNDARY_LOW else "high"
        return f"path{self.path_id}-boundary{self.index}-{side}"


@dataclass(frozen=True)
class TestPlan:
    __test__ = False

    focal_id: str
    entries: tuple[PlanEntry, ...]


@dataclass(frozen=True)
class PromptBundle:
    focal_id: str
    tag: str
    system_preamble: str
    user_message: str
    expected_artifact: str = "TestFunction"


def boundary_entries(chain: ConditionChain) -> list[PlanEntry]:
    """Boundary entries a chain asks for: one per single-bound step, two per range step."""
    out = []
    for step in chain.steps:
        expr = step.site.expr
        if expr.shape is Shape.SINGLE_BOUNDARY:
            cmp = parse_comparison(expr.text)
            kind = EntryKind.BOUNDARY_LOW if cmp is None or cmp.is_lower else EntryKind.BOUNDARY_HIGH
            out.append(PlanEntry(chain.path_id, kind, expr.text, len(out)))
        elif expr.shape is Shape.RANGE_BASED:
            parts = split_range(expr.text)
            lo, hi = (parts[0].text(), parts[1].text()) if parts else (expr.text, expr.text)
            out.append(PlanEntry(chain.path_id, EntryKind.BOUNDARY_LOW, lo, len(out)))
            out.append(PlanEntry(chain.path_id, EntryKind.BOUNDARY_HIGH, hi, len(out)))
    return out


def plan_tests(minimized: list[ConditionChain], budget_tests: int, focal_id: str = "") -> TestPlan:
    if budget_tests < len(minimized):
        raise BudgetTooSmall(f"budget of {budget_tests} tests cannot cover {len(minimized)} paths")
    entries = [PlanEntry(c.path_id, EntryKind.PATH_TEST) for c in minimized]
    for chain in minimized:
        for extra in boundary_entries(chain):
            if len(entries) >= budget_tests:
                break
            entries.append(extra)
    return TestPlan(focal_id, tuple(entries))


def render_chain(chain: ConditionChain) -> str:
    lines = []
    for n, step in enumerate(chain.steps, 1):
        line = f"{n}. {step.site.expr.text} == {outcome_to_label(step.outcome)}"
        if step.loop_terminating:
            line += " (loop-terminating)"
        lines.append(line)
    lines.append(f"returns: {chain.return_descriptor}")
    return "\n".join(lines)


def load_template(path=None) -> str:
    if path is None:
        return resources.files("chaintest.resources").joinpath(TEMPLATE_NAME).read_text(encoding="utf-8")
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def fill_template(template: str, values: dict) -> str:
    # single pass, so braces inside substituted code are left alone
    return _SLOT_RE.sub(lambda m: values[m.group(1)], template)


def task_instructions(focal: FocalMethod, chain: ConditionChain, entry: PlanEntry) -> str:
    rules = [
        f"Write one #[test] function for `{focal.name}` whose execution follows the condition chain below.",
        "Choose inputs so that each listed condition evaluates to the listed outcome, in the listed order.",
        f"Assert on the result (`{chain.return_descriptor}`) and on any state the call changes.",
        "Use only items that appear in the code context; do not invent APIs.",
    ]
    if entry.kind is not EntryKind.PATH_TEST:
        rules.append(f"Pick the inputs at the boundary value of {entry.bound}.")
    rules.append("Only provide the code in plain text format, without explanations.")
    numbered = "\n".join(f"{i}. {r}" for i, r in enumerate(rules, 1))
    return "Your task: please generate test functions based on the following guidelines:\n" + numbered


def build_prompt(entry: PlanEntry, chain: ConditionChain, ctx: FocalContext, focal: FocalMethod,
                 template: Optional[str] = None) -> PromptBundle:
    focal_ctx = render_context(ctx)
    test_ctx = render_test_context(ctx)
    values = {
        "role": ROLE_LINE,
        "task": task_instructions(focal, chain, entry),
        "chain": render_chain(chain),
        "focal_context": focal_ctx + "\n\n" if focal_ctx else "",
        "focal_method": focal.source(),
        "test_context": "\n\n" + test_ctx if test_ctx else "",
    }
    text = fill_template(template if template is not None else load_template(), values)
    return PromptBundle(focal.id, entry.tag, SYSTEM_PREAMBLE, text)
