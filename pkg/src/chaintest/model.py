"""Shared domain types and the JSON program-model dump.

The dump is the only input format the pipeline reads: one record per focal
function carrying its source text, a control-flow graph and pre-resolved
context references. ``validate_model`` works on the raw decoded JSON so that
malformed graphs are reported as data; ``parse_model`` turns a clean dump
into immutable objects.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Iterable, Optional, Union

from .errors import InvalidTransition, MalformedModel

DUMP_VERSION = 1

Outcome = Union[bool, str]


class TermKind(str, enum.Enum):
    BRANCH = "branch"
    RETURN = "return"
    GOTO = "goto"
    CALL = "call"


class Shape(str, enum.Enum):
    SINGLE_BOUNDARY = "single"
    RANGE_BASED = "range"
    OTHER = "other"


_OPERAND = r"[A-Za-z_][\w.:]*(?:\(\))?|-?\d[\d_]*(?:\.\d+)?(?:[iu](?:8|16|32|64|128|size)|f32|f64)?"
_COMPARISON = re.compile(rf"^\s*({_OPERAND})\s*(<=|>=|<|>)\s*({_OPERAND})\s*$")
_NUMBER = re.compile(r"^-?\d")
_CONTAINS = re.compile(rf"^\s*\(\s*({_OPERAND})\s*\.\.=?\s*({_OPERAND})\s*\)\s*\.contains\(\s*&\s*({_OPERAND})\s*\)\s*$")


def _is_bound(token):
    # numeric literal or SCREAMING_CASE constant
    return bool(_NUMBER.match(token)) or (token.isupper() and not token[0].isdigit())


def _strip_parens(text):
    text = text.strip()
    while text.startswith("(") and text.endswith(")"):
        depth = 0
        for i, ch in enumerate(text):
            depth += ch == "("
            depth -= ch == ")"
            if depth == 0 and i < len(text) - 1:
                return text
        text = text[1:-1].strip()
    return text


@dataclass(frozen=True)
class Comparison:
    variable: str
    op: str  # normalised so that the variable is on the left
    bound: str

    @property
    def is_lower(self):
        return self.op in (">", ">=")

    def text(self):
        return f"{self.variable} {self.op} {self.bound}"


_FLIP = {"<": ">", "<=": ">=", ">": "<", ">=": "<="}


def parse_comparison(text: str) -> Optional[Comparison]:
    """Parse ``var OP bound`` (either orientation); None if it is not one."""
    m = _COMPARISON.match(_strip_parens(text))
    if not m:
        return None
    left, op, right = m.groups()
    if _is_bound(right) and not _is_bound(left):
        return Comparison(left, op, right)
    if _is_bound(left) and not _is_bound(right):
        return Comparison(right, _FLIP[op], left)
    return None


def split_range(text: str) -> Optional[tuple[Comparison, Comparison]]:
    """Return (lower, upper) comparisons for a two-sided range test on one variable."""
    m = _CONTAINS.match(text)
    if m:
        lo, hi, var = m.groups()
        upper_op = "<=" if "..=" in text else "<"
        return Comparison(var, ">=", lo), Comparison(var, upper_op, hi)
    body = _strip_parens(text)
    parts = body.split("&&")
    if len(parts) != 2:
        return None
    a, b = parse_comparison(parts[0]), parse_comparison(parts[1])
    if a is None or b is None or a.variable != b.variable or a.is_lower == b.is_lower:
        return None
    return (a, b) if a.is_lower else (b, a)


def classify_condition(text: str) -> Shape:
    if split_range(text) is not None:
        return Shape.RANGE_BASED
    if parse_comparison(text) is not None:
        return Shape.SINGLE_BOUNDARY
    return Shape.OTHER


@dataclass(frozen=True)
class ConditionExpr:
    text: str
    shape: Shape = Shape.OTHER

    @classmethod
    def of(cls, text):
        return cls(text, classify_condition(text))


def label_to_outcome(label: str) -> Outcome:
    if label == "true":
        return True
    if label == "false":
        return False
    return label


def outcome_to_label(outcome: Outcome) -> str:
    if outcome is True:
        return "true"
    if outcome is False:
        return "false"
    return str(outcome)


@dataclass(frozen=True)
class Terminator:
    kind: TermKind
    targets: tuple[tuple[Outcome, int], ...] = ()
    condition: Optional[ConditionExpr] = None
    return_expr: Optional[str] = None

    @property
    def successors(self):
        return [to for _, to in self.targets]


@dataclass(frozen=True)
class BasicBlock:
    id: int
    terminator: Terminator
    source_span: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class BranchSite:
    site_id: int
    expr: ConditionExpr


@dataclass(frozen=True)
class ControlFlowGraph:
    blocks: tuple[BasicBlock, ...]
    entry: int
    exits: frozenset[int]
    declared_back_edges: Optional[frozenset[tuple[int, int]]] = None

    @cached_property
    def by_id(self) -> dict[int, BasicBlock]:
        return {b.id: b for b in self.blocks}

    def block(self, block_id: int) -> BasicBlock:
        return self.by_id[block_id]

    def edges(self):
        for b in self.blocks:
            for to in b.terminator.successors:
                yield b.id, to

    @cached_property
    def back_edges(self) -> frozenset[tuple[int, int]]:
        return compute_back_edges(self.blocks, self.entry)

    @cached_property
    def branch_sites(self) -> dict[int, BranchSite]:
        return {
            b.id: BranchSite(b.id, b.terminator.condition)
            for b in self.blocks
            if b.terminator.kind is TermKind.BRANCH
        }

    @cached_property
    def reachable_from(self) -> dict[int, frozenset[int]]:
        """Blocks reachable from each block by one or more edges."""
        succ = {b.id: b.terminator.successors for b in self.blocks}
        out = {}
        for start in succ:
            seen = set()
            stack = list(succ[start])
            while stack:
                n = stack.pop()
                if n in seen or n not in succ:
                    continue
                seen.add(n)
                stack.extend(succ[n])
            out[start] = frozenset(seen)
        return out


def dominators(blocks: Iterable[BasicBlock], entry: int) -> dict[int, frozenset[int]]:
    """Dominator sets of every block reachable from ``entry``."""
    blocks = list(blocks)
    succ = {b.id: [t for t in b.terminator.successors] for b in blocks}
    reachable = []
    seen = set()
    stack = [entry]
    while stack:
        n = stack.pop()
        if n in seen or n not in succ:
            continue
        seen.add(n)
        reachable.append(n)
        stack.extend(succ[n])
    preds = {n: [] for n in reachable}
    for n in reachable:
        for t in succ[n]:
            if t in preds:
                preds[t].append(n)
    everything = frozenset(reachable)
    dom = {n: everything for n in reachable}
    dom[entry] = frozenset([entry])
    changed = True
    while changed:
        changed = False
        for n in reachable:
            if n == entry:
                continue
            ps = [dom[p] for p in preds[n]]
            new = frozenset.intersection(*ps) | {n} if ps else frozenset([n])
            if new != dom[n]:
                dom[n] = new
                changed = True
    return dom


def compute_back_edges(blocks, entry) -> frozenset[tuple[int, int]]:
    blocks = list(blocks)
    dom = dominators(blocks, entry)
    back = set()
    for b in blocks:
        if b.id not in dom:
            continue
        for to in b.terminator.successors:
            if to in dom[b.id]:
                back.add((b.id, to))
    return frozenset(back)


@dataclass(frozen=True)
class ConditionStep:
    site: BranchSite
    occurrence: int
    outcome: Outcome
    loop_terminating: bool = False


@dataclass(frozen=True)
class ConditionChain:
    path_id: int
    steps: tuple[ConditionStep, ...]
    return_descriptor: str = "unit"


@dataclass(frozen=True)
class CoverageAtom:
    site_id: int
    occurrence: int
    outcome: Outcome

    def sort_key(self):
        return (self.site_id, self.occurrence, outcome_to_label(self.outcome))


@dataclass(frozen=True)
class FocalMethod:
    id: str
    name: str
    signature: str
    body: str
    file_path: str
    cfg: ControlFlowGraph
    container: Optional[str] = None
    context_refs: dict = field(default_factory=dict, compare=False)

    def source(self) -> str:
        """Full source text of the function (signature + body)."""
        if self.body.lstrip().startswith(self.signature.strip()):
            return self.body
        return f"{self.signature} {self.body}"


@dataclass(frozen=True)
class ProgramModel:
    functions: tuple[FocalMethod, ...]
    version: int = DUMP_VERSION

    @cached_property
    def by_id(self) -> dict[str, FocalMethod]:
        return {f.id: f for f in self.functions}

    def get(self, focal_id):
        return self.by_id.get(focal_id)


class TestStatus(str, enum.Enum):
    GENERATED = "Generated"
    COMPILED = "Compiled"
    PASSED = "Passed"
    FAILED = "Failed"
    UNREPAIRABLE = "Unrepairable"


_ALLOWED = {
    TestStatus.GENERATED: {TestStatus.COMPILED, TestStatus.UNREPAIRABLE},
    TestStatus.COMPILED: {TestStatus.PASSED, TestStatus.FAILED},
    TestStatus.PASSED: set(),
    TestStatus.FAILED: set(),
    TestStatus.UNREPAIRABLE: set(),
}


@dataclass(frozen=True)
class TestArtifact:
    __test__ = False  # keep pytest from collecting this class

    test_id: str
    focal_id: str
    tag: str  # "path<N>" or "path<N>-boundary<i>-low/high"
    source: str
    status: TestStatus = TestStatus.GENERATED
    repair_rounds_used: int = 0
    tokens_in: int = 0
    tokens_out: int = 0
    cause: Optional[str] = None

    def advance(self, status: TestStatus, **changes) -> "TestArtifact":
        status = TestStatus(status)
        if status not in _ALLOWED[self.status]:
            raise InvalidTransition(f"{self.test_id}: {self.status.value} -> {status.value}")
        return replace(self, status=status, **changes)

    def to_json(self):
        return {
            "test_id": self.test_id,
            "focal_id": self.focal_id,
            "tag": self.tag,
            "source": self.source,
            "status": self.status.value,
            "repair_rounds_used": self.repair_rounds_used,
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
            "cause": self.cause,
        }

    @classmethod
    def from_json(cls, data):
        return cls(
            test_id=data["test_id"],
            focal_id=data["focal_id"],
            tag=data["tag"],
            source=data["source"],
            status=TestStatus(data["status"]),
            repair_rounds_used=int(data["repair_rounds_used"]),
            tokens_in=int(data.get("tokens_in", 0)),
            tokens_out=int(data.get("tokens_out", 0)),
            cause=data.get("cause"),
        )


# ---------------------------------------------------------------------------
# dump I/O and validation


@dataclass(frozen=True)
class ValidationIssue:
    entity: str
    kind: str
    message: str = ""

    def __str__(self):
        return f"{self.entity}: {self.kind}" + (f" ({self.message})" if self.message else "")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def load_dump(text: str) -> dict:
    """Decode dump text. ``json.JSONDecodeError`` propagates with its location."""
    return json.loads(text)


def _validate_cfg(fid: str, cfg: Any) -> list[ValidationIssue]:
    issues = []
    where = f"function {fid}"
    if not isinstance(cfg, dict):
        return [ValidationIssue(where, "missing cfg")]
    blocks = cfg.get("blocks")
    if not isinstance(blocks, list):
        return [ValidationIssue(where, "missing blocks")]

    ids = []
    for b in blocks:
        if not isinstance(b, dict) or not isinstance(b.get("id"), int) or isinstance(b.get("id"), bool):
            issues.append(ValidationIssue(where, "bad block", "block without integer id"))
            continue
        ids.append(b["id"])
    id_set = set(ids)
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        issues.append(ValidationIssue(f"{where} block {dup}", "duplicate block id"))

    entry = cfg.get("entry")
    if entry not in id_set:
        issues.append(ValidationIssue(where, "missing entry", f"entry {entry!r} is not a block"))
    exits = cfg.get("exits")
    if not isinstance(exits, list) or not exits:
        issues.append(ValidationIssue(where, "missing exit", "exits must be a non-empty list"))
        exits = []
    for e in exits:
        if e not in id_set:
            issues.append(ValidationIssue(where, "dangling edge", f"exit {e!r} is not a block"))

    for b in blocks:
        if not isinstance(b, dict) or not isinstance(b.get("id"), int):
            continue
        bw = f"{where} block {b['id']}"
        span = b.get("span", [0, 0])
        if not (isinstance(span, list) and len(span) == 2 and all(isinstance(x, int) for x in span)
                and span[0] <= span[1]):
            issues.append(ValidationIssue(bw, "bad span", repr(span)))
        term = b.get("term")
        if not isinstance(term, dict):
            issues.append(ValidationIssue(bw, "missing terminator"))
            continue
        try:
            kind = TermKind(term.get("kind"))
        except ValueError:
            issues.append(ValidationIssue(bw, "unknown terminator kind", repr(term.get("kind"))))
            continue
        targets = term.get("targets", [])
        if not isinstance(targets, list) or not all(
            isinstance(t, dict) and isinstance(t.get("label"), str) and isinstance(t.get("to"), int)
            for t in targets
        ):
            issues.append(ValidationIssue(bw, "bad targets"))
            continue
        labels = [t["label"] for t in targets]
        if kind is TermKind.BRANCH:
            if len(targets) < 2:
                issues.append(ValidationIssue(bw, "branch arity", f"{len(targets)} target(s)"))
            if len(set(labels)) != len(labels):
                issues.append(ValidationIssue(bw, "duplicate label"))
            cond = term.get("cond")
            if not isinstance(cond, str) or not cond.strip():
                issues.append(ValidationIssue(bw, "missing condition"))
            elif "shape" in term:
                derived = classify_condition(cond).value
                if term["shape"] != derived:
                    issues.append(ValidationIssue(
                        bw, "shape mismatch", f"declared {term['shape']!r}, text is {derived!r}"))
        elif kind in (TermKind.GOTO, TermKind.CALL):
            if len(targets) != 1:
                issues.append(ValidationIssue(bw, f"{kind.value} arity", f"{len(targets)} target(s)"))
        else:
            if targets:
                issues.append(ValidationIssue(bw, "return arity", f"{len(targets)} target(s)"))
            if b["id"] not in exits:
                issues.append(ValidationIssue(bw, "return not exit"))
        if kind is not TermKind.RETURN and b["id"] in exits:
            issues.append(ValidationIssue(bw, "exit not return"))
        for t in targets:
            if t["to"] not in id_set:
                issues.append(ValidationIssue(bw, "dangling edge", f"edge to nonexistent block {t['to']}"))

    if issues:
        return issues

    parsed = _parse_cfg(cfg)
    dom = dominators(parsed.blocks, parsed.entry)
    for src, to in parsed.edges():
        if to == parsed.entry and src not in dom:
            issues.append(ValidationIssue(f"{where} block {src}", "entry has incoming edge",
                                          "edge into entry from an unreachable block"))
    if parsed.declared_back_edges is not None and parsed.declared_back_edges != parsed.back_edges:
        issues.append(ValidationIssue(
            where, "back edge mismatch",
            f"declared {sorted(parsed.declared_back_edges)}, computed {sorted(parsed.back_edges)}"))
    return issues


def validate_model(raw: Any) -> list[ValidationIssue]:
    """Check a decoded dump; an empty list means it is well formed."""
    if not isinstance(raw, dict):
        return [ValidationIssue("dump", "not an object")]
    issues = []
    if raw.get("version") != DUMP_VERSION:
        issues.append(ValidationIssue("dump", "unsupported version", repr(raw.get("version"))))
    functions = raw.get("functions")
    if not isinstance(functions, list):
        return issues + [ValidationIssue("dump", "missing functions")]
    seen = set()
    for i, fn in enumerate(functions):
        if not isinstance(fn, dict):
            issues.append(ValidationIssue(f"function #{i}", "not an object"))
            continue
        fid = fn.get("id")
        if not isinstance(fid, str) or not fid:
            issues.append(ValidationIssue(f"function #{i}", "missing field", "id"))
            fid = f"#{i}"
        elif fid in seen:
            issues.append(ValidationIssue(f"function {fid}", "duplicate function id"))
        seen.add(fid)
        for key in ("name", "signature", "body", "file"):
            if not isinstance(fn.get(key), str):
                issues.append(ValidationIssue(f"function {fid}", "missing field", key))
        if fn.get("container") is not None and not isinstance(fn.get("container"), str):
            issues.append(ValidationIssue(f"function {fid}", "bad container"))
        if "context_refs" in fn and not isinstance(fn["context_refs"], dict):
            issues.append(ValidationIssue(f"function {fid}", "bad context_refs"))
        issues.extend(_validate_cfg(fid, fn.get("cfg")))
    return issues


def _parse_cfg(cfg: dict) -> ControlFlowGraph:
    blocks = []
    for b in cfg["blocks"]:
        t = b["term"]
        kind = TermKind(t["kind"])
        cond = None
        if kind is TermKind.BRANCH:
            cond = ConditionExpr(t["cond"], Shape(t["shape"]) if "shape" in t else classify_condition(t["cond"]))
        blocks.append(BasicBlock(
            id=b["id"],
            terminator=Terminator(
                kind=kind,
                targets=tuple((label_to_outcome(x["label"]), x["to"]) for x in t.get("targets", [])),
                condition=cond,
                return_expr=t.get("ret"),
            ),
            source_span=tuple(b.get("span", (0, 0))),
        ))
    declared = cfg.get("back_edges")
    return ControlFlowGraph(
        blocks=tuple(blocks),
        entry=cfg["entry"],
        exits=frozenset(cfg["exits"]),
        declared_back_edges=None if declared is None else frozenset(tuple(e) for e in declared),
    )


def parse_model(raw: dict) -> ProgramModel:
    issues = validate_model(raw)
    if issues:
        raise MalformedModel(issues)
    return ProgramModel(
        functions=tuple(
            FocalMethod(
                id=fn["id"],
                name=fn["name"],
                signature=fn["signature"],
                body=fn["body"],
                file_path=fn["file"],
                container=fn.get("container"),
                cfg=_parse_cfg(fn["cfg"]),
                context_refs=fn.get("context_refs") or {},
            )
            for fn in raw["functions"]
        ),
        version=raw["version"],
    )


def cfg_to_raw(cfg: ControlFlowGraph) -> dict:
    blocks = []
    for b in cfg.blocks:
        t = b.terminator
        term: dict[str, Any] = {
            "kind": t.kind.value,
            "targets": [{"label": outcome_to_label(o), "to": to} for o, to in t.targets],
        }
        if t.condition is not None:
            term["cond"] = t.condition.text
            term["shape"] = t.condition.shape.value
        if t.return_expr is not None:
            term["ret"] = t.return_expr
        blocks.append({"id": b.id, "span": list(b.source_span), "term": term})
    out = {"entry": cfg.entry, "exits": sorted(cfg.exits), "blocks": blocks}
    if cfg.declared_back_edges is not None:
        out["back_edges"] = [list(e) for e in sorted(cfg.declared_back_edges)]
    return out


def model_to_raw(model: ProgramModel) -> dict:
    return {
        "version": model.version,
        "functions": [
            {
                "id": f.id,
                "name": f.name,
                "signature": f.signature,
                "body": f.body,
                "file": f.file_path,
                "container": f.container,
                "cfg": cfg_to_raw(f.cfg),
                "context_refs": f.context_refs,
            }
            for f in model.functions
        ],
    }


def dump_model(model: ProgramModel) -> str:
    return canonical_json(model_to_raw(model))
