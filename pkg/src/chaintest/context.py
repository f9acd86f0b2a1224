"""Assemble the focal context that accompanies a focal function in prompts.

The dump's ``context_refs`` section is already resolved by the frontend; this
module only orders the items, demotes indirect dependencies to declarations
and trims the result to a token budget.

``context_refs`` layout::

    {
      "ambient":   [item],
      "container": {"def": item, "fields": [item],
                    "methods": [{"item": item, "called": bool}]},
      "direct":    [item],
      "indirect":  [item],
      "bounds":    [item],
      "returns":   [item],
      "test_context": [item]
    }

where ``item`` is ``{"kind", "text", "origin"}`` or ``{"ref": <function id>}``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

from .errors import UnknownDependencyRef
from .model import FocalMethod, ProgramModel


class ContextKind(str, enum.Enum):
    USE_STATEMENT = "UseStatement"
    GLOBAL_DEF = "GlobalDef"
    CONTAINER_DEF = "ContainerDef"
    FIELD_DECL = "FieldDecl"
    METHOD_SIGNATURE = "MethodSignature"
    METHOD_FULL_DEF = "MethodFullDef"
    TYPE_FULL_DEF = "TypeFullDef"
    TYPE_DECL = "TypeDecl"
    FUNCTION_FULL_DEF = "FunctionFullDef"
    FUNCTION_SIGNATURE = "FunctionSignature"
    TRAIT_BOUND = "TraitBound"
    RETURN_TYPE_INFO = "ReturnTypeInfo"


class Rank(str, enum.Enum):
    DIRECT = "Direct"
    INDIRECT = "Indirect"
    AMBIENT = "Ambient"


_DECLARATION_OF = {
    ContextKind.METHOD_FULL_DEF: ContextKind.METHOD_SIGNATURE,
    ContextKind.FUNCTION_FULL_DEF: ContextKind.FUNCTION_SIGNATURE,
    ContextKind.TYPE_FULL_DEF: ContextKind.TYPE_DECL,
}


@dataclass(frozen=True)
class ContextItem:
    kind: ContextKind
    text: str
    origin: str
    rank: Rank
    ref: Optional[str] = None


@dataclass(frozen=True)
class FocalContext:
    structure: tuple[ContextItem, ...] = ()
    dependency: tuple[ContextItem, ...] = ()
    test_context: tuple[ContextItem, ...] = ()
    token_estimate: int = 0
    overflow: bool = False

    def items(self):
        return self.structure + self.dependency + self.test_context


def estimate_tokens(text_length: int) -> int:
    return math.ceil(text_length / 4)


def declaration_of(text: str) -> str:
    """Cut a definition down to its header: everything before the first ``{``."""
    head = text.split("{", 1)[0].rstrip()
    return head if head.endswith(";") else head + ";"


class _Resolver:
    def __init__(self, model: ProgramModel):
        self.model = model

    def item(self, raw, rank: Rank, *, full: bool) -> ContextItem:
        if "ref" in raw:
            target = self.model.get(raw["ref"])
            if target is None:
                raise UnknownDependencyRef(raw["ref"])
            is_method = target.container is not None
            if full:
                kind = ContextKind.METHOD_FULL_DEF if is_method else ContextKind.FUNCTION_FULL_DEF
                text = target.source()
            else:
                kind = ContextKind.METHOD_SIGNATURE if is_method else ContextKind.FUNCTION_SIGNATURE
                text = declaration_of(target.signature)
            return ContextItem(kind, text, target.file_path, rank, ref=target.id)
        kind = ContextKind(raw["kind"])
        text = raw["text"]
        if not full and kind in _DECLARATION_OF:
            kind, text = _DECLARATION_OF[kind], declaration_of(text)
        return ContextItem(kind, text, raw.get("origin", ""), rank)

    def items(self, raws, rank, *, full):
        return [self.item(r, rank, full=full) for r in raws or []]


def _dedupe(items, seen):
    out = []
    for it in items:
        key = (it.kind, it.text)
        if key not in seen:
            seen.add(key)
            out.append(it)
    return out


def build_context(focal: FocalMethod, model: ProgramModel, budget_tokens: Optional[int] = None) -> FocalContext:
    """Ordered, budget-trimmed context for ``focal``.

    Order: ambient items, container definition and fields, called member
    methods (full), other member methods (signatures), direct dependencies
    (full), indirect dependencies (declarations), trait bounds, return types.
    Over budget, items go from the tail of: indirect dependencies, then
    uncalled member signatures, then trait bounds, then return types. The
    ambient items, container and direct dependencies always stay; if they
    alone exceed the budget, ``overflow`` is set.
    """
    refs = focal.context_refs or {}
    r = _Resolver(model)
    container = refs.get("container") or {}
    methods = container.get("methods") or []

    ambient = r.items(refs.get("ambient"), Rank.AMBIENT, full=True)
    cdef = [r.item(container["def"], Rank.DIRECT, full=True)] if container.get("def") else []
    fields = r.items(container.get("fields"), Rank.DIRECT, full=True)
    called = [r.item(m["item"], Rank.DIRECT, full=True) for m in methods if m.get("called")]
    others = [r.item(m["item"], Rank.INDIRECT, full=False) for m in methods if not m.get("called")]
    direct = r.items(refs.get("direct"), Rank.DIRECT, full=True)
    indirect = r.items(refs.get("indirect"), Rank.INDIRECT, full=False)
    bounds = r.items(refs.get("bounds"), Rank.AMBIENT, full=True)
    returns = r.items(refs.get("returns"), Rank.AMBIENT, full=True)
    tests = r.items(refs.get("test_context"), Rank.AMBIENT, full=True)

    seen: set = set()
    groups = [_dedupe(g, seen) for g in (ambient, cdef, fields, called, others, direct, indirect, bounds, returns, tests)]
    ambient, cdef, fields, called, others, direct, indirect, bounds, returns, tests = groups

    dropped: set[int] = set()
    total = sum(len(it.text) for g in groups for it in g)
    if budget_tokens is not None:
        for victim in [*reversed(indirect), *reversed(others), *reversed(bounds), *reversed(returns)]:
            if estimate_tokens(total) <= budget_tokens:
                break
            dropped.add(id(victim))
            total -= len(victim.text)

    def keep(items):
        return tuple(it for it in items if id(it) not in dropped)

    return FocalContext(
        structure=keep(ambient + cdef + fields + called + others),
        dependency=keep(direct + indirect + bounds + returns),
        test_context=tuple(tests),
        token_estimate=estimate_tokens(total),
        overflow=budget_tokens is not None and estimate_tokens(total) > budget_tokens,
    )


def _section(title, items):
    if not items:
        return ""
    return f"// {title}\n" + "\n\n".join(it.text for it in items)


def render_context(ctx: FocalContext) -> str:
    """Focal context (structure + dependency) as source text with comment headers."""
    parts = [_section("structure context", ctx.structure), _section("dependency context", ctx.dependency)]
    return "\n\n".join(p for p in parts if p)


def render_test_context(ctx: FocalContext) -> str:
    return _section("test context", ctx.test_context)
