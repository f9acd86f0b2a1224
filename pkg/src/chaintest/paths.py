"""Enumerate the condition chains of a control-flow graph.

Paths are explored depth-first from the entry block, taking branch outcomes
in the order their targets are declared. Each branch site may be evaluated
at most ``max_occurrences_per_site`` times along one path. The last permitted
evaluation of a site only follows outcomes that leave the cycle through it
(the successor cannot reach the site again); those steps are flagged
``loop_terminating``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import MalformedCfg, PathBudgetExceeded
from .model import (
    BranchSite,
    ConditionChain,
    ConditionExpr,
    ConditionStep,
    ControlFlowGraph,
    CoverageAtom,
    Shape,
    TermKind,
    classify_condition,
)


@dataclass(frozen=True)
class TraversalConfig:
    max_occurrences_per_site: int = 2
    max_paths: int = 4096

    def __post_init__(self):
        if self.max_occurrences_per_site < 1:
            raise ValueError("max_occurrences_per_site must be >= 1")
        if self.max_paths < 1:
            raise ValueError("max_paths must be >= 1")


def enumerate_paths(cfg: ControlFlowGraph, config: TraversalConfig = TraversalConfig()) -> list[ConditionChain]:
    """All entry-to-exit condition chains of ``cfg``, numbered in emission order.

    Raises PathBudgetExceeded instead of returning a truncated list.
    """
    limit = config.max_occurrences_per_site
    by_id = cfg.by_id
    if cfg.entry not in by_id:
        raise MalformedCfg(f"entry block {cfg.entry} does not exist")
    reach = cfg.reachable_from
    sites = cfg.branch_sites
    chains: list[ConditionChain] = []

    # frame: (block id, steps so far, occurrence counts, blocks seen since the last branch)
    stack = [(cfg.entry, (), {}, frozenset())]
    while stack:
        block_id, steps, counts, since_branch = stack.pop()
        block = by_id.get(block_id)
        if block is None:
            raise MalformedCfg(f"edge to nonexistent block {block_id}")
        term = block.terminator

        if block_id in cfg.exits or term.kind is TermKind.RETURN:
            if len(chains) >= config.max_paths:
                raise PathBudgetExceeded(config.max_paths)
            chains.append(ConditionChain(len(chains), steps, term.return_expr or "unit"))
            continue

        if term.kind in (TermKind.GOTO, TermKind.CALL):
            if len(term.targets) != 1:
                raise MalformedCfg(f"block {block_id}: {term.kind.value} needs exactly one target")
            if block_id in since_branch:
                continue  # branch-free cycle, this walk can never reach an exit
            stack.append((term.targets[0][1], steps, counts, since_branch | {block_id}))
            continue

        if term.kind is not TermKind.BRANCH or len(term.targets) < 2:
            raise MalformedCfg(f"block {block_id}: malformed terminator")

        occurrence = counts.get(block_id, 0) + 1
        if occurrence > limit:
            continue
        final = occurrence == limit and limit >= 2
        next_counts = {**counts, block_id: occurrence}
        children = []
        for outcome, target in term.targets:
            if final and (target == block_id or block_id in reach.get(target, ())):
                continue
            step = ConditionStep(sites[block_id], occurrence, outcome, loop_terminating=final)
            children.append((target, steps + (step,), next_counts, frozenset()))
        stack.extend(reversed(children))
    return chains


def atoms_of(chain: ConditionChain) -> frozenset[CoverageAtom]:
    return frozenset(CoverageAtom(s.site.site_id, s.occurrence, s.outcome) for s in chain.steps)


def chains_to_json(focal_id: str, chains: list[ConditionChain]) -> dict:
    return {
        "focal_id": focal_id,
        "paths": [chain_to_json(c) for c in chains],
    }


def chain_to_json(chain: ConditionChain) -> dict:
    return {
        "id": chain.path_id,
        "steps": [
            {
                "site": s.site.site_id,
                "occ": s.occurrence,
                "outcome": s.outcome,
                "loop_term": s.loop_terminating,
                "cond": s.site.expr.text,
                "shape": s.site.expr.shape.value,
            }
            for s in chain.steps
        ],
        "ret": chain.return_descriptor,
    }


def chain_from_json(data: dict) -> ConditionChain:
    steps = []
    for s in data["steps"]:
        text = s.get("cond", f"C{s['site']}")
        shape = Shape(s["shape"]) if "shape" in s else classify_condition(text)
        steps.append(ConditionStep(
            site=BranchSite(s["site"], ConditionExpr(text, shape)),
            occurrence=s["occ"],
            outcome=s["outcome"],
            loop_terminating=s["loop_term"],
        ))
    return ConditionChain(data["id"], tuple(steps), data.get("ret", "unit"))
