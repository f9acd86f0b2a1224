"""Greedy set-cover selection of condition chains."""

from __future__ import annotations

from dataclasses import dataclass

from .model import ConditionChain, CoverageAtom
from .paths import atoms_of


def minimize(paths: list[ConditionChain]) -> list[ConditionChain]:
    """Pick chains until every coverage atom of ``paths`` is covered.

    Each round takes the chain covering the most still-uncovered atoms, ties
    going to the lowest path id. The result keeps selection order. When no
    chain has any atom (branch-free function) the lowest-id chain is returned
    so the function still gets one test.
    """
    if not paths:
        raise ValueError("minimize() needs at least one path")
    atoms = {p.path_id: atoms_of(p) for p in paths}
    ordered = sorted(paths, key=lambda p: p.path_id)
    remaining = set().union(*atoms.values())
    if not remaining:
        return [ordered[0]]

    selected = []
    while remaining:
        best = max(ordered, key=lambda p: (len(atoms[p.path_id] & remaining), -p.path_id))
        gain = atoms[best.path_id] & remaining
        assert gain, "atom universe is built from the same paths, so a gain always exists"
        selected.append(best)
        remaining -= gain
    return selected


@dataclass(frozen=True)
class CoverageSummary:
    ratio: float
    covered: int
    total: int
    uncovered: tuple[CoverageAtom, ...]


def coverage_report(selected: list[ConditionChain], all_paths: list[ConditionChain]) -> CoverageSummary:
    universe = set().union(*(atoms_of(p) for p in all_paths)) if all_paths else set()
    covered = set().union(*(atoms_of(p) for p in selected)) if selected else set()
    covered &= universe
    missing = tuple(sorted(universe - covered, key=CoverageAtom.sort_key))
    ratio = 1.0 if not universe else len(covered) / len(universe)
    return CoverageSummary(ratio, len(covered), len(universe), missing)
