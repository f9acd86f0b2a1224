import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaintest.minimize import coverage_report, minimize
from chaintest.paths import enumerate_paths

import oracles


def test_wait_selection_order(wait_fn):
    chains = enumerate_paths(wait_fn.cfg)
    selected = minimize(chains)
    assert [c.path_id for c in selected] == [4, 0, 2]
    report = coverage_report(selected, chains)
    assert (report.ratio, report.covered, report.total, report.uncovered) == (1.0, 8, 8, ())


def test_first_pick_covers_most(wait_fn):
    chains = enumerate_paths(wait_fn.cfg)
    sizes = {c.path_id: len(oracles.atoms(c)) for c in chains}
    assert sizes == {0: 2, 1: 3, 2: 2, 3: 4, 4: 5}
    assert coverage_report(minimize(chains)[:1], chains).covered == 5


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        minimize([])


def test_branch_free_function_keeps_one_path(corpus):
    chains = enumerate_paths(corpus.get("once_cell::imp::strict::addr").cfg)
    assert [c.path_id for c in minimize(chains)] == [0]
    assert coverage_report([], chains).ratio == 1.0


def test_partial_selection_reports_uncovered(wait_fn):
    chains = enumerate_paths(wait_fn.cfg)
    report = coverage_report([chains[4]], chains)
    assert report.total == 8 and report.covered == 5
    assert {(a.site_id, a.occurrence, a.outcome) for a in report.uncovered} == {
        (1, 1, False), (4, 1, True), (2, 1, True)}


@settings(max_examples=300, deadline=None)
@given(st.randoms(use_true_random=False))
def test_greedy_properties(rng):
    chains = oracles.random_chain_set(rng)
    selected = minimize(chains)
    ids = [c.path_id for c in selected]
    universe = set().union(*(oracles.atoms(c) for c in chains))
    # full coverage
    assert set().union(*(oracles.atoms(c) for c in selected)) == universe
    # same order as the reference greedy
    assert ids == oracles.greedy_reference(chains)
    # each pick adds something new, so |M| <= |U|
    covered = set()
    for c in selected:
        gain = oracles.atoms(c) - covered
        assert gain or not universe
        covered |= gain
    assert len(selected) <= max(len(universe), 1)
    assert len(selected) <= oracles.greedy_bound(oracles.optimum_cover_size(chains), len(universe))


def test_selection_is_deterministic_under_input_permutation():
    rng = random.Random(11)
    for _ in range(50):
        chains = oracles.random_chain_set(rng)
        shuffled = chains[:]
        rng.shuffle(shuffled)
        assert [c.path_id for c in minimize(shuffled)] == [c.path_id for c in minimize(chains)]
