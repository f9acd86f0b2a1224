import json
import os

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaintest.metrics import SessionReport, aggregate, percent, render
from chaintest.model import TestArtifact as Artifact, TestStatus as Status
from chaintest.runner import CoverageOutcome

import oracles

GOLDEN = os.path.join(os.path.dirname(__file__), "fixtures", "golden")


def art(focal, n, status, rounds=0, tin=10, tout=5):
    return Artifact(f"{focal}::path{n}", focal, f"path{n}", "fn t() {}", status, rounds, tin, tout)


def test_percent_rounding():
    assert percent(629, 1300) == 48.38
    assert percent(304, 629) == 48.33
    assert percent(1, 800) == 0.13  # half-up, not half-even
    assert percent(3, 800) == 0.38
    assert percent(2, 3) == 66.67
    assert percent(0, 5) == 0.0
    assert percent(5, 0) is None


@settings(max_examples=500)
@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_percent_matches_integer_oracle(num, den):
    assert percent(num, den) == oracles.pct_by_hand(num, den)


def test_hand_computed_session():
    arts = [art("f", 0, Status.PASSED), art("f", 1, Status.PASSED), art("f", 2, Status.FAILED, rounds=2),
            art("g", 0, Status.PASSED), art("g", 1, Status.FAILED), art("g", 2, Status.COMPILED),
            art("g", 3, Status.UNREPAIRABLE, rounds=3)]
    rep = aggregate(arts, CoverageOutcome(629, 1300, 304, 629), crate="demo")
    crate, f, g = rep.rows
    # 6 of 7 compiled, 3 of those 6 passed
    assert (crate.name, crate.n_tests, crate.comp_pass_pct, crate.exec_pass_pct) == ("demo", 7, 85.71, 50.0)
    assert (crate.line_cov_pct, crate.branch_cov_pct) == (48.38, 48.33)
    assert (crate.tokens_in, crate.tokens_out, crate.repair_rounds_total) == (70, 35, 5)
    assert (f.name, f.comp_pass_pct, f.exec_pass_pct, f.line_cov_pct) == ("f", 100.0, 66.67, None)
    assert (g.name, g.comp_pass_pct, g.exec_pass_pct, g.repair_rounds_total) == ("g", 75.0, 33.33, 3)


def test_compiled_zero_gives_null_exec_pass():
    rep = aggregate([art("h", 0, Status.UNREPAIRABLE), art("h", 1, Status.UNREPAIRABLE)])
    assert rep.rows[0].comp_pass_pct == 0.0 and rep.rows[0].exec_pass_pct is None
    assert rep.rows[0].line_cov_pct is None


def test_empty_session():
    (crate,) = aggregate([], CoverageOutcome(1, 2, 1, 2)).rows
    assert crate.n_tests == 0 and crate.comp_pass_pct is None and crate.line_cov_pct is None


def test_zero_branches_gives_null_branch_coverage():
    crate = aggregate([art("f", 0, Status.PASSED)], CoverageOutcome(5, 10, 0, 0)).rows[0]
    assert (crate.line_cov_pct, crate.branch_cov_pct) == (50.0, None)


def test_invalid_rows():
    rep = aggregate([art("f", 0, Status.PASSED)], invalid=[("bad::fn", "digest mismatch")])
    assert [(r.name, r.valid) for r in rep.rows] == [("crate", True), ("bad::fn", False), ("f", True)]
    assert "bad::fn (invalid: digest mismatch)" in render(rep, "md").decode()


def test_markdown_golden():
    rep = aggregate([art("demo::classify", 0, Status.PASSED, rounds=1, tin=120, tout=40)],
                    CoverageOutcome(93, 100, 45, 60), crate="demo")
    rep = SessionReport(rep.rows[:1])
    with open(os.path.join(GOLDEN, "report_one_row.md"), "rb") as fh:
        assert render(rep, "markdown") == fh.read()


def test_truncated_note_and_bad_format():
    assert b"Session truncated" in render(aggregate([], truncated=True), "md")
    with pytest.raises(ValueError):
        render(aggregate([]), "csv")


_STATUSES = st.sampled_from([Status.COMPILED, Status.PASSED, Status.FAILED, Status.UNREPAIRABLE])


@st.composite
def artifact_sets(draw):
    items = draw(st.lists(st.tuples(st.sampled_from("abc"), _STATUSES, st.integers(0, 30), st.integers(0, 500)),
                          max_size=25))
    return [art(f, i, s, r, t, t // 2) for i, (f, s, r, t) in enumerate(items)]


@settings(max_examples=150, deadline=None)
@given(artifact_sets(), st.randoms(use_true_random=False))
def test_aggregate_is_order_independent(arts, rng):
    cov = CoverageOutcome(3, 7, 1, 3)
    shuffled = arts[:]
    rng.shuffle(shuffled)
    assert aggregate(arts, cov) == aggregate(shuffled, cov)


@settings(max_examples=150, deadline=None)
@given(artifact_sets(), st.booleans())
def test_json_render_fixed_point(arts, truncated):
    once = render(aggregate(arts, CoverageOutcome(1, 3, 0, 0), truncated=truncated), "json")
    again = render(SessionReport.from_json(json.loads(once)), "json")
    assert once == again
