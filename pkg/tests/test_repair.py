import os
import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaintest.errors import StaleEdit, UnparseableChangeLog
from chaintest.llm import ChatResponse, Gateway, MockProvider
from chaintest.model import TestArtifact as Artifact, TestStatus as Status
from chaintest.repair import (
    ChangeLog,
    Diagnostic,
    Edit,
    RepairBudget,
    apply_change_log,
    build_repair_prompt,
    parse_change_log,
    repair_test,
    snippet_around,
)
from chaintest.runner import BuildOutcome, parse_diagnostics

HERE = os.path.dirname(__file__)
RECORDED = os.path.join(HERE, "fixtures", "recorded")
GOLDEN = os.path.join(HERE, "fixtures", "golden")

TEN = "".join(f"line {i}\n" for i in range(1, 11))

E0369_FIX = """LINE: 4
ORIGINAL:
    let addr: usize = ptr & STATE_MASK;
REPLACEMENT:
    let addr: usize = ptr as usize & STATE_MASK;
END"""


def read(name, base=RECORDED):
    with open(os.path.join(base, name), encoding="utf-8") as fh:
        return fh.read()


def numbers(snippet):
    return [int(line.split("|")[0]) for line in snippet.splitlines()]


@pytest.mark.parametrize("line, expected", [(5, range(2, 9)), (1, range(1, 5)), (10, range(7, 11))])
def test_snippet_clamping(line, expected):
    assert numbers(snippet_around(TEN, line)) == list(expected)


def test_snippet_format_and_bounds():
    assert snippet_around(TEN, 10, radius=1).splitlines() == [" 9 | line 9", "10 | line 10"]
    with pytest.raises(ValueError):
        snippet_around(TEN, 11)


def test_diagnostic_line_invariant():
    with pytest.raises(ValueError):
        Diagnostic("E0001", "m", "f.rs", 0)


def e0369_case():
    (diag,) = [d for d in parse_diagnostics(read("rustc_e0369.jsonl")) if d.is_error]
    return diag, read("wait_path_0.rs")


def test_e0369_diagnostic_fields():
    diag, _ = e0369_case()
    assert (diag.code, diag.file, diag.line, diag.column) == ("E0369", "tests/wait_path_0.rs", 4, 27)
    assert diag.message.startswith("no implementation for")


def test_repair_prompt_golden():
    diag, src = e0369_case()
    req = build_repair_prompt(diag, snippet_around(src, diag.line))
    assert "error[E0369]" in req.user and "The error occurs at line 4" in req.user
    assert "4 |     let addr: usize = ptr & STATE_MASK;" in req.user
    assert req.temperature == 0.0
    assert req.user == read("repair_prompt_e0369.txt", GOLDEN)


def test_repair_prompt_with_empty_message():
    req = build_repair_prompt(Diagnostic("E0308", "", "t.rs", 2), snippet_around(TEN, 2))
    assert "error[E0308]: \n --> t.rs:2:0" in req.user
    assert "LINE: <line number>" in req.user


def test_parse_e0369_change_log():
    log = parse_change_log(E0369_FIX)
    assert log.edits == (Edit(4, "    let addr: usize = ptr & STATE_MASK;",
                              "    let addr: usize = ptr as usize & STATE_MASK;"),)


def test_parse_two_edits_in_declared_order_and_fences():
    text = ("```\nLINE: 7\nORIGINAL:\nline 7\nREPLACEMENT:\nseven\nEND\n"
            "LINE: 3\nORIGINAL:\n 3 | line 3\nREPLACEMENT:\nthree\nthree b\nEND\n```")
    log = parse_change_log(text)
    assert [e.line for e in log.edits] == [7, 3]
    assert log.edits[1] == Edit(3, "line 3", "three\nthree b")


@pytest.mark.parametrize("text", [
    "",
    "I think you should cast it.",
    "LINE: 4\nORIGINAL:\n\nREPLACEMENT:\nx\nEND",
    "LINE: 4\nORIGINAL:\na\nb\nREPLACEMENT:\nx\nEND",
    "LINE: 4\nREPLACEMENT:\nx\nEND",
    "LINE: 4\nORIGINAL:\na\nREPLACEMENT:\nx",
])
def test_unparseable_change_logs(text):
    with pytest.raises(UnparseableChangeLog):
        parse_change_log(text)


def test_apply_empty_log_is_identity():
    assert apply_change_log(TEN, ChangeLog()) == TEN


def test_apply_e0369():
    _, src = e0369_case()
    fixed = apply_change_log(src, parse_change_log(E0369_FIX))
    assert fixed.splitlines()[3] == "    let addr: usize = ptr as usize & STATE_MASK;"
    assert fixed.splitlines()[:3] == src.splitlines()[:3] and fixed.endswith("\n")


def test_apply_bottom_up():
    log = ChangeLog((Edit(3, "line 3", "three"), Edit(7, "line 7", "seven\nseven b\nseven c")))
    out = apply_change_log(TEN, log).splitlines()
    assert out[2] == "three" and out[6:9] == ["seven", "seven b", "seven c"] and len(out) == 12


def test_apply_twice_is_stale():
    log = ChangeLog((Edit(2, "line 2", "two"),))
    once = apply_change_log(TEN, log)
    with pytest.raises(StaleEdit):
        apply_change_log(once, log)
    assert apply_change_log(TEN, log) == once  # pure


def test_trailing_whitespace_is_ignored_when_matching():
    assert apply_change_log("a  \nb\n", ChangeLog((Edit(1, "a", "A"),))) == "A\nb\n"


# -- the repair loop ------------------------------------------------------------


class FixCompiler:
    """Reports the recorded E0369 error until the cast is present."""

    def __init__(self):
        self.calls = 0
        self.diag, _ = e0369_case()

    def __call__(self, src):
        self.calls += 1
        return BuildOutcome(True) if "as usize" in src else BuildOutcome(False, (self.diag,))


def gateway(entries):
    return Gateway(MockProvider(entries), sleep=lambda s: None)


def test_e0369_repaired_in_one_round():
    _, src = e0369_case()
    gw = gateway([{"match_tag": "repair:*", "respond": E0369_FIX}])
    comp = FixCompiler()
    art = repair_test(Artifact("w::path0", "w", "path0", src, tokens_in=5, tokens_out=2), RepairBudget(), gw, comp)
    assert art.status is Status.COMPILED and art.repair_rounds_used == 1
    assert art.source.splitlines()[3].endswith("ptr as usize & STATE_MASK;")
    assert len(gw.records) == 1 and comp.calls == 2
    assert art.tokens_in == 5 + gw.records[0].input_tokens


def test_no_op_logs_give_up_after_three_iterations():
    _, src = e0369_case()
    noop = E0369_FIX.replace("ptr as usize & STATE_MASK", "ptr & STATE_MASK")
    gw = gateway([{"match_tag": "*", "respond": noop}])
    art = repair_test(Artifact("w::p", "w", "p", src), RepairBudget(), gw, FixCompiler())
    assert art.status is Status.UNREPAIRABLE and art.repair_rounds_used == 3 == len(gw.records)
    assert "unresolved after 3 iterations" in art.cause


def test_unparseable_final_iteration():
    _, src = e0369_case()
    gw = gateway([{"match_tag": "*", "respond": "no idea"}])
    art = repair_test(Artifact("w::p", "w", "p", src), RepairBudget(), gw, FixCompiler())
    assert art.status is Status.UNREPAIRABLE and art.cause.startswith("UnparseableChangeLog")
    assert art.repair_rounds_used == 3


def _eleven_errors(src):
    errs = tuple(Diagnostic("E0425", f"cannot find value `v{i}`", "t.rs", i)
                 for i in range(1, 12) if f"v{i}_fixed" not in src)
    return BuildOutcome(not errs, errs)


def _fix_reported_line(req):
    m = re.search(r"at line (\d+)\.", req.user)
    n = int(m.group(1))
    orig = re.search(rf"^\s*{n} \| (.*)$", req.user, re.M).group(1)
    return ChatResponse(f"LINE: {n}\nORIGINAL:\n{orig}\nREPLACEMENT:\n{orig}_fixed\nEND", 10, 5, "scripted")


def test_error_budget_stops_after_ten_fixes():
    src = "".join(f"v{i}\n" for i in range(1, 12))
    gw = Gateway(_fix_reported_line, sleep=lambda s: None)
    art = repair_test(Artifact("t::p", "t", "p", src), RepairBudget(), gw, _eleven_errors)
    assert art.status is Status.UNREPAIRABLE and "error budget of 10" in art.cause
    assert art.repair_rounds_used == 10
    assert "v11_fixed" not in art.source and "v10_fixed" in art.source


def test_gateway_failure_becomes_unrepairable():
    _, src = e0369_case()
    gw = gateway([{"match_tag": "*", "respond": "x", "fail_times": 10}])
    art = repair_test(Artifact("w::p", "w", "p", src), RepairBudget(), gw, FixCompiler())
    assert art.status is Status.UNREPAIRABLE and art.cause.startswith("gateway: ProviderUnavailable")
    assert art.repair_rounds_used == 0


def test_repair_requires_generated_status():
    with pytest.raises(ValueError):
        repair_test(Artifact("a", "f", "t", "x", status=Status.COMPILED), RepairBudget(), gateway([]), FixCompiler())


_BEHAVIOURS = st.sampled_from(["fix", "fix_and_break", "noop", "garbage", "stale", "shift"])


@settings(max_examples=200, deadline=None)
@given(st.lists(_BEHAVIOURS, min_size=1, max_size=60), st.integers(1, 4), st.integers(1, 4))
def test_gateway_calls_bounded_by_e_times_i(script, e, i):
    """Whatever the model says, calls per test stay within E x I and equal the rounds used."""
    replies = iter(script * 40)
    counter = [0]

    def model(req):
        kind = next(replies)
        m = re.search(r"at line (\d+)\.", req.user)
        n = int(m.group(1))
        orig = re.search(rf"^\s*{n} \| (.*)$", req.user, re.M).group(1)
        counter[0] += 1
        text = {
            "fix": f"LINE: {n}\nORIGINAL:\n{orig}\nREPLACEMENT:\nok{counter[0]}\nEND",
            "fix_and_break": f"LINE: {n}\nORIGINAL:\n{orig}\nREPLACEMENT:\nok{counter[0]}\nbad{counter[0]}\nEND",
            "noop": f"LINE: {n}\nORIGINAL:\n{orig}\nREPLACEMENT:\n{orig}\nEND",
            "garbage": "sorry",
            "stale": f"LINE: {n}\nORIGINAL:\nnot there\nREPLACEMENT:\nx\nEND",
            "shift": f"LINE: {n}\nORIGINAL:\n{orig}\nREPLACEMENT:\nbad_new\n{orig}\nEND",
        }[kind]
        return ChatResponse(text, 1, 1, "adversary")

    def compile_fn(src):
        lines = src.splitlines()
        errs = tuple(Diagnostic("E0001", "bad line", "t.rs", k) for k, ln in enumerate(lines, 1)
                     if ln.startswith("bad"))
        return BuildOutcome(not errs, errs)

    gw = Gateway(model, sleep=lambda s: None)
    art = repair_test(Artifact("t::p", "t", "p", "bad0\nfine\nbad_x\n"), RepairBudget(e, i), gw, compile_fn)
    assert len(gw.records) <= e * i
    assert art.repair_rounds_used == len(gw.records)
    assert art.status in (Status.COMPILED, Status.UNREPAIRABLE)
    if art.status is Status.COMPILED:
        assert compile_fn(art.source).success
