"""End-to-end driver: analyze, minimize, build context, prompt, generate, repair, run, report.

Session directory layout (everything except ``timing.json`` is a pure
function of the inputs)::

    session.json            crate name, focal ids, truncation flag
    focal/<name>.json       per-focal state + artifacts, with a sha256 digest
    tests/<name>/<stem>.rs  final source of every generated test
    transcripts/<name>.json prompts and responses
    coverage.json           suite coverage (or why it is missing)
    report.json, report.md
    timing.json             wall-clock timestamps
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import queue
import re
import shutil
import sys
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .context import build_context
from .errors import (
    BudgetExhausted,
    BudgetTooSmall,
    ChaintestError,
    CoverageError,
    CoverageToolMissing,
    EmptyExtraction,
    GatewayError,
    MalformedCfg,
    PathBudgetExceeded,
    UnknownDependencyRef,
)
from .llm import ChatRequest, Gateway, extract_code, gateway_from_config
from .metrics import aggregate, render
from .minimize import coverage_report, minimize
from .model import FocalMethod, TestArtifact, TestStatus, canonical_json, load_dump, parse_model, validate_model
from .paths import TraversalConfig, chain_from_json, chain_to_json, chains_to_json, enumerate_paths
from .prompts import boundary_entries, build_prompt, load_template, plan_tests
from .repair import RepairBudget, repair_test
from .runner import CoverageOutcome, RunStatus, runner_from_config

log = logging.getLogger(__name__)

STATE_SCHEMA = 1
EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_TRUNCATED = 0, 1, 2, 3


def safe_name(focal_id: str) -> str:
    slug = re.sub(r"[^A-Za-z0-9]+", "_", focal_id).strip("_").lower() or "fn"
    return f"{slug}_{hashlib.sha1(focal_id.encode()).hexdigest()[:6]}"


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _err(msg):
    print(msg, file=sys.stderr)


def _read_dump(dump_path):
    """Return (raw, model) or an exit code after printing the problem."""
    try:
        text = Path(dump_path).read_text(encoding="utf-8")
    except OSError as exc:
        _err(f"error: cannot read {dump_path}: {exc}")
        return None, EXIT_USAGE
    try:
        raw = load_dump(text)
    except json.JSONDecodeError as exc:
        _err(f"error: {dump_path}:{exc.lineno}:{exc.colno}: {exc.msg}")
        return None, EXIT_USAGE
    issues = validate_model(raw)
    if issues:
        for issue in issues:
            _err(f"invalid: {issue}")
        return None, EXIT_USAGE
    return raw, parse_model(raw)


def analyze_focal(focal: FocalMethod, traversal: TraversalConfig):
    """Chains for one focal; falls back to one occurrence per site on path blow-up."""
    try:
        return enumerate_paths(focal.cfg, traversal)
    except PathBudgetExceeded:
        if traversal.max_occurrences_per_site == 1:
            raise
        log.warning("%s: path budget exceeded, retrying with one occurrence per site", focal.id)
        return enumerate_paths(focal.cfg, TraversalConfig(1, traversal.max_paths))


# ---------------------------------------------------------------------------
# analyze / minimize


def cmd_analyze(dump_path, out_dir, traversal: TraversalConfig = TraversalConfig()) -> int:
    raw, model = _read_dump(dump_path)
    if raw is None:
        return model
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    code = EXIT_OK
    for focal in model.functions:
        try:
            chains = analyze_focal(focal, traversal)
        except (PathBudgetExceeded, MalformedCfg) as exc:
            _err(f"error: {focal.id}: {exc}")
            code = EXIT_FAILED
            continue
        _write_json(out / f"{safe_name(focal.id)}.chains.json", chains_to_json(focal.id, chains))
    return code


def cmd_minimize(chains_path, out_file) -> int:
    try:
        data = json.loads(Path(chains_path).read_text(encoding="utf-8"))
        chains = [chain_from_json(p) for p in data["paths"]]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        _err(f"error: cannot read chains from {chains_path}: {exc}")
        return EXIT_USAGE
    if not chains:
        _err(f"error: {chains_path} has no paths")
        return EXIT_USAGE
    selected = minimize(chains)
    result = {
        "focal_id": data.get("focal_id"),
        "paths": [chain_to_json(c) for c in selected],
        "coverage_ratio": coverage_report(selected, chains).ratio,
    }
    _write_json(Path(out_file), result)
    return EXIT_OK


# ---------------------------------------------------------------------------
# generate


@dataclass
class Settings:
    crate: str
    traversal: TraversalConfig
    context_budget: Optional[int]
    max_tests: Optional[int]
    repair: RepairBudget
    max_output_tokens: int
    template: str
    runner_cfg: dict
    workspace: Optional[str]
    fingerprint: str


def _resolve(base: Path, value):
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else (base / p))


def load_settings(config_path, template_path=None, mock_script=None, stub_runner=None):
    config_path = Path(config_path)
    cfg = json.loads(config_path.read_text(encoding="utf-8"))
    base = config_path.parent
    provider_cfg = dict(cfg.get("provider") or {"provider": "mock"})
    runner_cfg = dict(cfg.get("runner") or {})
    provider_cfg["mock_script"] = mock_script or _resolve(base, provider_cfg.get("mock_script"))
    runner_cfg["stub_script"] = stub_runner or _resolve(base, runner_cfg.get("stub_script"))
    runner_cfg["workspace"] = _resolve(base, runner_cfg.get("workspace"))
    template = load_template(template_path or _resolve(base, cfg.get("template")))

    # resume key material: the config plus the content of every file it points to
    extra = []
    for p in (provider_cfg.get("mock_script"), runner_cfg.get("stub_script")):
        extra.append(Path(p).read_text(encoding="utf-8") if p and Path(p).exists() else "")
    fingerprint = _sha256(canonical_json(cfg) + "\0" + template + "\0" + "\0".join(extra))

    t = cfg.get("traversal") or {}
    r = cfg.get("repair") or {}
    settings = Settings(
        crate=cfg.get("crate", "crate"),
        traversal=TraversalConfig(t.get("max_occurrences_per_site", 2), t.get("max_paths", 4096)),
        context_budget=cfg.get("context_budget_tokens"),
        max_tests=cfg.get("max_tests_per_focal"),
        repair=RepairBudget(r.get("max_errors_per_test", 10), r.get("max_iterations_per_error", 3)),
        max_output_tokens=cfg.get("max_output_tokens", 1024),
        template=template,
        runner_cfg=runner_cfg,
        workspace=runner_cfg.get("workspace"),
        fingerprint=fingerprint,
    )
    return settings, provider_cfg


class Session:
    def __init__(self, out_dir, settings: Settings, gateway: Gateway, runner, model, raw_by_id, parallel=4):
        self.out = Path(out_dir)
        self.settings = settings
        self.gateway = gateway
        self.runner = runner
        self.model = model
        self.raw_by_id = raw_by_id
        self.parallel = max(1, parallel)
        self.stop = threading.Event()
        self._tmp = None
        self._workspaces: queue.Queue = queue.Queue()
        self.timing: dict = {}

    # -- workspaces ---------------------------------------------------------

    def _new_workspace(self, name) -> Path:
        dest = Path(self._tmp.name) / name
        if self.settings.workspace:
            shutil.copytree(self.settings.workspace, dest)
        else:
            dest.mkdir(parents=True)
        return dest

    def _test_path(self, stem) -> Path:
        return Path(self.settings.runner_cfg.get("test_dir", "tests")) / f"{stem}.rs"

    # -- state files ----------------------------------------------------------

    def focal_key(self, focal_id) -> str:
        return _sha256(canonical_json(self.raw_by_id[focal_id]) + "\0" + self.settings.fingerprint)

    def state_path(self, focal_id) -> Path:
        return self.out / "focal" / f"{safe_name(focal_id)}.json"

    def load_state(self, focal_id):
        return read_state(self.state_path(focal_id))

    def save_state(self, payload):
        _write_json(self.state_path(payload["focal_id"]), {"payload": payload, "digest": _sha256(canonical_json(payload))})

    # -- per focal --------------------------------------------------------------

    def process(self, focal: FocalMethod) -> str:
        key = self.focal_key(focal.id)
        try:
            prev = self.load_state(focal.id)
        except ValueError:
            prev = None
        if prev and prev["key"] == key and prev["status"] == "done":
            return "skipped"
        if self.stop.is_set():
            return "not-started"
        started = time.time()
        ws = self._workspaces.get()
        try:
            payload = self._generate_focal(focal, key, ws)
        finally:
            self._workspaces.put(ws)
        self.save_state(payload)
        self.timing[focal.id] = {"started": started, "seconds": round(time.time() - started, 3)}
        return payload["status"]

    def _generate_focal(self, focal: FocalMethod, key: str, ws: Path) -> dict:
        s = self.settings
        name = safe_name(focal.id)
        payload = {"schema": STATE_SCHEMA, "focal_id": focal.id, "key": key, "status": "done",
                   "error": None, "paths_total": 0, "minimized": [], "atom_coverage": None, "artifacts": []}
        transcript: list = []
        try:
            chains = analyze_focal(focal, s.traversal)
            selected = minimize(chains)
            payload["paths_total"] = len(chains)
            payload["minimized"] = [c.path_id for c in selected]
            payload["atom_coverage"] = coverage_report(selected, chains).ratio
            ctx = build_context(focal, self.model, s.context_budget)
            wanted = len(selected) + sum(len(boundary_entries(c)) for c in selected)
            budget = wanted if s.max_tests is None else max(s.max_tests, len(selected))
            plan = plan_tests(selected, budget, focal.id)
        except (PathBudgetExceeded, MalformedCfg, UnknownDependencyRef, BudgetTooSmall) as exc:
            payload.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            return payload

        by_id = {c.path_id: c for c in chains}
        for entry in plan.entries:
            try:
                art = self._generate_test(focal, entry, by_id[entry.path_id], ctx, ws, name, transcript)
            except BudgetExhausted as exc:
                self.stop.set()
                payload.update(status="truncated", error=f"BudgetExhausted: {exc}")
                break
            except GatewayError as exc:
                payload.update(status="failed", error=f"{type(exc).__name__}: {exc}")
                break
            except ChaintestError as exc:  # toolchain trouble
                payload.update(status="failed", error=f"{type(exc).__name__}: {exc}")
                break
            payload["artifacts"].append(art.to_json())
            if art.status is not TestStatus.UNREPAIRABLE or art.source:
                _write_text(self.out / "tests" / name / f"{name}_{_stem_tag(entry.tag)}.rs", art.source)
        _write_json(self.out / "transcripts" / f"{name}.json", transcript)
        return payload

    def _generate_test(self, focal, entry, chain, ctx, ws: Path, name, transcript) -> TestArtifact:
        s = self.settings
        stem = f"{name}_{_stem_tag(entry.tag)}"
        bundle = build_prompt(entry, chain, ctx, focal, s.template)
        req = ChatRequest(system=bundle.system_preamble, user=bundle.user_message,
                          max_output_tokens=s.max_output_tokens, request_tag=f"gen:{focal.id}:{entry.tag}")
        resp = self.gateway.complete(req)
        transcript.append({"tag": req.request_tag, "prompt": req.user, "response": resp.text})
        test_id = f"{focal.id}::{entry.tag}"
        try:
            source = extract_code(resp.text)
        except EmptyExtraction as exc:
            art = TestArtifact(test_id, focal.id, entry.tag, "", tokens_in=resp.input_tokens,
                               tokens_out=resp.output_tokens)
            return art.advance(TestStatus.UNREPAIRABLE, cause=f"EmptyExtraction: {exc}")
        if not source.endswith("\n"):
            source += "\n"
        art = TestArtifact(test_id, focal.id, entry.tag, source,
                           tokens_in=resp.input_tokens, tokens_out=resp.output_tokens)
        rel = self._test_path(stem)
        target = ws / rel

        def compile_fn(src):
            _write_text(target, src)
            return self.runner.compile(ws, rel)

        try:
            outcome = compile_fn(source)
            if outcome.success:
                art = art.advance(TestStatus.COMPILED)
            else:
                art = repair_test(art, s.repair, self.gateway, compile_fn, first_outcome=outcome,
                                  transcript=transcript)
                if art.status is TestStatus.UNREPAIRABLE and (art.cause or "").startswith("gateway: BudgetExhausted"):
                    raise BudgetExhausted(art.cause)
            if art.status is TestStatus.COMPILED:
                run = self.runner.run_tests(ws, stem)
                art = art.advance(TestStatus.PASSED if run.all_passed else TestStatus.FAILED,
                                  cause=None if run.all_passed else _run_cause(run))
        finally:
            if target.exists():
                target.unlink()
        return art

    # -- session ------------------------------------------------------------------

    def run(self) -> int:
        self.out.mkdir(parents=True, exist_ok=True)
        self._tmp = tempfile.TemporaryDirectory(prefix="chaintest-")
        t0 = time.time()
        try:
            for i in range(self.parallel):
                self._workspaces.put(self._new_workspace(f"ws{i}"))
            with ThreadPoolExecutor(max_workers=self.parallel) as pool:
                results = dict(zip([f.id for f in self.model.functions],
                                   pool.map(self.process, self.model.functions)))
            truncated = any(r in ("truncated", "not-started") for r in results.values())
            self._measure_coverage()
        finally:
            self._tmp.cleanup()
        _write_json(self.out / "session.json", {
            "crate": self.settings.crate,
            "focal_ids": sorted(results),
            "truncated": truncated,
        })
        _write_json(self.out / "timing.json", {"started": t0, "finished": time.time(), "focal": self.timing})
        write_reports(self.out)
        if truncated:
            return EXIT_TRUNCATED
        return EXIT_FAILED if any(r == "failed" for r in results.values()) else EXIT_OK

    def _measure_coverage(self):
        suite_dir = self.out / "tests"
        compiled = []
        for focal in self.model.functions:
            try:
                state = self.load_state(focal.id)
            except ValueError:
                continue
            for a in (state or {}).get("artifacts", []):
                if a["status"] in (TestStatus.COMPILED.value, TestStatus.PASSED.value, TestStatus.FAILED.value):
                    stem = f"{safe_name(focal.id)}_{_stem_tag(a['tag'])}"
                    compiled.append((stem, suite_dir / safe_name(focal.id) / f"{stem}.rs"))
        if not compiled:
            _write_json(self.out / "coverage.json", {"available": False, "reason": "no compiled tests"})
            return
        ws = self._new_workspace("coverage")
        suite = []
        for stem, src in compiled:
            rel = self._test_path(stem)
            _write_text(ws / rel, src.read_text(encoding="utf-8"))
            suite.append(str(rel))
        try:
            cov = self.runner.measure_coverage(ws, suite)
            data = {"available": True, **cov.to_json()}
        except (CoverageToolMissing, CoverageError, ChaintestError) as exc:
            data = {"available": False, "reason": f"{type(exc).__name__}: {exc}"}
        _write_json(self.out / "coverage.json", data)


def _stem_tag(tag: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", tag).lower()


def _run_cause(run) -> str:
    if not run.statuses:
        return "no test matched"
    bad = sorted(f"{n}: {s.value}" for n, s in run.statuses.items() if s is not RunStatus.PASSED)
    return "; ".join(bad)


def cmd_generate(dump_path, config_path, out_dir, parallel=4, template=None, mock_script=None,
                 stub_runner=None, sleep=time.sleep) -> int:
    raw, model = _read_dump(dump_path)
    if raw is None:
        return model
    try:
        settings, provider_cfg = load_settings(config_path, template, mock_script, stub_runner)
        gateway = gateway_from_config(provider_cfg, provider_cfg.get("mock_script"), sleep=sleep)
        runner = runner_from_config(settings.runner_cfg, settings.runner_cfg.get("stub_script"))
    except (OSError, ValueError, KeyError) as exc:
        _err(f"error: bad configuration: {exc}")
        return EXIT_USAGE
    raw_by_id = {fn["id"]: fn for fn in raw["functions"]}
    session = Session(out_dir, settings, gateway, runner, model, raw_by_id, parallel)
    return session.run()


# ---------------------------------------------------------------------------
# report


def read_state(path: Path):
    """Payload of a focal state file; None if absent, ValueError if tampered."""
    if not path.exists():
        return None
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        payload, digest = doc["payload"], doc["digest"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ValueError(f"unreadable state file: {exc}") from exc
    if _sha256(canonical_json(payload)) != digest:
        raise ValueError("digest mismatch")
    return payload


def build_report(session_dir: Path):
    session_dir = Path(session_dir)
    meta_path = session_dir / "session.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    cov = None
    cov_path = session_dir / "coverage.json"
    if cov_path.exists():
        data = json.loads(cov_path.read_text(encoding="utf-8"))
        if data.get("available"):
            cov = CoverageOutcome(data["lines_covered"], data["lines_total"],
                                  data["branches_covered"], data["branches_total"])
    artifacts, invalid = [], []
    truncated = bool(meta.get("truncated"))
    # a state file's own focal_id cannot be trusted once its digest fails
    names = {safe_name(fid): fid for fid in meta.get("focal_ids", [])}
    for path in sorted((session_dir / "focal").glob("*.json")):
        if names and path.stem not in names:
            continue  # left over from a session over a different dump
        try:
            payload = read_state(path)
            arts = [TestArtifact.from_json(a) for a in payload["artifacts"]]
        except (ValueError, KeyError, TypeError) as exc:
            invalid.append((names.get(path.stem, path.stem), str(exc)))
            continue
        artifacts.extend(arts)
        truncated = truncated or payload["status"] == "truncated"
    return aggregate(artifacts, cov, crate=meta.get("crate", "crate"), invalid=invalid, truncated=truncated)


def write_reports(session_dir: Path):
    report = build_report(session_dir)
    (Path(session_dir) / "report.json").write_bytes(render(report, "json"))
    (Path(session_dir) / "report.md").write_bytes(render(report, "markdown"))
    return report


def cmd_report(session_dir, fmt="json") -> int:
    session_dir = Path(session_dir)
    focal_dir = session_dir / "focal"
    if not session_dir.is_dir() or not focal_dir.is_dir() or not any(focal_dir.glob("*.json")):
        _err(f"error: {session_dir} is not a session directory (no focal state files)")
        return EXIT_USAGE
    report = write_reports(session_dir)
    sys.stdout.write(render(report, "json" if fmt == "json" else "markdown").decode("utf-8"))
    return EXIT_OK
