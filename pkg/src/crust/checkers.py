"""Translation checks: compile, lint, differential fuzzing.

The three stages form a strict ladder. A translation that fails to compile
is never linted; one that fails lint is never fuzzed. Each stage produces a
CheckReport whose diagnostics are what gets fed back to the model verbatim.

ToolchainCheckers drives the real rustc / clippy-driver / clang toolchain.
SimulatedCheckers replays table-driven verdicts for offline runs and tests;
both expose the same three methods.
"""

from __future__ import annotations

import enum
import json
import re
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import extract_interfaces, scan_file
from .errors import FuzzingExceptionError, FuzzingSetupError
from .harness import (
    InterfacePair,
    generate_c_side,
    generate_driver,
    generate_rust_side,
    input_size,
    pair_interfaces,
    side_b_rename_list,
)

_DIAG_HEAD = 4096


class CheckStage(enum.IntEnum):
    COMPILED = 1
    LINTED = 2
    FUZZED = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()


@dataclass
class Counterexample:
    function: str
    kind: str  # "value-mismatch" | "rust-only-runtime-error"
    inputs: dict
    c_output: dict
    rust_output: dict
    raw_input_hex: str = ""

    def to_json(self) -> dict:
        return {
            "function": self.function,
            "kind": self.kind,
            "inputs": self.inputs,
            "c": self.c_output,
            "rust": self.rust_output,
            "raw_input_hex": self.raw_input_hex,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Counterexample":
        return cls(
            function=d.get("function", ""),
            kind=d.get("kind", "value-mismatch"),
            inputs=d.get("inputs", {}),
            c_output=d.get("c", {}),
            rust_output=d.get("rust", {}),
            raw_input_hex=d.get("raw_input_hex", ""),
        )


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    if isinstance(v, str):
        return json.dumps(v)
    return str(v)


def _fmt_pairs(d: dict) -> str:
    return ", ".join(f"{k}={_fmt_value(v)}" for k, v in d.items())


def render_counterexample(cex: Counterexample) -> str:
    """Human-readable form, also used verbatim as model feedback."""
    inputs = dict(cex.inputs)
    globals_part = inputs.pop("globals", None)
    line = f"input values: {_fmt_pairs(inputs)}" if inputs else "input values: (none)"
    if globals_part:
        line += f"; globals: {_fmt_pairs(globals_part)}"
    c_line = f"C output: {_fmt_pairs(cex.c_output)}" if cex.c_output else "C output: (none)"
    if cex.rust_output.get("error"):
        r_line = "Rust output: runtime error (panic or abort)"
    else:
        r_line = f"Rust output: {_fmt_pairs(cex.rust_output)}" if cex.rust_output else "Rust output: (none)"
    return "\n".join(
        [f"the translation of {cex.function} behaves differently from the original:", line, c_line, r_line]
    )


@dataclass
class CheckReport:
    stage: CheckStage
    success: bool
    diagnostics: str = ""
    counterexample: Counterexample | None = None
    wall_time: float = 0.0

    def to_json(self) -> dict:
        d = {
            "stage": self.stage.label,
            "success": self.success,
            "diagnostics": self.diagnostics,
            "wall_time": self.wall_time,
        }
        if self.counterexample is not None:
            d["counterexample"] = self.counterexample.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CheckReport":
        stage = {s.label: s for s in CheckStage}[d["stage"]]
        cex = d.get("counterexample")
        return cls(
            stage=stage,
            success=d["success"],
            diagnostics=d.get("diagnostics", ""),
            counterexample=Counterexample.from_json(cex) if cex else None,
            wall_time=d.get("wall_time", 0.0),
        )


@dataclass
class FuzzConfig:
    rustc: str = "rustc"
    clippy: str = "clippy-driver"
    clang: str = "clang"
    edition: str = "2021"
    fuzz_seconds_per_function: float = 60.0
    self_check_seconds: float = 30.0
    per_input_timeout_s: int = 10
    probe_alarm_s: int = 5
    error_exitcode: int = 77
    float_ulps: int = 2
    max_string_len: int = 64
    keep_work_dir: bool = False
    work_root: str | None = None


_DF_JSON_RE = re.compile(rb"^DF_JSON:(\{.*\})\s*$", re.MULTILINE)
_ARTIFACT_RE = re.compile(rb"Test unit written to\s+(\S+)")


def parse_df_json(stderr: bytes) -> Counterexample | None:
    m = _DF_JSON_RE.search(stderr)
    if not m:
        return None
    try:
        d = json.loads(m.group(1).decode("utf-8", errors="replace"))
    except ValueError:
        return None
    return Counterexample(
        function=d.get("function", ""),
        kind=d.get("kind", ""),
        inputs=d.get("inputs", {}),
        c_output=d.get("c", {}),
        rust_output=d.get("rust", {}),
    )


def _head(text: bytes | str, limit: int = _DIAG_HEAD) -> str:
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    if len(text) <= limit:
        return text
    return text[:limit] + "\n[output truncated]"


class ToolchainCheckers:
    """Real rustc / clippy-driver / clang pipeline."""

    kind = "toolchain"

    def __init__(self, config: FuzzConfig | None = None):
        self.config = config or FuzzConfig()

    # -- stage 1
    def check_compile(self, rust_source: str, unit=None) -> CheckReport:
        cfg = self.config
        start = time.monotonic()
        with tempfile.TemporaryDirectory(prefix="dfc-", dir=cfg.work_root) as td:
            src = Path(td) / "translation.rs"
            src.write_text(rust_source, encoding="utf-8")
            proc = subprocess.run(
                [
                    cfg.rustc, "--edition", cfg.edition, "-O", "-C", "panic=abort",
                    "--crate-type=staticlib", "-o", str(Path(td) / "libdfb.a"), str(src),
                ],
                capture_output=True,
                timeout=120,
            )
        ok = proc.returncode == 0
        return CheckReport(
            CheckStage.COMPILED,
            ok,
            diagnostics="" if ok else _head(proc.stderr, 16 * 1024),
            wall_time=time.monotonic() - start,
        )

    # -- stage 2
    def check_lint(self, rust_source: str, unit=None) -> CheckReport:
        cfg = self.config
        start = time.monotonic()
        with tempfile.TemporaryDirectory(prefix="dfl-", dir=cfg.work_root) as td:
            src = Path(td) / "translation.rs"
            src.write_text(rust_source, encoding="utf-8")
            proc = subprocess.run(
                [
                    cfg.clippy, "--edition", cfg.edition, "--crate-type=lib",
                    "--error-format=json", "--emit=metadata",
                    "-o", str(Path(td) / "meta.rmeta"), str(src),
                ],
                capture_output=True,
                timeout=120,
            )
        rendered = []
        for line in proc.stderr.splitlines():
            line = line.strip()
            if not line.startswith(b"{"):
                continue
            try:
                d = json.loads(line)
            except ValueError:
                continue
            if d.get("level") not in ("warning", "error"):
                continue
            if not d.get("spans") and not d.get("code"):
                continue  # "N warnings emitted" style summaries
            rendered.append(d.get("rendered") or d.get("message", ""))
        ok = proc.returncode == 0 and not rendered
        diagnostics = "" if ok else _head("".join(rendered) or proc.stderr, 16 * 1024)
        return CheckReport(
            CheckStage.LINTED, ok, diagnostics=diagnostics, wall_time=time.monotonic() - start
        )

    # -- stage 3
    def check_behavior(self, rust_source: str, unit) -> CheckReport:
        cfg = self.config
        start = time.monotonic()
        funcs = [i for i in unit.interfaces if not i.macro_like]
        if not funcs:
            raise FuzzingSetupError(f"{unit.source_id}: no functions to fuzz")
        bad = [i for i in funcs if not i.fuzzable]
        if bad:
            raise FuzzingSetupError(
                f"{unit.source_id}: " + "; ".join(f"{i.name}: {'; '.join(i.warnings)}" for i in bad)
            )
        pairs = pair_interfaces(funcs, funcs)
        work = Path(tempfile.mkdtemp(prefix="dff-", dir=cfg.work_root))
        try:
            (work / "side_a.c").write_text(unit.text, encoding="utf-8")
            (work / "translation.rs").write_text(
                generate_rust_side(rust_source, funcs), encoding="utf-8"
            )
            lib = work / "libdfb.a"
            proc = subprocess.run(
                [
                    cfg.rustc, "--edition", cfg.edition, "-O", "-C", "panic=abort",
                    "--crate-type=staticlib", "-o", str(lib), str(work / "translation.rs"),
                ],
                capture_output=True,
                timeout=120,
            )
            if proc.returncode != 0:
                raise FuzzingSetupError(
                    "translation does not expose the expected interface:\n" + _head(proc.stderr)
                )
            budget = cfg.fuzz_seconds_per_function
            for pair in pairs:
                cex = self._fuzz_one(work, pair, [str(lib)], budget)
                if cex is not None:
                    return CheckReport(
                        CheckStage.FUZZED,
                        False,
                        diagnostics=render_counterexample(cex),
                        counterexample=cex,
                        wall_time=time.monotonic() - start,
                    )
            return CheckReport(CheckStage.FUZZED, True, wall_time=time.monotonic() - start)
        finally:
            if not cfg.keep_work_dir:
                shutil.rmtree(work, ignore_errors=True)

    def _fuzz_one(
        self, work: Path, pair: InterfacePair, side_b_objs: list[str], budget: float
    ) -> Counterexample | None:
        cfg = self.config
        name = pair.name
        driver = work / f"driver_{name}.c"
        driver.write_text(
            generate_driver(
                pair,
                max_string_len=cfg.max_string_len,
                float_ulps=cfg.float_ulps,
                probe_alarm_s=cfg.probe_alarm_s,
            ),
            encoding="utf-8",
        )
        binary = work / f"fuzz_{name}"
        proc = subprocess.run(
            [
                cfg.clang, "-g", "-O0", "-fwrapv", "-fsanitize=fuzzer",
                str(driver), *side_b_objs, "-lpthread", "-ldl", "-lm", "-o", str(binary),
            ],
            capture_output=True,
            timeout=300,
            cwd=work,
        )
        if proc.returncode != 0:
            raise FuzzingSetupError(f"driver for {name} failed to build:\n" + _head(proc.stderr))
        art = work / f"art_{name}"
        art.mkdir(exist_ok=True)
        max_len = max(8, input_size(pair.a, cfg.max_string_len))
        cmd = [
            str(binary),
            f"-max_total_time={max(1, int(budget))}",
            f"-timeout={cfg.per_input_timeout_s}",
            f"-error_exitcode={cfg.error_exitcode}",
            f"-max_len={max_len}",
            f"-artifact_prefix={art}/",
        ]
        try:
            run = subprocess.run(cmd, capture_output=True, timeout=budget * 3 + 60, cwd=work)
        except subprocess.TimeoutExpired:
            raise FuzzingExceptionError(f"fuzzer for {name} did not exit within its budget")
        if run.returncode == 0:
            return None
        cex = parse_df_json(run.stderr)
        if cex is None:
            raise FuzzingExceptionError(
                f"fuzzer for {name} exited with {run.returncode} without a comparison record:\n"
                + _head(run.stderr[-_DIAG_HEAD:])
            )
        m = _ARTIFACT_RE.search(run.stderr)
        if m:
            path = Path(m.group(1).decode())
            if not path.is_absolute():
                path = work / path
            try:
                cex.raw_input_hex = path.read_bytes().hex()
            except OSError:
                pass
        return cex

    def run_all(self, rust_source: str, unit) -> list[CheckReport]:
        """Full ladder, stopping at the first failing stage."""
        reports = [self.check_compile(rust_source, unit)]
        if not reports[-1].success:
            return reports
        reports.append(self.check_lint(rust_source, unit))
        if not reports[-1].success:
            return reports
        reports.append(self.check_behavior(rust_source, unit))
        return reports


def differential_self_check(original, perturbed, fuzz_config: FuzzConfig | None = None):
    """Fuzz a perturbed C file against its original through the same driver.

    Returns a SelfCheckReport: equivalent, counterexample, skipped (for
    files the driver cannot exercise), or error.
    """
    from .perturb import SelfCheckReport

    cfg = fuzz_config or FuzzConfig()
    text_a = original if isinstance(original, str) else original.text
    source_id = perturbed.source_id
    pid = perturbed.perturbation_id

    ifaces_a = [i for i in extract_interfaces(text_a) if not i.macro_like]
    ifaces_b = [i for i in extract_interfaces(perturbed.text) if not i.macro_like]
    if not ifaces_a or any(not i.fuzzable for i in ifaces_a):
        notes = [f"{i.name}: {'; '.join(i.warnings)}" for i in ifaces_a if not i.fuzzable]
        return SelfCheckReport(source_id, pid, "skipped", notes=notes or ["no functions to fuzz"])
    try:
        pairs = pair_interfaces(ifaces_a, ifaces_b)
    except FuzzingSetupError as e:
        return SelfCheckReport(source_id, pid, "error", notes=[str(e)])

    work = Path(tempfile.mkdtemp(prefix="dfs-", dir=cfg.work_root))
    checker = ToolchainCheckers(cfg)
    try:
        (work / "side_a.c").write_text(text_a, encoding="utf-8")
        (work / "side_b.c").write_text(perturbed.text, encoding="utf-8")
        rename = side_b_rename_list(scan_file(perturbed.text))
        (work / "side_b_wrap.c").write_text(
            generate_c_side(perturbed.text, pairs, rename, "side_b.c"), encoding="utf-8"
        )
        budget = max(1.0, cfg.self_check_seconds / max(1, len(pairs)))
        for pair in pairs:
            cex = checker._fuzz_one(work, pair, ["side_b_wrap.c"], budget)
            if cex is not None:
                return SelfCheckReport(
                    source_id, pid, "counterexample", counterexample=cex,
                    notes=[render_counterexample(cex)],
                )
        return SelfCheckReport(source_id, pid, "equivalent")
    except (FuzzingSetupError, FuzzingExceptionError) as e:
        return SelfCheckReport(source_id, pid, "error", notes=[str(e)])
    finally:
        if not cfg.keep_work_dir:
            shutil.rmtree(work, ignore_errors=True)


class SimulatedCheckers:
    """Deterministic stand-in for the toolchain.

    Rules are matched in order against the Rust source at each stage:
      {"stage": "compile"|"lint"|"fuzz", "match": "<substring>",
       "diagnostics": "...", "counterexample": {...}, "error": "setup"|"exception"}
    The first matching rule fails the stage (or raises, if "error" is set).
    No rule means the stage passes. Wall times are always zero so runs are
    byte-for-byte reproducible.
    """

    kind = "simulated"

    def __init__(self, rules: list[dict] | None = None):
        self.rules = rules or []

    @classmethod
    def from_json(cls, path: str | Path) -> "SimulatedCheckers":
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        rules = data["rules"] if isinstance(data, dict) else data
        return cls(rules)

    def _find(self, stage: str, rust_source: str) -> dict | None:
        for rule in self.rules:
            if rule.get("stage") == stage and rule.get("match", "") in rust_source:
                return rule
        return None

    def _verdict(self, stage: CheckStage, stage_key: str, rust_source: str) -> CheckReport:
        rule = self._find(stage_key, rust_source)
        if rule is None:
            return CheckReport(stage, True)
        err = rule.get("error")
        if err == "setup":
            raise FuzzingSetupError(rule.get("diagnostics", "simulated setup failure"))
        if err == "exception":
            raise FuzzingExceptionError(rule.get("diagnostics", "simulated fuzzer failure"))
        cex = None
        if rule.get("counterexample"):
            cex = Counterexample.from_json(rule["counterexample"])
        diagnostics = rule.get("diagnostics", "")
        if cex is not None and not diagnostics:
            diagnostics = render_counterexample(cex)
        return CheckReport(stage, False, diagnostics=diagnostics, counterexample=cex)

    def check_compile(self, rust_source: str, unit=None) -> CheckReport:
        return self._verdict(CheckStage.COMPILED, "compile", rust_source)

    def check_lint(self, rust_source: str, unit=None) -> CheckReport:
        return self._verdict(CheckStage.LINTED, "lint", rust_source)

    def check_behavior(self, rust_source: str, unit=None) -> CheckReport:
        return self._verdict(CheckStage.FUZZED, "fuzz", rust_source)
