"""Translation runs: the feedback loop and the experiment ledger.

One run is a conversation with one model about one (possibly perturbed)
source file: translate, check, feed the first failing stage's diagnostics
back, repeat up to the iteration cap. Runs are keyed by
(source_id, perturbation_id, model_id, run_index) and appended to a JSONL
ledger as they finish, so an interrupted experiment resumes by skipping
keys it already has.
"""

from __future__ import annotations

import enum
import hashlib
import json
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .checkers import CheckReport, CheckStage
from .corpus import SourceUnit, compute_metrics, extract_interfaces
from .errors import (
    ConfigError,
    FuzzingExceptionError,
    FuzzingSetupError,
    LlmApiError,
)
from .llm import (
    Conversation,
    TokenUsage,
    build_feedback_prompt,
    build_translation_prompt,
    extract_code,
)
from .perturb import apply as apply_perturbation
from .perturb import default_seed, experiment_kind, registry

SCHEMA_VERSION = 1


class ErrorCategory(enum.Enum):
    LLM_API = "LlmApi"
    FUZZING_SETUP = "FuzzingSetup"
    FUZZING_EXCEPTION = "FuzzingException"
    TRANSLATION_SYSTEM = "TranslationSystem"


def classify_error(exc: BaseException) -> ErrorCategory:
    if isinstance(exc, LlmApiError):
        return ErrorCategory.LLM_API
    if isinstance(exc, FuzzingSetupError):
        return ErrorCategory.FUZZING_SETUP
    if isinstance(exc, FuzzingExceptionError):
        return ErrorCategory.FUZZING_EXCEPTION
    return ErrorCategory.TRANSLATION_SYSTEM


@dataclass
class AttemptRecord:
    iteration: int  # 1-based
    rust_source: str
    extraction: str
    reports: list[CheckReport]
    usage: TokenUsage
    wall_time: float = 0.0

    @property
    def success(self) -> bool:
        return bool(self.reports) and all(r.success for r in self.reports) and any(
            r.stage == CheckStage.FUZZED for r in self.reports
        )

    def stage_results(self) -> dict[str, bool]:
        return {r.stage.label: r.success for r in self.reports}

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "rust_source": self.rust_source,
            "extraction": self.extraction,
            "reports": [r.to_json() for r in self.reports],
            "usage": {
                "prompt_tokens": self.usage.prompt_tokens,
                "completion_tokens": self.usage.completion_tokens,
                "reasoning_tokens": self.usage.reasoning_tokens,
            },
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_json(cls, d: dict) -> "AttemptRecord":
        u = d.get("usage", {})
        return cls(
            iteration=d["iteration"],
            rust_source=d.get("rust_source", ""),
            extraction=d.get("extraction", ""),
            reports=[CheckReport.from_json(r) for r in d.get("reports", [])],
            usage=TokenUsage(
                prompt_tokens=u.get("prompt_tokens", 0),
                completion_tokens=u.get("completion_tokens", 0),
                reasoning_tokens=u.get("reasoning_tokens", 0),
            ),
            wall_time=d.get("wall_time", 0.0),
        )


@dataclass
class RunRecord:
    source_id: str
    group: str
    perturbation_id: str
    perturbation_kind: str
    seed: int | None
    model_id: str
    run_index: int
    fuzzable: bool
    attempts: list[AttemptRecord] = field(default_factory=list)
    success: bool = False
    first_success_iteration: dict = field(default_factory=dict)
    error_category: str | None = None
    notes: list[str] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def key(self) -> tuple:
        return (self.source_id, self.perturbation_id, self.model_id, self.run_index)

    def total_usage(self) -> TokenUsage:
        total = TokenUsage()
        for a in self.attempts:
            total = total + a.usage
        return total

    def to_json(self) -> dict:
        return {
            "kind": "run",
            "source_id": self.source_id,
            "group": self.group,
            "perturbation_id": self.perturbation_id,
            "perturbation_kind": self.perturbation_kind,
            "seed": self.seed,
            "model_id": self.model_id,
            "run_index": self.run_index,
            "fuzzable": self.fuzzable,
            "attempts": [a.to_json() for a in self.attempts],
            "success": self.success,
            "first_success_iteration": self.first_success_iteration,
            "error_category": self.error_category,
            "notes": self.notes,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RunRecord":
        return cls(
            source_id=d["source_id"],
            group=d.get("group", "default"),
            perturbation_id=d["perturbation_id"],
            perturbation_kind=d.get("perturbation_kind", "deterministic"),
            seed=d.get("seed"),
            model_id=d["model_id"],
            run_index=d["run_index"],
            fuzzable=d.get("fuzzable", True),
            attempts=[AttemptRecord.from_json(a) for a in d.get("attempts", [])],
            success=d.get("success", False),
            first_success_iteration=d.get("first_success_iteration", {}),
            error_category=d.get("error_category"),
            notes=d.get("notes", []),
            wall_time=d.get("wall_time", 0.0),
        )


def _first_success_by_stage(attempts: list[AttemptRecord]) -> dict:
    out: dict[str, int | None] = {s.label: None for s in CheckStage}
    for a in attempts:
        for r in a.reports:
            if r.success and out[r.stage.label] is None:
                out[r.stage.label] = a.iteration
    return out


def translate_with_feedback(
    backend,
    unit: SourceUnit,
    checkers,
    max_iterations: int = 5,
    wall_cap_s: float = 1800.0,
    clock=time.monotonic,
) -> tuple[bool, list[AttemptRecord], ErrorCategory | None, list[str]]:
    """Run the generate-and-check loop for one unit.

    Returns (success, attempts, error_category, notes). Diagnostics sent back
    to the model always come from the first stage that failed; later stages
    are never reached in that attempt.
    """
    attempts: list[AttemptRecord] = []
    notes: list[str] = []
    t0 = clock()
    conv = Conversation()
    conv.add_user(build_translation_prompt(unit.text))
    try:
        for iteration in range(1, max_iterations + 1):
            if attempts and clock() - t0 >= wall_cap_s:
                notes.append(f"stopped after {iteration - 1} iterations: wall cap reached")
                return False, attempts, None, notes
            a_start = clock()
            reply, usage = backend.complete(conv)
            conv.add_assistant(reply)
            rust_source, extraction = extract_code(reply)
            reports: list[CheckReport] = [checkers.check_compile(rust_source, unit)]
            if reports[-1].success:
                reports.append(checkers.check_lint(rust_source, unit))
            if reports[-1].success:
                reports.append(checkers.check_behavior(rust_source, unit))
            attempt = AttemptRecord(
                iteration=iteration,
                rust_source=rust_source,
                extraction=extraction,
                reports=reports,
                usage=usage,
                wall_time=clock() - a_start,
            )
            attempts.append(attempt)
            if attempt.success:
                return True, attempts, None, notes
            if iteration < max_iterations:
                conv.add_user(build_feedback_prompt(reports[-1].diagnostics))
        return False, attempts, None, notes
    except (LlmApiError, FuzzingSetupError, FuzzingExceptionError) as e:
        category = classify_error(e)
        notes.append(f"{category.value}: {e}")
        return False, attempts, category, notes
    except Exception as e:  # infrastructure bug, not a model failure
        notes.append("TranslationSystem: " + "".join(traceback.format_exception_only(type(e), e)).strip())
        return False, attempts, ErrorCategory.TRANSLATION_SYSTEM, notes


# ---------------------------------------------------------------------------
# ledger

class ExperimentLedger:
    """Append-only JSONL results file with a metadata header line.

    The header pins schema version, config hash, and toolchain description.
    Appends are flushed per record so an interrupted experiment loses at
    most the in-flight run.
    """

    def __init__(self, path: str | Path, config_hash: str, toolchain: dict | None = None):
        self.path = Path(path)
        self.config_hash = config_hash
        self.toolchain = toolchain or {}
        self.records: list[RunRecord] = []
        self._fh = None
        if self.path.exists():
            meta, records = self.load(self.path)
            if meta.get("config_hash") != config_hash:
                raise ConfigError(
                    f"ledger {self.path} was written with config hash "
                    f"{meta.get('config_hash')!r}, current is {config_hash!r}; "
                    "refusing to mix results"
                )
            self.records = records
            self._fh = open(self.path, "a", encoding="utf-8")
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8")
            meta = {
                "kind": "meta",
                "schema_version": SCHEMA_VERSION,
                "config_hash": config_hash,
                "toolchain": self.toolchain,
            }
            self._fh.write(json.dumps(meta, sort_keys=True) + "\n")
            self._fh.flush()

    @staticmethod
    def load(path: str | Path) -> tuple[dict, list[RunRecord]]:
        meta: dict = {}
        records: list[RunRecord] = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                d = json.loads(line)
                if d.get("kind") == "meta":
                    meta = d
                elif d.get("kind") == "run":
                    records.append(RunRecord.from_json(d))
        return meta, records

    def keys(self) -> set:
        return {r.key for r in self.records}

    def append(self, record: RunRecord) -> None:
        self.records.append(record)
        self._fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def config_hash(effective: dict) -> str:
    """Stable hash of the effective configuration."""
    canon = json.dumps(effective, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# experiment driver

def _offline(backend, checkers) -> bool:
    cfg = getattr(backend, "config", None)
    return bool(cfg and cfg.offline and getattr(checkers, "kind", "") == "simulated")


def _perturbed_unit(unit: SourceUnit, perturbation_id: str, seed: int | None, model) -> SourceUnit:
    p = apply_perturbation(perturbation_id, unit, seed=seed, model=model)
    out = SourceUnit(
        source_id=unit.source_id,
        path=unit.path,
        text=p.text,
        group=unit.group,
    )
    out.metrics = compute_metrics(p.text)
    out.interfaces = extract_interfaces(p.text)
    return out


def run_experiment(
    units: list[SourceUnit],
    perturbation_ids: list[str],
    backend,
    checkers,
    ledger: ExperimentLedger,
    n_runs: int = 20,
    max_iterations: int = 5,
    wall_cap_s: float = 1800.0,
    perturb_model=None,
    workers: int = 1,
    progress=None,
) -> list[RunRecord]:
    """Run every (file, perturbation, run_index) cell not already in the
    ledger. Records append in deterministic cell order regardless of worker
    count. Returns the new records."""
    specs = registry()
    for pid in perturbation_ids:
        if pid not in specs:
            raise ConfigError(f"unknown perturbation: {pid!r}")
    model_id = backend.config.name
    clock = (lambda: 0.0) if _offline(backend, checkers) else time.monotonic

    done = ledger.keys()
    cells = []
    for unit in sorted(units, key=lambda u: u.source_id):
        for pid in perturbation_ids:
            for run_index in range(n_runs):
                key = (unit.source_id, pid, model_id, run_index)
                if key not in done:
                    cells.append((unit, pid, run_index))

    # one perturbed text per (file, perturbation, seed); deterministic and
    # model-assisted perturbations produce a single variant reused by every run
    variant_cache: dict[tuple, SourceUnit] = {}

    def variant_for(unit: SourceUnit, pid: str, run_index: int) -> tuple[SourceUnit, int | None]:
        spec = specs[pid]
        seed = default_seed(unit.source_id, pid, run_index) if spec.mode == "stochastic" else None
        cache_key = (unit.source_id, pid, seed)
        if cache_key not in variant_cache:
            variant_cache[cache_key] = _perturbed_unit(unit, pid, seed, perturb_model)
        return variant_cache[cache_key], seed

    def run_cell(cell) -> RunRecord:
        unit, pid, run_index = cell
        t0 = clock()
        try:
            punit, seed = variant_for(unit, pid, run_index)
        except Exception as e:
            return RunRecord(
                source_id=unit.source_id,
                group=unit.group,
                perturbation_id=pid,
                perturbation_kind=experiment_kind(specs[pid]),
                seed=None,
                model_id=model_id,
                run_index=run_index,
                fuzzable=False,
                error_category=classify_error(e).value,
                notes=[f"perturbation failed: {e}"],
                wall_time=clock() - t0,
            )
        success, attempts, category, notes = translate_with_feedback(
            backend, punit, checkers,
            max_iterations=max_iterations, wall_cap_s=wall_cap_s, clock=clock,
        )
        return RunRecord(
            source_id=unit.source_id,
            group=unit.group,
            perturbation_id=pid,
            perturbation_kind=experiment_kind(specs[pid]),
            seed=seed,
            model_id=model_id,
            run_index=run_index,
            fuzzable=punit.fuzzable,
            attempts=attempts,
            success=success,
            first_success_iteration=_first_success_by_stage(attempts),
            error_category=category.value if category else None,
            notes=notes,
            wall_time=clock() - t0,
        )

    new_records: list[RunRecord] = []
    if workers <= 1:
        for i, cell in enumerate(cells):
            rec = run_cell(cell)
            ledger.append(rec)
            new_records.append(rec)
            if progress:
                progress(i + 1, len(cells), rec)
    else:
        # warm the variant cache serially: model-assisted perturbations must
        # not race, and stochastic seeds are cheap to precompute
        for cell in cells:
            variant_for(cell[0], cell[1], cell[2])
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_cell, cell) for cell in cells]
            for i, fut in enumerate(futures):
                rec = fut.result()
                ledger.append(rec)
                new_records.append(rec)
                if progress:
                    progress(i + 1, len(cells), rec)
    return new_records
