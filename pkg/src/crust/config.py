"""Flat key = value experiment configuration.

One file drives a whole experiment: corpus location, models, checker kind,
run counts, budgets, and the perturbation list. Lines are `key = value`,
blank lines and `#` comments are ignored, an inline comment starts at " #".
Models are declared in dotted groups:

    models = base
    model.base.kind = http-chat
    model.base.model = some-chat-model
    model.base.endpoint = https://api.example.com/v1/chat/completions
    model.base.credential_env = EXAMPLE_API_KEY

The config hash covers every field that can change results; two ledgers
with different hashes never mix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .checkers import FuzzConfig
from .errors import ConfigError
from .llm import BackendConfig
from .perturb import registry


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if " #" in line:
            line = line.split(" #", 1)[0].rstrip()
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def _as_int(kv: dict, key: str, default: int) -> int:
    if key not in kv:
        return default
    try:
        return int(kv[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {kv[key]!r}")


def _as_float(kv: dict, key: str, default: float) -> float:
    if key not in kv:
        return default
    try:
        return float(kv[key])
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {kv[key]!r}")


def _as_list(kv: dict, key: str, default: list[str]) -> list[str]:
    if key not in kv:
        return default
    return [x.strip() for x in kv[key].split(",") if x.strip()]


@dataclass
class ExperimentConfig:
    corpus: str = ""
    groups: str = ""
    results: str = "runs.jsonl"
    output_dir: str = "results"
    models: list[str] = field(default_factory=list)
    perturb_model: str = ""
    backends: dict[str, BackendConfig] = field(default_factory=dict)
    checkers: str = "toolchain"  # "toolchain" | "simulated"
    checker_rules: str = ""
    runs: int = 20
    k: int = 5
    max_iterations: int = 5
    wall_cap_s: float = 1800.0
    workers: int = 1
    perturbations: list[str] = field(default_factory=lambda: ["identity"])
    seed: int = 0
    sample_sets: int = 10000
    sample_set_size: int = 20
    fuzz_seconds: float = 60.0
    self_check_seconds: float = 30.0
    max_string_len: int = 64
    float_ulps: int = 2

    def fuzz_config(self) -> FuzzConfig:
        return FuzzConfig(
            fuzz_seconds_per_function=self.fuzz_seconds,
            self_check_seconds=self.self_check_seconds,
            max_string_len=self.max_string_len,
            float_ulps=self.float_ulps,
        )

    def effective(self) -> dict:
        """Everything that determines results, for the ledger hash."""
        return {
            "corpus": self.corpus,
            "groups": self.groups,
            "models": {
                name: {
                    "kind": b.kind,
                    "model": b.model,
                    "temperature": b.temperature,
                    "endpoint": b.endpoint,
                    "script": b.script_path,
                }
                for name, b in sorted(self.backends.items())
                if name in self.models or name == self.perturb_model
            },
            "perturb_model": self.perturb_model,
            "checkers": self.checkers,
            "checker_rules": self.checker_rules,
            "runs": self.runs,
            "max_iterations": self.max_iterations,
            "perturbations": self.perturbations,
            "seed": self.seed,
            "fuzz_seconds": self.fuzz_seconds,
            "max_string_len": self.max_string_len,
            "float_ulps": self.float_ulps,
        }


def _expand_perturbations(raw: list[str]) -> list[str]:
    specs = registry()
    out: list[str] = []
    for item in raw:
        if item == "all":
            out.extend(specs.keys())
        elif item == "deterministic":
            out.extend(
                pid for pid, s in specs.items() if not s.needs_model and s.mode == "deterministic"
            )
        elif item == "offline":
            out.extend(pid for pid, s in specs.items() if not s.needs_model)
        elif item in specs:
            out.append(item)
        else:
            raise ConfigError(f"unknown perturbation: {item!r}")
    seen: list[str] = []
    for pid in out:
        if pid not in seen:
            seen.append(pid)
    return seen


def _backend_from(kv: dict, name: str) -> BackendConfig:
    prefix = f"model.{name}."
    fields = {k[len(prefix):]: v for k, v in kv.items() if k.startswith(prefix)}
    if not fields:
        raise ConfigError(f"model {name!r} is not declared (no {prefix}* keys)")
    kind = fields.get("kind", "http-chat")
    if kind not in ("http-chat", "scripted-mock"):
        raise ConfigError(f"model {name!r}: unknown kind {kind!r}")
    return BackendConfig(
        name=name,
        kind=kind,
        model=fields.get("model", name),
        temperature=float(fields.get("temperature", 0.7)),
        endpoint=fields.get("endpoint", ""),
        credential_env=fields.get("credential_env", ""),
        timeout_s=float(fields.get("timeout_s", 120)),
        max_retries=int(fields.get("max_retries", 3)),
        retry_base_delay_s=float(fields.get("retry_base_delay_s", 0.5)),
        rate_limit_per_s=float(fields.get("rate_limit_per_s", 0)),
        script_path=fields.get("script", ""),
    )


def load_config(path: str | Path | None, overrides: dict | None = None) -> ExperimentConfig:
    kv: dict[str, str] = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        kv = parse_kv(p.read_text(encoding="utf-8"))
    if overrides:
        kv.update({k: str(v) for k, v in overrides.items() if v is not None})

    cfg = ExperimentConfig()
    cfg.corpus = kv.get("corpus", cfg.corpus)
    cfg.groups = kv.get("groups", cfg.groups)
    cfg.results = kv.get("results", cfg.results)
    cfg.output_dir = kv.get("output_dir", cfg.output_dir)
    cfg.models = _as_list(kv, "models", _as_list(kv, "model", []))
    cfg.perturb_model = kv.get("perturb_model", "")
    cfg.checkers = kv.get("checkers", cfg.checkers)
    if cfg.checkers not in ("toolchain", "simulated"):
        raise ConfigError(f"checkers must be toolchain or simulated, got {cfg.checkers!r}")
    cfg.checker_rules = kv.get("checker_rules", "")
    cfg.runs = _as_int(kv, "runs", cfg.runs)
    cfg.k = _as_int(kv, "k", cfg.k)
    cfg.max_iterations = _as_int(kv, "max_iterations", cfg.max_iterations)
    cfg.wall_cap_s = _as_float(kv, "wall_cap_s", cfg.wall_cap_s)
    cfg.workers = _as_int(kv, "workers", cfg.workers)
    cfg.perturbations = _expand_perturbations(
        _as_list(kv, "perturbations", cfg.perturbations)
    )
    cfg.seed = _as_int(kv, "seed", cfg.seed)
    cfg.sample_sets = _as_int(kv, "sample_sets", cfg.sample_sets)
    cfg.sample_set_size = _as_int(kv, "sample_set_size", cfg.sample_set_size)
    cfg.fuzz_seconds = _as_float(kv, "fuzz_seconds", cfg.fuzz_seconds)
    cfg.self_check_seconds = _as_float(kv, "self_check_seconds", cfg.self_check_seconds)
    cfg.max_string_len = _as_int(kv, "max_string_len", cfg.max_string_len)
    cfg.float_ulps = _as_int(kv, "float_ulps", cfg.float_ulps)

    for name in list(cfg.models) + ([cfg.perturb_model] if cfg.perturb_model else []):
        if name not in cfg.backends:
            cfg.backends[name] = _backend_from(kv, name)

    if cfg.runs < 1:
        raise ConfigError("runs must be at least 1")
    if not 1 <= cfg.k <= cfg.runs:
        raise ConfigError(f"k must be in 1..runs ({cfg.runs}), got {cfg.k}")
    if cfg.max_iterations < 1:
        raise ConfigError("max_iterations must be at least 1")
    return cfg
