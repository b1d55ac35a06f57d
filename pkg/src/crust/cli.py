"""Command line entry points.

    crust stats      corpus metrics report
    crust perturb    write perturbed corpus variants (optionally self-checked)
    crust translate  run the translate-check-feedback experiment
    crust evaluate   compute metrics over a results ledger

Exit codes: 0 success, 2 configuration problem, 3 a perturbation self-check
found a behavioral difference, 4 a requested aggregate had missing cells.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

from . import evalkit, perturb
from .checkers import SimulatedCheckers, ToolchainCheckers, differential_self_check
from .config import load_config
from .corpus import corpus_report, load_corpus, write_corpus_report
from .errors import ConfigError, CoverageGapError, CrustError
from .llm import make_backend
from .pipeline import ExperimentLedger, config_hash, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SELF_CHECK = 3
EXIT_COVERAGE = 4


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# stats

def cmd_stats(args) -> int:
    units = load_corpus(args.corpus, manifest_path=args.groups or None)
    if not units:
        raise ConfigError(f"no .c files under {args.corpus}")
    report = corpus_report(units)
    groups = ", ".join(f"{g}: {n}" for g, n in sorted(report["groups"].items()))
    print(f"files: {len(report['files'])}   groups: {groups}")
    print(f"{'metric':<12}{'min':>8}{'avg':>10}{'stddev':>10}{'max':>8}")
    for label, row in report["summary"].items():
        print(
            f"{label:<12}{row['min']:>8}{row['avg']:>10.1f}{row['stddev']:>10.1f}{row['max']:>8}"
        )
    if args.out:
        for path in write_corpus_report(report, args.out):
            _log(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# perturb

def _perturbation_ids(arg: str, with_model: bool) -> list[str]:
    specs = perturb.registry()
    if arg == "all":
        return [p for p, s in specs.items() if with_model or not s.needs_model]
    if arg not in specs:
        raise ConfigError(f"unknown perturbation: {arg!r}")
    return [arg]


def cmd_perturb(args) -> int:
    if args.list:
        for pid, spec in perturb.registry().items():
            model = " model" if spec.needs_model else ""
            print(f"{pid:<24} level {spec.level}  {spec.mode}{model}  {spec.description}")
        return EXIT_OK
    cfg = load_config(args.config) if args.config else None
    model = None
    if cfg and cfg.perturb_model:
        model = make_backend(cfg.backends[cfg.perturb_model])
    units = load_corpus(args.corpus, manifest_path=args.groups or None)
    if not units:
        raise ConfigError(f"no .c files under {args.corpus}")
    corpus_name = Path(args.corpus).name
    pids = _perturbation_ids(args.perturbation, with_model=model is not None)
    fuzz_cfg = cfg.fuzz_config() if cfg else None

    found_difference = False
    for pid in pids:
        out_dir = perturb.write_perturbed_corpus(
            units, pid, args.seed, args.out_root, corpus_name, model=model
        )
        _log(f"wrote {out_dir}")
        if not args.self_check or pid == "identity":
            continue
        manifest_path = out_dir / "manifest.json"
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        quarantined = []
        for entry, unit in zip(manifest["files"], units):
            target = out_dir / entry["source_id"]
            pu = perturb.PerturbedUnit(
                source_id=entry["source_id"],
                perturbation_id=pid,
                seed=entry["seed"],
                text=target.read_text(encoding="utf-8"),
                identity=entry["identity"],
            )
            report = perturb.self_check(unit, pu, fuzz_cfg)
            entry["self_check"] = report.status
            if report.notes:
                entry.setdefault("notes", []).extend(report.notes)
            _log(f"  self-check {pid} {entry['source_id']}: {report.status}")
            if report.status == "counterexample":
                found_difference = True
                qdir = out_dir / "quarantined"
                qdir.mkdir(exist_ok=True)
                shutil.move(str(target), str(qdir / target.name))
                quarantined.append(entry["source_id"])
        manifest["quarantined"] = quarantined
        manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return EXIT_SELF_CHECK if found_difference else EXIT_OK


# ---------------------------------------------------------------------------
# translate

def _make_checkers(cfg):
    if cfg.checkers == "simulated":
        if not cfg.checker_rules:
            return SimulatedCheckers([])
        return SimulatedCheckers.from_json(cfg.checker_rules)
    return ToolchainCheckers(cfg.fuzz_config())


def cmd_translate(args) -> int:
    cfg = load_config(args.config, overrides={"workers": args.workers})
    if not cfg.corpus:
        raise ConfigError("config must set corpus")
    if not cfg.models:
        raise ConfigError("config must set models")
    units = load_corpus(cfg.corpus, manifest_path=cfg.groups or None)
    if not units:
        raise ConfigError(f"no .c files under {cfg.corpus}")
    checkers = _make_checkers(cfg)
    perturb_backend = (
        make_backend(cfg.backends[cfg.perturb_model]) if cfg.perturb_model else None
    )
    chash = config_hash(cfg.effective())
    _log(f"config hash {chash}; {len(units)} files; perturbations: {', '.join(cfg.perturbations)}")

    with ExperimentLedger(cfg.results, chash, toolchain={"checkers": cfg.checkers}) as ledger:
        before = len(ledger.records)
        if before:
            _log(f"resuming: ledger already has {before} runs")
        for name in cfg.models:
            backend = make_backend(cfg.backends[name])

            def progress(i, total, rec):
                mark = "ok" if rec.success else (rec.error_category or "fail")
                _log(f"[{name}] {i}/{total} {rec.source_id} {rec.perturbation_id} #{rec.run_index}: {mark}")

            run_experiment(
                units,
                cfg.perturbations,
                backend,
                checkers,
                ledger,
                n_runs=cfg.runs,
                max_iterations=cfg.max_iterations,
                wall_cap_s=cfg.wall_cap_s,
                perturb_model=perturb_backend,
                workers=cfg.workers,
                progress=progress if not args.quiet else None,
            )
        _log(f"ledger {cfg.results}: {len(ledger.records)} runs total")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate

def cmd_evaluate(args) -> int:
    cfg = load_config(args.config)
    results = args.results or cfg.results
    _, records = ExperimentLedger.load(results)
    if not records:
        raise ConfigError(f"no runs in {results}")
    k = args.k or cfg.k
    out_dir = Path(args.out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wrote: list[Path] = []
    nothing_asked = not any(
        [args.pass_table, args.robust, args.augmented, args.mean, args.token_curve,
         args.failure_hist, args.errors, args.solved_sets, args.sampled]
    )

    if args.pass_table or nothing_asked:
        table = evalkit.pass_table_by_iteration(records, k, cfg.max_iterations)
        path = out_dir / "pass_table.csv"
        evalkit.write_csv(path, table.csv_rows())
        evalkit.write_json(out_dir / "pass_table.json", table.to_json())
        evalkit.write_plot_data(
            out_dir / "pass_table.plot.json",
            [
                evalkit.plot_series(name, list(zip(table.caps, vals)))
                for name, vals in table.rows.items()
            ],
        )
        wrote += [path]
        for name, vals in table.rows.items():
            print(f"{name}: " + "  ".join(f"i<={c}: {v:.3f}" for c, v in zip(table.caps, vals)))
        if table.excluded:
            print(f"excluded from final result ({len(table.excluded)} cells): "
                  + ", ".join(f"{s}:{p}" for s, p in table.excluded[:8]))

    agg_results = {}
    for mode, wanted in (("robust", args.robust), ("mean", args.mean), ("augmented", args.augmented)):
        if not wanted:
            continue
        value = evalkit.aggregate_over_perturbations(records, k, mode=mode)
        agg_results[mode] = value
        print(f"{mode} pass@{k} over perturbations: {value:.4f}")
    if agg_results:
        evalkit.write_json(out_dir / "aggregates.json", {"k": k, **agg_results})
        wrote.append(out_dir / "aggregates.json")

    if args.sampled:
        sets = perturb.sample_sets(
            list(perturb.registry().values()),
            set_size=args.set_size or cfg.sample_set_size,
            count=args.sets or cfg.sample_sets,
            seed=cfg.seed,
        )
        values = evalkit.sampled_aggregates(records, sets, k, mode=args.sampled)
        data = {
            "mode": args.sampled,
            "k": k,
            "sets": len(values),
            "min": min(values),
            "mean": sum(values) / len(values),
            "max": max(values),
        }
        evalkit.write_json(out_dir / "sampled_aggregates.json", data)
        wrote.append(out_dir / "sampled_aggregates.json")
        print(
            f"sampled {args.sampled} pass@{k}: min {data['min']:.4f} "
            f"mean {data['mean']:.4f} max {data['max']:.4f} over {data['sets']} sets"
        )

    if args.token_curve:
        points = evalkit.token_cost_curve(records, k, cfg.max_iterations)
        evalkit.write_json(out_dir / "token_curve.json", points)
        evalkit.write_plot_data(
            out_dir / "token_curve.plot.json",
            [evalkit.plot_series(
                f"pass@{k} vs tokens",
                [(p["total_tokens"], p["pass_at_k"]) for p in points],
            )],
        )
        wrote.append(out_dir / "token_curve.json")
        for p in points:
            print(f"cap {p['iteration_cap']}: {p['total_tokens']} tokens, pass@{k} {p['pass_at_k']:.3f}")

    if args.failure_hist:
        hist = evalkit.failure_histogram(records, cfg.max_iterations)
        evalkit.write_json(out_dir / "failure_histogram.json", hist)
        wrote.append(out_dir / "failure_histogram.json")
        for key, count in hist["counts"].items():
            print(f"failures {key}: {count}")

    if args.errors:
        dist = evalkit.error_distribution(records)
        evalkit.write_json(out_dir / "error_distribution.json", dist)
        wrote.append(out_dir / "error_distribution.json")
        for kind, row in dist.items():
            rates = ", ".join(f"{cat}: {rate:.3f}" for cat, rate in row["rates"].items())
            print(f"{kind} ({row['runs']} runs): {rates}")

    if args.solved_sets:
        solved = evalkit.solved_sets(records)
        evalkit.write_json(out_dir / "solved_sets.json", solved)
        wrote.append(out_dir / "solved_sets.json")
        for label, count in solved["regions"].items():
            print(f"solved by {label}: {count}")
        print(f"union fraction: {solved['union_fraction']:.3f}")

    for path in wrote:
        _log(f"wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crust", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stats", help="corpus metrics report")
    s.add_argument("--corpus", required=True)
    s.add_argument("--groups", default="")
    s.add_argument("--out", default="", help="basename for .files.csv/.summary.csv/.json")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("perturb", help="write perturbed corpus variants")
    s.add_argument("--corpus")
    s.add_argument("--groups", default="")
    s.add_argument("--perturbation", default="all", help="a perturbation id or 'all'")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-root", default="perturbed")
    s.add_argument("--config", default="", help="needed for model-assisted perturbations")
    s.add_argument("--self-check", action="store_true",
                   help="differentially fuzz each variant against its original")
    s.add_argument("--list", action="store_true", help="list perturbations and exit")
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("translate", help="run the translation experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_translate)

    s = sub.add_parser("evaluate", help="compute metrics over a results ledger")
    s.add_argument("--config", required=True)
    s.add_argument("--results", default="")
    s.add_argument("--out", default="")
    s.add_argument("-k", type=int, default=None)
    s.add_argument("--pass-table", action="store_true")
    s.add_argument("--robust", action="store_true")
    s.add_argument("--mean", action="store_true")
    s.add_argument("--augmented", action="store_true")
    s.add_argument("--sampled", choices=["robust", "mean", "augmented"], default="")
    s.add_argument("--sets", type=int, default=None)
    s.add_argument("--set-size", type=int, default=None)
    s.add_argument("--token-curve", action="store_true")
    s.add_argument("--failure-hist", action="store_true")
    s.add_argument("--errors", action="store_true")
    s.add_argument("--solved-sets", action="store_true")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "perturb" and not args.list and not args.corpus:
            raise ConfigError("perturb needs --corpus (or --list)")
        return args.func(args)
    except ConfigError as e:
        _log(f"config error: {e}")
        return EXIT_CONFIG
    except CoverageGapError as e:
        _log(f"coverage gap: {e}")
        for sid, pid in e.gaps[:20]:
            _log(f"  missing {sid} x {pid}")
        return EXIT_COVERAGE
    except CrustError as e:
        _log(f"error: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
