"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 when the share of
failed sessions exceeds the configured threshold (20% by default).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import BiosessionError, IncompleteBundle
from .pipeline import (PipelineConfig, StageError, Tables, discover, ingest, outcomes_to_bundle,
                       process_many, refresh_manifest, run, run_analyses, run_clustering,
                       write_analyses, write_clustering, write_json)
from .report import render_report
from .synth import gen_corpus, session_filename, write_corpus

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("biosession")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="JSON configuration file")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory (bundle)")
    p.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker processes")
    p.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="biosession", parents=[common],
                     description="Physiological and behavioural session analytics.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="parse and validate session files")
    p.add_argument("paths", nargs="+")

    p = sub.add_parser("preprocess", parents=[common], help="filter, resample, fill and normalize")
    p.add_argument("input")

    p = sub.add_parser("features", parents=[common], help="extract features into features.csv")
    p.add_argument("input")

    p = sub.add_parser("analyze", parents=[common], help="statistical tests and GLMs on a bundle")
    p.add_argument("bundle", nargs="?")

    p = sub.add_parser("cluster", parents=[common], help="t-SNE + k-means on a bundle")
    p.add_argument("bundle", nargs="?")

    p = sub.add_parser("report", parents=[common], help="render report.md for a bundle")
    p.add_argument("bundle", nargs="?")

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic corpus")
    p.add_argument("--n-sessions", type=int, default=30)
    p.add_argument("--duration", type=float, default=600.0, help="session length in seconds")
    p.add_argument("--rate", type=float, default=128.0, help="sampling rate in Hz")
    p.add_argument("--drop-every", type=int, default=10,
                   help="every n-th session loses 60%% of one channel (0 disables)")

    p = sub.add_parser("run", parents=[common], help="the full pipeline into one bundle")
    p.add_argument("input", nargs="?")
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if getattr(args, "config", None) else PipelineConfig()
    changes = {}
    for name in ("seed", "jobs"):
        if hasattr(args, name):
            changes[name] = getattr(args, name)
    if hasattr(args, "out"):
        changes["output"] = args.out
    if getattr(args, "input", None):
        changes["input"] = args.input
    return replace(cfg, **changes) if changes else cfg


def _bundle_dir(args, cfg) -> Path:
    b = getattr(args, "bundle", None) or cfg.output
    if not b:
        raise UsageError("no bundle given (positional argument or --out)")
    return Path(b)


def _require_out(cfg) -> Path:
    if not cfg.output:
        raise UsageError("--out is required")
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _partial_code(outcomes, cfg) -> int:
    if not outcomes:
        return EXIT_OK
    failed = sum(o.error is not None for o in outcomes)
    if failed == len(outcomes):
        return EXIT_DATA
    return EXIT_PARTIAL if failed / len(outcomes) > cfg.max_failure_fraction else EXIT_OK


# ---------------------------------------------------------------------------

def cmd_ingest(args, cfg) -> int:
    entries = ingest(args.paths)
    n_ok = sum(e.passed for e in entries)
    print(f"{len(entries)} sessions; {n_ok} passed, {len(entries) - n_ok} failed")
    for e in entries:
        for msg in e.errors:
            print(f"ERROR {e.file}: {msg}")
        for msg in e.warnings:
            print(f"WARNING {e.file}: {msg}")
    if getattr(args, "out", None):
        out = _require_out(cfg)
        write_json(out / "index.json", [e.__dict__ for e in entries])
    return EXIT_OK if n_ok == len(entries) else EXIT_DATA


def cmd_preprocess(args, cfg) -> int:
    out = _require_out(cfg)
    eff = cfg.effective()
    outcomes = process_many(discover([args.input]), eff, keep_sessions=True)
    for sub in ("preprocessed", "physical"):
        (out / sub).mkdir(exist_ok=True)
    for o in outcomes:
        if o.error is None:
            name = f"{o.key[0]}_s{o.key[1]}.json"
            (out / "preprocessed" / name).write_text(o.preprocessed, encoding="utf-8")
            (out / "physical" / name).write_text(o.physical, encoding="utf-8")
    outcomes_to_bundle(out, outcomes)
    refresh_manifest(out, cfg, n_sessions=len(outcomes),
                     n_failed=sum(o.error is not None for o in outcomes))
    print(f"preprocessed {len(outcomes)} sessions into {out}")
    return _partial_code(outcomes, cfg)


def cmd_features(args, cfg) -> int:
    out = _require_out(cfg)
    outcomes = process_many(discover([args.input]), cfg.effective(), fn="featurize")
    tables = outcomes_to_bundle(out, outcomes)
    refresh_manifest(out, cfg, n_sessions=len(outcomes),
                     n_failed=sum(o.error is not None for o in outcomes))
    print(f"{len(tables.features)} feature rows from {len(outcomes)} sessions")
    return _partial_code(outcomes, cfg)


def cmd_analyze(args, cfg) -> int:
    bundle = _bundle_dir(args, cfg)
    tables = Tables.from_bundle(bundle)
    tests, models, plots = run_analyses(tables, cfg.effective())
    write_analyses(bundle, tests, models, plots)
    refresh_manifest(bundle, cfg)
    print(f"{len(tests)} tests, {len(models)} models")
    return EXIT_OK


def cmd_cluster(args, cfg) -> int:
    bundle = _bundle_dir(args, cfg)
    tables = Tables.from_bundle(bundle)
    co = run_clustering(tables, cfg.effective())
    write_clustering(bundle, co)
    refresh_manifest(bundle, cfg)
    print(f"k = {co.summary['k']} (silhouette {co.summary['silhouette']:.3f})")
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    bundle = _bundle_dir(args, cfg)
    text = render_report(bundle)
    (bundle / "report.md").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args, cfg) -> int:
    out = _require_out(cfg)
    if args.n_sessions < 1:
        raise UsageError("--n-sessions must be >= 1")
    corpus = gen_corpus(args.n_sessions, seed=cfg.seed, duration_s=args.duration,
                        rate_hz=args.rate, drop_every=args.drop_every)
    write_corpus(out, corpus, seed=cfg.seed)
    names = sorted(session_filename(s) for s, _ in corpus)
    print(f"wrote {len(names)} sessions to {out}")
    return EXIT_OK


def cmd_run(args, cfg) -> int:
    if not cfg.input:
        raise UsageError("run needs an input directory (positional or in the config)")
    _require_out(cfg)
    summary = run(cfg)
    print(f"{summary.n_ok}/{summary.n_files} sessions processed; bundle at {summary.bundle}")
    return summary.exit_code


COMMANDS = {
    "ingest": cmd_ingest, "preprocess": cmd_preprocess, "features": cmd_features,
    "analyze": cmd_analyze, "cluster": cmd_cluster, "report": cmd_report,
    "simulate": cmd_simulate, "run": cmd_run,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (IncompleteBundle, StageError, BiosessionError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:  # invalid configuration values
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
