"""Command-line front end: fuzz, replay, coverage, and init subcommands."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .campaign import CampaignConfig, fuzz_loop, replay
from .errors import FuzzError
from .oracle import DEFAULT_EPSILON, DEFAULT_SIMILARITY
from .report import read_history, render_figures
from .seeds import SEED_RNG, write_seed_repository

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_FOUND = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modelfuzz",
        description="Differential fuzzing of small detection models across executor backends.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fuzz = sub.add_parser("fuzz", help="run a fuzzing campaign")
    fuzz.add_argument("--repo", default=None, help="component repository directory (default: built-in seeds)")
    fuzz.add_argument("--seed", type=int, default=0, help="campaign RNG seed")
    budget = fuzz.add_mutually_exclusive_group()
    budget.add_argument("--iterations", type=int, default=None, help="iteration budget (default 100)")
    budget.add_argument("--duration", type=float, default=None, help="wall-clock budget in seconds")
    fuzz.add_argument(
        "--scenario",
        action="append",
        default=None,
        metavar="NAME",
        help="restrict to a scenario (repeatable; default: all configured)",
    )
    fuzz.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="inconsistency threshold")
    fuzz.add_argument("--sim-threshold", type=float, default=DEFAULT_SIMILARITY, help="crash-log similarity threshold")
    fuzz.add_argument("--faults", default=None, help='fault fixture file, or "builtin"')
    fuzz.add_argument("--out", default="campaign-out", help="output directory")
    fuzz.add_argument("--scenario-file", default=None, help="scenario configuration file")
    fuzz.add_argument("--no-fusion", action="store_true", help="disable conv+batchnorm fusion")
    fuzz.add_argument("--no-reduced-precision", action="store_true", help="disable float16 emulation")
    fuzz.add_argument("--no-buffer-reuse", action="store_true", help="disable buffer-reuse planning")

    rep = sub.add_parser("replay", help="re-run one recorded bug")
    rep.add_argument("--record", required=True, help="bug record file from a campaign's records/ directory")
    rep.add_argument("--inputs", default=None, help="tensor-exchange file overriding the recorded inputs")
    rep.add_argument("--repo", default=None, help="unused; accepted for interface parity")
    rep.add_argument("--out", default=None, help="directory for replayed output tensors")

    cov = sub.add_parser("coverage", help="summarize a finished campaign directory")
    cov.add_argument("--out", required=True, help="campaign output directory")

    init = sub.add_parser("init", help="write the built-in seed repository to disk")
    init.add_argument("--out", required=True, help="target repository directory")
    init.add_argument("--seed", type=int, default=SEED_RNG, help="weight-synthesis seed")

    return parser


def _cmd_fuzz(args: argparse.Namespace) -> int:
    config = CampaignConfig(
        seed=args.seed,
        iterations=args.iterations,
        duration=args.duration,
        scenarios=tuple(args.scenario) if args.scenario else (),
        epsilon=args.epsilon,
        sim_threshold=args.sim_threshold,
        fuse_conv_bn=not args.no_fusion,
        reduced_precision=not args.no_reduced_precision,
        buffer_reuse=not args.no_buffer_reuse,
        faults_file=args.faults,
        repo_path=args.repo,
        out_dir=args.out,
        scenario_file=args.scenario_file,
    )
    report = fuzz_loop(config)
    print(f"iterations: {report.iterations}")
    print(f"models assembled: {report.assembled}, valid: {report.valid} (rate {report.valid_rate:.3f})")
    print(f"distinct bugs: {report.distinct_bugs}")
    print(f"operator coverage: {report.coverage.operator_coverage:.3f}")
    print(f"component coverage: {report.coverage.component_coverage:.3f}")
    print(f"artifacts: {report.out_dir}")
    return EXIT_FOUND if report.bug_records else EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    verdict = replay(args.record, repo_path=args.repo, out_dir=args.out, inputs_file=args.inputs)
    reproduced = bool(verdict.evidence.get("reproduced"))
    print(f"verdict: {verdict.kind}")
    if verdict.kind == "inconsistency":
        print(f"max inconsistency: {verdict.max_inconsistency_value:.6g}")
    if verdict.pattern_label:
        print(f"pattern: {verdict.pattern_label}")
    if "recorded_log_similarity" in verdict.evidence:
        print(f"crash-log similarity: {verdict.evidence['recorded_log_similarity']:.3f}")
    print(f"reproduced: {'yes' if reproduced else 'no'}")
    return EXIT_FOUND if reproduced else EXIT_OK


def _cmd_coverage(args: argparse.Namespace) -> int:
    out = Path(args.out)
    coverage_file = out / "coverage.json"
    if not coverage_file.is_file():
        raise FuzzError(f"no coverage report under {out} (expected {coverage_file})")
    doc = json.loads(coverage_file.read_text())
    history = read_history(out / "history.csv")
    bugs = []
    bugs_file = out / "bugs.jsonl"
    if bugs_file.is_file():
        bugs = [json.loads(line) for line in bugs_file.read_text().splitlines() if line.strip()]
    scores: dict[str, float] = {}
    manifest = out / "repository" / "manifest.json"
    if manifest.is_file():
        scores = json.loads(manifest.read_text()).get("ledger", {}).get("components", {})
    render_figures(out / "figures", history, bugs, scores)
    print(f"operator coverage: {doc['operator_coverage']:.3f}")
    print(f"component coverage: {doc['component_coverage']:.3f}")
    print(f"covered operators: {', '.join(doc['covered_operators']) or '(none)'}")
    print(f"covered components: {', '.join(doc['covered_components']) or '(none)'}")
    print(f"valid-model rate: {doc['valid_rate']:.3f}")
    print(f"distinct bugs: {doc['distinct_bugs']}")
    return EXIT_OK


def _cmd_init(args: argparse.Namespace) -> int:
    repo = write_seed_repository(args.out, seed=args.seed)
    print(f"seed repository with {len(repo.components)} components written to {args.out}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_FATAL
        return EXIT_OK if code == 0 else EXIT_FATAL
    handlers = {
        "fuzz": _cmd_fuzz,
        "replay": _cmd_replay,
        "coverage": _cmd_coverage,
        "init": _cmd_init,
    }
    try:
        return handlers[args.command](args)
    except FuzzError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
