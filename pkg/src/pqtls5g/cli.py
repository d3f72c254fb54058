"""``bench`` command line: run the suite matrix and emit tables, heatmaps and rule checks."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import report
from .profile import MalformedProfile
from .runner import CONFIG_ENV, default_scenario, load_scenario, run_log_lines, run_matrix
from .suites import UnknownSuite, registry_default

log = logging.getLogger("pqtls5g")

HEATMAP_DEFAULTS = ("falcon512", "mldsa44", "sphincssha2128f")


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_results(results_dir: Path) -> list[report.AggregateResult]:
    path = results_dir / "aggregates.json"
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SystemExit(f"bench: no aggregates.json under {results_dir}; run 'bench run --out {results_dir}' first")
    return report.results_from_json(data)


def cmd_run(args) -> int:
    cfg = load_scenario(args.config) if args.config else default_scenario()
    overrides = {}
    if args.suites:
        overrides["suites"] = None if args.suites == "all" else _csv_list(args.suites)
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.clients:
        overrides["client_counts"] = args.clients
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = replace(cfg, **overrides)
    cfg.resolve_suites()  # fail fast on bad ids
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    log.info("running %d suite(s) x clients %s x %d iterations",
             len(cfg.resolve_suites()), cfg.client_counts, cfg.iterations)
    results = run_matrix(cfg, jobs=args.jobs)

    (out / "runs.jsonl").write_text("".join(l + "\n" for l in run_log_lines(results, cfg.seed)), encoding="utf-8")
    agg = [r.summary() for r in results]
    (out / "aggregates.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    report.emit_tables(results, out)
    report.emit_summary(results, out, report.load_categories(args.categories) if args.categories else None)
    report.emit_scalability(results, out)
    for alg in HEATMAP_DEFAULTS:
        try:
            report.emit_heatmap(results, alg, out)
        except report.EmptyAxis:
            log.debug("skipping heatmap for %s: not enough counterparts", alg)

    aborted = [f"{r.label}@{r.client_count}" for r in results if r.aborted]
    failed = sum(r.failed_sessions for r in results)
    print(f"{len(results)} cell(s) written to {out}; {failed} failed session(s)")
    if aborted:
        print("aborted cells: " + ", ".join(aborted), file=sys.stderr)
        return 1
    return 0


def cmd_heatmap(args) -> int:
    results = _load_results(Path(args.results))
    matrix, files = report.emit_heatmap(results, args.fix, args.out or args.results, render=args.render)
    width = max(len(r) for r in matrix.rows)
    print(" " * width + "  " + "  ".join(f"{c:>13s}" for c in matrix.columns))
    for name, row in zip(matrix.rows, matrix.cells):
        print(f"{name:<{width}s}  " + "  ".join(f"{v:13.4f}" for v in row))
    if matrix.constant_columns:
        print("constant columns (all zero): " + ", ".join(matrix.constant_columns))
    for f in files:
        print(f"wrote {f}")
    return 0


def cmd_assert(args) -> int:
    results = _load_results(Path(args.results))
    if args.rules:
        rules = report.load_rules(args.rules)
    else:
        rules = report.default_rules(r.suite_id for r in results)
    rep = report.assert_orderings(results, rules)
    print(rep.diff())
    return 0 if rep.passed else 1


def cmd_list_suites(args) -> int:
    for s in registry_default():
        print(f"{s.id:28s} {s.label:28s} L{s.kem.nist_level}/L{s.sig.nist_level}")
    return 0


def cmd_latex(args) -> int:
    sys.stdout.write(report.latex_rows(_load_results(Path(args.results))))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Simulated post-quantum TLS 1.3 handshakes over a 5G path.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the suite matrix and write all artifacts")
    r.add_argument("--config", help=f"scenario file (default: ${CONFIG_ENV} or built-in defaults)")
    r.add_argument("--suites", help="comma-separated suite ids, or 'all'")
    r.add_argument("--iterations", type=int)
    r.add_argument("--clients", type=_int_list, help="comma-separated client counts, e.g. 1,10,20")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default="results")
    r.add_argument("--jobs", type=int, default=1, help="worker processes for matrix cells")
    r.add_argument("--categories", help="category file for summary.csv")
    r.set_defaults(func=cmd_run)

    h = sub.add_parser("heatmap", help="normalized matrix for one fixed algorithm")
    h.add_argument("--fix", required=True, help="algorithm held fixed, e.g. falcon512 or hqc256")
    h.add_argument("--results", default="results")
    h.add_argument("--out", help="directory for the JSON/PNG (default: the results dir)")
    h.add_argument("--render", action="store_true", help="also render a PNG (needs matplotlib)")
    h.set_defaults(func=cmd_heatmap)

    a = sub.add_parser("assert", help="check ordinal rules against results")
    a.add_argument("--rules", help="rules file (default: built-in rules for the suites present)")
    a.add_argument("--results", default="results")
    a.set_defaults(func=cmd_assert)

    ls = sub.add_parser("list-suites", help="print the 72 registered suites")
    ls.set_defaults(func=cmd_list_suites)

    lx = sub.add_parser("latex", help="print LaTeX table rows for the results")
    lx.add_argument("--results", default="results")
    lx.set_defaults(func=cmd_latex)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (MalformedProfile, UnknownSuite, report.UnknownSuiteInRule, report.EmptyAxis,
            report.EmptyResults) as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
