"""Artifact emitters: per-signature CSV tables, categorized summaries, scalability
tables, normalized heatmap matrices, LaTeX rows and ordinal rule checks."""

from __future__ import annotations

import csv
import io
import json
import operator
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .metrics import METRICS, MetricSeries, minmax_normalize
from .profile import MalformedProfile, as_list, parse_profile_text, read_profile
from .runner import AggregateResult
from .suites import KEM_NAMES, SIG_NAMES, SigDescriptor, find_algorithm

_KEMS = [n.lower() for n in KEM_NAMES]
_SIGS = [n.lower() for n in SIG_NAMES]
_KEM_DISPLAY = dict(zip(_KEMS, KEM_NAMES))


class EmptyResults(ValueError):
    pass


class EmptyAxis(ValueError):
    pass


class UnknownSuiteInRule(KeyError):
    def __init__(self, suite_id: str, rule: str = ""):
        super().__init__(suite_id)
        self.suite_id = suite_id
        self.rule = rule

    def __str__(self):
        where = f" in rule {self.rule!r}" if self.rule else ""
        return f"suite {self.suite_id!r}{where} is not among the results"


@dataclass(frozen=True)
class TableSchema:
    columns: tuple[str, ...] = ("suite_id",) + METRICS
    formats: tuple[str, ...] = ("{}", "{:.2f}", "{:.0f}", "{:.2f}", "{:.4f}")

    def row(self, agg: AggregateResult) -> list[str]:
        values = [agg.label, agg.max_cpu_pct, agg.latency_ms, agg.bandwidth_kbs, agg.retx_rate_pct]
        return ["" if v is None else fmt.format(v) for fmt, v in zip(self.formats, values)]


TABLE = TableSchema()


def _split(suite_id: str) -> tuple[str, str]:
    kem, _, sig = suite_id.lower().partition("_")
    return kem, sig


def _order_key(agg: AggregateResult):
    kem, sig = _split(agg.suite_id)
    return (_SIGS.index(sig), _KEMS.index(kem), agg.client_count)


def _baseline(results: Iterable[AggregateResult]) -> list[AggregateResult]:
    """Keep the smallest client count of each suite, ordered by signature then KEM."""
    best: dict[str, AggregateResult] = {}
    for r in results:
        cur = best.get(r.suite_id)
        if cur is None or r.client_count < cur.client_count:
            best[r.suite_id] = r
    return sorted(best.values(), key=_order_key)


def _write(path: Path, text: str) -> Path:
    try:
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write {path}: {exc.strerror}") from exc
    return path


def _csv_text(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def table_rows(results: Iterable[AggregateResult]) -> dict[str, list[list[str]]]:
    """Formatted rows keyed by signature name, KEMs in table order."""
    out: dict[str, list[list[str]]] = {}
    for agg in _baseline(results):
        out.setdefault(_split(agg.suite_id)[1], []).append(TABLE.row(agg))
    return out


def emit_tables(results: Sequence[AggregateResult], out_dir) -> list[Path]:
    """One ``table_<sig>.csv`` per signature variant."""
    if not results:
        raise EmptyResults("no results to tabulate")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [_write(out_dir / f"table_{sig}.csv", _csv_text(TABLE.columns, rows))
            for sig, rows in table_rows(results).items()]


def parse_table(path) -> list[dict]:
    """Read an emitted table back; metrics become floats (None when blank)."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for m in METRICS:
            row[m] = float(row[m]) if row[m] else None
    return rows


# -- categorized summary -------------------------------------------------------

DEFAULT_CATEGORIES: dict[str, list[str]] = {
    "efficient": ["x25519_mldsa44", "mlkem512_mldsa44", "mlkem512_falcon512"],
    "moderate": ["mlkem768_mldsa65", "hqc128_mldsa44", "secp384r1_mldsa65"],
    "high_security": ["hqc256_mldsa87", "secp521r1_sphincssha2256f", "hqc256_sphincssha2256f"],
}

SUMMARY_COLUMNS = ("category", "suite_id", "latency_ms", "bandwidth_kbs", "total_packets",
                   "retransmissions", "retx_rate_pct")


def load_categories(path) -> dict[str, list[str]]:
    """``category.<name> = suite, suite, ...`` lines, kept in file order."""
    entries = read_profile(path)
    cats = {}
    for key, (raw, lineno) in entries.items():
        if not key.startswith("category.") or key.count(".") != 1:
            raise MalformedProfile(str(path), lineno, "expected category.<name> = suite, ...")
        cats[key.split(".", 1)[1]] = [s.lower() for s in as_list(raw)]
    return cats


def emit_summary(results: Sequence[AggregateResult], out_dir, categories: dict[str, list[str]] | None = None) -> Path:
    if not results:
        raise EmptyResults("no results to summarize")
    categories = DEFAULT_CATEGORIES if categories is None else categories
    by_id = {r.suite_id: r for r in _baseline(results)}
    rows = []
    for name, ids in categories.items():
        for sid in ids:
            agg = by_id.get(sid.lower())
            if agg is None:
                continue
            rows.append([name, agg.label, _fmt(agg.latency_ms, "{:.0f}"), f"{agg.bandwidth_kbs:.2f}",
                         f"{agg.total_packets:.1f}", f"{agg.retransmissions:.2f}", f"{agg.retx_rate_pct:.4f}"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return _write(out_dir / "summary.csv", _csv_text(SUMMARY_COLUMNS, rows))


def _fmt(value, spec: str) -> str:
    return "" if value is None else spec.format(value)


# -- scalability ---------------------------------------------------------------

DEFAULT_SCALABILITY_SUITES = ("mlkem512_mldsa44", "hqc128_mldsa44", "mlkem512_falcon512",
                              "hqc128_falcon512", "mlkem512_sphincssha2128f", "hqc128_sphincssha2128f")
SCALABILITY_COLUMNS = ("suite_id", "clients", "max_cpu_pct", "latency_ms", "bandwidth_kbs", "retx_rate_pct")


def emit_scalability(results: Sequence[AggregateResult], out_dir) -> Path | None:
    """Suites measured at more than one client count, grouped by suite."""
    counts: dict[str, set[int]] = {}
    for r in results:
        counts.setdefault(r.suite_id, set()).add(r.client_count)
    multi = [r for r in results if len(counts[r.suite_id]) > 1]
    if not multi:
        return None
    rows = [[r.label, str(r.client_count), f"{r.max_cpu_pct:.2f}", _fmt(r.latency_ms, "{:.1f}"),
             f"{r.bandwidth_kbs:.3f}", f"{r.retx_rate_pct:.4f}"]
            for r in sorted(multi, key=_order_key)]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return _write(out_dir / "scalability.csv", _csv_text(SCALABILITY_COLUMNS, rows))


# -- heatmaps ------------------------------------------------------------------

@dataclass
class HeatmapMatrix:
    fixed_axis: str
    rows: list[str]
    columns: list[str]
    cells: list[list[float]]
    raw: list[list[float]]
    constant_columns: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"fixed_axis": self.fixed_axis, "rows": self.rows, "columns": self.columns,
                "cells": self.cells, "raw": self.raw, "constant_columns": self.constant_columns}


def heatmap_matrix(results: Sequence[AggregateResult], fixed_algorithm: str) -> HeatmapMatrix:
    """Normalize each metric across the counterparts of ``fixed_algorithm``."""
    alg = find_algorithm(fixed_algorithm)
    fixed_is_sig = isinstance(alg, SigDescriptor)
    fixed = alg.name.lower()
    picked = []
    for agg in _baseline(results):
        kem, sig = _split(agg.suite_id)
        if (sig if fixed_is_sig else kem) == fixed and agg.latency_ms is not None:
            picked.append((_KEM_DISPLAY[kem] if fixed_is_sig else sig, agg))
    if not fixed_is_sig:
        picked.sort(key=lambda p: _SIGS.index(p[0]))
    if len(picked) < 2:
        raise EmptyAxis(f"{alg.name}: need at least 2 counterpart rows, found {len(picked)}")
    rows = [name for name, _ in picked]
    raw_cols, norm_cols, constant = [], [], []
    for metric in METRICS:
        series = MetricSeries(metric, [(name, getattr(agg, metric)) for name, agg in picked])
        if series.constant:
            constant.append(metric)
        raw_cols.append([x for _, x in series.values])
        norm_cols.append([x for _, x in minmax_normalize(series)])
    return HeatmapMatrix(
        fixed_axis=fixed,
        rows=rows,
        columns=list(METRICS),
        cells=[list(r) for r in zip(*norm_cols)],
        raw=[list(r) for r in zip(*raw_cols)],
        constant_columns=constant,
    )


def emit_heatmap(results: Sequence[AggregateResult], fixed_algorithm: str, out_dir=None,
                 render: bool = False) -> tuple[HeatmapMatrix, list[Path]]:
    matrix = heatmap_matrix(results, fixed_algorithm)
    written = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        text = json.dumps(matrix.to_json(), indent=2, sort_keys=True) + "\n"
        written.append(_write(out_dir / f"heatmap_{matrix.fixed_axis}.json", text))
        if render:
            written.append(render_heatmap(matrix, out_dir / f"heatmap_{matrix.fixed_axis}.png"))
    return matrix, written


def render_heatmap(matrix: HeatmapMatrix, path) -> Path:
    """PNG rendering; needs the optional matplotlib extra."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(1.6 * len(matrix.columns) + 2, 0.45 * len(matrix.rows) + 1.5))
    im = ax.imshow(matrix.cells, cmap="viridis", vmin=0, vmax=1, aspect="auto")
    ax.set_xticks(range(len(matrix.columns)), matrix.columns, rotation=20)
    ax.set_yticks(range(len(matrix.rows)), matrix.rows)
    for i, row in enumerate(matrix.cells):
        for j, v in enumerate(row):
            ax.text(j, i, f"{v:.2f}", ha="center", va="center", color="w" if v < 0.6 else "k", fontsize=8)
    ax.set_title(f"normalized metrics, fixed {matrix.fixed_axis}")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


# -- LaTeX rows ----------------------------------------------------------------

def latex_rows(results: Sequence[AggregateResult]) -> str:
    """``KEM\\_SIG & cpu & latency & bandwidth & retx \\\\`` rows, a rule between variants."""
    blocks = []
    for sig, rows in table_rows(results).items():
        lines = [" & ".join([row[0].replace("_", r"\_")] + row[1:]) + r" \\" for row in rows]
        blocks.append("\n".join(lines))
    return "\n\\midrule\n".join(blocks) + "\n"


# -- ordering rules ------------------------------------------------------------

RULE_METRICS = METRICS + ("total_packets", "retransmissions", "handshake_bytes")
_OPS = {">": operator.gt, "<": operator.lt, ">=": operator.ge, "<=": operator.le}
_TERM = r"([A-Za-z0-9]+_[A-Za-z0-9]+)\.([a-z_]+)"
_RULE_RE = re.compile(rf"^\s*{_TERM}\s*(>=|<=|>|<)\s*{_TERM}\s*$")


@dataclass(frozen=True)
class Rule:
    left: str
    metric: str
    op: str
    right: str
    right_metric: str | None = None

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown comparison {self.op!r}")
        for m in (self.metric, self.right_metric or self.metric):
            if m not in RULE_METRICS:
                raise ValueError(f"unknown metric {m!r}; expected one of {', '.join(RULE_METRICS)}")

    def __str__(self):
        return f"{self.left}.{self.metric} {self.op} {self.right}.{self.right_metric or self.metric}"

    @classmethod
    def parse(cls, text: str) -> "Rule":
        m = _RULE_RE.match(text)
        if not m:
            raise ValueError(f"cannot parse rule {text!r}; expected '<suite>.<metric> <op> <suite>.<metric>'")
        left, lm, op, right, rm = m.groups()
        return cls(left.lower(), lm, op, right.lower(), None if rm == lm else rm)


@dataclass
class Violation:
    rule: Rule
    left_value: float | None
    right_value: float | None

    def __str__(self):
        return f"FAIL {self.rule}: {self.left_value!r} vs {self.right_value!r}"


@dataclass
class OrderingReport:
    checked: int
    violations: list[Violation]

    @property
    def passed(self) -> bool:
        return not self.violations

    def diff(self) -> str:
        lines = [str(v) for v in self.violations]
        lines.append(f"{self.checked - len(self.violations)}/{self.checked} rules hold")
        return "\n".join(lines)


def parse_rules(text: str, source: str = "<rules>") -> list[Rule]:
    """``rule.<name> = <suite>.<metric> <op> <suite>.<metric>``, one per line."""
    rules = []
    for key, (raw, lineno) in parse_profile_text(text, source).items():
        if not key.startswith("rule."):
            raise MalformedProfile(source, lineno, "expected rule.<name> = ...")
        try:
            rules.append(Rule.parse(raw))
        except ValueError as exc:
            raise MalformedProfile(source, lineno, str(exc)) from None
    return rules


def load_rules(path) -> list[Rule]:
    return parse_rules(Path(path).read_text(encoding="utf-8"), str(path))


def default_rules(suite_ids: Iterable[str]) -> list[Rule]:
    """Ordinal claims for the suites present.

    Per signature: hqc256 has the highest latency and handshake volume.
    Per KEM: mldsa44 has the lowest server CPU, and every sphincs variant
    moves more handshake bytes than every other signature.
    """
    present = {s.lower() for s in suite_ids}
    rules = []
    for sig in _SIGS:
        top = f"hqc256_{sig}"
        if top not in present:
            continue
        for kem in _KEMS:
            other = f"{kem}_{sig}"
            if kem != "hqc256" and other in present:
                rules.append(Rule(top, "latency_ms", ">", other))
                rules.append(Rule(top, "handshake_bytes", ">", other))
    for kem in _KEMS:
        low = f"{kem}_mldsa44"
        for sig in _SIGS:
            other = f"{kem}_{sig}"
            if low in present and sig != "mldsa44" and other in present:
                rules.append(Rule(other, "max_cpu_pct", ">", low))
        for sp in (s for s in _SIGS if s.startswith("sphincs")):
            heavy = f"{kem}_{sp}"
            if heavy not in present:
                continue
            for sig in _SIGS:
                other = f"{kem}_{sig}"
                if not sig.startswith("sphincs") and other in present:
                    rules.append(Rule(heavy, "handshake_bytes", ">", other))
    return rules


def assert_orderings(results: Sequence[AggregateResult], rules: Sequence[Rule]) -> OrderingReport:
    by_id = {r.suite_id: r for r in _baseline(results)}
    violations = []
    for rule in rules:
        for sid in (rule.left, rule.right):
            if sid not in by_id:
                raise UnknownSuiteInRule(sid, str(rule))
        lv = getattr(by_id[rule.left], rule.metric)
        rv = getattr(by_id[rule.right], rule.right_metric or rule.metric)
        if lv is None or rv is None or not _OPS[rule.op](lv, rv):
            violations.append(Violation(rule, lv, rv))
    return OrderingReport(len(rules), violations)


def results_from_json(data: Sequence[dict]) -> list[AggregateResult]:
    """Rebuild aggregates from ``aggregates.json`` (per-run records are not kept)."""
    return [AggregateResult(**{k: v for k, v in d.items() if k != "runs"}) for d in data]
