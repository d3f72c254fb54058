import json

import pytest

from pqtls5g import report
from pqtls5g.metrics import MetricSeries, minmax_normalize
from pqtls5g.profile import MalformedProfile
from pqtls5g.report import (
    EmptyAxis,
    EmptyResults,
    Rule,
    UnknownSuiteInRule,
    assert_orderings,
    default_rules,
    emit_heatmap,
    emit_scalability,
    emit_summary,
    emit_tables,
    heatmap_matrix,
    latex_rows,
    load_categories,
    parse_rules,
    parse_table,
    results_from_json,
)
from pqtls5g.runner import AggregateResult, ScenarioConfig, run_matrix
from pqtls5g.suites import KEM_NAMES, SIG_NAMES, parse_suite_id

FALCON512_CPU = [0.50, 1.20, 1.40, 0.40, 0.50, 1.00, 1.40, 2.50, 4.80]


def _agg(suite_id, clients=1, **metrics):
    s = parse_suite_id(suite_id)
    base = dict(max_cpu_pct=1.0, latency_ms=20.0, bandwidth_kbs=100.0, retx_rate_pct=0.0,
                total_packets=50.0, retransmissions=0.0, handshake_bytes=5000.0)
    base.update(metrics)
    return AggregateResult(s.id, s.label, clients, 1, failed_sessions=0, **base)


@pytest.fixture(scope="module")
def matrix():
    return run_matrix(ScenarioConfig(iterations=50, seed=0))


@pytest.fixture(scope="module")
def falcon_column():
    return [_agg(f"{k}_falcon512", max_cpu_pct=c, latency_ms=10.0 + i)
            for i, (k, c) in enumerate(zip(KEM_NAMES, FALCON512_CPU))]


def test_tables_one_per_signature_in_kem_order(matrix, tmp_path):
    files = emit_tables(matrix, tmp_path)
    assert sorted(f.name for f in files) == sorted(f"table_{s}.csv" for s in SIG_NAMES)
    rows = parse_table(tmp_path / "table_mldsa44.csv")
    assert len(rows) == 9
    assert rows[0]["suite_id"] == "X25519_mldsa44"
    assert [r["suite_id"].split("_")[0] for r in rows] == list(KEM_NAMES)


def test_table_round_trip_to_printed_precision(matrix, tmp_path):
    emit_tables(matrix, tmp_path)
    by_label = {r.label: r for r in matrix}
    for row in parse_table(tmp_path / "table_falcon1024.csv"):
        agg = by_label[row["suite_id"]]
        assert row["max_cpu_pct"] == pytest.approx(agg.max_cpu_pct, abs=0.005)
        assert row["latency_ms"] == pytest.approx(agg.latency_ms, abs=0.5)
        assert row["bandwidth_kbs"] == pytest.approx(agg.bandwidth_kbs, abs=0.005)
        assert row["retx_rate_pct"] == pytest.approx(agg.retx_rate_pct, abs=0.00005)


def test_tables_are_byte_identical_on_rerun(tmp_path):
    cfg = ScenarioConfig(suites=["mlkem512_mldsa44", "hqc128_mldsa44", "x25519_falcon512"], iterations=5, seed=11)
    a, b = tmp_path / "a", tmp_path / "b"
    emit_tables(run_matrix(cfg), a)
    emit_tables(run_matrix(cfg), b)
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_empty_results_write_nothing(tmp_path):
    with pytest.raises(EmptyResults):
        emit_tables([], tmp_path / "out")
    with pytest.raises(EmptyResults):
        emit_summary([], tmp_path / "out")
    assert not (tmp_path / "out").exists()


def test_aborted_cells_leave_blank_latency(tmp_path):
    emit_tables([_agg("mlkem512_mldsa44", latency_ms=None)], tmp_path)
    assert parse_table(tmp_path / "table_mldsa44.csv")[0]["latency_ms"] is None


def test_heatmap_of_falcon512_cpu_column(falcon_column):
    m = heatmap_matrix(falcon_column, "falcon512")
    assert m.rows == list(KEM_NAMES)
    assert m.columns == ["max_cpu_pct", "latency_ms", "bandwidth_kbs", "retx_rate_pct"]
    cpu = dict(zip(m.rows, (row[0] for row in m.cells)))
    assert cpu["X25519"] == pytest.approx(0.0227, abs=1e-4)
    assert cpu["hqc256"] == 1.0 and cpu["mlkem512"] == 0.0
    expected = minmax_normalize(MetricSeries("max_cpu_pct", list(zip(KEM_NAMES, FALCON512_CPU))))
    assert [row[0] for row in m.cells] == [v for _, v in expected]
    assert set(m.constant_columns) == {"bandwidth_kbs", "retx_rate_pct"}
    assert all(row[2] == 0.0 for row in m.cells)


def test_heatmap_fixed_kem_has_signature_rows(matrix):
    m = heatmap_matrix(matrix, "hqc256")
    assert m.rows == list(SIG_NAMES)
    assert all(0.0 <= v <= 1.0 for row in m.cells for v in row)


def test_heatmap_needs_two_counterparts(falcon_column):
    with pytest.raises(EmptyAxis):
        heatmap_matrix(falcon_column[:1], "falcon512")
    with pytest.raises(EmptyAxis):
        heatmap_matrix(falcon_column, "mldsa44")


def test_heatmap_json_file(falcon_column, tmp_path):
    m, files = emit_heatmap(falcon_column, "falcon512", tmp_path)
    assert [f.name for f in files] == ["heatmap_falcon512.json"]
    data = json.loads(files[0].read_text())
    assert data["rows"] == m.rows and data["cells"] == m.cells


def test_heatmap_png(falcon_column, tmp_path):
    pytest.importorskip("matplotlib")
    _, files = emit_heatmap(falcon_column, "falcon512", tmp_path, render=True)
    assert files[1].suffix == ".png" and files[1].stat().st_size > 0


def test_inverted_rule_reports_counterexample(matrix):
    rep = assert_orderings(matrix, [Rule.parse("mlkem512_mldsa44.latency_ms > hqc256_mldsa44.latency_ms")])
    assert not rep.passed
    v = rep.violations[0]
    assert v.left_value < v.right_value
    assert "FAIL mlkem512_mldsa44.latency_ms > hqc256_mldsa44.latency_ms" in rep.diff()
    assert rep.diff().endswith("0/1 rules hold")


def test_empty_ruleset_passes_vacuously(matrix):
    rep = assert_orderings(matrix, parse_rules("# nothing\n"))
    assert rep.passed and rep.checked == 0


def test_unknown_suite_in_rule(matrix):
    with pytest.raises(UnknownSuiteInRule) as err:
        assert_orderings(matrix[:3], [Rule.parse("hqc256_mldsa44.latency_ms > mlkem512_mldsa44.latency_ms")])
    assert err.value.suite_id in ("hqc256_mldsa44", "mlkem512_mldsa44")


def test_rule_parsing():
    r = Rule.parse("HQC256_mldsa44.max_cpu_pct >= mlkem512_mldsa44.latency_ms")
    assert (r.left, r.metric, r.op, r.right, r.right_metric) == ("hqc256_mldsa44", "max_cpu_pct", ">=",
                                                                 "mlkem512_mldsa44", "latency_ms")
    assert str(Rule.parse("a_b.latency_ms < c_d.latency_ms")) == "a_b.latency_ms < c_d.latency_ms"
    with pytest.raises(ValueError):
        Rule.parse("a_b.colour > c_d.colour")
    with pytest.raises(ValueError):
        Rule.parse("a_b.latency_ms == c_d.latency_ms")
    with pytest.raises(MalformedProfile) as err:
        parse_rules("rule.ok = a_b.latency_ms > c_d.latency_ms\nrule.bad = nonsense\n")
    assert err.value.lineno == 2


def test_default_rules_hold_on_default_output(matrix):
    rules = default_rules(r.suite_id for r in matrix)
    assert len(rules) == 326
    rep = assert_orderings(matrix, rules)
    assert rep.passed, rep.diff()


def test_default_rules_only_mention_present_suites():
    ids = ["hqc256_mldsa44", "mlkem512_mldsa44", "mlkem512_falcon512"]
    rules = default_rules(ids)
    assert rules and all(r.left in ids and r.right in ids for r in rules)


def test_categories_file_drives_summary(matrix, tmp_path):
    cats = tmp_path / "cats.txt"
    cats.write_text("category.light = mlkem512_mldsa44, X25519_falcon512\ncategory.heavy = hqc256_sphincssha2256f\n")
    parsed = load_categories(cats)
    assert parsed == {"light": ["mlkem512_mldsa44", "x25519_falcon512"], "heavy": ["hqc256_sphincssha2256f"]}
    lines = emit_summary(matrix, tmp_path, parsed).read_text().splitlines()
    assert lines[0].startswith("category,suite_id,latency_ms")
    assert [l.split(",")[:2] for l in lines[1:]] == [["light", "mlkem512_mldsa44"], ["light", "X25519_falcon512"],
                                                      ["heavy", "hqc256_sphincssha2256f"]]
    cats.write_text("light = mlkem512_mldsa44\n")
    with pytest.raises(MalformedProfile):
        load_categories(cats)


def test_default_summary_covers_three_categories(matrix, tmp_path):
    lines = emit_summary(matrix, tmp_path).read_text().splitlines()
    assert len(lines) == 1 + 9
    assert {l.split(",")[0] for l in lines[1:]} == {"efficient", "moderate", "high_security"}


def test_scalability_only_for_multi_count_suites(tmp_path):
    results = [_agg("mlkem512_mldsa44", 1), _agg("mlkem512_mldsa44", 10, latency_ms=40.0),
               _agg("hqc128_falcon512", 1)]
    lines = emit_scalability(results, tmp_path).read_text().splitlines()
    assert lines[1:] == ["mlkem512_mldsa44,1,1.00,20.0,100.000,0.0000",
                         "mlkem512_mldsa44,10,1.00,40.0,100.000,0.0000"]
    assert emit_scalability(results[2:], tmp_path / "none") is None
    picked = [parse_suite_id(s) for s in report.DEFAULT_SCALABILITY_SUITES]
    assert {s.kem.nist_level for s in picked} == {1}
    assert {s.sig.name for s in picked} == {"mldsa44", "falcon512", "sphincssha2128f"}


def test_latex_rows(falcon_column):
    text = latex_rows(falcon_column[:2] + [_agg("x25519_mldsa44")])
    lines = text.splitlines()
    assert lines[0] == r"X25519\_falcon512 & 0.50 & 10 & 100.00 & 0.0000 \\"
    assert lines[1].startswith(r"secp384r1\_falcon512 & 1.20 & 11 &")
    assert lines[2:] == [r"\midrule", r"X25519\_mldsa44 & 1.00 & 20 & 100.00 & 0.0000 \\"]


def test_results_round_trip_through_json(matrix):
    data = json.loads(json.dumps([r.summary() for r in matrix]))
    back = results_from_json(data)
    assert [r.summary() for r in back] == [r.summary() for r in matrix]
