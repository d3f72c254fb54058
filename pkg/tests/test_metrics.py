import math

import pytest
from hypothesis import given, settings, strategies as st

from pqtls5g.metrics import (
    CpuModel,
    EmptySeries,
    IncompleteHandshake,
    MetricSeries,
    UndefinedRate,
    ZeroDuration,
    bandwidth_kbs,
    format_rate,
    handshake_latency,
    iteration_record,
    max_cpu_pct,
    minmax_normalize,
    peak_busy_fraction,
    retx_rate,
)
from pqtls5g.netsim import (
    CpuEvent,
    EventKind,
    Link,
    NetworkPath,
    SessionConfig,
    SessionTrace,
    TraceEvent,
    default_path,
    run_handshake_over_network,
)
from pqtls5g.suites import parse_cost_profile, parse_suite_id, registry_default

LOSSLESS = default_path().with_loss(0.0)
FALCON512_CPU = [0.50, 1.20, 1.40, 0.40, 0.50, 1.00, 1.40, 2.50, 4.80]
KEM_ROW_ORDER = ["X25519", "secp384r1", "secp521r1", "mlkem512", "mlkem768", "mlkem1024", "hqc128", "hqc192", "hqc256"]


@pytest.mark.parametrize("r, n, shown", [(1, 1086, "0.0921"), (6, 2908, "0.2063"), (22, 7287, "0.3019"), (0, 985, "0.0000")])
def test_retx_rate_examples(r, n, shown):
    assert format_rate(retx_rate(r, n)) == shown


def test_retx_rate_errors():
    with pytest.raises(UndefinedRate):
        retx_rate(0, 0)
    with pytest.raises(ValueError):
        retx_rate(5, 4)


@given(n=st.integers(1, 10**6), data=st.data())
def test_retx_rate_is_exact_ratio(n, data):
    r = data.draw(st.integers(0, n))
    assert retx_rate(r, n) == pytest.approx(100 * r / n, rel=1e-15)
    assert 0 <= retx_rate(r, n) <= 100


def test_normalize_table_column():
    series = MetricSeries("max_cpu_pct", list(zip(KEM_ROW_ORDER, FALCON512_CPU)))
    out = dict(minmax_normalize(series))
    assert out["X25519"] == pytest.approx(0.0227, abs=1e-4)
    assert out["hqc256"] == 1.0
    assert out["mlkem512"] == 0.0


def test_normalize_degenerate_cases():
    assert minmax_normalize(MetricSeries("m", [("a", 3), ("b", 3), ("c", 3)])) == [("a", 0.0), ("b", 0.0), ("c", 0.0)]
    assert MetricSeries("m", [("a", 3), ("b", 3)]).constant
    with pytest.raises(EmptySeries):
        minmax_normalize(MetricSeries("m", []))


finite = st.floats(-1e6, 1e6, allow_nan=False)


@settings(max_examples=100)
@given(xs=st.lists(finite, min_size=1, max_size=20), a=st.floats(1e-3, 1e3), b=finite)
def test_normalize_affine_invariance(xs, a, b):
    base = minmax_normalize(MetricSeries("m", [(str(i), x) for i, x in enumerate(xs)]))
    moved = minmax_normalize(MetricSeries("m", [(str(i), a * x + b) for i, x in enumerate(xs)]))
    lo, hi = min(xs), max(xs)
    if hi - lo < 1e-3 * max(1.0, abs(lo), abs(hi)):
        return  # too close to constant for float arithmetic to preserve
    for (_, u), (_, v) in zip(base, moved):
        assert u == pytest.approx(v, abs=1e-6)


@given(xs=st.lists(finite, min_size=1, max_size=20))
def test_normalize_range(xs):
    out = [v for _, v in minmax_normalize(MetricSeries("m", [(str(i), x) for i, x in enumerate(xs)]))]
    assert all(0.0 <= v <= 1.0 for v in out)
    if min(xs) != max(xs):
        assert min(out) == 0.0 and max(out) == 1.0


def _trace(tx, rx, start=0.0, end=1000.0):
    t = SessionTrace()
    t.totals.bytes_tx, t.totals.bytes_rx = tx, rx
    t.marks["start"], t.marks["data_end"] = start, end
    return t


def test_bandwidth_arithmetic():
    assert bandwidth_kbs(_trace(1024, 0)) == 1.0
    assert bandwidth_kbs(_trace(2048, 0)) == 2 * bandwidth_kbs(_trace(1024, 0))
    assert bandwidth_kbs(_trace(512, 512), duration_ms=500) == 2.0
    with pytest.raises(ZeroDuration):
        bandwidth_kbs(_trace(1, 1, 0, 0))


def test_bandwidth_at_equal_duration_follows_bytes():
    kems = ["hqc256", "hqc192", "hqc128", "mlkem1024", "mlkem768", "mlkem512"]
    bw = []
    for kem in kems:
        _, trace = run_handshake_over_network(parse_suite_id(f"{kem}_mldsa44"), LOSSLESS, seed=0)
        bw.append(bandwidth_kbs(trace, duration_ms=1000.0))
    assert bw == sorted(bw, reverse=True) and len(set(bw)) == len(bw)


def test_latency_lossless_is_three_one_way_delays():
    # near-infinite rates and free crypto leave three one-way propagation delays
    path = NetworkPath((Link("a", 2.0, 1e9), Link("b", 1.0, 1e9), Link("c", 2.0, 1e9)))
    zero = parse_cost_profile("x25519.keygen_cost = 0\nx25519.encaps_cost = 0\nx25519.decaps_cost = 0\n"
                              "falcon512.sign_cost = 0\nfalcon512.verify_cost = 0\n")
    suite = {s.id: s for s in registry_default(zero)}["x25519_falcon512"]
    _, trace = run_handshake_over_network(suite, path, SessionConfig(app_payload_bytes=0))
    assert handshake_latency(trace) == pytest.approx(3 * 5.0, abs=1e-3)


def test_latency_requires_finished():
    t = SessionTrace()
    t.events.append(TraceEvent(0.0, EventKind.SENT, 0, 100, "c2s", "client_hello"))
    with pytest.raises(IncompleteHandshake):
        handshake_latency(t)


def _cpu_trace(*jobs):
    t = SessionTrace()
    for i, (release, op, alg, cost) in enumerate(jobs):
        t.cpu.append(CpuEvent(release, i, op, alg, 0, cost))
    return t


def test_cpu_examples():
    assert max_cpu_pct(SessionTrace()) == 0.0
    assert max_cpu_pct(_cpu_trace((5.0, "sign", "x", 10_000.0))) == pytest.approx(10.0)
    assert max_cpu_pct(_cpu_trace((0.0, "sign", "x", 250_000.0))) == 100.0
    assert max_cpu_pct(_cpu_trace((0.0, "sign", "x", 10_000.0)), cpu_model=CpuModel(window=50)) == pytest.approx(20.0)
    assert max_cpu_pct(SessionTrace(), cpu_model=CpuModel(idle_floor_pct=3)) == 3.0


def test_cpu_window_takes_the_busiest_stretch():
    # two 10 ms jobs 95 ms apart fit in one 100 ms window; a third 300 ms later does not
    t = _cpu_trace((0.0, "sign", "x", 10_000.0), (95.0, "sign", "x", 10_000.0), (400.0, "sign", "x", 10_000.0))
    assert max_cpu_pct(t) == pytest.approx(15.0)


def test_cpu_rescoring_with_profile():
    suite = parse_suite_id("mlkem512_mldsa44")
    _, trace = run_handshake_over_network(suite, LOSSLESS, seed=0)
    base = max_cpu_pct(trace, suite)
    heavy = parse_cost_profile(f"mldsa44.sign_cost = {100 * suite.sig.sign_cost}")
    assert max_cpu_pct(trace, suite, heavy) > base


def test_cpu_ordering_hqc256_sphincs_over_mlkem512_mldsa44():
    heavy, light = parse_suite_id("hqc256_sphincssha2256f"), parse_suite_id("mlkem512_mldsa44")
    a = max_cpu_pct(run_handshake_over_network(heavy, LOSSLESS, seed=0)[1], heavy)
    b = max_cpu_pct(run_handshake_over_network(light, LOSSLESS, seed=0)[1], light)
    assert a > b


def test_sphincs_over_mldsa_with_hundredfold_sign_cost():
    suite_s, suite_m = parse_suite_id("mlkem512_sphincssha2128f"), parse_suite_id("mlkem512_mldsa44")
    profile = parse_cost_profile(f"sphincssha2128f.sign_cost = {100 * suite_m.sig.sign_cost}")
    a = max_cpu_pct(run_handshake_over_network(suite_s, LOSSLESS, seed=0)[1], suite_s, profile)
    b = max_cpu_pct(run_handshake_over_network(suite_m, LOSSLESS, seed=0)[1], suite_m, profile)
    assert a > b


@settings(max_examples=60, deadline=None)
@given(costs=st.lists(st.floats(0, 50_000), min_size=1, max_size=8),
       gaps=st.lists(st.floats(0, 200), min_size=8, max_size=8),
       bump=st.integers(0, 7), extra=st.floats(0, 50_000), units=st.integers(1, 3))
def test_cpu_monotone_in_each_cost(costs, gaps, bump, extra, units):
    releases = [sum(gaps[:i]) for i in range(len(costs))]
    jobs = [(r, "sign", f"op{i}", c) for i, (r, c) in enumerate(zip(releases, costs))]
    bumped = list(jobs)
    i = bump % len(jobs)
    bumped[i] = (*jobs[i][:3], jobs[i][3] + extra)
    t, tb = _cpu_trace(*jobs), _cpu_trace(*bumped)
    t.server_units = tb.server_units = units
    assert max_cpu_pct(tb) >= max_cpu_pct(t) - 1e-9


@settings(max_examples=60)
@given(st.lists(st.tuples(st.floats(0, 500), st.floats(0, 80)), max_size=10), st.floats(1, 300))
def test_peak_busy_fraction_bounds(jobs, window):
    intervals = [(a, a + d) for a, d in jobs]
    frac = peak_busy_fraction(intervals, window)
    assert 0.0 <= frac <= 1.0 + 1e-12
    if intervals:
        longest = max(b - a for a, b in intervals)
        assert frac >= min(longest, window) / window - 1e-9


def test_iteration_record_fields():
    suite = parse_suite_id("mlkem512_mldsa44")
    _, trace = run_handshake_over_network(suite, default_path(), seed=4, strict=False)
    rec = iteration_record([trace], suite)
    assert rec.latency_ms == handshake_latency(trace)
    assert rec.total_packets == trace.totals.segments_sent
    assert rec.retransmissions == trace.totals.segments_retransmitted
    assert rec.retx_rate_pct == retx_rate(rec.retransmissions, rec.total_packets)
    assert rec.bandwidth_kbs == pytest.approx(bandwidth_kbs(trace))
    assert rec.handshake_bytes == trace.handshake_bytes > 0
    assert all(v >= 0 for v in (rec.max_cpu_pct, rec.bandwidth_kbs, rec.retx_rate_pct))
    assert not math.isnan(rec.duration_ms)
