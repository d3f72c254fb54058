"""Session metrics: handshake latency, bandwidth, retransmission rate, peak server CPU,
plus min-max normalization for heatmaps."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .netsim import CpuEvent, EventKind, SessionTrace
from .suites import CostProfile, SuiteDescriptor, with_overrides


class IncompleteHandshake(ValueError):
    pass


class ZeroDuration(ValueError):
    pass


class UndefinedRate(ValueError):
    pass


class EmptySeries(ValueError):
    pass


METRICS = ("max_cpu_pct", "latency_ms", "bandwidth_kbs", "retx_rate_pct")


@dataclass(frozen=True)
class CpuModel:
    window: float = 100.0
    idle_floor_pct: float = 0.0

    def __post_init__(self):
        if self.window <= 0:
            raise ValueError("window must be > 0")
        if not 0 <= self.idle_floor_pct <= 100:
            raise ValueError("idle_floor_pct must be within [0, 100]")


@dataclass
class MetricsRecord:
    suite_id: str
    max_cpu_pct: float
    latency_ms: float | None
    bandwidth_kbs: float
    retx_rate_pct: float
    total_packets: int
    retransmissions: int
    duration_ms: float = 0.0
    handshake_bytes: float = 0.0
    clients: int = 1
    failed: int = 0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class MetricSeries:
    metric_name: str
    values: list[tuple[str, float]]

    @property
    def constant(self) -> bool:
        xs = [x for _, x in self.values]
        return bool(xs) and min(xs) == max(xs)


def handshake_latency(trace: SessionTrace) -> float:
    """ClientHello first segment sent -> client Finished fully delivered, in ms."""
    start = None
    delivered: dict[int, float] = {}
    for e in trace.events:
        if e.label == "client_hello" and e.kind is EventKind.SENT:
            start = e.t if start is None else min(start, e.t)
        elif e.label == "client_finished" and e.kind is EventKind.DELIVERED:
            delivered.setdefault(e.segment_id, e.t)
    sent_fin = {e.segment_id for e in trace.events if e.label == "client_finished" and e.kind is EventKind.SENT}
    if start is None or not sent_fin or not sent_fin <= delivered.keys():
        raise IncompleteHandshake("trace lacks a ClientHello send or a delivered client Finished")
    return max(delivered.values()) - start


def bandwidth_kbs(trace: SessionTrace, duration_ms: float | None = None) -> float:
    """(TX + RX bytes) / 1024 per second over ``duration_ms`` (default: the session)."""
    duration = trace.duration if duration_ms is None else duration_ms
    return _kbs(trace.totals.bytes_tx + trace.totals.bytes_rx, duration)


def _kbs(volume: int, duration_ms: float) -> float:
    if duration_ms <= 0:
        raise ZeroDuration("bandwidth needs a positive duration")
    return volume / 1024 / (duration_ms / 1000)


def retx_rate(retransmitted: int, total_sent: int) -> float:
    """Retransmitted packets as a percentage of all packets sent."""
    if total_sent <= 0:
        raise UndefinedRate("retransmission rate is undefined when nothing was sent")
    if not 0 <= retransmitted <= total_sent:
        raise ValueError("retransmitted must lie in [0, total_sent]")
    return float(Fraction(retransmitted * 100, total_sent))


def format_rate(pct: float) -> str:
    return f"{pct:.4f}"


def _replay_fifo(events: list[CpuEvent], costs: list[float], units: int) -> list[tuple[float, float]]:
    free = [0.0] * units
    out = []
    for e, cost in zip(events, costs):
        i = min(range(units), key=free.__getitem__)
        start = max(e.t, free[i])
        free[i] = start + cost / 1000.0
        out.append((start, free[i]))
    return out


def _event_cost(e: CpuEvent, suite: SuiteDescriptor | None, aead_per_byte: float | None) -> float:
    if e.op == "aead":
        return e.nbytes * aead_per_byte if aead_per_byte is not None else e.cost_us
    if suite is None:
        return e.cost_us
    table = {
        ("keygen", suite.kem.name): suite.kem.keygen_cost,
        ("encaps", suite.kem.name): suite.kem.encaps_cost,
        ("decaps", suite.kem.name): suite.kem.decaps_cost,
        ("sign", suite.sig.name): suite.sig.sign_cost,
        ("verify", suite.sig.name): suite.sig.verify_cost,
    }
    return table.get((e.op, e.alg), e.cost_us)


def peak_busy_fraction(intervals: list[tuple[float, float]], window: float, units: int = 1) -> float:
    """Largest share of ``units * window`` spent busy over any window position."""
    intervals = [(a, b) for a, b in intervals if b > a]
    if not intervals:
        return 0.0
    points = sorted({t for iv in intervals for t in iv})
    delta = dict.fromkeys(points, 0)
    for a, b in intervals:
        delta[a] += 1
        delta[b] -= 1
    t = np.array(points)
    running = np.cumsum([delta[p] for p in points])[:-1]
    busy = np.minimum(running, units) * np.diff(t)
    area = np.concatenate(([0.0], np.cumsum(busy)))
    starts = np.concatenate((t, t - window))
    covered = np.interp(starts + window, t, area) - np.interp(starts, t, area)
    return float(covered.max()) / (window * units)


def max_cpu_pct(
    trace: SessionTrace | Iterable[SessionTrace],
    suite: SuiteDescriptor | None = None,
    cost_profile: CostProfile | None = None,
    cpu_model: CpuModel = CpuModel(),
) -> float:
    """Peak server utilisation (%) over a sliding window.

    Server primitives are replayed FIFO from their release times using the
    suite's costs (with ``cost_profile`` overrides), so one trace can be
    re-scored under another profile. Passing several traces merges sessions
    that shared one server.
    """
    traces = [trace] if isinstance(trace, SessionTrace) else list(trace)
    events = sorted((e for tr in traces for e in tr.cpu), key=lambda e: e.seq)
    if not events:
        return min(100.0, cpu_model.idle_floor_pct)
    units = traces[0].server_units
    if suite is not None:
        suite = with_overrides(suite, cost_profile)
    aead = (cost_profile or {}).get("aead", {}).get("per_byte_cost")
    costs = [_event_cost(e, suite, aead) for e in events]
    busy = peak_busy_fraction(_replay_fifo(events, costs, units), cpu_model.window, units)
    return min(100.0, cpu_model.idle_floor_pct + 100.0 * busy)


def minmax_normalize(series: MetricSeries) -> list[tuple[str, float]]:
    """Scale onto [0, 1]; a constant series maps to all zeros."""
    if not series.values:
        raise EmptySeries(f"{series.metric_name}: nothing to normalize")
    xs = [x for _, x in series.values]
    lo, hi = min(xs), max(xs)
    if hi == lo:
        return [(sid, 0.0) for sid, _ in series.values]
    span = hi - lo
    return [(sid, (x - lo) / span) for sid, x in series.values]


def iteration_record(
    traces: list[SessionTrace],
    suite: SuiteDescriptor,
    cost_profile: CostProfile | None = None,
    cpu_model: CpuModel = CpuModel(),
) -> MetricsRecord:
    """Metrics for one iteration of ``len(traces)`` simultaneous clients.

    Latency is the mean over clients that completed the handshake; packet
    counts, bytes and CPU include every client, failed ones too.
    """
    completed = [tr for tr in traces if tr.error is None]
    latencies = [handshake_latency(tr) for tr in completed]
    sent = sum(tr.totals.segments_sent for tr in traces)
    retx = sum(tr.totals.segments_retransmitted for tr in traces)
    start = min(tr.start for tr in traces)
    end = max(tr.end for tr in traces)
    duration = end - start
    volume = sum(tr.totals.bytes_tx + tr.totals.bytes_rx for tr in traces)
    return MetricsRecord(
        suite_id=suite.id,
        max_cpu_pct=max_cpu_pct(traces, suite, cost_profile, cpu_model),
        latency_ms=sum(latencies) / len(latencies) if latencies else None,
        bandwidth_kbs=_kbs(volume, duration) if duration > 0 else 0.0,
        retx_rate_pct=retx_rate(retx, sent) if sent else 0.0,
        total_packets=sent,
        retransmissions=retx,
        duration_ms=duration,
        handshake_bytes=sum(tr.handshake_bytes for tr in completed) / len(completed) if completed else 0.0,
        clients=len(traces),
        failed=len(traces) - len(latencies),
    )
