"""Discrete-event simulation of the UE1 -> gNB -> UPF -> UE2 data path.

Each link direction is a FIFO store-and-forward server: a segment starts
serializing when it reaches the link and the link is free, takes
``wire_bytes / rate`` to serialize, then ``prop_delay`` to reach the next
node. Loss is an independent Bernoulli draw per segment per link. A
selective-ACK transport with a fixed window and per-segment RTO recovers
losses.

Because every link direction is FIFO and a flow's segments enter the first
link in time order, a segment's full traversal can be resolved when it is
sent; only its arrival (or loss) needs an event.

Times are milliseconds, rates are kilobytes per second with 1 KB = 1000 B
(so ``bytes / rate`` is already in ms).
"""

from __future__ import annotations

import enum
import heapq
import itertools
import json
import random
from collections import deque
from dataclasses import dataclass, field

from .handshake import (
    ClientHandshake,
    Direction,
    FramingConfig,
    HandshakeError,
    HandshakeMessage,
    HandshakeTranscript,
    ServerConfig,
    ServerHandshake,
    record_sizes,
    transcript_of,
)
from .suites import DEFAULT_AEAD_COST_PER_BYTE, ModelProvider, SuiteDescriptor

SEGMENT_HEADER_BYTES = 40


@dataclass(frozen=True)
class Link:
    name: str
    prop_delay: float
    rate: float
    loss_prob: float = 0.0
    mtu: int = 1440

    def __post_init__(self):
        if self.prop_delay < 0:
            raise ValueError(f"{self.name}: prop_delay must be >= 0")
        if self.rate <= 0:
            raise ValueError(f"{self.name}: rate must be > 0")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError(f"{self.name}: loss_prob must be in [0, 1]")
        if self.mtu < 256:
            raise ValueError(f"{self.name}: mtu must be >= 256")


@dataclass(frozen=True)
class NetworkPath:
    links: tuple[Link, ...]
    symmetric: bool = True
    reverse_links: tuple[Link, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if not self.links:
            raise ValueError("a path needs at least one link")
        if not self.symmetric and not self.reverse_links:
            raise ValueError("an asymmetric path needs reverse_links")
        if self.reverse_links is not None:
            object.__setattr__(self, "reverse_links", tuple(self.reverse_links))

    @property
    def forward(self) -> tuple[Link, ...]:
        return self.links

    @property
    def reverse(self) -> tuple[Link, ...]:
        if self.symmetric:
            return tuple(reversed(self.links))
        return self.reverse_links

    @property
    def mtu(self) -> int:
        return min(link.mtu for link in self.forward + self.reverse)

    def with_loss(self, loss_prob: float) -> "NetworkPath":
        links = tuple(Link(l.name, l.prop_delay, l.rate, loss_prob, l.mtu) for l in self.links)
        rev = None
        if self.reverse_links is not None:
            rev = tuple(Link(l.name, l.prop_delay, l.rate, loss_prob, l.mtu) for l in self.reverse_links)
        return NetworkPath(links, self.symmetric, rev)


def default_path() -> NetworkPath:
    # Placeholder 5G-ish values; loss figures are not derived from measurements.
    return NetworkPath((
        Link("ue1_gnb", 2.0, 12500.0, 0.002, 1440),
        Link("gnb_upf", 1.0, 125000.0, 0.0, 1440),
        Link("upf_ue2", 2.0, 12500.0, 0.002, 1440),
    ))


@dataclass(frozen=True)
class ReliableTransportConfig:
    rto: float = 50.0
    max_retries: int = 8
    ack_bytes: int = 40
    window: int = 64
    header_bytes: int = SEGMENT_HEADER_BYTES

    def __post_init__(self):
        if self.rto <= 0:
            raise ValueError("rto must be > 0")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.ack_bytes <= 0 or self.header_bytes < 0:
            raise ValueError("ack_bytes must be > 0 and header_bytes >= 0")


def fragment(payload_bytes: int, mtu: int, header_bytes: int = SEGMENT_HEADER_BYTES) -> list[int]:
    """Split a payload into segment payload sizes of at most ``mtu - header``."""
    if payload_bytes < 0:
        raise ValueError("payload_bytes must be >= 0")
    room = mtu - header_bytes
    if room <= 0:
        raise ValueError("mtu does not leave room for payload")
    full, rest = divmod(payload_bytes, room)
    return [room] * full + ([rest] if rest else [])


class EventKind(enum.Enum):
    SENT = "Sent"
    LOST = "Lost"
    RETRANSMITTED = "Retransmitted"
    DELIVERED = "Delivered"
    ACK_SENT = "AckSent"
    ACK_DELIVERED = "AckDelivered"


@dataclass(slots=True)
class TraceEvent:
    t: float
    kind: EventKind
    segment_id: int
    bytes: int
    direction: str
    label: str
    attempt: int = 0

    def to_json(self) -> dict:
        return {"t": round(self.t, 9), "kind": self.kind.value, "segment_id": self.segment_id,
                "bytes": self.bytes, "direction": self.direction, "label": self.label,
                "attempt": self.attempt}


@dataclass(slots=True)
class CpuEvent:
    """A server-side primitive: released at ``t``, served FIFO in ``seq`` order."""

    t: float
    seq: int
    op: str
    alg: str
    nbytes: int
    cost_us: float
    start: float = 0.0
    end: float = 0.0


@dataclass
class TraceTotals:
    segments_sent: int = 0
    segments_retransmitted: int = 0
    bytes_tx: int = 0
    bytes_rx: int = 0


@dataclass
class SessionTrace:
    events: list[TraceEvent] = field(default_factory=list)
    totals: TraceTotals = field(default_factory=TraceTotals)
    cpu: list[CpuEvent] = field(default_factory=list)
    marks: dict[str, float] = field(default_factory=dict)
    message_times: list[dict] = field(default_factory=list)
    error: str | None = None
    server_units: int = 1
    handshake_bytes: int = 0

    def finalize(self) -> "SessionTrace":
        self.events.sort(key=lambda e: e.t)
        return self

    @property
    def start(self) -> float:
        return self.marks.get("start", 0.0)

    @property
    def end(self) -> float:
        last = self.events[-1].t if self.events else self.start
        return max(last, self.marks.get("data_end", last))

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def original_segments(self) -> int:
        return self.totals.segments_sent - self.totals.segments_retransmitted

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in self.events)


class DeliveryFailed(RuntimeError):
    def __init__(self, message: str, trace: SessionTrace | None = None):
        super().__init__(message)
        self.trace = trace


class Simulator:
    """Monotone event queue keyed by (time, insertion sequence)."""

    def __init__(self):
        self.now = 0.0
        self._queue: list = []
        self._seq = itertools.count()

    def schedule(self, t: float, fn, *args) -> None:
        if t < self.now:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._queue, (t, next(self._seq), fn, args))

    def run(self) -> None:
        queue = self._queue
        while queue:
            t, _, fn, args = heapq.heappop(queue)
            self.now = t
            fn(*args)


class _Channel:
    """One direction of a path; hop state is [busy_until, rate, prop, loss].

    Traversal is resolved at send time. That is exact FIFO even when several
    flows share the channel, since they all cross the same hops in the same
    order and calls arrive in simulation-time order.
    """

    __slots__ = ("hops",)

    def __init__(self, links):
        self.hops = [[0.0, l.rate, l.prop_delay, l.loss_prob] for l in links]

    def traverse(self, now: float, wire: int, rng: random.Random) -> tuple[float, bool]:
        """Return (time, lost): arrival time at the far end, or the time of loss."""
        t = now
        for hop in self.hops:
            start = t if t > hop[0] else hop[0]
            done = start + wire / hop[1]
            hop[0] = done
            loss = hop[3]
            if loss > 0.0 and rng.random() < loss:
                return done, True
            t = done + hop[2]
        return t, False


class _Segment:
    __slots__ = ("id", "unit", "wire", "attempt", "acked", "received")

    def __init__(self, seg_id, unit, wire):
        self.id = seg_id
        self.unit = unit
        self.wire = wire
        self.attempt = 0
        self.acked = False
        self.received = False


class _Unit:
    __slots__ = ("label", "remaining", "on_delivered", "first_sent")

    def __init__(self, label, count, on_delivered):
        self.label = label
        self.remaining = count
        self.on_delivered = on_delivered
        self.first_sent = None


class _Flow:
    """Shared per-flow state: the RNG, the trace and the failure flag."""

    def __init__(self, sim: Simulator, rng: random.Random, trace: SessionTrace, mtu: int):
        self.sim = sim
        self.rng = rng
        self.trace = trace
        self.mtu = mtu
        self.failed = False
        self._ids = itertools.count()
        self.on_failure = None

    def next_id(self) -> int:
        return next(self._ids)

    def fail(self, reason: str) -> None:
        if not self.failed:
            self.failed = True
            self.trace.error = reason
            if self.on_failure is not None:
                self.on_failure(reason)


class _Stream:
    """Reliable one-way byte stream with selective ACKs, fixed window, per-segment RTO."""

    def __init__(self, flow: _Flow, direction: str, data: _Channel, acks: _Channel, cfg: ReliableTransportConfig):
        self.flow = flow
        self.direction = direction
        self.data = data
        self.acks = acks
        self.cfg = cfg
        self.pending: deque[_Segment] = deque()
        self.in_flight = 0

    def send_unit(self, label: str, payload_bytes: int, on_delivered) -> None:
        sizes = fragment(payload_bytes, self.flow.mtu, self.cfg.header_bytes) or [0]
        unit = _Unit(label, len(sizes), on_delivered)
        for size in sizes:
            self.pending.append(_Segment(self.flow.next_id(), unit, size + self.cfg.header_bytes))
        self._pump()

    def _pump(self) -> None:
        while self.pending and self.in_flight < self.cfg.window:
            seg = self.pending.popleft()
            self.in_flight += 1
            self._transmit(seg)

    def _transmit(self, seg: _Segment) -> None:
        flow = self.flow
        now = flow.sim.now
        trace = flow.trace
        totals = trace.totals
        retx = seg.attempt > 0
        kind = EventKind.RETRANSMITTED if retx else EventKind.SENT
        trace.events.append(TraceEvent(now, kind, seg.id, seg.wire, self.direction, seg.unit.label, seg.attempt))
        if seg.unit.first_sent is None:
            seg.unit.first_sent = now
        totals.segments_sent += 1
        totals.segments_retransmitted += retx
        totals.bytes_tx += seg.wire
        t, lost = self.data.traverse(now, seg.wire, flow.rng)
        if lost:
            trace.events.append(TraceEvent(t, EventKind.LOST, seg.id, seg.wire, self.direction,
                                           seg.unit.label, seg.attempt))
        else:
            flow.sim.schedule(t, self._arrive, seg, seg.attempt)
        flow.sim.schedule(now + self.cfg.rto, self._timeout, seg, seg.attempt)

    def _arrive(self, seg: _Segment, attempt: int) -> None:
        flow = self.flow
        if flow.failed:
            return
        now = flow.sim.now
        trace = flow.trace
        trace.events.append(TraceEvent(now, EventKind.DELIVERED, seg.id, seg.wire, self.direction,
                                       seg.unit.label, attempt))
        trace.totals.bytes_rx += seg.wire
        ack = self.cfg.ack_bytes
        trace.events.append(TraceEvent(now, EventKind.ACK_SENT, seg.id, ack, self.direction, "ack", attempt))
        trace.totals.bytes_tx += ack
        t, lost = self.acks.traverse(now, ack, flow.rng)
        if lost:
            trace.events.append(TraceEvent(t, EventKind.LOST, seg.id, ack, self.direction, "ack", attempt))
        else:
            flow.sim.schedule(t, self._ack, seg, attempt)
        if not seg.received:
            seg.received = True
            unit = seg.unit
            unit.remaining -= 1
            if unit.remaining == 0 and unit.on_delivered is not None:
                unit.on_delivered(now, unit.first_sent)

    def _ack(self, seg: _Segment, attempt: int) -> None:
        flow = self.flow
        if flow.failed:
            return
        flow.trace.events.append(TraceEvent(flow.sim.now, EventKind.ACK_DELIVERED, seg.id, self.cfg.ack_bytes,
                                            self.direction, "ack", attempt))
        flow.trace.totals.bytes_rx += self.cfg.ack_bytes
        if not seg.acked:
            seg.acked = True
            self.in_flight -= 1
            self._pump()

    def _timeout(self, seg: _Segment, attempt: int) -> None:
        if seg.acked or seg.attempt != attempt or self.flow.failed:
            return
        if attempt >= self.cfg.max_retries:
            self.flow.fail("DeliveryFailed")
            return
        seg.attempt += 1
        self._transmit(seg)


def transmit(
    payload_bytes: int,
    path: NetworkPath,
    transport_cfg: ReliableTransportConfig = ReliableTransportConfig(),
    rng: random.Random | None = None,
) -> SessionTrace:
    """Send one payload client -> server on a fresh path and return its trace.

    ``marks["delivered"]`` holds the delivery time of the last segment; a
    transfer that exhausts ``max_retries`` sets ``trace.error``.
    """
    if rng is None:
        raise ValueError("transmit needs a seeded random.Random stream")
    sim = Simulator()
    trace = SessionTrace()
    flow = _Flow(sim, rng, trace, path.mtu)
    fwd, rev = _Channel(path.forward), _Channel(path.reverse)
    stream = _Stream(flow, "c2s", fwd, rev, transport_cfg)

    def done(t, first_sent):
        trace.marks["delivered"] = t

    trace.marks["start"] = 0.0
    sim.schedule(0.0, stream.send_unit, "payload", payload_bytes, done)
    sim.run()
    return trace.finalize()


# -- handshake sessions -------------------------------------------------------

@dataclass(frozen=True)
class SessionConfig:
    transport: ReliableTransportConfig = ReliableTransportConfig()
    framing: FramingConfig = FramingConfig()
    app_payload_bytes: int = 65536
    aead_cost_per_byte: float = DEFAULT_AEAD_COST_PER_BYTE
    certificate_chain_length: int = 1
    shared_links: bool = True

    def __post_init__(self):
        if self.app_payload_bytes < 0:
            raise ValueError("app_payload_bytes must be >= 0")
        if self.aead_cost_per_byte < 0:
            raise ValueError("aead_cost_per_byte must be >= 0")


class ServerCpu:
    """FIFO over ``units`` identical service units, shared by all sessions."""

    def __init__(self, sim: Simulator, units: int = 1):
        if units < 1:
            raise ValueError("service units must be >= 1")
        self.sim = sim
        self.units = units
        self._free = [0.0] * units
        self._seq = itertools.count()

    def submit(self, trace: SessionTrace, ops: list[tuple[str, str, int, float]], callback=None) -> None:
        now = self.sim.now
        end = now
        for op, alg, nbytes, cost_us in ops:
            free = heapq.heappop(self._free)
            start = free if free > now else now
            end = start + cost_us / 1000.0
            heapq.heappush(self._free, end)
            trace.cpu.append(CpuEvent(now, next(self._seq), op, alg, nbytes, cost_us, start, end))
        if callback is not None:
            self.sim.schedule(end, callback)


class _Session:
    def __init__(self, sim, cpu, suite, channels, cfg, seed, server_config, offered):
        self.sim = sim
        self.cpu = cpu
        self.suite = suite
        self.cfg = cfg
        self.trace = SessionTrace(server_units=cpu.units)
        fwd, rev, mtu = channels
        self.flow = _Flow(sim, random.Random(seed), self.trace, mtu)
        self.flow.on_failure = self._on_failure
        self.c2s = _Stream(self.flow, "c2s", fwd, rev, cfg.transport)
        self.s2c = _Stream(self.flow, "s2c", rev, fwd, cfg.transport)
        self.provider = ModelProvider(suite.id, seed)
        server_config = server_config or ServerConfig([suite], cfg.certificate_chain_length)
        self.server = ServerHandshake(server_config, self.provider, cfg.framing)
        self.client = ClientHandshake(self.provider, cfg.framing)
        self.offered = offered or [suite]
        self.records = record_sizes(cfg.app_payload_bytes)
        self._records_pending: list[int] = []
        self._records_left = len(self.records)
        self.handshake_done = False
        self.transcript: HandshakeTranscript | None = None

    # client side compute is private to each UE: a plain delay, not a shared queue
    def _client_delay(self) -> float:
        return sum(c.cost_us for c in self.provider.drain()) / 1000.0

    def _server_ops(self):
        return [(c.op, c.alg, 0, c.cost_us) for c in self.provider.drain()]

    def _note(self, messages: list[HandshakeMessage], sent: float, delivered: float) -> None:
        for m in messages:
            self.trace.message_times.append({**m.to_json(), "t_sent": sent, "t_delivered": delivered})

    def _on_failure(self, reason: str) -> None:
        self.transcript = transcript_of(self.client, self.server)

    def start(self) -> None:
        try:
            ch = self.client.client_hello(self.offered)
        except HandshakeError as exc:
            self.trace.error = type(exc).__name__
            return
        self.sim.schedule(self.sim.now + self._client_delay(), self._send_client_hello, ch)

    def _send_client_hello(self, ch):
        self.trace.marks["start"] = self.sim.now
        self.c2s.send_unit("client_hello", ch.payload_bytes,
                           lambda t, t0: self._on_client_hello(ch, t, t0))

    def _send_alert(self, stream: _Stream, exc: HandshakeError) -> None:
        self.trace.error = type(exc).__name__
        self.transcript = transcript_of(self.client, self.server)
        self.transcript.alert = exc.alert.logical_contents["description"] if exc.alert else str(exc)
        if exc.alert is not None:
            stream.send_unit("alert", exc.alert.payload_bytes, None)

    def _on_client_hello(self, ch, t, t0):
        self._note([ch], t0, t)
        try:
            flight = self.server.server_respond(ch)
        except HandshakeError as exc:
            self._send_alert(self.s2c, exc)
            return
        self.cpu.submit(self.trace, self._server_ops(), lambda: self._send_server_flight(flight))

    def _send_server_flight(self, flight):
        size = sum(m.payload_bytes for m in flight)
        self.s2c.send_unit("server_flight", size, lambda t, t0: self._on_server_flight(flight, t, t0))

    def _on_server_flight(self, flight, t, t0):
        self._note(flight, t0, t)
        try:
            fin = self.client.client_finish(flight)
        except HandshakeError as exc:
            self.provider.drain()
            self._send_alert(self.c2s, exc)
            return
        self.sim.schedule(t + self._client_delay(), self._send_client_finished, fin)

    def _send_client_finished(self, fin):
        self.c2s.send_unit("client_finished", fin.payload_bytes,
                           lambda t, t0: self._on_client_finished(fin, t, t0))
        for i, size in enumerate(self.records):
            self.c2s.send_unit(f"app:{i}", size, lambda t, t0, size=size: self._on_record(size))

    def _on_client_finished(self, fin, t, t0):
        self._note([fin], t0, t)
        try:
            self.server.server_finish(fin)
        except HandshakeError as exc:
            self._send_alert(self.s2c, exc)
            return
        self.trace.marks["handshake_end"] = t
        self.handshake_done = True
        self.transcript = transcript_of(self.client, self.server)
        self.trace.handshake_bytes = sum(m.payload_bytes for m in self.transcript.messages)
        pending, self._records_pending = self._records_pending, []
        for size in pending:
            self._decrypt(size)
        if not self.records:
            self.trace.marks["data_end"] = t

    def _on_record(self, size):
        if self.handshake_done:
            self._decrypt(size)
        elif self.trace.error is None:
            self._records_pending.append(size)

    def _decrypt(self, size):
        cost = size * self.cfg.aead_cost_per_byte
        self.cpu.submit(self.trace, [("aead", "aes128gcm", size, cost)], self._record_done)

    def _record_done(self):
        self._records_left -= 1
        if self._records_left == 0:
            self.trace.marks["data_end"] = self.sim.now

    def result(self) -> tuple[HandshakeTranscript, SessionTrace]:
        if self.transcript is None:
            self.transcript = transcript_of(self.client, self.server)
        return self.transcript, self.trace.finalize()


def simulate_clients(
    suite: SuiteDescriptor,
    seeds: list[int],
    path: NetworkPath | None = None,
    cfg: SessionConfig = SessionConfig(),
    service_units: int = 1,
    server_config: ServerConfig | None = None,
    offered: list[SuiteDescriptor] | None = None,
) -> list[tuple[HandshakeTranscript, SessionTrace]]:
    """Start one session per seed at t=0 against a server with shared CPU.

    With ``cfg.shared_links`` all clients queue on the same link instances
    (one UE host, one server); otherwise each gets a private copy of the
    path. Loss draws always come from each session's own seed.
    """
    path = path or default_path()
    sim = Simulator()
    cpu = ServerCpu(sim, service_units)

    def channels():
        return _Channel(path.forward), _Channel(path.reverse), path.mtu

    shared = channels() if cfg.shared_links else None
    sessions = [_Session(sim, cpu, suite, shared or channels(), cfg, seed, server_config, offered)
                for seed in seeds]
    for s in sessions:
        sim.schedule(0.0, s.start)
    sim.run()
    return [s.result() for s in sessions]


def run_handshake_over_network(
    suite: SuiteDescriptor,
    path: NetworkPath | None = None,
    cfg: SessionConfig = SessionConfig(),
    seed: int = 0,
    *,
    strict: bool = True,
    server_config: ServerConfig | None = None,
    offered: list[SuiteDescriptor] | None = None,
) -> tuple[HandshakeTranscript, SessionTrace]:
    """One client session: handshake flights in order, then the application payload.

    With ``strict`` a failed session raises (``DeliveryFailed`` or a
    ``HandshakeError`` carrying ``.trace``); otherwise the failure is left in
    ``trace.error`` and ``transcript.completed`` is false.
    """
    transcript, trace = simulate_clients(suite, [seed], path, cfg, 1, server_config, offered)[0]
    if strict and trace.error is not None:
        if trace.error == "DeliveryFailed":
            raise DeliveryFailed("segment not delivered within max_retries", trace)
        exc = HandshakeError(f"handshake aborted: {trace.error} ({transcript.alert})")
        exc.trace = trace
        raise exc
    return transcript, trace


def export_transcript_jsonl(trace: SessionTrace) -> str:
    return "".join(json.dumps(m, sort_keys=True) + "\n" for m in trace.message_times)

