"""Scenario orchestration: suite matrix, repeated iterations, concurrent clients."""

from __future__ import annotations

import hashlib
import json
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .handshake import FramingConfig
from .metrics import CpuModel, MetricsRecord, iteration_record
from .netsim import Link, NetworkPath, ReliableTransportConfig, SessionConfig, default_path, simulate_clients
from .profile import MalformedProfile, as_float, as_int, as_list, read_profile
from .suites import (
    CostProfile,
    SuiteDescriptor,
    aead_cost_per_byte,
    load_cost_profile,
    parse_suite_id,
    registry_default,
)

CONFIG_ENV = "PQTLS5G_CONFIG"
_MASK64 = (1 << 64) - 1


def mix_seed(base: int, suite_id: str, client_count: int, iteration: int) -> int:
    """First 8 bytes (big-endian) of SHA-256 over ``"<base>|<suite id>|<clients>|<iteration>"``.

    ``base`` is reduced mod 2**64 and the suite id lowercased first, so the
    value is stable across platforms and Python versions.
    """
    text = f"{base & _MASK64}|{suite_id.lower()}|{client_count}|{iteration}"
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def client_seeds(base: int, suite_id: str, client_count: int, iteration: int) -> list[int]:
    first = mix_seed(base, suite_id, client_count, iteration)
    return [first] + [mix_seed(first, suite_id, client_count, k) for k in range(1, client_count)]


@dataclass(frozen=True)
class ServerCapacity:
    service_units: int = 1
    queue_discipline: str = "FIFO"

    def __post_init__(self):
        if self.service_units < 1:
            raise ValueError("service_units must be >= 1")
        if self.queue_discipline != "FIFO":
            raise ValueError("only FIFO queueing is modeled")


@dataclass
class ScenarioConfig:
    suites: list[str] | None = None
    iterations: int = 50
    client_counts: list[int] = field(default_factory=lambda: [1])
    seed: int = 0
    network_profile: NetworkPath = field(default_factory=default_path)
    transport: ReliableTransportConfig = ReliableTransportConfig()
    app_payload_bytes: int = 65536
    cost_profile: str | None = None
    capacity: ServerCapacity = ServerCapacity()
    framing: FramingConfig = FramingConfig()
    cpu_model: CpuModel = CpuModel()
    shared_links: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.client_counts or min(self.client_counts) < 1:
            raise ValueError("client_counts must be non-empty and all >= 1")

    def profile(self) -> CostProfile:
        return load_cost_profile(self.cost_profile) if self.cost_profile else {}

    def registry(self) -> list[SuiteDescriptor]:
        return registry_default(self.profile())

    def resolve_suites(self) -> list[SuiteDescriptor]:
        registry = self.registry()
        if self.suites is None:
            return registry
        return [parse_suite_id(sid, registry) for sid in self.suites]

    def session_config(self) -> SessionConfig:
        return SessionConfig(
            transport=self.transport,
            framing=self.framing,
            app_payload_bytes=self.app_payload_bytes,
            aead_cost_per_byte=aead_cost_per_byte(self.profile()),
            shared_links=self.shared_links,
        )


@dataclass
class AggregateResult:
    suite_id: str
    label: str
    client_count: int
    iterations: int
    max_cpu_pct: float
    latency_ms: float | None
    bandwidth_kbs: float
    retx_rate_pct: float
    total_packets: float
    retransmissions: float
    handshake_bytes: float
    failed_sessions: int
    runs: list[MetricsRecord] = field(default_factory=list, repr=False)

    @property
    def aborted(self) -> bool:
        return self.latency_ms is None

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("runs")
        return out


def aggregate(suite: SuiteDescriptor, client_count: int, runs: list[MetricsRecord]) -> AggregateResult:
    latencies = [r.latency_ms for r in runs if r.latency_ms is not None]
    return AggregateResult(
        suite_id=suite.id,
        label=suite.label,
        client_count=client_count,
        iterations=len(runs),
        max_cpu_pct=max(r.max_cpu_pct for r in runs),
        latency_ms=statistics.fmean(latencies) if latencies else None,
        bandwidth_kbs=statistics.fmean(r.bandwidth_kbs for r in runs),
        retx_rate_pct=statistics.fmean(r.retx_rate_pct for r in runs),
        total_packets=statistics.fmean(r.total_packets for r in runs),
        retransmissions=statistics.fmean(r.retransmissions for r in runs),
        handshake_bytes=statistics.fmean(r.handshake_bytes for r in runs),
        failed_sessions=sum(r.failed for r in runs),
        runs=runs,
    )


def run_concurrent(cfg: ScenarioConfig, client_count: int, suite: SuiteDescriptor | str) -> AggregateResult:
    """``cfg.iterations`` rounds of ``client_count`` clients all starting at t=0."""
    if client_count < 1:
        raise ValueError("client_count must be >= 1")
    if isinstance(suite, str):
        suite = parse_suite_id(suite, cfg.registry())
    session_cfg = cfg.session_config()
    runs = []
    for it in range(cfg.iterations):
        seeds = client_seeds(cfg.seed, suite.id, client_count, it)
        sessions = simulate_clients(suite, seeds, cfg.network_profile, session_cfg,
                                    cfg.capacity.service_units)
        runs.append(iteration_record([trace for _, trace in sessions], suite, cpu_model=cfg.cpu_model))
    return aggregate(suite, client_count, runs)


def _run_cell(args):
    cfg, client_count, suite = args
    return run_concurrent(cfg, client_count, suite)


def run_matrix(cfg: ScenarioConfig, jobs: int = 1) -> list[AggregateResult]:
    """Every (suite, client count) cell; sorted by (suite_id, client_count)."""
    cells = [(cfg, n, s) for s in cfg.resolve_suites() for n in cfg.client_counts]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, cells))
    else:
        results = [_run_cell(c) for c in cells]
    return sorted(results, key=lambda r: (r.suite_id, r.client_count))


def run_log_lines(results: list[AggregateResult], base_seed: int) -> list[str]:
    lines = []
    for agg in results:
        for it, run in enumerate(agg.runs):
            row = {"suite_id": agg.suite_id, "client_count": agg.client_count, "iteration": it,
                   "seed": mix_seed(base_seed, agg.suite_id, agg.client_count, it), **run.to_json()}
            lines.append(json.dumps(row, sort_keys=True))
    return lines


# -- config files --------------------------------------------------------------

_LINK_FIELDS = {"prop_delay": float, "rate": float, "loss_prob": float, "mtu": int}


def _network_from_entries(entries, source: str, base: NetworkPath) -> NetworkPath:
    links = {l.name: asdict(l) for l in base.links}
    order = [l.name for l in base.links]
    for key, (raw, lineno) in entries.items():
        if not key.startswith("link."):
            continue
        parts = key.split(".")
        if len(parts) != 3 or parts[2] not in _LINK_FIELDS:
            raise MalformedProfile(source, lineno, f"expected link.<name>.<{'|'.join(_LINK_FIELDS)}>")
        name, fld = parts[1], parts[2]
        conv = as_int if _LINK_FIELDS[fld] is int else as_float
        if name not in links:
            links[name] = {"name": name, "prop_delay": 0.0, "rate": 12500.0, "loss_prob": 0.0, "mtu": 1440}
            order.append(name)
        links[name][fld] = conv(raw, source, lineno, key)
    try:
        return NetworkPath(tuple(Link(**links[n]) for n in order))
    except ValueError as exc:
        raise MalformedProfile(source, 0, str(exc)) from None


def load_network_profile(path, base: NetworkPath | None = None) -> NetworkPath:
    """Link overrides: ``link.<name>.<prop_delay|rate|loss_prob|mtu> = value``.

    Names matching the default links override them; new names are appended.
    """
    return _network_from_entries(read_profile(path), str(path), base or default_path())


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    source = str(path)
    entries = read_profile(path)
    cfg = ScenarioConfig()
    network = cfg.network_profile
    if "network_profile" in entries:
        network = load_network_profile(path.parent / entries["network_profile"][0])
    network = _network_from_entries(entries, source, network)
    transport, framing, cpu = {}, {}, {}
    updates = {"network_profile": network}
    groups = {"transport": (transport, ReliableTransportConfig), "framing": (framing, FramingConfig),
              "cpu": (cpu, CpuModel)}
    for key, (raw, lineno) in entries.items():
        if key.startswith("link.") or key == "network_profile":
            continue
        if key == "suites":
            updates["suites"] = None if raw.lower() == "all" else as_list(raw)
        elif key in ("iterations", "seed", "app_payload_bytes"):
            updates[key] = as_int(raw, source, lineno, key)
        elif key in ("clients", "client_counts"):
            updates["client_counts"] = [as_int(v, source, lineno, key) for v in as_list(raw)]
        elif key == "shared_links":
            if raw.lower() not in ("true", "false"):
                raise MalformedProfile(source, lineno, "shared_links must be true or false")
            updates["shared_links"] = raw.lower() == "true"
        elif key == "service_units":
            updates["capacity"] = ServerCapacity(as_int(raw, source, lineno, key))
        elif key == "cost_profile":
            updates["cost_profile"] = str(path.parent / raw)
        elif key.split(".", 1)[0] in groups and "." in key:
            group, name = key.split(".", 1)
            target, klass = groups[group]
            types = {f.name: f.type for f in fields(klass)}
            if name not in types:
                raise MalformedProfile(source, lineno, f"unknown {group} field {name!r}")
            conv = as_int if types[name] in (int, "int") else as_float
            target[name] = conv(raw, source, lineno, key)
        else:
            raise MalformedProfile(source, lineno, f"unknown scenario key {key!r}")
    try:
        updates["transport"] = replace(cfg.transport, **transport)
        updates["framing"] = replace(cfg.framing, **framing)
        updates["cpu_model"] = replace(cfg.cpu_model, **cpu)
        return replace(cfg, **updates)
    except ValueError as exc:
        raise MalformedProfile(source, 0, str(exc)) from None


def default_scenario() -> ScenarioConfig:
    """Scenario from ``$PQTLS5G_CONFIG`` if set, otherwise the built-in defaults."""
    env = os.environ.get(CONFIG_ENV)
    return load_scenario(env) if env else ScenarioConfig()
