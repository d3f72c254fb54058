import pytest

from pqtls5g.suites import KEM_NAMES, SIG_NAMES, parse_cost_profile

_LINES_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES_KEY] = []


@pytest.fixture
def acceptance_log(request):
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    lines = request.config.stash[_LINES_KEY]

    def log(number: int, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
        lines.append(line)
        print(line)
        return ok

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def zero_costs():
    """Cost profile with every primitive (and AEAD) free."""
    lines = [f"{k.lower()}.{op}_cost = 0" for k in KEM_NAMES for op in ("keygen", "encaps", "decaps")]
    lines += [f"{s}.{op}_cost = 0" for s in SIG_NAMES for op in ("sign", "verify")]
    lines.append("aead.per_byte_cost = 0")
    return parse_cost_profile("\n".join(lines))


def tandem_fifo(releases, links, state=None):
    """Hand-rolled store-and-forward oracle.

    ``releases`` is a list of (release_ms, wire_bytes) in queue order; every
    hop serves in that order at ``bytes / rate`` ms and adds its propagation
    delay. ``state`` holds per-hop free times and is updated in place so a
    caller can chain several batches on the same direction.
    """
    free = state if state is not None else [0.0] * len(links)
    arrivals = []
    for release, wire in releases:
        t = release
        for i, link in enumerate(links):
            begin = max(t, free[i])
            free[i] = begin + wire / link.rate
            t = free[i] + link.prop_delay
        arrivals.append(t)
    return arrivals
