"""KEM / signature descriptors, the suite registry and the model crypto provider.

Byte sizes come from the published parameter sets (FIPS 203 / FIPS 204 /
FIPS 205, the Falcon and HQC round-3 specifications, RFC 7748 and SEC 1
uncompressed points). Compute costs are data: they ship in
``data/default_costs.profile`` and can be overridden per host.
"""

from __future__ import annotations

import difflib
import hashlib
import hmac
import os
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Protocol

from .profile import MalformedProfile, as_float, parse_profile_text, read_profile

DEFAULT_COST_PROFILE = "default_costs.profile"
DEFAULT_AEAD_COST_PER_BYTE = 0.01


class UnknownSuite(KeyError):
    def __init__(self, suite_id: str, candidates: list[str]):
        self.suite_id = suite_id
        self.candidates = candidates
        hint = f"; did you mean {', '.join(candidates)}?" if candidates else ""
        super().__init__(f"unknown suite {suite_id!r}{hint}")

    def __str__(self) -> str:
        return self.args[0]


class ProfileValidationError(MalformedProfile):
    pass


@dataclass(frozen=True)
class KemDescriptor:
    name: str
    nist_level: int
    public_key_bytes: int
    ciphertext_bytes: int
    shared_secret_bytes: int
    keygen_cost: float = 0.0
    encaps_cost: float = 0.0
    decaps_cost: float = 0.0

    def __post_init__(self):
        if self.nist_level not in (1, 3, 5):
            raise ValueError(f"{self.name}: nist_level must be 1, 3 or 5")
        if min(self.public_key_bytes, self.ciphertext_bytes, self.shared_secret_bytes) <= 0:
            raise ValueError(f"{self.name}: byte counts must be positive")
        if self.shared_secret_bytes < 16:
            raise ValueError(f"{self.name}: shared secret shorter than 16 bytes")
        if min(self.keygen_cost, self.encaps_cost, self.decaps_cost) < 0:
            raise ValueError(f"{self.name}: negative cost")


@dataclass(frozen=True)
class SigDescriptor:
    name: str
    nist_level: int
    public_key_bytes: int
    signature_bytes: int
    sign_cost: float = 0.0
    verify_cost: float = 0.0

    def __post_init__(self):
        if min(self.public_key_bytes, self.signature_bytes) <= 0:
            raise ValueError(f"{self.name}: byte counts must be positive")
        if min(self.sign_cost, self.verify_cost) < 0:
            raise ValueError(f"{self.name}: negative cost")

    @property
    def family(self) -> str:
        for prefix in ("falcon", "mldsa", "sphincs"):
            if self.name.startswith(prefix):
                return prefix
        return self.name


@dataclass(frozen=True)
class SuiteDescriptor:
    kem: KemDescriptor
    sig: SigDescriptor
    id: str = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "id", format_suite_id(self.kem.name, self.sig.name))

    @property
    def label(self) -> str:
        """Display form used in tables, e.g. ``X25519_mldsa44``."""
        return f"{self.kem.name}_{self.sig.name}"


def format_suite_id(kem_name: str, sig_name: str) -> str:
    return f"{kem_name}_{sig_name}".lower()


# name, level, public key, ciphertext, shared secret
KEM_PARAMETERS = [
    ("X25519", 1, 32, 32, 32),
    ("secp384r1", 3, 97, 97, 48),
    ("secp521r1", 5, 133, 133, 66),
    ("mlkem512", 1, 800, 768, 32),
    ("mlkem768", 3, 1184, 1088, 32),
    ("mlkem1024", 5, 1568, 1568, 32),
    ("hqc128", 1, 2249, 4481, 64),
    ("hqc192", 3, 4522, 9026, 64),
    ("hqc256", 5, 7245, 14469, 64),
]

# name, level, public key, signature
SIG_PARAMETERS = [
    ("falcon512", 1, 897, 666),
    ("falcon1024", 5, 1793, 1280),
    ("mldsa44", 2, 1312, 2420),
    ("mldsa65", 3, 1952, 3309),
    ("mldsa87", 5, 2592, 4627),
    ("sphincssha2128f", 1, 32, 17088),
    ("sphincssha2192f", 3, 48, 35664),
    ("sphincssha2256f", 5, 64, 49856),
]

KEM_NAMES = [row[0] for row in KEM_PARAMETERS]
SIG_NAMES = [row[0] for row in SIG_PARAMETERS]

_KEM_FIELDS = {"keygen_cost", "encaps_cost", "decaps_cost",
               "public_key_bytes", "ciphertext_bytes", "shared_secret_bytes"}
_SIG_FIELDS = {"sign_cost", "verify_cost", "public_key_bytes", "signature_bytes"}
_AEAD_FIELDS = {"per_byte_cost"}

CostProfile = dict[str, dict[str, float]]


def _validate_entries(entries: dict[str, tuple[str, int]], source: str) -> CostProfile:
    known = {n.lower(): _KEM_FIELDS for n in KEM_NAMES}
    known.update({n.lower(): _SIG_FIELDS for n in SIG_NAMES})
    known["aead"] = _AEAD_FIELDS
    profile: CostProfile = {}
    for key, (raw, lineno) in entries.items():
        if "." not in key:
            raise MalformedProfile(source, lineno, f"key {key!r} is not of the form <alg>.<field>")
        alg, fld = key.split(".", 1)
        if alg not in known:
            raise MalformedProfile(source, lineno, f"unknown algorithm {alg!r}")
        if fld not in known[alg]:
            raise MalformedProfile(source, lineno, f"{alg}: unknown field {fld!r}")
        value = as_float(raw, source, lineno, key)
        if value < 0:
            raise ProfileValidationError(source, lineno, f"{key} must be non-negative, got {value}")
        if fld.endswith("_bytes"):
            if value != int(value) or value <= 0:
                raise ProfileValidationError(source, lineno, f"{key} must be a positive integer")
            if fld == "shared_secret_bytes" and value < 16:
                raise ProfileValidationError(source, lineno, f"{key} must be at least 16")
            value = int(value)
        profile.setdefault(alg, {})[fld] = value
    return profile


def load_cost_profile(path: str | os.PathLike) -> CostProfile:
    """Parse a cost/size override file into ``{alg: {field: value}}``.

    Keys are ``<alg>.<op>_cost`` (microseconds) or ``<alg>.<field>_bytes``.
    An empty file yields an empty mapping, which leaves the registry unchanged.
    """
    return _validate_entries(read_profile(path), str(path))


def parse_cost_profile(text: str, source: str = "<string>") -> CostProfile:
    return _validate_entries(parse_profile_text(text, source), source)


def default_cost_profile() -> CostProfile:
    text = resources.files("pqtls5g.data").joinpath(DEFAULT_COST_PROFILE).read_text(encoding="utf-8")
    return parse_cost_profile(text, DEFAULT_COST_PROFILE)


def merge_profiles(*profiles: CostProfile | None) -> CostProfile:
    merged: CostProfile = {}
    for profile in profiles:
        for alg, fields in (profile or {}).items():
            merged.setdefault(alg, {}).update(fields)
    return merged


def aead_cost_per_byte(profile: CostProfile | None) -> float:
    merged = merge_profiles(default_cost_profile(), profile)
    return merged.get("aead", {}).get("per_byte_cost", DEFAULT_AEAD_COST_PER_BYTE)


def _kems(profile: CostProfile) -> list[KemDescriptor]:
    out = []
    for name, level, pk, ct, ss in KEM_PARAMETERS:
        kem = KemDescriptor(name, level, pk, ct, ss)
        out.append(replace(kem, **profile.get(name.lower(), {})))
    return out


def _sigs(profile: CostProfile) -> list[SigDescriptor]:
    out = []
    for name, level, pk, sig in SIG_PARAMETERS:
        desc = SigDescriptor(name, level, pk, sig)
        out.append(replace(desc, **profile.get(name.lower(), {})))
    return out


def registry_default(profile: CostProfile | None = None) -> list[SuiteDescriptor]:
    """All 72 KEM x signature suites, KEM-major in table order.

    *profile* overrides are applied on top of the shipped default costs.
    """
    merged = merge_profiles(default_cost_profile(), profile)
    return [SuiteDescriptor(kem, sig) for kem in _kems(merged) for sig in _sigs(merged)]


def with_overrides(suite: SuiteDescriptor, profile: CostProfile | None) -> SuiteDescriptor:
    if not profile:
        return suite
    kem = replace(suite.kem, **profile.get(suite.kem.name.lower(), {}))
    sig = replace(suite.sig, **profile.get(suite.sig.name.lower(), {}))
    return SuiteDescriptor(kem, sig)


def parse_suite_id(suite_id: str, registry: list[SuiteDescriptor] | None = None) -> SuiteDescriptor:
    registry = registry_default() if registry is None else registry
    key = suite_id.strip().lower()
    for suite in registry:
        if suite.id == key:
            return suite
    close = difflib.get_close_matches(key, [s.id for s in registry], n=3, cutoff=0.6)
    raise UnknownSuite(suite_id, close)


def find_algorithm(name: str) -> KemDescriptor | SigDescriptor:
    key = name.lower()
    for kem in _kems(default_cost_profile()):
        if kem.name.lower() == key:
            return kem
    for sig in _sigs(default_cost_profile()):
        if sig.name.lower() == key:
            return sig
    raise KeyError(f"unknown algorithm {name!r}")


# -- providers ---------------------------------------------------------------

@dataclass(frozen=True)
class Charge:
    op: str
    alg: str
    cost_us: float


class CryptoProvider(Protocol):
    """Operations the handshake needs; output lengths follow the descriptors."""

    def keygen(self, kem: KemDescriptor) -> tuple[bytes, bytes]: ...
    def encapsulate(self, kem: KemDescriptor, public_key: bytes) -> tuple[bytes, bytes]: ...
    def decapsulate(self, kem: KemDescriptor, secret_key: bytes, ciphertext: bytes) -> bytes: ...
    def sig_keygen(self, sig: SigDescriptor) -> tuple[bytes, bytes]: ...
    def sign(self, sig: SigDescriptor, secret_key: bytes, message: bytes) -> bytes: ...
    def verify(self, sig: SigDescriptor, public_key: bytes, message: bytes, signature: bytes) -> bool: ...


def _expand(label: bytes, data: bytes, n: int) -> bytes:
    return hashlib.shake_256(label + b"\x00" + data).digest(n)


class ModelProvider:
    """Deterministic stand-in for a PQC library.

    Emits bytes of the standardized lengths and records the configured cost
    of each primitive in ``charges``. Encapsulation and signatures are keyed
    hashes: the contracts hold (decaps recovers the encapsulated secret,
    verify rejects any altered message or signature) but there is no
    cryptographic security; a signature verifies under the first 32 bytes of
    the public key.
    """

    def __init__(self, suite_id: str, seed: int):
        self._label = f"{suite_id.lower()}|{seed}".encode()
        self._counter = 0
        self.charges: list[Charge] = []

    def _random(self, n: int) -> bytes:
        self._counter += 1
        return _expand(b"rand", self._label + self._counter.to_bytes(8, "big"), n)

    def _charge(self, op: str, alg: str, cost: float) -> None:
        self.charges.append(Charge(op, alg, cost))

    def drain(self) -> list[Charge]:
        out, self.charges = self.charges, []
        return out

    def keygen(self, kem):
        sk = self._random(32)
        self._charge("keygen", kem.name, kem.keygen_cost)
        return _expand(b"kem-pk", sk, kem.public_key_bytes), sk

    def encapsulate(self, kem, public_key):
        if len(public_key) != kem.public_key_bytes:
            raise ValueError(f"{kem.name}: public key must be {kem.public_key_bytes} bytes")
        r = self._random(32)
        ct = r + _expand(b"kem-ct", public_key + r, kem.ciphertext_bytes - 32)
        self._charge("encaps", kem.name, kem.encaps_cost)
        return ct, _expand(b"kem-ss", public_key + ct, kem.shared_secret_bytes)

    def decapsulate(self, kem, secret_key, ciphertext):
        if len(ciphertext) != kem.ciphertext_bytes:
            raise ValueError(f"{kem.name}: ciphertext must be {kem.ciphertext_bytes} bytes")
        pk = _expand(b"kem-pk", secret_key, kem.public_key_bytes)
        self._charge("decaps", kem.name, kem.decaps_cost)
        return _expand(b"kem-ss", pk + ciphertext, kem.shared_secret_bytes)

    def sig_keygen(self, sig):
        key = self._random(32)
        return key + _expand(b"sig-pk", key, sig.public_key_bytes - 32), key

    def _signature(self, sig, key: bytes, message: bytes) -> bytes:
        tag = hmac.new(key, sig.name.encode() + b"\x00" + message, hashlib.sha256).digest()
        return _expand(b"sig", tag, sig.signature_bytes)

    def sign(self, sig, secret_key, message):
        self._charge("sign", sig.name, sig.sign_cost)
        return self._signature(sig, secret_key, message)

    def verify(self, sig, public_key, message, signature):
        self._charge("verify", sig.name, sig.verify_cost)
        if len(signature) != sig.signature_bytes or len(public_key) != sig.public_key_bytes:
            return False
        return hmac.compare_digest(self._signature(sig, public_key[:32], message), signature)
