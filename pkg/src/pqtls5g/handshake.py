"""TLS 1.3-style handshake over pluggable KEM and signature primitives.

Message flow::

    client                                   server
    ClientHello (key shares)      -------->
                                  <--------  ServerHello (KEM ciphertext)
                                             Certificate
                                             CertificateVerify
                                             Finished
    Finished                      -------->

The client generates one KEM key pair per distinct offered KEM; the server
encapsulates against the share of the suite it picks. Message bodies are real
byte strings with declared framing overheads so that tampering and byte
accounting both work on the same data.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
from dataclasses import dataclass, field

from .suites import CryptoProvider, KemDescriptor, SigDescriptor, SuiteDescriptor

HASH_LEN = 32
AEAD_TAG_BYTES = 16
MAX_RECORD_PLAINTEXT = 16384
CIPHER_SUITE = "TLS_AES_128_GCM_SHA256"


class MessageKind(enum.Enum):
    CLIENT_HELLO = "ClientHello"
    SERVER_HELLO = "ServerHello"
    CERTIFICATE = "Certificate"
    CERTIFICATE_VERIFY = "CertificateVerify"
    FINISHED = "Finished"
    ALERT = "Alert"


class Direction(enum.Enum):
    CLIENT_TO_SERVER = "ClientToServer"
    SERVER_TO_CLIENT = "ServerToClient"


@dataclass(frozen=True)
class FramingConfig:
    """Fixed per-message overheads in bytes (no TLS record-level realism)."""

    client_hello_base: int = 128
    server_hello_base: int = 64
    certificate_base: int = 256
    certificate_verify_base: int = 8
    finished_base: int = 4
    key_share_header: int = 4
    alert_bytes: int = 2

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.certificate_verify_base < 4:
            raise ValueError("certificate_verify_base must hold at least a 4-byte header")


@dataclass(frozen=True, eq=False)
class HandshakeMessage:
    kind: MessageKind
    direction: Direction
    parts: tuple[tuple[str, bytes], ...]
    logical_contents: dict = field(default_factory=dict)

    @property
    def body(self) -> bytes:
        return b"".join(data for _, data in self.parts)

    @property
    def payload_bytes(self) -> int:
        return sum(len(data) for _, data in self.parts)

    def part(self, name: str) -> bytes:
        for label, data in self.parts:
            if label == name:
                return data
        raise KeyError(name)

    def tampered(self, index: int, mask: int = 0x01) -> "HandshakeMessage":
        """Copy with the byte at *index* of the body XORed with *mask*."""
        if not 0 <= index < self.payload_bytes:
            raise IndexError(index)
        offset = 0
        parts = []
        for label, data in self.parts:
            if offset <= index < offset + len(data):
                buf = bytearray(data)
                buf[index - offset] ^= mask
                data = bytes(buf)
            parts.append((label, data))
            offset += len(data)
        return HandshakeMessage(self.kind, self.direction, tuple(parts), dict(self.logical_contents))

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "direction": self.direction.value,
                "bytes": self.payload_bytes, **self.logical_contents}


@dataclass
class HandshakeTranscript:
    suite: SuiteDescriptor | None
    messages: list[HandshakeMessage]
    session_key: bytes | None = None
    server_session_key: bytes | None = None
    completed: bool = False
    alert: str | None = None

    @property
    def kinds(self) -> list[MessageKind]:
        return [m.kind for m in self.messages]


@dataclass
class ServerConfig:
    supported_suites: list[SuiteDescriptor]
    certificate_chain_length: int = 1

    def __post_init__(self):
        if not self.supported_suites:
            raise ValueError("server must support at least one suite")
        if self.certificate_chain_length < 1:
            raise ValueError("certificate chain needs at least one element")


class HandshakeError(Exception):
    """Handshake failure; ``alert`` is the Alert message to put on the wire, if any."""

    description = "internal_error"

    def __init__(self, message: str = "", alert: HandshakeMessage | None = None):
        super().__init__(message or self.description)
        self.alert = alert


class EmptyOffer(HandshakeError, ValueError):
    description = "empty_offer"


class ProtocolError(HandshakeError):
    description = "unexpected_message"


class NoCommonSuite(HandshakeError):
    description = "handshake_failure"


class BadCertificateSignature(HandshakeError):
    description = "bad_certificate"


class BadCertVerify(HandshakeError):
    description = "decrypt_error"


class BadFinished(HandshakeError):
    description = "decrypt_error"


class IncompleteTranscript(HandshakeError):
    description = "incomplete_transcript"


_ALERT_CODES = {"handshake_failure": 40, "bad_certificate": 42, "decrypt_error": 51,
                "unexpected_message": 10, "internal_error": 80}


def alert_message(description: str, direction: Direction, framing: FramingConfig = FramingConfig()) -> HandshakeMessage:
    code = _ALERT_CODES.get(description, 80)
    body = bytes([2, code]) + bytes(max(0, framing.alert_bytes - 2))
    return HandshakeMessage(MessageKind.ALERT, direction, (("alert", body[: framing.alert_bytes]),),
                            {"description": description})


def _fail(exc_type, message: str, direction: Direction, framing: FramingConfig) -> HandshakeError:
    return exc_type(message, alert_message(exc_type.description, direction, framing))


def transcript_hash(messages) -> bytes:
    h = hashlib.sha256()
    for m in messages:
        body = m.body
        h.update(m.kind.value.encode())
        h.update(len(body).to_bytes(4, "big"))
        h.update(body)
    return h.digest()


def derive_session_key(shared_secret: bytes, transcript_digest: bytes, kem: KemDescriptor | None = None) -> bytes:
    """HKDF-SHA256 style extract/expand to a 32-byte traffic secret."""
    if kem is not None and len(shared_secret) != kem.shared_secret_bytes:
        raise ProtocolError(f"{kem.name}: shared secret is {len(shared_secret)} bytes, "
                            f"expected {kem.shared_secret_bytes}")
    prk = hmac.new(b"\x00" * HASH_LEN, shared_secret, hashlib.sha256).digest()
    return hmac.new(prk, b"tls13 session key" + transcript_digest + b"\x01", hashlib.sha256).digest()


def _finished_mac(session_key: bytes, label: bytes, messages) -> bytes:
    finished_key = hmac.new(session_key, b"tls13 finished " + label, hashlib.sha256).digest()
    return hmac.new(finished_key, transcript_hash(messages), hashlib.sha256).digest()


def _finished_header(framing: FramingConfig) -> bytes:
    # handshake type 20 and a 24-bit length, cut or padded to the configured base
    raw = bytes([20]) + (32).to_bytes(3, "big")
    return raw[: framing.finished_base].ljust(framing.finished_base, b"\x00")


def _filler(label: bytes, material: bytes, n: int) -> bytes:
    return hashlib.shake_256(label + b"\x00" + material).digest(n)


_CV_CONTEXT = b" " * 64 + b"TLS 1.3, server CertificateVerify\x00"


def _group_code(kem: KemDescriptor) -> bytes:
    return (0x0200 + sum(kem.name.encode()) % 0xFF).to_bytes(2, "big")


class ClientHandshake:
    """Client side: builds the ClientHello, verifies the server flight, sends Finished."""

    def __init__(self, provider: CryptoProvider, framing: FramingConfig = FramingConfig()):
        self.provider = provider
        self.framing = framing
        self.offered: list[SuiteDescriptor] = []
        self.messages: list[HandshakeMessage] = []
        self.session_key: bytes | None = None
        self.suite: SuiteDescriptor | None = None
        self._kem_secrets: dict[str, bytes] = {}

    def client_hello(self, offered: list[SuiteDescriptor]) -> HandshakeMessage:
        if not offered:
            raise EmptyOffer("ClientHello needs at least one offered suite")
        self.offered = list(offered)
        kems: dict[str, KemDescriptor] = {}
        sigs: list[str] = []
        for suite in offered:
            kems.setdefault(suite.kem.name, suite.kem)
            if suite.sig.name not in sigs:
                sigs.append(suite.sig.name)
        shares = []
        for kem in kems.values():
            pk, sk = self.provider.keygen(kem)
            self._kem_secrets[kem.name] = sk
            header = _group_code(kem) + len(pk).to_bytes(2, "big")
            header = header[: self.framing.key_share_header].ljust(self.framing.key_share_header, b"\x00")
            shares += [(f"key_share_header:{kem.name}", header), (f"key_share:{kem.name}", pk)]
        base = _filler(b"client random", b"".join(d for _, d in shares), self.framing.client_hello_base)
        msg = HandshakeMessage(
            MessageKind.CLIENT_HELLO, Direction.CLIENT_TO_SERVER, (("base", base), *shares),
            {"offered": [s.id for s in offered], "key_shares": list(kems), "signature_algorithms": sigs,
             "cipher_suites": [CIPHER_SUITE]},
        )
        self.messages = [msg]
        return msg

    def _abort(self, exc_type, message: str) -> HandshakeError:
        return _fail(exc_type, message, Direction.CLIENT_TO_SERVER, self.framing)

    def client_finish(self, server_flight: list[HandshakeMessage]) -> HandshakeMessage:
        if server_flight and server_flight[0].kind is MessageKind.ALERT:
            raise NoCommonSuite(server_flight[0].logical_contents.get("description", "server alert"))
        expected = [MessageKind.SERVER_HELLO, MessageKind.CERTIFICATE,
                    MessageKind.CERTIFICATE_VERIFY, MessageKind.FINISHED]
        if [m.kind for m in server_flight] != expected:
            raise self._abort(ProtocolError, "server flight out of order")
        sh, cert, cv, fin = server_flight
        chosen = sh.logical_contents.get("suite")
        suite = next((s for s in self.offered if s.id == chosen), None)
        if suite is None:
            raise self._abort(ProtocolError, f"server chose a suite that was not offered: {chosen!r}")
        self.suite = suite
        kem, sig = suite.kem, suite.sig

        ct = sh.part("key_share")
        if len(ct) != kem.ciphertext_bytes:
            raise self._abort(ProtocolError, "ciphertext length mismatch")
        shared = self.provider.decapsulate(kem, self._kem_secrets[kem.name], ct)
        history = self.messages + [sh]
        self.session_key = derive_session_key(shared, transcript_hash(history), kem)

        chain = cert.logical_contents["chain_length"]
        pks = [cert.part(f"cert_pk:{i}") for i in range(chain)]
        for i in range(chain):
            issuer_pk = pks[i + 1] if i + 1 < chain else pks[i]
            tbs = cert.part(f"cert_tbs:{i}") + pks[i]
            if not self.provider.verify(sig, issuer_pk, tbs, cert.part(f"cert_sig:{i}")):
                raise self._abort(BadCertificateSignature, f"certificate {i} signature invalid")
        history.append(cert)
        if not self.provider.verify(sig, pks[0], _CV_CONTEXT + transcript_hash(history), cv.part("cv_sig")):
            raise self._abort(BadCertVerify, "CertificateVerify signature invalid")
        history.append(cv)
        if fin.part("fin_header") != _finished_header(self.framing):
            raise self._abort(BadFinished, "server Finished header malformed")
        if not hmac.compare_digest(_finished_mac(self.session_key, b"server", history), fin.part("verify_data")):
            raise self._abort(BadFinished, "server Finished MAC mismatch")
        history.append(fin)

        mac = _finished_mac(self.session_key, b"client", history)
        msg = HandshakeMessage(
            MessageKind.FINISHED, Direction.CLIENT_TO_SERVER,
            (("fin_header", _finished_header(self.framing)), ("verify_data", mac)),
            {"sender": "client"},
        )
        self.messages = history + [msg]
        return msg


class ServerHandshake:
    """Server side: picks a suite, answers with SH/Certificate/CV/Finished."""

    def __init__(self, config: ServerConfig, provider: CryptoProvider, framing: FramingConfig = FramingConfig()):
        self.config = config
        self.provider = provider
        self.framing = framing
        self.messages: list[HandshakeMessage] = []
        self.session_key: bytes | None = None
        self.suite: SuiteDescriptor | None = None
        self.completed = False
        self._chains = {}
        for suite in config.supported_suites:
            if suite.sig.name not in self._chains:
                self._chains[suite.sig.name] = self._provision(suite.sig)
        # certificates are issued offline; their signing cost is not part of a session
        drain = getattr(provider, "drain", None)
        if drain is not None:
            drain()

    def _provision(self, sig: SigDescriptor):
        n = self.config.certificate_chain_length
        keys = [self.provider.sig_keygen(sig) for _ in range(n)]
        elements = []
        for i, (pk, _) in enumerate(keys):
            tbs = _filler(b"certificate tbs", pk + bytes([i]), self.framing.certificate_base)
            issuer_sk = keys[i + 1][1] if i + 1 < n else keys[i][1]
            elements.append((tbs, pk, self.provider.sign(sig, issuer_sk, tbs + pk)))
        return elements, keys[0][1]

    def _abort(self, exc_type, message: str) -> HandshakeError:
        return _fail(exc_type, message, Direction.SERVER_TO_CLIENT, self.framing)

    def server_respond(self, ch: HandshakeMessage) -> list[HandshakeMessage]:
        if ch.kind is not MessageKind.CLIENT_HELLO:
            raise self._abort(ProtocolError, f"expected ClientHello, got {ch.kind.value}")
        offered = set(ch.logical_contents.get("offered", []))
        suite = next((s for s in self.config.supported_suites if s.id in offered), None)
        if suite is None:
            raise self._abort(NoCommonSuite, "no offered suite is supported")
        self.suite = suite
        kem, sig = suite.kem, suite.sig
        try:
            pk = ch.part(f"key_share:{kem.name}")
        except KeyError:
            raise self._abort(ProtocolError, f"missing key share for {kem.name}") from None

        ct, shared = self.provider.encapsulate(kem, pk)
        base = _filler(b"server random", ct[:32], self.framing.server_hello_base)
        sh = HandshakeMessage(
            MessageKind.SERVER_HELLO, Direction.SERVER_TO_CLIENT, (("base", base), ("key_share", ct)),
            {"suite": suite.id, "cipher_suite": CIPHER_SUITE, "group": kem.name},
        )
        history = [ch, sh]
        self.session_key = derive_session_key(shared, transcript_hash(history), kem)

        elements, leaf_sk = self._chains[sig.name]
        parts = []
        for i, (tbs, pk_i, sig_i) in enumerate(elements):
            parts += [(f"cert_tbs:{i}", tbs), (f"cert_pk:{i}", pk_i), (f"cert_sig:{i}", sig_i)]
        cert = HandshakeMessage(MessageKind.CERTIFICATE, Direction.SERVER_TO_CLIENT, tuple(parts),
                                {"chain_length": len(elements), "signature": sig.name})
        history.append(cert)

        signature = self.provider.sign(sig, leaf_sk, _CV_CONTEXT + transcript_hash(history))
        header = (sum(sig.name.encode()) & 0xFFFF).to_bytes(2, "big") + len(signature).to_bytes(2, "big")
        cv = HandshakeMessage(
            MessageKind.CERTIFICATE_VERIFY, Direction.SERVER_TO_CLIENT,
            (("cv_header", header.ljust(self.framing.certificate_verify_base, b"\x00")), ("cv_sig", signature)),
            {"signature": sig.name},
        )
        history.append(cv)
        fin = HandshakeMessage(
            MessageKind.FINISHED, Direction.SERVER_TO_CLIENT,
            (("fin_header", _finished_header(self.framing)),
             ("verify_data", _finished_mac(self.session_key, b"server", history))),
            {"sender": "server"},
        )
        history.append(fin)
        self.messages = history
        return [sh, cert, cv, fin]

    def server_finish(self, client_finished: HandshakeMessage) -> None:
        if client_finished.kind is not MessageKind.FINISHED:
            raise self._abort(ProtocolError, f"expected Finished, got {client_finished.kind.value}")
        if client_finished.part("fin_header") != _finished_header(self.framing):
            raise self._abort(BadFinished, "client Finished header malformed")
        expected = _finished_mac(self.session_key, b"client", self.messages)
        if not hmac.compare_digest(expected, client_finished.part("verify_data")):
            raise self._abort(BadFinished, "client Finished MAC mismatch")
        self.messages.append(client_finished)
        self.completed = True


def transcript_of(client: ClientHandshake, server: ServerHandshake) -> HandshakeTranscript:
    return HandshakeTranscript(
        suite=server.suite,
        messages=list(server.messages) if server.completed else list(client.messages),
        session_key=client.session_key,
        server_session_key=server.session_key,
        completed=server.completed and client.session_key == server.session_key,
    )


def run_handshake(
    suite: SuiteDescriptor,
    provider: CryptoProvider,
    server_config: ServerConfig | None = None,
    framing: FramingConfig = FramingConfig(),
    offered: list[SuiteDescriptor] | None = None,
) -> HandshakeTranscript:
    """Run the whole exchange in memory (no network); raises on failure."""
    server = ServerHandshake(server_config or ServerConfig([suite]), provider, framing)
    client = ClientHandshake(provider, framing)
    ch = client.client_hello(offered or [suite])
    flight = server.server_respond(ch)
    fin = client.client_finish(flight)
    server.server_finish(fin)
    return transcript_of(client, server)


def transcript_total_bytes(t: HandshakeTranscript) -> tuple[int, int]:
    """Handshake payload bytes sent by (client, server)."""
    if not t.completed:
        raise IncompleteTranscript("transcript is not complete")
    tx_client = sum(m.payload_bytes for m in t.messages if m.direction is Direction.CLIENT_TO_SERVER)
    tx_server = sum(m.payload_bytes for m in t.messages if m.direction is Direction.SERVER_TO_CLIENT)
    return tx_client, tx_server


def record_sizes(payload_bytes: int, max_plaintext: int = MAX_RECORD_PLAINTEXT) -> list[int]:
    """Protected record sizes for an application payload (plaintext + AEAD tag each)."""
    if payload_bytes < 0:
        raise ValueError("payload_bytes must be non-negative")
    full, rest = divmod(payload_bytes, max_plaintext)
    sizes = [max_plaintext + AEAD_TAG_BYTES] * full
    if rest:
        sizes.append(rest + AEAD_TAG_BYTES)
    return sizes
