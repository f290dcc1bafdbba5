"""Remote attestation and key release between Security Kernel, IP Vendor and Data Owner.

All messages cross an untrusted proxy as ``tag(1) || session_id(8) || counter(8) || body``.
Unsealed messages (challenge, report) carry counter 0; sealed ones put the
whole 17-byte header under the MAC.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from . import crypto
from .crypto import KeyPair, SymKey
from .errors import (AttestationRefused, BadDeviceCert, BadReportSig, BadSessionCert,
                     BitstreamHashMismatch, BitstreamMismatch, ChannelTimeout, IntegrityError,
                     LoadError, NonceMismatch, ProtocolError, StaleCounterError, UnknownKernel)
from .shield.config import ShieldConfig, format_config, parse_config
from .trust_chain import CaRegistry, PortEvent, SecurityKernelContext, attest_message, monitor_event

MSG_CHALLENGE = 0x01
MSG_REPORT = 0x02
MSG_BITSTR_KEY = 0x03
MSG_LOAD_KEY = 0x04

_HEADER = struct.Struct(">B8sQ")
HEADER_LEN = _HEADER.size


class Peer(enum.Enum):
    VENDOR = 0x56
    KERNEL = 0x4B


def wire_pack(tag: int, session_id: bytes, counter: int, body: bytes) -> bytes:
    return _HEADER.pack(tag, session_id, counter) + body


def wire_unpack(wire: bytes, expect_tag: int):
    if len(wire) < HEADER_LEN:
        raise ProtocolError("message shorter than its header")
    tag, sid, counter = _HEADER.unpack_from(wire)
    if tag != expect_tag:
        raise ProtocolError(f"expected message type {expect_tag}, got {tag}")
    return sid, counter, wire[HEADER_LEN:]


# messages --------------------------------------------------------------------------

@dataclass(frozen=True)
class Challenge:
    nonce: bytes
    verif_public: bytes

    def to_bytes(self) -> bytes:
        return crypto.length_prefixed(self.nonce, self.verif_public)

    @classmethod
    def from_bytes(cls, data: bytes) -> Challenge:
        nonce, pub = crypto.split_length_prefixed(data, 2)
        if len(nonce) != 32:
            raise ProtocolError("challenge nonce must be 32 bytes")
        return cls(nonce, pub)


@dataclass(frozen=True)
class AttestationReport:
    nonce: bytes
    enc_bitstream_hash: bytes
    attest_public: bytes
    kernel_hash: bytes
    sigma_seckrnl: bytes

    def canonical(self) -> bytes:
        return crypto.length_prefixed(self.nonce, self.enc_bitstream_hash, self.attest_public,
                                      self.kernel_hash, self.sigma_seckrnl)

    @classmethod
    def from_bytes(cls, data: bytes) -> AttestationReport:
        return cls(*crypto.split_length_prefixed(data, 5))


@dataclass(frozen=True)
class ReportMessage:
    report: AttestationReport
    sigma_alpha: bytes
    sigma_session: bytes

    def to_bytes(self) -> bytes:
        return crypto.length_prefixed(self.report.canonical(), self.sigma_alpha, self.sigma_session)

    @classmethod
    def from_bytes(cls, data: bytes) -> ReportMessage:
        report, sa, ss = crypto.split_length_prefixed(data, 3)
        return cls(AttestationReport.from_bytes(report), sa, ss)


def session_binding(ch: Challenge, attest_public: bytes) -> bytes:
    """What sigma_session signs: the challenge and both public keys."""
    return crypto.hash(ch.to_bytes() + attest_public + ch.verif_public)


def derive_session_key(priv, peer_public: bytes) -> SymKey:
    return SymKey(crypto.kdf(crypto.key_exchange(priv, peer_public), b"session", 32))


@dataclass
class Session:
    """One end of the sealed channel.

    The IV of each sealed message is ``sender(1) || 000 || counter(8)``, so the
    two directions never share keystream.
    """

    session_key: SymKey
    peer: Peer
    session_id: bytes
    send_counter: int = 0
    recv_counter: int = 0

    @property
    def own_role(self) -> Peer:
        return Peer.KERNEL if self.peer is Peer.VENDOR else Peer.VENDOR

    @staticmethod
    def _iv(sender: Peer, counter: int) -> bytes:
        return bytes([sender.value, 0, 0, 0]) + struct.pack(">Q", counter)

    def seal(self, tag: int, body: bytes) -> bytes:
        self.send_counter += 1
        header = _HEADER.pack(tag, self.session_id, self.send_counter)
        return header + crypto.seal(self.session_key, self._iv(self.own_role, self.send_counter),
                                    body, header)

    def open(self, wire: bytes, tag: int) -> bytes:
        sid, counter, blob = wire_unpack(wire, tag)
        if sid != self.session_id:
            raise ProtocolError("message for a different session")
        header = wire[:HEADER_LEN]
        body = crypto.unseal(self.session_key, self._iv(self.peer, counter), blob, header)
        if counter <= self.recv_counter:
            raise StaleCounterError(f"counter {counter} already consumed")
        self.recv_counter = counter
        return body


# bitstream ---------------------------------------------------------------------------

_BITSTREAM_HEADER = b"accelerator-bitstream"


@dataclass(frozen=True)
class EncryptedBitstream:
    iv: bytes
    sealed: bytes   # ciphertext || tag

    @property
    def blob(self) -> bytes:
        return self.iv + self.sealed

    def digest(self) -> bytes:
        return crypto.hash(self.blob)


@dataclass
class LoadedAccelerator:
    descriptor: bytes
    shield_keypair: KeyPair
    shield_config: ShieldConfig


def encrypt_bitstream(bitstr_key: SymKey, descriptor: bytes, shield_keypair: KeyPair,
                      config: ShieldConfig, iv: bytes) -> EncryptedBitstream:
    payload = crypto.length_prefixed(descriptor, shield_keypair.private_bytes,
                                     format_config(config).encode())
    return EncryptedBitstream(iv, crypto.seal(bitstr_key, iv, payload, _BITSTREAM_HEADER))


def decrypt_bitstream(bitstr_key: SymKey, enc_bs: EncryptedBitstream) -> LoadedAccelerator:
    payload = crypto.unseal(bitstr_key, enc_bs.iv, enc_bs.sealed, _BITSTREAM_HEADER)
    descriptor, priv, cfg_text = crypto.split_length_prefixed(payload, 3)
    scalar = int.from_bytes(priv, "big")
    keypair = KeyPair(scalar, crypto.keypair_public(scalar))
    return LoadedAccelerator(descriptor, keypair, parse_config(cfg_text.decode()))


# actors ------------------------------------------------------------------------------

@dataclass
class IpVendor:
    """Holds the accelerator secrets and the state of open challenges."""

    registry: CaRegistry
    bitstr_key: SymKey
    shield_keypair: KeyPair
    config: ShieldConfig
    descriptor: bytes = b"accelerator"
    open_challenges: dict = field(default_factory=dict)   # nonce -> (Challenge, KeyPair)
    consumed: set = field(default_factory=set)
    last_nonce: bytes | None = None
    verified_serial: int | None = None

    @classmethod
    def create(cls, registry: CaRegistry, config: ShieldConfig, rng,
               descriptor: bytes = b"accelerator") -> IpVendor:
        return cls(registry, SymKey(rng.randbytes(32)),
                   crypto.keypair_from_seed(rng.randbytes(32)), config, descriptor)

    def build_bitstream(self, rng) -> EncryptedBitstream:
        return encrypt_bitstream(self.bitstr_key, self.descriptor, self.shield_keypair,
                                 self.config, rng.randbytes(crypto.IV_LEN))

    @property
    def shield_public(self) -> bytes:
        return self.shield_keypair.public


@dataclass
class DataOwner:
    owner_id: int
    dek: SymKey | None = None
    load_counter: int = 0


@dataclass(frozen=True)
class LoadKeyEnvelope:
    owner_id: int
    index: int
    ciphertext: bytes

    def header(self) -> bytes:
        return _HEADER.pack(MSG_LOAD_KEY, self.owner_id.to_bytes(8, "big"), self.index)

    def to_wire(self) -> bytes:
        return self.header() + self.ciphertext

    @classmethod
    def from_wire(cls, wire: bytes) -> LoadKeyEnvelope:
        sid, counter, body = wire_unpack(wire, MSG_LOAD_KEY)
        return cls(int.from_bytes(sid, "big"), counter, body)


# protocol steps ----------------------------------------------------------------------

def vendor_begin(vendor: IpVendor, rng) -> Challenge:
    nonce = rng.randbytes(32)
    verif = crypto.keypair_from_seed(rng.randbytes(32))
    ch = Challenge(nonce, verif.public)
    vendor.open_challenges[nonce] = (ch, verif)
    vendor.last_nonce = nonce
    return ch


def kernel_attest(ctx: SecurityKernelContext, ch: Challenge,
                  enc_bs: EncryptedBitstream) -> tuple[ReportMessage, Session]:
    if not ctx.port_state.clean:
        raise AttestationRefused("port monitor reports tampering; refusing to attest")
    kp = ctx.attest_keypair
    report = AttestationReport(ch.nonce, enc_bs.digest(), kp.public, ctx.kernel_hash,
                               ctx.sigma_seckrnl)
    session_key = derive_session_key(kp, ch.verif_public)
    binding = session_binding(ch, kp.public)
    msg = ReportMessage(report, crypto.sign(kp, report.canonical()), crypto.sign(kp, binding))
    session = Session(session_key, Peer.VENDOR, binding[:8])
    ctx.session = session
    ctx.attested_bitstream_hash = report.enc_bitstream_hash
    return msg, session


def vendor_verify(vendor: IpVendor, msg: ReportMessage, registry: CaRegistry,
                  expected_bitstream_hash: bytes) -> Session:
    """Run the six checks in order; raise the first failure.

    The report does not name the device, so check 1 accepts a certificate
    from any registered device key. The open challenge is consumed whatever
    the outcome, so a report can be accepted at most once.
    """
    rep = msg.report
    nonce = vendor.last_nonce
    if nonce is None or nonce not in vendor.open_challenges:
        raise NonceMismatch("no open challenge")
    ch, verif = vendor.open_challenges.pop(nonce)
    vendor.consumed.add(nonce)

    cert_msg = attest_message(rep.kernel_hash, rep.attest_public)
    serial = next((s for s, pub in sorted(registry.devices.items())
                   if crypto.verify(pub, cert_msg, rep.sigma_seckrnl)), None)
    if serial is None:
        raise BadDeviceCert("sigma_SecKrnl does not verify under any registered device key")
    if not registry.is_trusted_kernel(rep.kernel_hash):
        raise UnknownKernel("security kernel hash is not on the trusted list")
    if not crypto.verify(rep.attest_public, rep.canonical(), msg.sigma_alpha):
        raise BadReportSig("report signature does not verify under AttestKey")
    if not crypto.tags_equal(rep.nonce, ch.nonce):
        raise NonceMismatch("report nonce does not match the challenge")
    if not crypto.tags_equal(rep.enc_bitstream_hash, expected_bitstream_hash):
        raise BitstreamMismatch("attested bitstream is not the vendor's")
    binding = session_binding(ch, rep.attest_public)
    if not crypto.verify(rep.attest_public, binding, msg.sigma_session):
        raise BadSessionCert("session certificate does not verify")
    session_key = derive_session_key(verif, rep.attest_public)
    vendor.verified_serial = serial
    return Session(session_key, Peer.KERNEL, binding[:8])


def vendor_release_key(session: Session, bitstr_key: SymKey) -> bytes:
    return session.seal(MSG_BITSTR_KEY, bitstr_key.raw)


def kernel_load_bitstream(ctx: SecurityKernelContext, sealed_key_msg: bytes,
                          enc_bs: EncryptedBitstream) -> LoadedAccelerator:
    if ctx.session is None:
        raise ProtocolError("no attested session")
    key = SymKey(ctx.session.open(sealed_key_msg, MSG_BITSTR_KEY))
    if enc_bs.digest() != ctx.attested_bitstream_hash:
        raise BitstreamHashMismatch("bitstream differs from the attested one")
    try:
        loaded = decrypt_bitstream(key, enc_bs)
    except IntegrityError as exc:
        raise LoadError(f"bitstream authentication failed: {exc}") from exc
    monitor_event(ctx, PortEvent.PARTIAL_RECONFIG, authorized=True)
    return loaded


def owner_provision(owner: DataOwner, shield_public: bytes, rng) -> tuple[SymKey, LoadKeyEnvelope]:
    dek = SymKey(rng.randbytes(32))
    owner.load_counter += 1
    env = LoadKeyEnvelope(owner.owner_id, owner.load_counter, b"")
    ct = crypto.asym_encrypt(shield_public, dek.raw, rng, aad=env.header())
    owner.dek = dek
    return dek, LoadKeyEnvelope(owner.owner_id, owner.load_counter, ct)


def shield_unwrap(shield_priv, envelope: LoadKeyEnvelope) -> SymKey:
    return SymKey(crypto.asym_decrypt(shield_priv, envelope.ciphertext, aad=envelope.header()))


# proxy channel ---------------------------------------------------------------------------

class ProxyChannel:
    """The untrusted host relaying every message.

    ``hook(index, wire)`` may return a list of wires to deliver in place of
    the original (empty list = drop). Everything sent and delivered is kept
    for the transcript.
    """

    def __init__(self, hook=None):
        self.hook = hook
        self.queue: list[bytes] = []
        self.sent: list[bytes] = []
        self.delivered: list[bytes] = []
        self.relayed: list[bytes] = []

    def relay(self, blob: bytes) -> None:
        """Record bulk data the host passes along outside the message queue."""
        self.relayed.append(blob)

    def send(self, wire: bytes) -> None:
        index = len(self.sent)
        self.sent.append(wire)
        out = [wire] if self.hook is None else list(self.hook(index, wire, self))
        self.queue.extend(out)

    def recv(self) -> bytes:
        if not self.queue:
            raise ChannelTimeout("no message arrived")
        wire = self.queue.pop(0)
        self.delivered.append(wire)
        return wire

    def transcript(self) -> list[bytes]:
        return self.sent + self.delivered + self.relayed

    def transcript_hex(self) -> str:
        lines = ([f"> {w.hex()}" for w in self.sent] + [f"< {w.hex()}" for w in self.delivered]
                 + [f"= {w.hex()}" for w in self.relayed])
        return "\n".join(lines) + "\n"


def drop_message(k: int):
    return lambda i, w, ch: [] if i == k else [w]


def flip_bit(k: int, bit: int):
    def hook(i, w, ch):
        if i != k:
            return [w]
        pos = (bit // 8) % len(w)
        return [w[:pos] + bytes([w[pos] ^ (1 << (bit % 8))]) + w[pos + 1:]]
    return hook


def replay_message(k: int):
    """Deliver message ``k`` twice."""
    return lambda i, w, ch: [w, w] if i == k else [w]


def replace_with_earlier(k: int, earlier: int):
    return lambda i, w, ch: [ch.sent[earlier]] if i == k else [w]


# orchestration ----------------------------------------------------------------------------

@dataclass
class ProtocolOutcome:
    ok: bool
    error: Exception | None = None
    stage: str = ""
    kernel_session: Session | None = None
    vendor_session: Session | None = None
    loaded: LoadedAccelerator | None = None
    dek: SymKey | None = None
    shield_dek: SymKey | None = None
    transcript: list = field(default_factory=list)

    @property
    def keys_agree(self) -> bool:
        return (self.kernel_session is not None and self.vendor_session is not None
                and self.kernel_session.session_key == self.vendor_session.session_key)


def run_protocol(ctx: SecurityKernelContext, vendor: IpVendor, owner: DataOwner,
                 channel: ProxyChannel, rng, enc_bs: EncryptedBitstream | None = None,
                 host_bitstream=None) -> ProtocolOutcome:
    """Challenge, report, key release, bitstream load and load-key provisioning.

    ``host_bitstream`` lets the untrusted host substitute the bitstream it
    hands to the kernel after attestation.
    """
    from .errors import TeeError
    out = ProtocolOutcome(False)
    enc_bs = enc_bs or vendor.build_bitstream(rng)
    stage = "challenge"
    try:
        ch = vendor_begin(vendor, rng)
        channel.send(wire_pack(MSG_CHALLENGE, bytes(8), 0, ch.to_bytes()))
        sid, counter, body = wire_unpack(channel.recv(), MSG_CHALLENGE)
        if sid != bytes(8) or counter != 0:
            raise ProtocolError("challenge header must carry a zero session id and counter")
        ch_k = Challenge.from_bytes(body)

        stage = "attest"
        msg, k_sess = kernel_attest(ctx, ch_k, enc_bs)
        out.kernel_session = k_sess
        channel.send(wire_pack(MSG_REPORT, k_sess.session_id, 0, msg.to_bytes()))
        sid, counter, body = wire_unpack(channel.recv(), MSG_REPORT)

        stage = "verify"
        v_sess = vendor_verify(vendor, ReportMessage.from_bytes(body), vendor.registry,
                               enc_bs.digest())
        # the header is not signed; it must agree with the verified binding
        if sid != v_sess.session_id or counter != 0:
            raise ProtocolError("report header does not match the attested session")
        out.vendor_session = v_sess

        stage = "load"
        channel.send(vendor_release_key(v_sess, vendor.bitstr_key))
        channel.relay(enc_bs.blob)
        given = host_bitstream(enc_bs) if host_bitstream else enc_bs
        out.loaded = kernel_load_bitstream(ctx, channel.recv(), given)

        stage = "provision"
        # vendor -> owner hand-off of the Shield public key is an authenticated channel
        dek, env = owner_provision(owner, vendor.shield_public, rng)
        out.dek = dek
        channel.send(env.to_wire())
        out.shield_dek = shield_unwrap(out.loaded.shield_keypair,
                                       LoadKeyEnvelope.from_wire(channel.recv()))
        out.ok = out.shield_dek == dek
        out.stage = "done"
    except TeeError as exc:
        out.error, out.stage = exc, stage
    out.transcript = channel.transcript()
    return out
