"""Secured register interface between the host and the accelerator.

Envelope wire format::

    dir(1) || addr(4) || seq(8) || ciphertext || tag(16)

``dir`` is 0x01 for host-to-accelerator and 0x02 for accelerator-to-host. The
CTR IV is ``dir || 000 || seq``, so each direction has its own IV space, and
the MAC (HMAC) covers the 13-byte header plus the ciphertext. In plain mode
``addr`` is the register index and the ciphertext holds the 4-byte value. In
encaddr mode every envelope uses the common mailbox address and the
ciphertext holds ``op(1) || index(2) || value(4)``.
"""

from __future__ import annotations

import struct

from .. import crypto
from ..errors import RegisterError, StaleCounterError
from ..sim.stats import REGISTER_SET
from .config import RegisterMode, ShieldConfig

HOST_TO_ACCEL = 0x01
ACCEL_TO_HOST = 0x02
MAILBOX_ADDR = 0xFFFFFFFF
OP_WRITE = 0x57  # "W"
OP_READ = 0x52   # "R"
_HEADER = struct.Struct(">BIQ")


def register_keys(dek: bytes, instance: int = 0) -> tuple[bytes, bytes]:
    info = struct.pack(">Q", instance)
    return crypto.kdf(dek, b"reg-enc" + info, 16), crypto.kdf(dek, b"reg-mac" + info, 32)


def _iv(direction: int, seq: int) -> bytes:
    return bytes([direction, 0, 0, 0]) + struct.pack(">Q", seq)


def seal_envelope(k_enc: bytes, k_mac: bytes, direction: int, addr: int, seq: int,
                  body: bytes, tracker=None) -> bytes:
    header = _HEADER.pack(direction, addr, seq)
    iv = _iv(direction, seq)
    if tracker is not None:
        tracker.record(crypto.hash(b"subkey-id" + k_enc)[:8], iv)
    ct = crypto.ctr_encrypt(k_enc, iv, 0, body)
    return header + ct + crypto.mac_hmac(k_mac, header + ct)


def open_envelope(k_enc: bytes, k_mac: bytes, wire: bytes, direction: int):
    """Return ``(addr, seq, body)`` or raise RegisterError."""
    if len(wire) < _HEADER.size + crypto.TAG_LEN:
        raise RegisterError("register envelope too short")
    header, ct, tag = wire[:_HEADER.size], wire[_HEADER.size:-crypto.TAG_LEN], wire[-crypto.TAG_LEN:]
    if not crypto.tags_equal(tag, crypto.mac_hmac(k_mac, header + ct)):
        raise RegisterError("register envelope authentication failed")
    d, addr, seq = _HEADER.unpack(header)
    if d != direction:
        raise RegisterError("register envelope has the wrong direction")
    return addr, seq, crypto.ctr_encrypt(k_enc, _iv(d, seq), 0, ct)


class RegisterFile:
    """Accelerator-side plaintext registers plus the Shield's sealing logic."""

    def __init__(self, cfg: ShieldConfig, dek: bytes, state=None, instance: int = 0):
        self.count = cfg.register_count
        self.mode = cfg.register_mode
        self.values = [0] * self.count
        self.k_enc, self.k_mac = register_keys(dek, instance)
        self.host_seq_in = 0     # last accepted host sequence number
        self.host_seq_out = 0    # last sequence number sent to the host
        self._state = state

    def _account(self, body_len: int) -> None:
        if self._state is None or self._state._quiet:
            return
        st = self._state.stats[REGISTER_SET]
        st.register_ops += 1
        st.aes_bytes += crypto.BLOCK
        st.mac_bytes += _HEADER.size + body_len
        st.mac_ops += 1

    def _tracker(self):
        return None if self._state is None else self._state.iv_tracker

    def _check_index(self, idx: int) -> None:
        if not 0 <= idx < self.count:
            raise RegisterError(f"register index {idx} out of range (0..{self.count - 1})")

    # host side ---------------------------------------------------------------------

    def host_write(self, wire: bytes) -> None:
        addr, seq, body = open_envelope(self.k_enc, self.k_mac, wire, HOST_TO_ACCEL)
        if seq <= self.host_seq_in:
            raise StaleCounterError(f"register envelope seq {seq} already consumed")
        if self.mode is RegisterMode.ENCRYPTED_ADDRESS:
            if addr != MAILBOX_ADDR or len(body) != 7 or body[0] != OP_WRITE:
                raise RegisterError("malformed mailbox envelope")
            idx, value = struct.unpack(">HI", body[1:])
        else:
            if len(body) != 4:
                raise RegisterError("malformed register envelope")
            idx, (value,) = addr, struct.unpack(">I", body)
        self._check_index(idx)
        self.host_seq_in = seq
        self.values[idx] = value
        self._account(len(body))

    def host_read(self, idx: int) -> bytes:
        self._check_index(idx)
        self.host_seq_out += 1
        value = struct.pack(">I", self.values[idx])
        if self.mode is RegisterMode.ENCRYPTED_ADDRESS:
            addr, body = MAILBOX_ADDR, bytes([OP_READ]) + struct.pack(">H", idx) + value
        else:
            addr, body = idx, value
        self._account(len(body))
        return seal_envelope(self.k_enc, self.k_mac, ACCEL_TO_HOST, addr, self.host_seq_out,
                             body, self._tracker())

    # accelerator side: plaintext, no crypto ------------------------------------------

    def accel_read(self, idx: int) -> int:
        self._check_index(idx)
        return self.values[idx]

    def accel_write(self, idx: int, value: int) -> None:
        self._check_index(idx)
        self.values[idx] = value & 0xFFFFFFFF


class RegisterClient:
    """The Data Owner's end of the register channel (holds the same DEK)."""

    def __init__(self, dek, mode: RegisterMode = RegisterMode.PLAIN, instance: int = 0,
                 tracker=None):
        raw = dek.raw if isinstance(dek, crypto.SymKey) else bytes(dek)
        self.k_enc, self.k_mac = register_keys(raw, instance)
        self.mode = mode
        self.seq_out = 0
        self.seq_in = 0
        self.tracker = tracker

    def write(self, idx: int, value: int) -> bytes:
        self.seq_out += 1
        value = struct.pack(">I", value & 0xFFFFFFFF)
        if self.mode is RegisterMode.ENCRYPTED_ADDRESS:
            addr, body = MAILBOX_ADDR, bytes([OP_WRITE]) + struct.pack(">H", idx) + value
        else:
            addr, body = idx, value
        return seal_envelope(self.k_enc, self.k_mac, HOST_TO_ACCEL, addr, self.seq_out, body,
                             self.tracker)

    def read_reply(self, wire: bytes, idx: int | None = None) -> int:
        addr, seq, body = open_envelope(self.k_enc, self.k_mac, wire, ACCEL_TO_HOST)
        if seq <= self.seq_in:
            raise StaleCounterError(f"register reply seq {seq} already consumed")
        if self.mode is RegisterMode.ENCRYPTED_ADDRESS:
            if addr != MAILBOX_ADDR or len(body) != 7 or body[0] != OP_READ:
                raise RegisterError("malformed mailbox reply")
            got, (value,) = struct.unpack(">H", body[1:3])[0], struct.unpack(">I", body[3:])
        else:
            got, (value,) = addr, struct.unpack(">I", body)
        if idx is not None and got != idx:
            raise RegisterError(f"reply is for register {got}, expected {idx}")
        self.seq_in = seq
        return value


def reg_host_write(state, sealed: bytes) -> None:
    state.registers.host_write(sealed)


def reg_host_read(state, reg_addr: int) -> bytes:
    return state.registers.host_read(reg_addr)


def reg_accel_read(state, idx: int) -> int:
    return state.registers.accel_read(idx)


def reg_accel_write(state, idx: int, value: int) -> None:
    state.registers.accel_write(idx, value)
