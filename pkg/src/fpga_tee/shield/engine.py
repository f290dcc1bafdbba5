"""Shield memory engine: burst decoding, chunk sealing, buffers and counters.

DRAM layout per chunk ``i`` of a region: ciphertext at ``base + i*c_mem`` and
a 28-byte metadata record ``tag(16) || iv(12)`` at ``tag_base + i*28``.

The IV is ``region_id(2) || chunk_index(5) || write_version(5)``; the on-chip
write version makes every (subkey, IV) pair unique even when a chunk is
rewritten. The MAC covers the length-prefixed tuple
``(region_id, chunk_index, iv, ciphertext[, ctr_i])``.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass, field

from .. import crypto
from ..crypto import SymKey
from ..errors import (AuthFailure, CounterOverflowError, CrossRegionFault, PermissionFault,
                      RegionFault, VersionExhausted)
from ..sim.dram import SimDram
from ..sim.stats import REGISTER_SET, ShieldStats
from .config import (IV_BYTES, META_BYTES, TAG_BYTES, EngineSetConfig, MacKind,
                     MemoryRegion, Mode, ShieldConfig)

VERSION_LIMIT = 1 << 40


@dataclass(frozen=True)
class BurstRequest:
    kind: str  # "R" or "W"
    addr: int
    length: int
    data: bytes = b""


@dataclass(frozen=True)
class ChunkAccess:
    region: MemoryRegion
    chunk_index: int
    offset: int
    length: int


@dataclass
class ChunkState:
    write_version: int = 0
    ctr: int = 0


@dataclass
class BufferLine:
    chunk_index: int
    plaintext: bytearray
    dirty: bool = False


@dataclass
class RegionState:
    region: MemoryRegion
    engines: EngineSetConfig
    k_enc: bytes
    k_mac: bytes
    subkey_id: bytes
    chunks: dict = field(default_factory=dict)      # index -> ChunkState
    buffer: OrderedDict = field(default_factory=OrderedDict)  # index -> BufferLine, LRU first

    def chunk(self, i: int) -> ChunkState:
        st = self.chunks.get(i)
        if st is None:
            st = self.chunks[i] = ChunkState()
        return st


def compose_iv(region_id: int, chunk_index: int, write_version: int) -> bytes:
    return (region_id.to_bytes(2, "big") + chunk_index.to_bytes(5, "big")
            + write_version.to_bytes(5, "big"))


def mac_input(region_id: int, chunk_index: int, iv: bytes, ciphertext: bytes,
              ctr: int | None = None) -> bytes:
    fields = [region_id.to_bytes(2, "big"), chunk_index.to_bytes(8, "big"), iv, ciphertext]
    if ctr is not None:
        fields.append(struct.pack(">Q", ctr))
    return crypto.length_prefixed(*fields)


def subkey_id(k_enc: bytes) -> bytes:
    return crypto.hash(b"subkey-id" + k_enc)[:8]


class ShieldState:
    """One Shield instance: per-region keys, chunk states, buffers and stats."""

    def __init__(self, cfg: ShieldConfig, dek, iv_tracker=None, chunk_state=None,
                 instance: int = 0):
        cfg.validate()
        self.cfg = cfg
        raw = dek.raw if isinstance(dek, SymKey) else bytes(dek)
        self.iv_tracker = iv_tracker
        self.regions: dict[int, RegionState] = {}
        for r in cfg.regions:
            es = cfg.engine_set(r.engine_set_id)
            rid = r.region_id.to_bytes(2, "big")
            k_enc = crypto.kdf(raw, b"enc" + rid, es.key_bytes)
            k_mac = crypto.kdf(raw, b"mac" + rid, 32)
            self.regions[r.region_id] = RegionState(r, es, k_enc, k_mac, subkey_id(k_enc))
        self._ordered = sorted(self.regions.values(), key=lambda s: s.region.base)
        self.stats: dict[int, ShieldStats] = {es.set_id: ShieldStats() for es in cfg.engine_sets}
        self.stats[REGISTER_SET] = ShieldStats()
        self._quiet = False
        if chunk_state:
            self.import_chunk_state(chunk_state)
        from .registers import RegisterFile
        self.registers = RegisterFile(cfg, raw, self, instance)

    # -- bookkeeping --------------------------------------------------------------

    def _stats(self, rs: RegionState) -> ShieldStats:
        if self._quiet:
            return ShieldStats()
        return self.stats[rs.engines.set_id]

    def region_state(self, key) -> RegionState:
        return self.regions[self.cfg.region(key).region_id]

    def export_chunk_state(self) -> dict:
        return {rid: {i: (c.write_version, c.ctr) for i, c in rs.chunks.items()}
                for rid, rs in self.regions.items()}

    def import_chunk_state(self, snapshot: dict) -> None:
        for rid, chunks in snapshot.items():
            rs = self.regions[rid]
            rs.chunks = {i: ChunkState(wv, ctr) for i, (wv, ctr) in chunks.items()}

    def reset_stats(self) -> None:
        for k in self.stats:
            self.stats[k] = ShieldStats()

    def buffered_bytes(self) -> int:
        return sum(len(rs.buffer) * rs.region.c_mem for rs in self.regions.values())

    # -- chunk crypto ---------------------------------------------------------------

    def _mac(self, rs: RegionState, msg: bytes) -> bytes:
        if rs.engines.mac_kind is MacKind.PMAC:
            return crypto.mac_pmac(rs.k_mac[:rs.engines.key_bytes], msg)
        return crypto.mac_hmac(rs.k_mac, msg)

    def chunk_seal(self, rs: RegionState, i: int, plaintext: bytes):
        r = rs.region
        if len(plaintext) != r.c_mem:
            raise ValueError("chunk plaintext must be exactly c_mem bytes")
        cs = rs.chunk(i)
        if cs.write_version >= VERSION_LIMIT - 1:
            raise VersionExhausted(f"region {r.region_id} chunk {i}: write versions exhausted")
        ctr = None
        if r.counters_enabled:
            if cs.ctr + 1 >= 1 << r.counter_bits:
                raise CounterOverflowError(f"region {r.region_id} chunk {i}: counter overflow")
            ctr = cs.ctr + 1
        # version 0 is reserved for "never written"
        iv = compose_iv(r.region_id, i, cs.write_version + 1)
        if self.iv_tracker is not None:
            self.iv_tracker.record(rs.subkey_id, iv)
        ct = crypto.ctr_encrypt(rs.k_enc, iv, 0, plaintext)
        tag = self._mac(rs, mac_input(r.region_id, i, iv, ct, ctr))
        cs.write_version += 1
        if ctr is not None:
            cs.ctr = ctr
        st = self._stats(rs)
        st.chunks_sealed += 1
        st.aes_bytes += r.c_mem
        st.mac_bytes += r.c_mem
        st.mac_ops += 1
        return ct, tag, iv

    def chunk_open(self, rs: RegionState, i: int, ciphertext: bytes, tag: bytes,
                   stored_iv: bytes) -> bytes:
        r = rs.region
        ctr = rs.chunk(i).ctr if r.counters_enabled else None
        st = self._stats(rs)
        st.mac_bytes += r.c_mem
        st.mac_ops += 1
        expect = self._mac(rs, mac_input(r.region_id, i, stored_iv, ciphertext, ctr))
        if not crypto.tags_equal(expect, tag):
            raise AuthFailure(f"region {r.name or r.region_id} chunk {i}: authentication failed")
        st.chunks_opened += 1
        st.aes_bytes += r.c_mem
        return crypto.ctr_encrypt(rs.k_enc, stored_iv, 0, ciphertext)

    # -- DRAM transfer of one chunk ---------------------------------------------------

    def _fetch(self, rs: RegionState, dram: SimDram, i: int) -> bytearray:
        r = rs.region
        if rs.chunk(i).write_version == 0:
            return bytearray(r.c_mem)   # never written: reads as zeros, nothing to verify
        ct = dram.read(r.chunk_addr(i), r.c_mem)
        meta = dram.read(r.meta_addr(i), META_BYTES)
        st = self._stats(rs)
        st.dram_bytes_read += r.c_mem + META_BYTES
        st.dram_requests += 2
        return bytearray(self.chunk_open(rs, i, ct, meta[:TAG_BYTES], meta[TAG_BYTES:]))

    def _store(self, rs: RegionState, dram: SimDram, i: int, plaintext: bytes) -> None:
        r = rs.region
        ct, tag, iv = self.chunk_seal(rs, i, bytes(plaintext))
        dram.write(r.chunk_addr(i), ct)
        dram.write(r.meta_addr(i), tag + iv)
        st = self._stats(rs)
        st.dram_bytes_written += r.c_mem + META_BYTES
        st.dram_requests += 2

    # -- buffer ---------------------------------------------------------------------------

    def _insert(self, rs: RegionState, dram: SimDram, line: BufferLine) -> None:
        if len(rs.buffer) >= rs.region.buffer_lines:
            _, victim = rs.buffer.popitem(last=False)
            if victim.dirty:
                self._store(rs, dram, victim.chunk_index, victim.plaintext)
        rs.buffer[line.chunk_index] = line

    def _line(self, rs: RegionState, dram: SimDram, i: int, fill: bool) -> BufferLine:
        st = self._stats(rs)
        line = rs.buffer.get(i)
        if line is not None:
            st.buffer_hits += 1
            rs.buffer.move_to_end(i)
            return line
        st.buffer_misses += 1
        data = self._fetch(rs, dram, i) if fill else bytearray(rs.region.c_mem)
        line = BufferLine(i, data)
        self._insert(rs, dram, line)
        return line

    # -- public burst interface -------------------------------------------------------

    def decode_burst(self, addr: int, length: int) -> list[ChunkAccess]:
        if length < 1:
            raise ValueError("burst length must be >= 1")
        rs = self._region_at(addr)
        r = rs.region
        if addr + length > r.end:
            if self._region_at(r.end, fault=False) is not None:
                raise CrossRegionFault(f"burst [{addr:#x},{addr + length:#x}) spans regions")
            raise RegionFault(f"burst [{addr:#x},{addr + length:#x}) runs past region end")
        out = []
        pos, end = addr - r.base, addr - r.base + length
        while pos < end:
            i, off = divmod(pos, r.c_mem)
            n = min(r.c_mem - off, end - pos)
            out.append(ChunkAccess(r, i, off, n))
            pos += n
        return out

    def _region_at(self, addr: int, fault: bool = True) -> RegionState | None:
        for rs in self._ordered:
            if rs.region.contains(addr):
                return rs
        if fault:
            raise RegionFault(f"address {addr:#x} is not in any protected region")
        return None

    def read(self, dram: SimDram, addr: int, length: int) -> bytes:
        accesses = self.decode_burst(addr, length)
        rs = self.regions[accesses[0].region.region_id]
        self._stats(rs).bursts += 1
        out = bytearray()
        for a in accesses:
            line = self._line(rs, dram, a.chunk_index, fill=True)
            out += line.plaintext[a.offset:a.offset + a.length]
        return bytes(out)

    def write(self, dram: SimDram, addr: int, data: bytes) -> None:
        accesses = self.decode_burst(addr, len(data))
        rs = self.regions[accesses[0].region.region_id]
        r = rs.region
        if r.mode is Mode.READ_ONLY:
            raise PermissionFault(f"region {r.name or r.region_id} is read-only")
        self._stats(rs).bursts += 1
        pos = 0
        for a in accesses:
            # a full-chunk overwrite never needs the old contents
            fill = r.mode is Mode.READ_WRITE and a.length < r.c_mem
            line = self._line(rs, dram, a.chunk_index, fill=fill)
            line.plaintext[a.offset:a.offset + a.length] = data[pos:pos + a.length]
            line.dirty = True
            pos += a.length

    def flush(self, dram: SimDram) -> None:
        for rs in self._ordered:
            for i in sorted(rs.buffer):
                line = rs.buffer[i]
                if line.dirty:
                    self._store(rs, dram, i, line.plaintext)
            rs.buffer.clear()

    def preload(self, dram: SimDram, addr: int, data: bytes) -> None:
        """Place owner-provided input in DRAM, sealed, before the run starts.

        Bypasses the region's permission (read-only inputs have to get there
        somehow) and the stats; the IV tracker still sees every seal.
        """
        self._quiet = True
        try:
            accesses = self.decode_burst(addr, len(data))
            rs = self.regions[accesses[0].region.region_id]
            pos = 0
            for a in accesses:
                if a.length == rs.region.c_mem:
                    chunk = data[pos:pos + a.length]
                else:
                    chunk = self._fetch(rs, dram, a.chunk_index)
                    chunk[a.offset:a.offset + a.length] = data[pos:pos + a.length]
                line = rs.buffer.pop(a.chunk_index, None)
                if line is not None:
                    raise RuntimeError("preload into a buffered chunk")
                self._store(rs, dram, a.chunk_index, chunk)
                pos += a.length
        finally:
            self._quiet = False


def new_shield(cfg: ShieldConfig, dek, iv_tracker=None, chunk_state=None,
               instance: int = 0) -> ShieldState:
    return ShieldState(cfg, dek, iv_tracker, chunk_state, instance)


def decode_burst(state: ShieldState, req: BurstRequest) -> list[ChunkAccess]:
    return state.decode_burst(req.addr, req.length)


def chunk_seal(state: ShieldState, region, chunk_index: int, plaintext: bytes):
    return state.chunk_seal(state.region_state(region), chunk_index, plaintext)


def chunk_open(state: ShieldState, region, chunk_index: int, ciphertext: bytes, tag: bytes,
               stored_iv: bytes) -> bytes:
    return state.chunk_open(state.region_state(region), chunk_index, ciphertext, tag, stored_iv)


def shield_read(state: ShieldState, dram: SimDram, addr: int, length: int) -> bytes:
    return state.read(dram, addr, length)


def shield_write(state: ShieldState, dram: SimDram, addr: int, data: bytes) -> None:
    state.write(dram, addr, data)


def flush(state: ShieldState, dram: SimDram) -> None:
    state.flush(dram)


__all__ = [
    "BurstRequest", "BufferLine", "ChunkAccess", "ChunkState", "IV_BYTES", "RegionState",
    "ShieldState", "chunk_open", "chunk_seal", "compose_iv", "decode_burst", "flush",
    "mac_input", "new_shield", "shield_read", "shield_write",
]
