"""Adversary actions against untrusted DRAM (and channel transcripts)."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import AdversaryError
from ..shield.config import META_BYTES, ShieldConfig
from .dram import SimDram


@dataclass(frozen=True)
class FlipBit:
    addr: int
    bit: int


@dataclass(frozen=True)
class SpliceChunks:
    region: int | str
    i: int
    j: int


@dataclass(frozen=True)
class Snapshot:
    region: int | str
    i: int
    slot: str


@dataclass(frozen=True)
class Restore:
    region: int | str
    i: int
    slot: str


@dataclass(frozen=True)
class ScanPlaintext:
    needle: bytes


AdversaryAction = FlipBit | SpliceChunks | Snapshot | Restore | ScanPlaintext


class Adversary:
    """Holds the attacker's view: DRAM, the public region layout, saved slots."""

    def __init__(self, dram: SimDram, cfg: ShieldConfig | None = None, transcripts=None):
        self.dram = dram
        self.cfg = cfg
        self.slots: dict[str, tuple[bytes, bytes]] = {}
        self.transcripts = transcripts if transcripts is not None else []

    def _record_span(self, region, i):
        if self.cfg is None:
            raise AdversaryError("chunk-level actions need the region layout")
        try:
            r = self.cfg.region(region)
        except KeyError:
            raise AdversaryError(f"unknown region {region!r}") from None
        if not 0 <= i < r.n_chunks:
            raise AdversaryError(f"chunk {i} outside region {r.name or r.region_id}")
        return (r.chunk_addr(i), r.c_mem), (r.meta_addr(i), META_BYTES)

    def _read_record(self, region, i):
        (da, dn), (ma, mn) = self._record_span(region, i)
        return self.dram.peek(da, dn), self.dram.peek(ma, mn)

    def _write_record(self, region, i, record):
        (da, _), (ma, _) = self._record_span(region, i)
        self.dram.tamper_write(da, record[0])
        self.dram.tamper_write(ma, record[1])

    def apply(self, action):
        if isinstance(action, FlipBit):
            if not 0 <= action.bit < 8:
                raise AdversaryError("bit index must be 0..7")
            b = self.dram.peek(action.addr, 1)[0]
            self.dram.tamper_write(action.addr, bytes([b ^ (1 << action.bit)]))
            return None
        if isinstance(action, SpliceChunks):
            ri = self._read_record(action.region, action.i)
            rj = self._read_record(action.region, action.j)
            self._write_record(action.region, action.i, rj)
            self._write_record(action.region, action.j, ri)
            return None
        if isinstance(action, Snapshot):
            self.slots[action.slot] = self._read_record(action.region, action.i)
            return None
        if isinstance(action, Restore):
            if action.slot not in self.slots:
                raise AdversaryError(f"unknown snapshot slot {action.slot!r}")
            self._write_record(action.region, action.i, self.slots[action.slot])
            return None
        if isinstance(action, ScanPlaintext):
            found = self.dram.contains(action.needle)
            found = found or any(action.needle in bytes(t) for t in self.transcripts)
            return found
        raise AdversaryError(f"unsupported action {action!r}")


def apply_adversary(dram: SimDram, action, cfg: ShieldConfig | None = None,
                    slots: dict | None = None, transcripts=()):
    adv = Adversary(dram, cfg, list(transcripts))
    if slots is not None:
        adv.slots = slots
    return adv.apply(action)


def parse_action(spec: str, cfg: ShieldConfig | None = None):
    """Parse ``flipbit <addr> <bit>``, ``splice <region> <i> <j>``,
    ``snapshot|restore <region> <i> <slot>``, ``scan <hex>``.

    With a config, ``flipbit <region> <i> data|tag|iv <bit>`` addresses a bit
    inside one chunk's data or metadata record. Tokens may be separated by
    whitespace or colons.
    """
    toks = spec.replace(":", " ").split()
    if not toks:
        raise AdversaryError("empty action")
    kind, args = toks[0].lower(), toks[1:]

    def region(tok):
        return int(tok, 0) if tok[0].isdigit() else tok

    try:
        if kind == "flipbit" and len(args) == 2:
            return FlipBit(int(args[0], 0), int(args[1], 0))
        if kind == "flipbit" and len(args) == 4 and cfg is not None:
            return FlipBit(*chunk_bit_address(cfg, region(args[0]), int(args[1], 0), args[2],
                                              int(args[3], 0)))
        if kind == "splice" and len(args) == 3:
            return SpliceChunks(region(args[0]), int(args[1], 0), int(args[2], 0))
        if kind == "snapshot" and len(args) == 3:
            return Snapshot(region(args[0]), int(args[1], 0), args[2])
        if kind == "restore" and len(args) == 3:
            return Restore(region(args[0]), int(args[1], 0), args[2])
        if kind == "scan" and len(args) == 1:
            return ScanPlaintext(bytes.fromhex(args[0]))
    except (ValueError, KeyError) as exc:
        raise AdversaryError(f"bad action {spec!r}: {exc}") from None
    raise AdversaryError(f"bad action {spec!r}")


def chunk_bit_address(cfg: ShieldConfig, region, i: int, part: str, bit: int) -> tuple[int, int]:
    """Translate (region, chunk, data|tag|iv, bit offset) to ``(addr, bit)``."""
    r = cfg.region(region)
    spans = {"data": (r.chunk_addr(i), r.c_mem), "tag": (r.meta_addr(i), 16),
             "iv": (r.meta_addr(i) + 16, 12)}
    if part not in spans:
        raise AdversaryError(f"unknown record part {part!r}")
    if not 0 <= i < r.n_chunks:
        raise AdversaryError(f"chunk {i} outside region {r.name or r.region_id}")
    base, n = spans[part]
    if not 0 <= bit < 8 * n:
        raise AdversaryError(f"bit {bit} outside the {n}-byte {part} field")
    return base + bit // 8, bit % 8


def locate(cfg: ShieldConfig, addr: int):
    """Which (region, chunk) owns a DRAM byte, through its data or its metadata."""
    for r in cfg.regions:
        if r.contains(addr):
            return r, (addr - r.base) // r.c_mem
        if r.tag_base <= addr < r.tag_base + r.tag_size:
            return r, (addr - r.tag_base) // META_BYTES
    return None
