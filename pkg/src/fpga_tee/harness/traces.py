"""Accelerator memory/register traces and an unsecured reference memory.

One op per line::

    R <addr> <len>
    W <addr> <len> <payload>      # rand:<seed> | fill:<byte> | hex:<bytes>
    REG_W <idx> <value>
    REG_R <idx>
    FLUSH
    ATTACK <action spec>
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from ..errors import TraceError

OPS = ("R", "W", "REG_W", "REG_R", "FLUSH", "ATTACK")


@dataclass(frozen=True)
class TraceOp:
    kind: str
    addr: int = 0
    length: int = 0
    payload: str = ""
    action: str = ""

    def payload_bytes(self) -> bytes:
        return payload_bytes(self.payload, self.length)

    def __str__(self):
        if self.kind == "R":
            return f"R {self.addr:#x} {self.length}"
        if self.kind == "W":
            return f"W {self.addr:#x} {self.length} {self.payload}"
        if self.kind == "REG_W":
            return f"REG_W {self.addr} {self.length:#x}"
        if self.kind == "REG_R":
            return f"REG_R {self.addr}"
        if self.kind == "ATTACK":
            return f"ATTACK {self.action}"
        return self.kind


# register ops reuse the fields: addr = register index, length = value
def reg_write(idx: int, value: int) -> TraceOp:
    return TraceOp("REG_W", idx, value & 0xFFFFFFFF)


def reg_read(idx: int) -> TraceOp:
    return TraceOp("REG_R", idx)


def payload_bytes(spec: str, length: int) -> bytes:
    kind, _, arg = spec.partition(":")
    if kind == "rand":
        return random.Random(int(arg, 0)).randbytes(length)
    if kind == "fill":
        return bytes([int(arg, 16) & 0xFF]) * length
    if kind == "hex":
        data = bytes.fromhex(arg)
        if len(data) != length:
            raise TraceError(f"hex payload has {len(data)} bytes, op says {length}")
        return data
    raise TraceError(f"unknown payload spec {spec!r}")


def parse_op(line: str) -> TraceOp:
    toks = line.split()
    kind = toks[0].upper()
    args = toks[1:]
    try:
        if kind == "R" and len(args) == 2:
            return TraceOp("R", int(args[0], 0), int(args[1], 0))
        if kind == "W" and len(args) == 3:
            op = TraceOp("W", int(args[0], 0), int(args[1], 0), args[2])
            payload_bytes(op.payload, 0 if op.payload.startswith("hex") else 1)
            return op
        if kind == "REG_W" and len(args) == 2:
            return reg_write(int(args[0], 0), int(args[1], 0))
        if kind == "REG_R" and len(args) == 1:
            return reg_read(int(args[0], 0))
        if kind == "FLUSH" and not args:
            return TraceOp("FLUSH")
        if kind == "ATTACK" and args:
            return TraceOp("ATTACK", action=" ".join(args))
    except ValueError as exc:
        raise TraceError(f"bad trace op {line!r}: {exc}") from None
    raise TraceError(f"bad trace op {line!r}")


def parse_trace(text: str) -> list[TraceOp]:
    ops = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            ops.append(parse_op(line))
        except TraceError as exc:
            raise TraceError(f"line {n}: {exc}") from None
    return ops


def format_trace(ops) -> str:
    return "".join(f"{op}\n" for op in ops)


# generators ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceParams:
    base: int
    size: int                 # bytes available to the pattern
    c_mem: int
    n_ops: int = 64
    access_size: int = 0      # 0 -> c_mem
    working_set: int = 0      # bytes, 0 -> size
    write: bool = False       # STR: stream writes instead of reads
    write_fraction: float = 0.0   # RA: share of writes
    registers: int = 16
    region_end: int | None = None

    @property
    def access(self) -> int:
        return self.access_size or self.c_mem


def _check_range(p: TraceParams, nbytes: int) -> None:
    end = p.base + nbytes
    limit = p.base + p.size if p.region_end is None else p.region_end
    if nbytes > p.size or end > limit:
        raise TraceError(f"trace range [{p.base:#x},{end:#x}) exceeds its region")


def gen_trace(pattern: str, p: TraceParams, seed: int) -> list[TraceOp]:
    rng = random.Random(f"{pattern}:{seed}")
    pattern = pattern.upper()
    ops: list[TraceOp] = []
    if pattern == "STR":
        _check_range(p, p.n_ops * p.c_mem)
        for k in range(p.n_ops):
            addr = p.base + k * p.c_mem
            if p.write:
                ops.append(TraceOp("W", addr, p.c_mem, f"rand:{rng.getrandbits(48)}"))
            else:
                ops.append(TraceOp("R", addr, p.c_mem))
        return ops
    if pattern in ("RA", "RMW"):
        ws = p.working_set or p.size
        _check_range(p, ws)
        slots = ws // p.access
        if slots < 1:
            raise TraceError("working set smaller than one access")
        for _ in range(p.n_ops):
            addr = p.base + rng.randrange(slots) * p.access
            if pattern == "RMW":
                ops.append(TraceOp("R", addr, p.access))
                ops.append(TraceOp("W", addr, p.access, f"rand:{rng.getrandbits(48)}"))
            elif rng.random() < p.write_fraction:
                ops.append(TraceOp("W", addr, p.access, f"rand:{rng.getrandbits(48)}"))
            else:
                ops.append(TraceOp("R", addr, p.access))
        return ops
    if pattern == "REG":
        # host writes register i, the accelerator answers in register i+1
        for _ in range(p.n_ops):
            idx = rng.randrange(max(1, p.registers - 1))
            ops.append(reg_write(idx, rng.getrandbits(32)))
            ops.append(reg_read(idx + 1))
        return ops
    raise TraceError(f"unknown trace pattern {pattern!r}")


def accel_register_response(value: int) -> int:
    """What the modeled accelerator writes back after a host register write."""
    return (value + 1) & 0xFFFFFFFF


# reference ------------------------------------------------------------------------------

class ReferenceMemory:
    """Plain byte store with the same register echo; the transparency oracle."""

    PAGE = 4096

    def __init__(self, registers: int = 16):
        self.pages: dict[int, bytearray] = {}
        self.regs = [0] * registers

    def _spans(self, addr: int, length: int):
        while length > 0:
            page, off = divmod(addr, self.PAGE)
            n = min(self.PAGE - off, length)
            yield page, off, n
            addr += n
            length -= n

    def write(self, addr: int, data: bytes) -> None:
        pos = 0
        for page, off, n in self._spans(addr, len(data)):
            buf = self.pages.setdefault(page, bytearray(self.PAGE))
            buf[off:off + n] = data[pos:pos + n]
            pos += n

    def read(self, addr: int, length: int) -> bytes:
        out = bytearray()
        for page, off, n in self._spans(addr, length):
            buf = self.pages.get(page)
            out += buf[off:off + n] if buf is not None else bytes(n)
        return bytes(out)

    def reg_write(self, idx: int, value: int) -> None:
        self.regs[idx] = value
        if idx + 1 < len(self.regs):
            self.regs[idx + 1] = accel_register_response(value)

    def replay(self, ops) -> list:
        """Results of every R and REG_R op, in order."""
        out = []
        for op in ops:
            if op.kind == "W":
                self.write(op.addr, op.payload_bytes())
            elif op.kind == "R":
                out.append(self.read(op.addr, op.length))
            elif op.kind == "REG_W":
                self.reg_write(op.addr, op.length)
            elif op.kind == "REG_R":
                out.append(self.regs[op.addr])
        return out
