from __future__ import annotations

from ..errors import DramFault

DEFAULT_DRAM_BYTES = 64 << 20


class SimDram:
    """Untrusted flat device memory. Anyone holding a reference may rewrite it."""

    def __init__(self, size: int = DEFAULT_DRAM_BYTES):
        self.size = size
        self.bytes = bytearray(size)
        self.read_count = 0
        self.write_count = 0
        self.bytes_read = 0
        self.bytes_written = 0
        self.tamper_count = 0
        self.high_water = 0

    def _check(self, addr: int, n: int) -> None:
        if addr < 0 or n < 0 or addr + n > self.size:
            raise DramFault(f"access [{addr:#x}, {addr + n:#x}) outside {self.size:#x}-byte DRAM")

    def read(self, addr: int, n: int) -> bytes:
        self._check(addr, n)
        self.read_count += 1
        self.bytes_read += n
        return bytes(self.bytes[addr:addr + n])

    def write(self, addr: int, data: bytes) -> None:
        self._check(addr, len(data))
        self.write_count += 1
        self.bytes_written += len(data)
        self.bytes[addr:addr + len(data)] = data
        self.high_water = max(self.high_water, addr + len(data))

    # adversary side: same memory, separately counted

    def tamper_write(self, addr: int, data: bytes) -> None:
        self._check(addr, len(data))
        self.tamper_count += 1
        self.bytes[addr:addr + len(data)] = data
        self.high_water = max(self.high_water, addr + len(data))

    def peek(self, addr: int, n: int) -> bytes:
        self._check(addr, n)
        return bytes(self.bytes[addr:addr + n])

    def contains(self, needle: bytes) -> bool:
        return self.bytes.find(needle, 0, self.high_water) >= 0


def dram_read(dram: SimDram, addr: int, n: int) -> bytes:
    return dram.read(addr, n)


def dram_write(dram: SimDram, addr: int, data: bytes) -> None:
    dram.write(addr, data)
