from __future__ import annotations

from dataclasses import asdict, dataclass, fields

# stats key used for the register interface's own engines
REGISTER_SET = -1


@dataclass
class ShieldStats:
    """Per-run traffic counters; every field is monotone within a run.

    ``bursts`` counts accelerator-side burst requests, ``dram_requests`` the
    DRAM transactions actually issued (a chunk fill or write-back is two: the
    data and its metadata record).
    """

    buffer_hits: int = 0
    buffer_misses: int = 0
    chunks_sealed: int = 0
    chunks_opened: int = 0
    dram_bytes_read: int = 0
    dram_bytes_written: int = 0
    mac_bytes: int = 0
    aes_bytes: int = 0
    bursts: int = 0
    mac_ops: int = 0
    dram_requests: int = 0
    register_ops: int = 0

    def __add__(self, other: ShieldStats) -> ShieldStats:
        return ShieldStats(**{f.name: getattr(self, f.name) + getattr(other, f.name)
                              for f in fields(self)})

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def dram_bytes(self) -> int:
        return self.dram_bytes_read + self.dram_bytes_written

    @property
    def hit_rate(self) -> float:
        touches = self.buffer_hits + self.buffer_misses
        return self.buffer_hits / touches if touches else 0.0


def total(stats_by_set: dict[int, ShieldStats]) -> ShieldStats:
    out = ShieldStats()
    for s in stats_by_set.values():
        out = out + s
    return out
