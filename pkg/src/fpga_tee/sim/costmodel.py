"""Analytic throughput model: run statistics -> modeled cycles and overhead.

Per engine set the crypto time is the slowest of its AES engines, its MAC
engines and its datapath; engine sets work concurrently, while DRAM bandwidth
is shared by all of them::

    secured  = init + requests*burst_fixed + max(sum(dram_bytes)/bw, max_sets(crypto))
    baseline = init + bursts*burst_fixed + accel_bytes/bw
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path

from ..errors import ConfigError, TeeError
from ..shield.config import EngineSetConfig, MacKind, ShieldConfig
from .stats import REGISTER_SET, ShieldStats

AES256_FACTOR = 1.4  # 14 rounds vs 10

# the register interface has one AES/4x engine and one HMAC engine
REGISTER_ENGINES = EngineSetConfig(set_id=REGISTER_SET)


@dataclass(frozen=True)
class CostModelParams:
    b4: float = 2.5                          # AES bytes/cycle/engine with 4x S-box
    b16: float = 10.0                        # ... with 16x S-box
    hmac_bytes_per_cycle: float = 6.5
    hmac_fixed_cycles_per_chunk: float = 8.0
    pmac_bytes_per_cycle_per_engine: float = 4.5
    dram_bytes_per_cycle: float = 64.0
    burst_fixed_cycles: float = 2.0
    init_fixed_cycles: float = 1e4
    set_bytes_per_cycle: float = 26.0        # datapath cap of one engine set

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"cost parameter {f.name} must be positive, got {v!r}")
        if self.b16 <= self.b4:
            raise ConfigError("b16 must exceed b4")

    def aes_rate(self, sbox: int) -> float:
        return self.b16 if sbox >= 16 else self.b4

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)!r}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> CostModelParams:
        names = {f.name for f in fields(cls)}
        kw = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in names:
                raise ConfigError(f"bad parameter line {raw!r}", n)
            try:
                kw[key] = float(value)
            except ValueError:
                raise ConfigError(f"{key}: not a number", n) from None
        return cls(**kw)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> CostModelParams:
        return cls.from_text(Path(path).read_text())

    def with_values(self, **kw) -> CostModelParams:
        return replace(self, **kw)


@dataclass(frozen=True)
class OverheadReport:
    baseline_cycles: int
    secured_cycles: int
    overhead_pct: Fraction
    bottleneck: str = ""
    per_set: dict = field(default_factory=dict, compare=False)

    @property
    def slowdown(self) -> float:
        return self.secured_cycles / self.baseline_cycles

    def as_dict(self) -> dict:
        return {
            "baseline_cycles": self.baseline_cycles,
            "secured_cycles": self.secured_cycles,
            "overhead_pct": f"{float(self.overhead_pct):.4f}",
            "bottleneck": self.bottleneck,
        }


def set_crypto_cycles(es: EngineSetConfig, st: ShieldStats, params: CostModelParams) -> dict:
    """Cycle demand of each unit in one engine set."""
    keyfactor = AES256_FACTOR if es.key_bits == 256 else 1.0
    aes = st.aes_bytes * keyfactor / (es.aes_engines * params.aes_rate(es.sbox_parallelism))
    if es.mac_kind is MacKind.HMAC:
        # a chunk's HMAC is sequential; extra engines do not help within a set
        mac = (st.mac_bytes / params.hmac_bytes_per_cycle
               + st.mac_ops * params.hmac_fixed_cycles_per_chunk)
    else:
        mac = st.mac_bytes / (es.mac_engines * params.pmac_bytes_per_cycle_per_engine)
    datapath = st.aes_bytes / params.set_bytes_per_cycle
    return {"aes": aes, "mac": mac, "datapath": datapath}


def model_cycles(cfg: ShieldConfig, params: CostModelParams,
                 stats_by_set: dict[int, ShieldStats], baseline: ShieldStats) -> OverheadReport:
    """Model secured and unsecured cycles for one run.

    ``baseline`` carries the accelerator's own traffic (``bursts`` and
    ``dram_bytes_*``) as replayed against unsecured memory; ``register_ops``
    on either side cost one bus request each.
    """
    base = (params.init_fixed_cycles
            + (baseline.bursts + baseline.register_ops) * params.burst_fixed_cycles
            + baseline.dram_bytes / params.dram_bytes_per_cycle)
    if base <= 0:
        raise TeeError("baseline cycle count is zero")

    dram_bytes = 0
    requests = 0
    worst, worst_label = 0.0, "dram"
    per_set = {}
    for set_id in sorted(stats_by_set):
        st = stats_by_set[set_id]
        es = REGISTER_ENGINES if set_id == REGISTER_SET else cfg.engine_set(set_id)
        dram_bytes += st.dram_bytes
        requests += st.dram_requests + st.register_ops
        units = set_crypto_cycles(es, st, params)
        per_set[set_id] = units
        for unit, cyc in units.items():
            if cyc > worst:
                worst, worst_label = cyc, f"set{set_id}.{unit}"
    dram_time = dram_bytes / params.dram_bytes_per_cycle
    if dram_time >= worst:
        worst_label = "dram"
    secured = (params.init_fixed_cycles + requests * params.burst_fixed_cycles
               + max(dram_time, worst))

    b, s = math.ceil(base), math.ceil(secured)
    return OverheadReport(b, s, Fraction(100 * (s - b), b), worst_label, per_set)
