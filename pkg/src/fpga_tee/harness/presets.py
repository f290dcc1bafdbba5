"""Named workload presets: Shield configuration + input data + access trace.

Sizes are scaled to run in seconds; the access structure (streaming vs
random, chunk size, buffer and engine-set layout) follows the benchmark each
preset stands in for. Only memory and register traffic is modeled, never
the accelerator's own compute.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..errors import ConfigError
from ..shield.config import EngineSetConfig, MacKind, MemoryRegion, Mode, ShieldConfig
from .traces import TraceOp, TraceParams, gen_trace

KIB = 1 << 10
MIB = 1 << 20
ALIGN = 4 * KIB


@dataclass
class Workload:
    name: str
    cfg: ShieldConfig
    ops: list
    # (addr, length, payload spec) written by the Data Owner before the run
    preloads: list = field(default_factory=list)


@dataclass
class RegionSpec:
    name: str
    size: int
    c_mem: int
    engine_set: int
    mode: Mode = Mode.READ_WRITE
    buffer_bytes: int = 0
    counters: bool = False
    counter_bits: int = 32


def layout(specs: list[RegionSpec]) -> tuple[MemoryRegion, ...]:
    """Pack data regions from address 0, then all metadata after them."""
    regions = []
    addr = 0
    for rid, s in enumerate(specs):
        regions.append([rid, addr, s])
        addr += -(-s.size // ALIGN) * ALIGN
    tag = addr + ALIGN
    out = []
    for rid, base, s in regions:
        r = MemoryRegion(rid, base, s.size, s.c_mem, tag, s.mode, s.counters, s.counter_bits,
                         s.buffer_bytes or s.c_mem, s.engine_set, s.name)
        tag += -(-r.tag_size // ALIGN) * ALIGN
        out.append(r)
    return tuple(out)


def _mac(name) -> MacKind:
    return name if isinstance(name, MacKind) else MacKind(str(name))


def _preload_all(regions, seed: int, names=None):
    return [(r.base, r.size, f"rand:{seed * 1000 + r.region_id}") for r in regions
            if names is None or r.name in names]


def _stripe(regions, n_chunks_each: int, make_op):
    """Round-robin one op per chunk over a group of regions."""
    ops = []
    for k in range(n_chunks_each):
        for r in regions:
            ops.append(make_op(r, k))
    return ops


# SDP key-value store ------------------------------------------------------------------

SDP_CONFIGS = {
    "A": dict(engines=4, sbox=4, mac="hmac"),
    "B": dict(engines=4, sbox=16, mac="hmac"),
    "C": dict(engines=4, sbox=16, mac="pmac"),
    "D": dict(engines=8, sbox=16, mac="pmac"),
    "E": dict(engines=16, sbox=16, mac="pmac"),
}


def sdp(engines: int = 4, sbox: int = 4, mac="hmac", file_bytes: int = MIB,
        key_bits: int = 128, seed: int = 0) -> Workload:
    """Two engine sets (storage, TLS) with 16 KiB buffers and 4 KiB chunks.

    One get: a file is read from storage and streamed out over TLS.
    """
    mk = _mac(mac)
    # each engine set pairs every AES engine with a MAC engine
    sets = tuple(EngineSetConfig(i, engines, sbox, key_bits, mk, engines) for i in (0, 1))
    regions = layout([
        RegionSpec("storage", file_bytes, 4096, 0, Mode.READ_WRITE, 16 * KIB),
        RegionSpec("tls", file_bytes, 4096, 1, Mode.STREAM_WRITE, 16 * KIB),
    ])
    storage, tls = regions
    rng = random.Random(f"sdp:{seed}")
    ops = []
    for k in range(file_bytes // 4096):
        ops.append(TraceOp("R", storage.chunk_addr(k), 4096))
        ops.append(TraceOp("W", tls.chunk_addr(k), 4096, f"rand:{rng.getrandbits(48)}"))
    cfg = ShieldConfig(regions, sets).validate()
    return Workload("sdp", cfg, ops, _preload_all([storage], seed))


# vector add ----------------------------------------------------------------------------

def vecadd(vector_bytes: int = MIB, sbox: int = 4, key_bits: int = 128, seed: int = 0,
           buffer_bytes: int = 2 * KIB) -> Workload:
    """c = a + b; each of the three vectors is split over four engine sets
    (12 sets), each with one AES and one HMAC engine and 512-byte chunks."""
    c_mem = 512
    quarter = vector_bytes // 4
    if quarter % c_mem or quarter == 0:
        raise ConfigError("vector size must be a multiple of 2 KiB")
    specs, sets = [], []
    for v, vec in enumerate("abc"):
        for q in range(4):
            sid = 4 * v + q
            sets.append(EngineSetConfig(sid, 1, sbox, key_bits, MacKind.HMAC, 1))
            mode = Mode.STREAM_WRITE if vec == "c" else Mode.READ_ONLY
            specs.append(RegionSpec(f"{vec}{q}", quarter, c_mem, sid, mode, buffer_bytes))
    regions = layout(specs)
    cfg = ShieldConfig(regions, tuple(sets)).validate()
    rng = random.Random(f"vecadd:{seed}")
    ops = []
    per = quarter // c_mem
    for q in range(4):
        a, b, c = regions[q], regions[4 + q], regions[8 + q]
        for k in range(per):
            ops.append(TraceOp("R", a.chunk_addr(k), c_mem))
            ops.append(TraceOp("R", b.chunk_addr(k), c_mem))
            ops.append(TraceOp("W", c.chunk_addr(k), c_mem, f"rand:{rng.getrandbits(48)}"))
    return Workload("vecadd", cfg, ops, _preload_all(regions[:8], seed))


# accelerator workloads ------------------------------------------------------------------

def _sets(n: int, first: int, aes: int, sbox: int, key_bits: int, mac=MacKind.HMAC,
          mac_engines: int = 1):
    return [EngineSetConfig(first + i, aes, sbox, key_bits, mac, mac_engines) for i in range(n)]


def conv(sbox: int = 4, key_bits: int = 128, seed: int = 0, region_bytes: int = 32 * KIB) -> Workload:
    """Batched streaming: 8 input sets (128 KiB buffer total), 4 output sets (64 KiB)."""
    c_mem = 512
    sets = _sets(8, 0, 1, sbox, key_bits) + _sets(4, 8, 1, sbox, key_bits)
    specs = [RegionSpec(f"in{i}", region_bytes, c_mem, i, Mode.READ_ONLY, 16 * KIB)
             for i in range(8)]
    specs += [RegionSpec(f"out{i}", region_bytes, c_mem, 8 + i, Mode.STREAM_WRITE, 16 * KIB)
              for i in range(4)]
    regions = layout(specs)
    rng = random.Random(f"conv:{seed}")
    per = region_bytes // c_mem
    ops = _stripe(regions[:8], per, lambda r, k: TraceOp("R", r.chunk_addr(k), c_mem))
    ops += _stripe(regions[8:], per, lambda r, k: TraceOp(
        "W", r.chunk_addr(k), c_mem, f"rand:{rng.getrandbits(48)}"))
    return Workload("conv", ShieldConfig(regions, tuple(sets)).validate(), ops,
                    _preload_all(regions[:8], seed))


def digit(sbox: int = 4, key_bits: int = 128, seed: int = 0, region_bytes: int = 32 * KIB) -> Workload:
    """Unbatched streaming in small bursts: 2 input sets, 1 output set, 12 KiB buffers."""
    c_mem, burst = 512, 64
    sets = _sets(3, 0, 1, sbox, key_bits)
    specs = [RegionSpec("in0", region_bytes, c_mem, 0, Mode.READ_ONLY, 12 * KIB),
             RegionSpec("in1", region_bytes, c_mem, 1, Mode.READ_ONLY, 12 * KIB),
             RegionSpec("out", region_bytes // 4, c_mem, 2, Mode.STREAM_WRITE, 12 * KIB)]
    regions = layout(specs)
    rng = random.Random(f"digit:{seed}")
    ops = []
    for k in range(region_bytes // burst):
        for r in regions[:2]:
            ops.append(TraceOp("R", r.base + k * burst, burst))
        if k % 16 == 15:
            out = regions[2]
            j = (k // 16) % (out.size // burst)
            ops.append(TraceOp("W", out.base + j * burst, burst, f"rand:{rng.getrandbits(48)}"))
    return Workload("digit", ShieldConfig(regions, tuple(sets)).validate(), ops,
                    _preload_all(regions[:2], seed))


def affine(sbox: int = 4, key_bits: int = 128, seed: int = 0, region_bytes: int = 32 * KIB) -> Workload:
    """Each 64-byte input chunk read once in a scattered order; 8 input sets
    (32 KiB buffer total) and 4 output sets (16 KiB), counters off."""
    c_mem = 64
    sets = _sets(8, 0, 1, sbox, key_bits) + _sets(4, 8, 1, sbox, key_bits)
    specs = [RegionSpec(f"in{i}", region_bytes, c_mem, i, Mode.READ_ONLY, 4 * KIB)
             for i in range(8)]
    specs += [RegionSpec(f"out{i}", region_bytes, c_mem, 8 + i, Mode.STREAM_WRITE, 4 * KIB)
              for i in range(4)]
    regions = layout(specs)
    rng = random.Random(f"affine:{seed}")
    per = region_bytes // c_mem
    reads = [(r, k) for r in regions[:8] for k in range(per)]
    rng.shuffle(reads)
    ops = [TraceOp("R", r.chunk_addr(k), c_mem) for r, k in reads]
    ops += _stripe(regions[8:], per, lambda r, k: TraceOp(
        "W", r.chunk_addr(k), c_mem, f"rand:{rng.getrandbits(48)}"))
    return Workload("affine", ShieldConfig(regions, tuple(sets)).validate(), ops,
                    _preload_all(regions[:8], seed))


DNNWEAVER_FMAP_RMW = 3000


def dnnweaver(weights_mac="hmac", weights_mac_engines: int = 1, sbox: int = 16,
              key_bits: int = 128, seed: int = 0, weight_passes: int = 4,
              fmap_rmw: int = DNNWEAVER_FMAP_RMW) -> Workload:
    """Streamed 4 KiB weight chunks plus read-modify-write traffic on a 1 MiB
    feature-map region with 64-byte chunks and 8-bit integrity counters.

    Each weight set and feature-map set has 4 AES engines; the weights use
    HMAC (1 engine) or PMAC (``weights_mac_engines``).
    """
    sets = (EngineSetConfig(0, 4, sbox, key_bits, _mac(weights_mac), weights_mac_engines),
            EngineSetConfig(1, 4, sbox, key_bits, MacKind.HMAC, 1))
    regions = layout([
        RegionSpec("weights", 256 * KIB, 4096, 0, Mode.READ_ONLY, 128 * KIB),
        RegionSpec("fmap", MIB, 64, 1, Mode.READ_WRITE, 64 * KIB, counters=True, counter_bits=8),
    ])
    weights, fmap = regions
    rmw = gen_trace("RMW", TraceParams(fmap.base, fmap.size, 64, n_ops=fmap_rmw), seed)
    stream = [TraceOp("R", weights.chunk_addr(k), 4096)
              for _ in range(weight_passes) for k in range(weights.n_chunks)]
    # interleave: a few feature-map updates after each weight burst
    ops, j = [], 0
    step = max(1, len(rmw) // max(1, len(stream)))
    for op in stream:
        ops.append(op)
        ops.extend(rmw[j:j + step])
        j += step
    ops.extend(rmw[j:])
    return Workload("dnnweaver", ShieldConfig(regions, sets).validate(), ops,
                    _preload_all(regions, seed))


def bitcoin(sbox: int = 4, key_bits: int = 128, seed: int = 0, rounds: int = 64) -> Workload:
    """Register interface only: block header words in, nonce out."""
    cfg = ShieldConfig((), (EngineSetConfig(0, 1, sbox, key_bits),), register_count=32).validate()
    ops = gen_trace("REG", TraceParams(0, 0, 1, n_ops=rounds, registers=32), seed)
    return Workload("bitcoin", cfg, ops)


def ra(seed: int = 0, n_ops: int = 4000, working_set: int = 8 * KIB,
       buffer_bytes: int = 16 * KIB, c_mem: int = 64) -> Workload:
    """Random accesses confined to a working set that fits in the buffer."""
    regions = layout([RegionSpec("data", 64 * KIB, c_mem, 0, Mode.READ_WRITE, buffer_bytes)])
    cfg = ShieldConfig(regions, (EngineSetConfig(0, 1, 16, 128),)).validate()
    r = regions[0]
    ops = gen_trace("RA", TraceParams(r.base, r.size, c_mem, n_ops=n_ops,
                                      working_set=working_set, write_fraction=0.25), seed)
    return Workload("ra", cfg, ops, _preload_all(regions, seed))


# randomized mixed workloads for the transparency oracle ---------------------------------

def random_workload(seed: int, n_ops: int = 40) -> Workload:
    """A small random configuration with a mixed STR/RA/RMW/REG trace."""
    rng = random.Random(f"mixed:{seed}")
    n_regions = rng.randint(1, 3)
    specs, sets = [], []
    for i in range(n_regions):
        c_mem = rng.choice((16, 32, 64, 128, 512))
        n_chunks = rng.randint(4, 16)
        mode = rng.choice((Mode.READ_WRITE, Mode.READ_WRITE, Mode.STREAM_WRITE, Mode.READ_ONLY))
        specs.append(RegionSpec(f"r{i}", c_mem * n_chunks, c_mem, i, mode,
                                c_mem * rng.randint(1, 4), counters=rng.random() < 0.5,
                                counter_bits=rng.choice((8, 16, 32))))
        sets.append(EngineSetConfig(i, rng.randint(1, 4), rng.choice((4, 16)),
                                    rng.choice((128, 256)), rng.choice(list(MacKind)),
                                    rng.randint(1, 2)))
    regions = layout(specs)
    cfg = ShieldConfig(regions, tuple(sets), register_count=8).validate()
    preloads = [(r.base, r.size, f"rand:{seed * 7 + r.region_id}") for r in regions
                if r.mode is not Mode.STREAM_WRITE or rng.random() < 0.5]
    ops: list[TraceOp] = []
    while len(ops) < n_ops:
        r = rng.choice(regions)
        pattern = rng.choice(("STR", "RA", "RMW", "REG", "PARTIAL"))
        sub_seed = rng.getrandbits(32)
        n = rng.randint(2, 6)
        if pattern == "REG":
            ops += gen_trace("REG", TraceParams(0, 0, 1, n_ops=n, registers=8), sub_seed)
        elif pattern == "STR":
            k = rng.randrange(r.n_chunks)
            n = min(n, r.n_chunks - k)
            write = r.mode is not Mode.READ_ONLY and rng.random() < 0.5
            ops += gen_trace("STR", TraceParams(r.chunk_addr(k), r.end - r.chunk_addr(k), r.c_mem,
                                                n_ops=n, write=write), sub_seed)
        elif pattern == "RA" or r.mode is not Mode.READ_WRITE:
            # stream_write regions only ever take whole-chunk writes
            wf = 0.0 if r.mode is Mode.READ_ONLY else 0.4
            ops += gen_trace("RA", TraceParams(r.base, r.size, r.c_mem, n_ops=n,
                                               write_fraction=wf), sub_seed)
        elif pattern == "RMW":
            size = rng.choice((4, 8, 16, r.c_mem))
            size = min(size, r.c_mem)
            ops += gen_trace("RMW", TraceParams(r.base, r.size, r.c_mem, n_ops=n,
                                                access_size=size), sub_seed)
        else:
            # unaligned accesses that may straddle chunk boundaries
            for _ in range(n):
                a = rng.randrange(r.size)
                length = rng.randint(1, min(r.size - a, 3 * r.c_mem))
                if rng.random() < 0.5:
                    ops.append(TraceOp("R", r.base + a, length))
                else:
                    ops.append(TraceOp("W", r.base + a, length, f"rand:{rng.getrandbits(48)}"))
        if rng.random() < 0.15:
            ops.append(TraceOp("FLUSH"))
    return Workload(f"mixed-{seed}", cfg, ops, preloads)


PRESETS = {
    "sdp": sdp,
    "vecadd": vecadd,
    "conv": conv,
    "digit": digit,
    "affine": affine,
    "dnnweaver": dnnweaver,
    "bitcoin": bitcoin,
    "ra": ra,
}


def build_preset(name: str, **kw) -> Workload:
    try:
        fn = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}") from None
    return fn(**kw)
