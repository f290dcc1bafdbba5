"""Shield configuration: memory regions, engine sets, register interface.

Text format (line oriented, ``#`` comments)::

    [shield]
    registers = 16
    register_mode = plain          # plain | encaddr

    [engine_set 0]
    aes_engines = 4
    sbox = 16                      # 4 | 16
    key_bits = 128                 # 128 | 256
    mac = hmac                     # hmac | pmac
    mac_engines = 1

    [region weights]
    id = 0
    base = 0x0
    size = 0x100000
    c_mem = 4096
    tag_base = 0x10000000
    mode = ro                      # rw | stream_write | ro
    counters = off                 # on | off
    counter_bits = 8
    buffer_bytes = 131072
    engine_set = 0
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..errors import ConfigError

TAG_BYTES = 16
IV_BYTES = 12
# per-chunk metadata record in DRAM: tag || iv
META_BYTES = TAG_BYTES + IV_BYTES
MAX_CHUNKS = 1 << 40


class Mode(enum.Enum):
    READ_WRITE = "rw"
    STREAM_WRITE = "stream_write"
    READ_ONLY = "ro"


class MacKind(enum.Enum):
    HMAC = "hmac"
    PMAC = "pmac"


class RegisterMode(enum.Enum):
    PLAIN = "plain"
    ENCRYPTED_ADDRESS = "encaddr"


@dataclass(frozen=True)
class EngineSetConfig:
    set_id: int
    aes_engines: int = 1
    sbox_parallelism: int = 4
    key_bits: int = 128
    mac_kind: MacKind = MacKind.HMAC
    mac_engines: int = 1

    @property
    def key_bytes(self) -> int:
        return self.key_bits // 8


@dataclass(frozen=True)
class MemoryRegion:
    region_id: int
    base: int
    size: int
    c_mem: int
    tag_base: int
    mode: Mode = Mode.READ_WRITE
    counters_enabled: bool = False
    counter_bits: int = 32
    buffer_bytes: int = 0
    engine_set_id: int = 0
    name: str = ""

    @property
    def n_chunks(self) -> int:
        return self.size // self.c_mem

    @property
    def tag_size(self) -> int:
        return self.n_chunks * META_BYTES

    @property
    def end(self) -> int:
        return self.base + self.size

    @property
    def buffer_lines(self) -> int:
        return self.buffer_bytes // self.c_mem

    def contains(self, addr: int) -> bool:
        return self.base <= addr < self.end

    def chunk_addr(self, i: int) -> int:
        return self.base + i * self.c_mem

    def meta_addr(self, i: int) -> int:
        return self.tag_base + i * META_BYTES


@dataclass(frozen=True)
class ShieldConfig:
    regions: tuple[MemoryRegion, ...] = ()
    engine_sets: tuple[EngineSetConfig, ...] = ()
    register_count: int = 16
    register_mode: RegisterMode = RegisterMode.PLAIN
    # section header line per region/engine-set name, for diagnostics only
    _lines: dict = field(default_factory=dict, compare=False, repr=False)

    def engine_set(self, set_id: int) -> EngineSetConfig:
        for es in self.engine_sets:
            if es.set_id == set_id:
                return es
        raise KeyError(set_id)

    def region(self, key) -> MemoryRegion:
        """Look a region up by numeric id or by name."""
        for r in self.regions:
            if r.region_id == key or (isinstance(key, str) and r.name == key):
                return r
        raise KeyError(key)

    def memory_end(self) -> int:
        ends = [r.end for r in self.regions] + [r.tag_base + r.tag_size for r in self.regions]
        return max(ends, default=0)

    def validate(self) -> ShieldConfig:
        def fail(msg, key=None):
            raise ConfigError(msg, self._lines.get(key))

        if self.register_count < 1:
            fail("register_count must be >= 1", "shield")
        set_ids = set()
        for es in self.engine_sets:
            where = ("engine_set", es.set_id)
            if es.set_id in set_ids:
                fail(f"duplicate engine set id {es.set_id}", where)
            set_ids.add(es.set_id)
            if es.aes_engines < 1 or es.mac_engines < 1:
                fail(f"engine set {es.set_id}: aes_engines and mac_engines must be >= 1", where)
            if es.sbox_parallelism not in (4, 16):
                fail(f"engine set {es.set_id}: sbox must be 4 or 16", where)
            if es.key_bits not in (128, 256):
                fail(f"engine set {es.set_id}: key_bits must be 128 or 256", where)
        ids, names = set(), set()
        for r in self.regions:
            where = ("region", r.name or r.region_id)
            label = r.name or str(r.region_id)
            if not 0 <= r.region_id < 1 << 16:
                fail(f"region {label}: id must fit in 16 bits", where)
            if r.region_id in ids:
                fail(f"duplicate region id {r.region_id} (region {label})", where)
            ids.add(r.region_id)
            if r.name and r.name in names:
                fail(f"duplicate region name {r.name}", where)
            names.add(r.name)
            if r.size <= 0 or r.c_mem <= 0:
                fail(f"region {label}: size and c_mem must be positive", where)
            if r.size % r.c_mem:
                fail(f"region {label}: c_mem {r.c_mem} does not divide size {r.size:#x}", where)
            if r.n_chunks >= MAX_CHUNKS:
                fail(f"region {label}: too many chunks", where)
            if r.engine_set_id not in set_ids:
                fail(f"region {label}: unknown engine set {r.engine_set_id}", where)
            if r.buffer_bytes < r.c_mem:
                fail(f"region {label}: buffer_bytes must hold at least one {r.c_mem}-byte line",
                     where)
            if not 1 <= r.counter_bits <= 64:
                fail(f"region {label}: counter_bits must be in 1..64", where)
            if r.base < 0 or r.tag_base < 0:
                fail(f"region {label}: negative address", where)
        spans = []
        for r in self.regions:
            label = r.name or str(r.region_id)
            spans.append((r.base, r.end, f"region {label} data", ("region", r.name or r.region_id)))
            spans.append((r.tag_base, r.tag_base + r.tag_size, f"region {label} tags",
                          ("region", r.name or r.region_id)))
        spans.sort()
        for (a0, a1, an, _), (b0, b1, bn, bkey) in zip(spans, spans[1:]):
            if b0 < a1:
                fail(f"{an} [{a0:#x},{a1:#x}) overlaps {bn} [{b0:#x},{b1:#x})", bkey)
        return self


# text format ------------------------------------------------------------------------

_BOOL = {"on": True, "off": False, "true": True, "false": False, "1": True, "0": False}


def _int(v: str) -> int:
    return int(v.replace("_", ""), 0)


def iter_sections(text: str):
    """Yield ``(header_tokens, header_line, [(key, value, line), ...])`` per section.

    Lines before the first header belong to a section with empty header.
    Lines that are not ``key = value`` are passed through with value ``None``.
    """
    header, hline, body = (), 0, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("unterminated section header", lineno)
            if header or body:
                yield header, hline, body
            header, hline, body = tuple(line[1:-1].split()), lineno, []
            if not header:
                raise ConfigError("empty section header", lineno)
            continue
        if "=" in line and not line.split("=", 1)[0].strip().count(" "):
            k, v = line.split("=", 1)
            body.append((k.strip(), v.strip(), lineno))
        else:
            body.append((line, None, lineno))
    if header or body:
        yield header, hline, body


def _enum(cls, value, line, key):
    try:
        return cls(value)
    except ValueError:
        choices = "|".join(m.value for m in cls)
        raise ConfigError(f"{key} must be one of {choices}, got {value!r}", line) from None


def parse_sections(sections) -> ShieldConfig:
    """Build a config from already-split sections, ignoring non-shield sections."""
    regions, sets = [], []
    registers, reg_mode = 16, RegisterMode.PLAIN
    lines = {}
    for header, hline, body in sections:
        kind = header[0] if header else ""
        if kind == "shield":
            lines["shield"] = hline
            for k, v, ln in body:
                if v is None:
                    raise ConfigError(f"expected key = value, got {k!r}", ln)
                if k == "registers":
                    registers = _convert(_int, v, ln, k)
                elif k == "register_mode":
                    reg_mode = _enum(RegisterMode, v, ln, k)
                else:
                    raise ConfigError(f"unknown key {k!r} in [shield]", ln)
        elif kind == "engine_set":
            if len(header) != 2:
                raise ConfigError("expected [engine_set <id>]", hline)
            sid = _convert(_int, header[1], hline, "engine_set id")
            kw = {}
            for k, v, ln in body:
                if v is None:
                    raise ConfigError(f"expected key = value, got {k!r}", ln)
                if k in ("aes_engines", "mac_engines"):
                    kw[k] = _convert(_int, v, ln, k)
                elif k == "sbox":
                    kw["sbox_parallelism"] = _convert(_int, v.rstrip("x"), ln, k)
                elif k == "key_bits":
                    kw[k] = _convert(_int, v, ln, k)
                elif k == "mac":
                    kw["mac_kind"] = _enum(MacKind, v.lower(), ln, k)
                else:
                    raise ConfigError(f"unknown key {k!r} in [engine_set {sid}]", ln)
            lines[("engine_set", sid)] = hline
            sets.append(EngineSetConfig(sid, **kw))
        elif kind == "region":
            if len(header) != 2:
                raise ConfigError("expected [region <name>]", hline)
            name = header[1]
            kw = {"name": name}
            required = {"id", "base", "size", "c_mem", "tag_base"}
            for k, v, ln in body:
                if v is None:
                    raise ConfigError(f"expected key = value, got {k!r}", ln)
                if k in ("id", "base", "size", "c_mem", "tag_base", "counter_bits",
                         "buffer_bytes", "engine_set"):
                    field_name = {"id": "region_id", "engine_set": "engine_set_id"}.get(k, k)
                    kw[field_name] = _convert(_int, v, ln, k)
                elif k == "mode":
                    kw["mode"] = _enum(Mode, v, ln, k)
                elif k == "counters":
                    if v.lower() not in _BOOL:
                        raise ConfigError(f"counters must be on|off, got {v!r}", ln)
                    kw["counters_enabled"] = _BOOL[v.lower()]
                else:
                    raise ConfigError(f"unknown key {k!r} in [region {name}]", ln)
                required.discard(k)
            if required:
                raise ConfigError(f"region {name}: missing {', '.join(sorted(required))}", hline)
            kw.setdefault("buffer_bytes", kw["c_mem"])
            lines[("region", name)] = hline
            regions.append(MemoryRegion(**kw))
    cfg = ShieldConfig(tuple(regions), tuple(sets), registers, reg_mode, lines)
    return cfg.validate()


def _convert(fn, v, line, key):
    try:
        return fn(v)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {v!r}", line) from None


def parse_config(text: str) -> ShieldConfig:
    """Parse and validate a Shield config; errors carry the offending line number."""
    sections = list(iter_sections(text))
    for header, hline, body in sections:
        if header and header[0] not in ("shield", "engine_set", "region"):
            raise ConfigError(f"unknown section [{' '.join(header)}]", hline)
        if not header and body:
            raise ConfigError("key outside of any section", body[0][2])
    return parse_sections(sections)


def format_config(cfg: ShieldConfig) -> str:
    out = ["[shield]", f"registers = {cfg.register_count}",
           f"register_mode = {cfg.register_mode.value}", ""]
    for es in cfg.engine_sets:
        out += [f"[engine_set {es.set_id}]",
                f"aes_engines = {es.aes_engines}",
                f"sbox = {es.sbox_parallelism}",
                f"key_bits = {es.key_bits}",
                f"mac = {es.mac_kind.value}",
                f"mac_engines = {es.mac_engines}", ""]
    for r in cfg.regions:
        out += [f"[region {r.name or 'r%d' % r.region_id}]",
                f"id = {r.region_id}",
                f"base = {r.base:#x}",
                f"size = {r.size:#x}",
                f"c_mem = {r.c_mem}",
                f"tag_base = {r.tag_base:#x}",
                f"mode = {r.mode.value}",
                f"counters = {'on' if r.counters_enabled else 'off'}",
                f"counter_bits = {r.counter_bits}",
                f"buffer_bytes = {r.buffer_bytes}",
                f"engine_set = {r.engine_set_id}", ""]
    return "\n".join(out)


def override(cfg: ShieldConfig, key: str, value: str) -> ShieldConfig:
    """Return a copy with one parameter changed, as used by parameter sweeps.

    ``key`` is either a bare key (applied to every engine set or region that
    has it) or qualified as ``engine_set.<id>.<key>`` / ``region.<name>.<key>``.
    """
    text = format_config(cfg)
    parts = key.split(".")
    if len(parts) == 3:
        scope, which, k = parts
    elif len(parts) == 1:
        scope, which, k = None, None, parts[0]
    else:
        raise ConfigError(f"bad override key {key!r}")
    out, section, touched = [], None, False
    for line in text.splitlines():
        s = line.strip()
        if s.startswith("["):
            section = s[1:-1].split()
        elif "=" in s:
            lk = s.split("=", 1)[0].strip()
            in_scope = scope is None or (section[0] == scope and section[1] == which)
            if lk == k and in_scope:
                line = f"{lk} = {value}"
                touched = True
        out.append(line)
    if not touched:
        raise ConfigError(f"override key {key!r} matches nothing")
    return parse_config("\n".join(out))

