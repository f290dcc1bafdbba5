"""Scenario files and the end-to-end runner.

A scenario file uses the config line grammar. Sections run in file order::

    [scenario]
    name = replay-counters
    seed = 7
    device serial=1 seed=<64 hex digits>
    kernel = security-kernel-v1
    preset = dnnweaver            # or inline [shield]/[engine_set]/[region] sections
    preset.fmap_rmw = 200

    [preload <label>]             # owner data sealed into DRAM before the run
    region = input
    payload = rand:5

    [trace <label>]               # generated (pattern = STR|RA|RMW|REG) or literal op lines
    pattern = RMW
    region = scratch

    [attack <n>]
    action = restore scratch 3 s1
    expect = auth_failure

    [expect]
    protocol = ok
"""

from __future__ import annotations

import hashlib
import json
import random
import inspect
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .. import attestation as att
from .. import crypto
from ..errors import (AdversaryError, AuthFailure, ConfigError, TeeError, TraceError)
from ..shield.config import ShieldConfig, iter_sections, override, parse_sections
from ..shield.engine import ShieldState
from ..shield.registers import RegisterClient
from ..sim.adversary import (Adversary, FlipBit, Restore, ScanPlaintext, Snapshot, SpliceChunks,
                             locate, parse_action)
from ..sim.costmodel import CostModelParams, OverheadReport, model_cycles
from ..sim.dram import SimDram
from ..sim.stats import ShieldStats, total
from ..sim.trackers import IvTracker, LeakProbe
from ..trust_chain import CaRegistry, PortEvent, boot, monitor_event, provision_device_from_seed
from .presets import PRESETS, build_preset
from .traces import (ReferenceMemory, TraceOp, TraceParams, accel_register_response, gen_trace,
                     parse_op, parse_trace, payload_bytes)

DEFAULT_KERNEL = b"security-kernel"
PROBE_SAMPLES = 16


def default_params() -> CostModelParams:
    """The calibrated parameters shipped with the package."""
    try:
        text = resources.files("fpga_tee").joinpath("data/calibrated_params.txt").read_text()
    except FileNotFoundError:
        return CostModelParams()
    return CostModelParams.from_text(text)


# scenario description --------------------------------------------------------------------

@dataclass
class Step:
    kind: str               # preload | trace | attack
    label: str
    keys: dict
    ops: list = field(default_factory=list)
    line: int = 0
    base_dir: Path = Path(".")


@dataclass
class Scenario:
    name: str
    seed: int = 0
    device_serial: int | None = None
    device_seed: bytes | None = None
    kernel: bytes = DEFAULT_KERNEL
    trusted_kernel: bool = True
    tamper: str = ""
    cfg: ShieldConfig | None = None
    preset: str = ""
    preset_args: dict = field(default_factory=dict)
    steps: list = field(default_factory=list)
    expect: dict = field(default_factory=dict)
    params_path: str = ""
    overrides: list = field(default_factory=list)   # (key, value) applied to the config
    base_dir: Path = Path(".")

    def with_seed(self, seed: int) -> Scenario:
        return replace(self, seed=seed)

    def with_setting(self, key: str, value: str) -> Scenario:
        """Vary one knob: a preset argument if the preset takes it, else a config key."""
        if self.preset and key in inspect.signature(PRESETS[self.preset]).parameters:
            return replace(self, preset_args={**self.preset_args, key: _literal(value)})
        return replace(self, overrides=[*self.overrides, (key, value)])


def _literal(v: str):
    low = v.lower()
    if low in ("on", "yes", "true"):
        return True
    if low in ("off", "no", "false"):
        return False
    try:
        return int(v.replace("_", ""), 0)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def parse_scenario(text: str, base_dir=".") -> Scenario:
    sections = list(iter_sections(text))
    scn = Scenario(name="scenario", base_dir=Path(base_dir))
    shield_sections = []
    for header, hline, body in sections:
        kind = header[0] if header else ""
        if kind in ("shield", "engine_set", "region"):
            shield_sections.append((header, hline, body))
        elif kind == "scenario":
            _scenario_keys(scn, body)
        elif kind in ("preload", "trace", "attack"):
            label = header[1] if len(header) > 1 else str(len(scn.steps))
            step = Step(kind, label, {}, line=hline, base_dir=Path(base_dir))
            for k, v, ln in body:
                if v is None:
                    if kind != "trace":
                        raise ConfigError(f"expected key = value, got {k!r}", ln)
                    try:
                        step.ops.append(parse_op(k))
                    except TraceError as exc:
                        raise ConfigError(str(exc), ln) from None
                else:
                    step.keys[k] = v
            scn.steps.append(step)
        elif kind == "expect":
            for k, v, ln in body:
                if v is None:
                    raise ConfigError(f"expected key = value, got {k!r}", ln)
                scn.expect[k] = v
        elif header:
            raise ConfigError(f"unknown section [{' '.join(header)}]", hline)
        elif body:
            raise ConfigError("key outside of any section", body[0][2])
    if shield_sections:
        if scn.preset:
            raise ConfigError("a scenario takes either a preset or inline shield sections")
        scn.cfg = parse_sections(shield_sections)
    elif not scn.preset:
        raise ConfigError("scenario has neither a preset nor a shield configuration")
    return scn


def _scenario_keys(scn: Scenario, body) -> None:
    for k, v, ln in body:
        if v is None:
            toks = k.split()
            if toks[0] != "device":
                raise ConfigError(f"expected key = value, got {k!r}", ln)
            kv = dict(t.split("=", 1) for t in toks[1:] if "=" in t)
            try:
                scn.device_serial = int(kv["serial"], 0)
                scn.device_seed = bytes.fromhex(kv["seed"])
            except (KeyError, ValueError):
                raise ConfigError("device line needs serial=<u64> seed=<hex32>", ln) from None
            if len(scn.device_seed) != 32:
                raise ConfigError("device seed must be 32 bytes", ln)
        elif k == "name":
            scn.name = v
        elif k == "seed":
            scn.seed = int(v, 0)
        elif k == "kernel":
            scn.kernel = v.encode()
        elif k == "trusted_kernel":
            scn.trusted_kernel = bool(_literal(v))
        elif k == "tamper":
            scn.tamper = v
        elif k == "preset":
            if v not in PRESETS:
                raise ConfigError(f"unknown preset {v!r}", ln)
            scn.preset = v
        elif k.startswith("preset."):
            scn.preset_args[k[len("preset."):]] = _literal(v)
        elif k == "params":
            scn.params_path = v
        else:
            raise ConfigError(f"unknown key {k!r} in [scenario]", ln)


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), path.parent)


# replay --------------------------------------------------------------------------------

@dataclass
class AttackOutcome:
    label: str
    action: str
    expected: str
    actual: str

    @property
    def ok(self) -> bool:
        return self.expected == self.actual


class Replayer:
    """Drives one Shield instance, its DRAM and the reference memory in lockstep."""

    def __init__(self, cfg: ShieldConfig, dek, tracker: IvTracker | None = None,
                 probe: LeakProbe | None = None, seed: int = 0):
        self.cfg = cfg
        self.tracker = tracker if tracker is not None else IvTracker()
        self.probe = probe if probe is not None else LeakProbe()
        size = max(1 << 16, -(-(cfg.memory_end() + 4096) // 4096) * 4096)
        self.dram = SimDram(size)
        self.shield = ShieldState(cfg, dek, self.tracker)
        self.client = RegisterClient(dek, cfg.register_mode, tracker=self.tracker)
        self.ref = ReferenceMemory(cfg.register_count)
        self.adversary = Adversary(self.dram, cfg)
        self.baseline = ShieldStats()
        self.register_wire: list[bytes] = []
        self.rng = random.Random(f"replay:{seed}")
        self.tampered: set = set()
        self.mismatches: list[str] = []
        self.op_errors: list[str] = []
        self.post_attack_failures = 0
        self.reads = 0

    # -- plaintext bookkeeping for the leak probe --

    def _note_plaintext(self, data: bytes, piece: int = 64) -> None:
        if len(data) <= piece:
            self.probe.add_plaintext(data)
            return
        for _ in range(min(PROBE_SAMPLES, len(data) // piece)):
            off = self.rng.randrange(len(data) - piece + 1)
            self.probe.add_plaintext(data[off:off + piece])

    def _touches_tampered(self, addr: int, length: int) -> bool:
        if not self.tampered:
            return False
        for a in self.shield.decode_burst(addr, length):
            if (a.region.region_id, a.chunk_index) in self.tampered:
                return True
        return False

    def preload(self, addr: int, data: bytes) -> None:
        self.shield.preload(self.dram, addr, data)
        self.ref.write(addr, data)
        self._note_plaintext(data)

    def run(self, ops) -> None:
        for op in ops:
            self.step(op)

    def step(self, op: TraceOp) -> None:
        kind = op.kind
        if kind == "R":
            self.baseline.bursts += 1
            self.baseline.dram_bytes_read += op.length
            tampered = self._touches_tampered(op.addr, op.length)
            try:
                got = self.shield.read(self.dram, op.addr, op.length)
            except AuthFailure as exc:
                if tampered:
                    self.post_attack_failures += 1
                else:
                    self.op_errors.append(f"{op}: {exc}")
                return
            except TeeError as exc:
                self.op_errors.append(f"{op}: {exc}")
                return
            self.reads += 1
            if not tampered and got != self.ref.read(op.addr, op.length):
                self.mismatches.append(str(op))
        elif kind == "W":
            data = op.payload_bytes()
            self.baseline.bursts += 1
            self.baseline.dram_bytes_written += op.length
            try:
                self.shield.write(self.dram, op.addr, data)
            except AuthFailure as exc:
                if not self._touches_tampered(op.addr, op.length):
                    self.op_errors.append(f"{op}: {exc}")
                else:
                    self.post_attack_failures += 1
                return
            except TeeError as exc:
                self.op_errors.append(f"{op}: {exc}")
                return
            self.ref.write(op.addr, data)
            self._note_plaintext(data)
        elif kind == "REG_W":
            self.baseline.register_ops += 1
            wire = self.client.write(op.addr, op.length)
            self.register_wire.append(wire)
            try:
                self.shield.registers.host_write(wire)
            except TeeError as exc:
                self.op_errors.append(f"{op}: {exc}")
                return
            self.ref.reg_write(op.addr, op.length)
            # the modeled accelerator answers in the next register
            regs = self.shield.registers
            if op.addr + 1 < regs.count:
                regs.accel_write(op.addr + 1, accel_register_response(regs.accel_read(op.addr)))
        elif kind == "REG_R":
            self.baseline.register_ops += 1
            try:
                wire = self.shield.registers.host_read(op.addr)
                self.register_wire.append(wire)
                value = self.client.read_reply(wire, op.addr)
            except TeeError as exc:
                self.op_errors.append(f"{op}: {exc}")
                return
            if value != self.ref.regs[op.addr]:
                self.mismatches.append(str(op))
        elif kind == "FLUSH":
            self.flush()
        elif kind == "ATTACK":
            self.attack(op.action)
        else:  # pragma: no cover - parse_op rejects unknown kinds
            raise TraceError(f"unknown op {kind}")

    def flush(self) -> None:
        try:
            self.shield.flush(self.dram)
        except TeeError as exc:
            self.op_errors.append(f"FLUSH: {exc}")

    def attack(self, spec: str, expected: str | None = None, label: str = "") -> AttackOutcome:
        """Flush, tamper with DRAM, then read back whatever the action touched."""
        self.flush()
        toks = spec.replace(":", " ").split()
        if toks and toks[0].lower() == "replay":
            return self._replay(toks[1:], spec, expected, label)
        action = parse_action(spec, self.cfg)
        result = self.adversary.apply(action)
        if isinstance(action, Snapshot):
            return AttackOutcome(label, spec, expected or "ok", "ok")
        if isinstance(action, ScanPlaintext):
            actual = "found" if result else "not_found"
            return AttackOutcome(label, spec, expected or "not_found", actual)
        if isinstance(action, FlipBit):
            where = locate(self.cfg, action.addr)
            targets = [] if where is None else [where]
        elif isinstance(action, SpliceChunks):
            r = self.cfg.region(action.region)
            targets = [(r, action.i), (r, action.j)]
        elif isinstance(action, Restore):
            targets = [(self.cfg.region(action.region), action.i)]
        else:  # pragma: no cover
            raise AdversaryError(f"unsupported action {spec!r}")
        detected = 0
        for r, i in targets:
            self.tampered.add((r.region_id, i))
            try:
                self.shield.read(self.dram, r.chunk_addr(i), r.c_mem)
            except AuthFailure:
                detected += 1
            # the probe must not leave a (possibly forged) line behind
            self.shield.region_state(r.region_id).buffer.pop(i, None)
        actual = "auth_failure" if targets and detected == len(targets) else "undetected"
        return AttackOutcome(label, spec, expected or "auth_failure", actual)

    def _replay(self, args, spec, expected, label) -> AttackOutcome:
        """Snapshot a sealed chunk, let the owner overwrite it, then put the old record back."""
        if len(args) != 2:
            raise AdversaryError(f"bad action {spec!r}: replay <region> <chunk>")
        region = int(args[0], 0) if args[0][0].isdigit() else args[0]
        i = int(args[1], 0)
        r = self.cfg.region(region)
        slot = f"replay-{r.region_id}-{i}"
        self.adversary.apply(Snapshot(region, i, slot))
        fresh = self.rng.randbytes(r.c_mem)
        self.shield.write(self.dram, r.chunk_addr(i), fresh)
        self.ref.write(r.chunk_addr(i), fresh)
        self._note_plaintext(fresh)
        self.flush()
        return self.attack(f"restore {region} {i} {slot}", expected, label)

    def finish(self) -> None:
        self.flush()

    def leaks(self, transcripts=()) -> list[str]:
        return self.probe.scan(self.dram, list(transcripts) + self.register_wire)

    def report(self, params: CostModelParams) -> OverheadReport:
        return model_cycles(self.cfg, params, self.shield.stats, self.baseline)


# running a scenario ------------------------------------------------------------------------

@dataclass
class Report:
    scenario: str
    seed: int
    fields: dict
    expectations: list        # (key, expected, actual)
    transcript_hex: str = ""

    @property
    def mismatches(self) -> list:
        return [e for e in self.expectations if e[1] != e[2]]

    @property
    def ok(self) -> bool:
        return not self.mismatches

    def to_text(self) -> str:
        lines = [f"scenario={self.scenario}", f"seed={self.seed}"]
        lines += [f"{k}={v}" for k, v in self.fields.items()]
        for key, exp, act in self.expectations:
            verdict = "pass" if exp == act else "FAIL"
            lines.append(f"expect.{key}={verdict} expected={exp} actual={act}")
        lines.append(f"result={'pass' if self.ok else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps({
            "scenario": self.scenario,
            "seed": self.seed,
            "fields": self.fields,
            "expectations": [{"key": k, "expected": e, "actual": a, "pass": e == a}
                             for k, e, a in self.expectations],
            "pass": self.ok,
        }, indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    def write(self, out_dir) -> Path:
        d = Path(out_dir) / self.scenario
        d.mkdir(parents=True, exist_ok=True)
        (d / "report.txt").write_text(self.to_text())
        (d / "report.json").write_text(self.to_json() + "\n")
        (d / "transcript.hex").write_text(self.transcript_hex)
        return d


def _device(scn: Scenario, rng: random.Random):
    serial = scn.device_serial if scn.device_serial is not None else 1
    seed = scn.device_seed if scn.device_seed is not None else rng.randbytes(32)
    registry = CaRegistry()
    identity, _ = provision_device_from_seed(serial, seed, registry)
    return identity, registry


def workload_for(scn: Scenario):
    """The preset workload with overrides applied, or None for inline configs."""
    if not scn.preset:
        return None
    try:
        w = build_preset(scn.preset, seed=scn.seed, **scn.preset_args)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"preset {scn.preset}: {exc}") from None
    return replace(w, cfg=_apply_overrides(w.cfg, scn.overrides))


def _apply_overrides(cfg: ShieldConfig, overrides) -> ShieldConfig:
    for key, value in overrides:
        cfg = override(cfg, key, value)
    return cfg


def _region_range(cfg: ShieldConfig, keys: dict):
    try:
        r = cfg.region(keys.get("region", cfg.regions[0].name if cfg.regions else ""))
    except (KeyError, IndexError):
        raise ConfigError(f"unknown region {keys.get('region')!r}") from None
    offset = int(keys.get("offset", "0"), 0)
    length = int(keys.get("length", str(r.size - offset)), 0)
    if offset < 0 or length < 0 or offset + length > r.size:
        raise ConfigError(f"range outside region {r.name}")
    return r, r.base + offset, length


def _trace_ops(cfg: ShieldConfig, step: Step, scn_seed: int) -> list[TraceOp]:
    keys = step.keys
    if "file" in keys:
        return parse_trace((step.base_dir / keys["file"]).read_text())
    if "pattern" not in keys:
        return step.ops
    pattern = keys["pattern"].upper()
    seed = int(keys.get("seed", str(scn_seed)), 0)
    if pattern == "REG":
        return gen_trace("REG", TraceParams(0, 0, 1, n_ops=int(keys.get("n_ops", "16"), 0),
                                            registers=cfg.register_count), seed)
    r, start, length = _region_range(cfg, keys)
    params = TraceParams(
        start, length, r.c_mem,
        n_ops=int(keys.get("n_ops", str(length // r.c_mem)), 0),
        access_size=int(keys.get("access", "0"), 0),
        working_set=int(keys.get("working_set", "0"), 0),
        write=bool(_literal(keys.get("write", "off"))),
        write_fraction=float(keys.get("write_fraction", "0")),
        registers=cfg.register_count,
        region_end=r.end,
    )
    return gen_trace(pattern, params, seed) + step.ops


def run_scenario(scn: Scenario, params: CostModelParams | None = None,
                 extra_attacks=(), tracker: IvTracker | None = None) -> Report:
    """Provision, boot, attest, provision the DEK, replay the trace with
    attacks interleaved, flush, and check every invariant."""
    # name and seed together pick the session randomness, so two scenarios never share a DEK
    rng = random.Random(f"scenario:{scn.name}:{scn.seed}")
    if params is None:
        params = (CostModelParams.load(scn.base_dir / scn.params_path) if scn.params_path
                  else default_params())
    workload = workload_for(scn)
    cfg = workload.cfg if workload else _apply_overrides(scn.cfg, scn.overrides)
    fields: dict = {}
    expectations: list = []

    # trust chain and attestation
    identity, registry = _device(scn, rng)
    if scn.trusted_kernel:
        registry.trust_kernel(crypto.hash(scn.kernel))
    ctx = boot(identity, scn.kernel)
    if scn.tamper:
        monitor_event(ctx, PortEvent(scn.tamper))
    vendor = att.IpVendor.create(registry, cfg, rng)
    owner = att.DataOwner(1)
    channel = att.ProxyChannel()
    outcome = att.run_protocol(ctx, vendor, owner, channel, rng)
    protocol = "ok" if outcome.ok else type(outcome.error).__name__
    fields["protocol"] = protocol
    fields["protocol.stage"] = outcome.stage
    fields["protocol.session_keys_equal"] = str(outcome.keys_agree).lower()
    expectations.append(("protocol", scn.expect.get("protocol", "ok"), protocol))

    probe = LeakProbe()
    secrets = {
        "bitstr_key": vendor.bitstr_key.raw,
        "shield_private": vendor.shield_keypair.private_bytes,
        "device_private": identity.device_keypair.private_bytes,
        "aes_device_key": identity.aes_device_key.raw,
        "attest_private": ctx.attest_keypair.private_bytes,
    }
    if outcome.dek is not None:
        secrets["dek"] = outcome.dek.raw
    for label, value in secrets.items():
        probe.add_secret(label, value)

    transcript = channel.transcript()
    if not outcome.ok:
        hits = probe.scan(None, transcript)
        fields["leaks"] = len(hits)
        expectations.append(("leaks", scn.expect.get("leaks", "0"), str(len(hits))))
        return Report(scn.name, scn.seed, fields, expectations, channel.transcript_hex())

    # the Shield runs with the configuration carried inside the bitstream
    loaded_cfg = outcome.loaded.shield_config
    rep = Replayer(loaded_cfg, outcome.shield_dek, tracker, probe, scn.seed)
    if workload:
        for addr, length, spec in workload.preloads:
            rep.preload(addr, payload_bytes(spec, length))
        rep.run(workload.ops)
    attacks: list[AttackOutcome] = []
    for step in scn.steps:
        if step.kind == "preload":
            r, start, length = _region_range(loaded_cfg, step.keys)
            rep.preload(start, payload_bytes(step.keys.get("payload", f"rand:{scn.seed}"), length))
        elif step.kind == "trace":
            rep.run(_trace_ops(loaded_cfg, step, scn.seed))
        elif step.kind == "attack":
            if "action" not in step.keys:
                raise ConfigError(f"[attack {step.label}] needs an action", step.line)
            exp = step.keys.get("expect") or scn.expect.get(f"attack.{step.label}")
            attacks.append(rep.attack(step.keys["action"], exp, step.label))
    for n, (spec, exp) in enumerate(extra_attacks, 1):
        attacks.append(rep.attack(spec, exp, f"cli{n}"))
    rep.finish()

    st = total(rep.shield.stats)
    for k, v in st.as_dict().items():
        fields[f"stats.{k}"] = v
    fields["stats.hit_rate"] = f"{st.hit_rate:.4f}"
    for sid in sorted(rep.shield.stats):
        s = rep.shield.stats[sid]
        fields[f"set{sid}.aes_bytes"] = s.aes_bytes
        fields[f"set{sid}.mac_bytes"] = s.mac_bytes
        fields[f"set{sid}.dram_bytes"] = s.dram_bytes
    fields["baseline.bursts"] = rep.baseline.bursts
    fields["baseline.bytes"] = rep.baseline.dram_bytes
    fields["baseline.register_ops"] = rep.baseline.register_ops
    ovh = rep.report(params)
    for k, v in ovh.as_dict().items():
        fields[f"model.{k}"] = v

    fields["reads_checked"] = rep.reads
    fields["post_attack_failures"] = rep.post_attack_failures
    transparency = "pass" if not rep.mismatches else f"fail:{len(rep.mismatches)}"
    expectations.append(("transparency", scn.expect.get("transparency", "pass"), transparency))
    expectations.append(("op_errors", scn.expect.get("op_errors", "0"), str(len(rep.op_errors))))
    for e in rep.op_errors[:5]:
        fields.setdefault("op_error.first", e)
    for a in attacks:
        fields[f"attack.{a.label}"] = f"{a.action} -> {a.actual}"
        expectations.append((f"attack.{a.label}", a.expected, a.actual))

    dups = rep.tracker.duplicates()
    fields["iv.seals"] = rep.tracker.count
    fields["iv.duplicates"] = dups
    expectations.append(("iv_unique", scn.expect.get("iv_unique", "yes"),
                         "yes" if dups == 0 else "no"))
    hits = rep.leaks(transcript)
    fields["leaks"] = len(hits)
    if hits:
        fields["leaks.first"] = hits[0]
    expectations.append(("leaks", scn.expect.get("leaks", "0"), str(len(hits))))
    return Report(scn.name, scn.seed, fields, expectations, channel.transcript_hex())


def workload_stats(workload, dek: bytes = bytes(32), tracker=None):
    """Replay a workload without the protocol; used by calibration and sweeps."""
    rep = Replayer(workload.cfg, dek, tracker, LeakProbe(max_plaintexts=0))
    for addr, length, spec in workload.preloads:
        rep.preload(addr, payload_bytes(spec, length))
    rep.run(workload.ops)
    rep.finish()
    return rep

