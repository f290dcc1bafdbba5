import hashlib
import hmac
import random
import struct

import pytest

from fpga_tee import crypto
from fpga_tee.errors import (AuthFailure, ConfigError, CounterOverflowError, CrossRegionFault,
                             PermissionFault, RegionFault, RegisterError, StaleCounterError)
from fpga_tee.shield import (BurstRequest, RegisterClient, RegisterMode, ShieldState, chunk_open,
                             chunk_seal, decode_burst, flush, format_config, new_shield,
                             parse_config, reg_accel_read, reg_accel_write, reg_host_read,
                             reg_host_write, shield_read, shield_write)
from fpga_tee.shield.config import META_BYTES, override
from fpga_tee.sim.dram import SimDram
from fpga_tee.sim.trackers import IvTracker
from conftest import TWO_REGION_CFG

DEK = bytes(range(32))


@pytest.fixture
def state(cfg):
    return new_shield(cfg, DEK, IvTracker())


@pytest.fixture
def dram():
    return SimDram(1 << 17)


# config ------------------------------------------------------------------------------

def test_parse_and_format_round_trip(cfg):
    assert len(cfg.regions) == 3 and len(cfg.engine_sets) == 2
    assert parse_config(format_config(cfg)) == cfg


def test_sdp_reference_config_parses():
    from fpga_tee.harness.presets import sdp
    text = format_config(sdp().cfg)
    cfg = parse_config(text)
    assert len(cfg.regions) == 2
    assert {r.buffer_bytes for r in cfg.regions} == {16 * 1024}
    assert {r.c_mem for r in cfg.regions} == {4096}


@pytest.mark.parametrize("edit,needle", [
    (("size = 0x2000", "size = 0x2100"), "region data"),
    (("id = 2", "id = 1"), "duplicate region id"),
    (("tag_base = 0x12000", "tag_base = 0x1000"), "overlaps"),
    (("sbox = 4", "sbox = 8"), "sbox"),
    (("mode = ro", "mode = rx"), "mode"),
    (("c_mem = 64", "c_mem = 64\nbogus = 1"), "unknown key"),
])
def test_config_diagnostics(edit, needle):
    with pytest.raises(ConfigError) as exc:
        parse_config(TWO_REGION_CFG.replace(*edit))
    assert needle in str(exc.value)
    assert exc.value.line is not None


def test_override(cfg):
    out = override(cfg, "engine_set.0.aes_engines", "8")
    assert out.engine_set(0).aes_engines == 8 and out.engine_set(1) == cfg.engine_set(1)
    assert all(es.sbox_parallelism == 16 for es in override(cfg, "sbox", "16").engine_sets)
    with pytest.raises(ConfigError):
        override(cfg, "nonsense", "1")


# state / decode ---------------------------------------------------------------------------

def test_new_shield_bindings_and_subkeys(cfg):
    a, b = new_shield(cfg, DEK), new_shield(cfg, DEK)
    assert {rs.engines.set_id for rs in a.regions.values()} == {0, 1}
    assert all(a.regions[k].k_enc == b.regions[k].k_enc for k in a.regions)
    assert len(a.regions[2].k_enc) == 32   # region 2 uses the AES-256 set


def test_decode_burst_example():
    cfg = parse_config("""
[engine_set 0]
[region r]
id = 0
base = 0x1000
size = 0x1000
c_mem = 512
tag_base = 0x8000
""")
    st = new_shield(cfg, DEK)
    out = decode_burst(st, BurstRequest("R", 0x1100, 600))
    assert [(a.chunk_index, a.offset, a.length) for a in out] == [(0, 256, 256), (1, 0, 344)]
    with pytest.raises(RegionFault):
        decode_burst(st, BurstRequest("R", 0x9000, 4))


def test_cross_region_burst(state):
    with pytest.raises(RegionFault):   # a gap follows region data
        state.decode_burst(0x2f00, 0x200)
    adjacent = TWO_REGION_CFG.replace("base = 0x4000", "base = 0x3000")
    st = new_shield(parse_config(adjacent), DEK)
    with pytest.raises(CrossRegionFault):
        st.decode_burst(0x2f00, 0x200)


# chunk crypto ---------------------------------------------------------------------------

def oracle_tag(k_mac, rid, i, iv, ct, ctr=None):
    """Recompute the chunk MAC from the documented serialization, by hand."""
    fields = [rid.to_bytes(2, "big"), i.to_bytes(8, "big"), iv, ct]
    if ctr is not None:
        fields.append(struct.pack(">Q", ctr))
    msg = b"".join(len(f).to_bytes(4, "big") + f for f in fields)
    return hmac.new(k_mac, msg, hashlib.sha256).digest()[:16]


def test_chunk_seal_matches_oracle(state):
    rs = state.regions[1]
    pt = bytes(range(256)) * 2
    ct, tag, iv = chunk_seal(state, 1, 3, pt)
    assert iv == (1).to_bytes(2, "big") + (3).to_bytes(5, "big") + (1).to_bytes(5, "big")
    assert tag == oracle_tag(rs.k_mac, 1, 3, iv, ct, ctr=1)
    assert ct == crypto.ctr_encrypt(rs.k_enc, iv, 0, pt)
    assert chunk_open(state, 1, 3, ct, tag, iv) == pt


def test_chunk_seal_fresh_iv(state):
    pt = bytes(512)
    a = chunk_seal(state, 1, 0, pt)
    b = chunk_seal(state, 1, 0, pt)
    assert a[0] != b[0] and a[2] != b[2]
    assert state.iv_tracker.check()


def test_chunk_open_rejects_splice_and_stale(state):
    pt_i, pt_j = bytes([1]) * 512, bytes([2]) * 512
    ct_i, tag_i, iv_i = chunk_seal(state, 1, 0, pt_i)
    ct_j, tag_j, iv_j = chunk_seal(state, 1, 1, pt_j)
    with pytest.raises(AuthFailure):
        chunk_open(state, 1, 0, ct_j, tag_j, iv_j)
    chunk_seal(state, 1, 0, pt_j)   # a newer write advances the counter
    with pytest.raises(AuthFailure):
        chunk_open(state, 1, 0, ct_i, tag_i, iv_i)


def test_counter_overflow(cfg):
    cfg = override(cfg, "region.data.counter_bits", "2")
    st = new_shield(cfg, DEK)
    for _ in range(3):
        chunk_seal(st, 1, 0, bytes(512))
    with pytest.raises(CounterOverflowError):
        chunk_seal(st, 1, 0, bytes(512))


# burst read/write ------------------------------------------------------------------------

def test_read_after_write(state, dram):
    data = random.Random(1).randbytes(700)
    shield_write(state, dram, 0x1100, data)
    assert shield_read(state, dram, 0x1100, 700) == data
    misses = state.stats[0].buffer_misses
    assert shield_read(state, dram, 0x1100, 700) == data
    assert state.stats[0].buffer_misses == misses


def test_never_written_reads_zero_without_dram(state, dram):
    assert shield_read(state, dram, 0x1000, 64) == bytes(64)
    assert state.stats[0].dram_requests == 0 and dram.read_count == 0


def test_flipbit_cold_chunk_detected(state, dram):
    shield_write(state, dram, 0x1000, bytes(range(256)) * 2)
    flush(state, dram)
    dram.tamper_write(0x1003, bytes([dram.peek(0x1003, 1)[0] ^ 4]))
    with pytest.raises(AuthFailure):
        shield_read(state, dram, 0x1000, 16)


def test_streaming_read_with_one_line_buffer(dram):
    cfg = parse_config(TWO_REGION_CFG.replace("buffer_bytes = 1024", "buffer_bytes = 512"))
    st = new_shield(cfg, DEK)
    for i in range(16):
        st.preload(dram, 0x1000 + 512 * i, random.Random(i).randbytes(512))
    st.reset_stats()
    for i in range(16):
        shield_read(st, dram, 0x1000 + 512 * i, 512)
    assert st.stats[0].buffer_misses == 16
    assert st.stats[0].dram_requests == 32


def test_stream_write_full_chunks(state, dram):
    shield_write(state, dram, 0x4000, bytes([7]) * 256)
    assert state.stats[1].dram_bytes_read == 0
    flush(state, dram)
    assert state.stats[1].chunks_sealed == 1
    assert state.stats[1].dram_bytes_written == 256 + META_BYTES


def test_partial_write_fills_first(state, dram):
    shield_write(state, dram, 0x1000, bytes([1]) * 512)
    flush(state, dram)
    state.reset_stats()
    shield_write(state, dram, 0x1004, b"\xAA\xBB\xCC\xDD")
    st = state.stats[0]
    assert st.buffer_misses == 1 and st.dram_bytes_read == 512 + META_BYTES
    assert shield_read(state, dram, 0x1000, 8) == b"\x01" * 4 + b"\xAA\xBB\xCC\xDD"


def test_write_read_only_region(state, dram):
    with pytest.raises(PermissionFault):
        shield_write(state, dram, 0x6000, b"x")


def test_flush_restore_with_chunk_state(cfg, dram):
    st = new_shield(cfg, DEK)
    data = random.Random(2).randbytes(0x2000)
    shield_write(st, dram, 0x1000, data)
    flush(st, dram)
    st2 = new_shield(cfg, DEK, chunk_state=st.export_chunk_state())
    assert shield_read(st2, dram, 0x1000, 0x2000) == data


def test_flush_byte_accounting(state, dram):
    rng = random.Random(3)
    for i in (0, 3, 5):
        shield_write(state, dram, 0x1000 + 512 * i, rng.randbytes(512))
    # buffer holds two lines, so one eviction already happened; flush writes the rest
    before = state.stats[0].dram_bytes_written
    dirty = sum(1 for line in state.regions[1].buffer.values() if line.dirty)
    flush(state, dram)
    assert state.stats[0].dram_bytes_written - before == dirty * (512 + 16 + 12)
    written = dram.write_count
    flush(state, dram)
    assert dram.write_count == written


# registers ------------------------------------------------------------------------------

def test_register_write_read(state):
    client = RegisterClient(DEK)
    reg_host_write(state, client.write(3, 0xDEADBEEF))
    assert reg_accel_read(state, 3) == 0xDEADBEEF
    reg_accel_write(state, 5, 1234)
    assert client.read_reply(reg_host_read(state, 5), 5) == 1234
    with pytest.raises(RegisterError):
        reg_accel_read(state, 99)


def test_register_replay_rejected(state):
    client = RegisterClient(DEK)
    wire = client.write(1, 10)
    reg_host_write(state, wire)
    with pytest.raises(StaleCounterError):
        reg_host_write(state, wire)
    with pytest.raises(RegisterError):
        reg_host_write(state, wire[:-1] + bytes([wire[-1] ^ 1]))


def test_encrypted_address_mode_hides_destination(cfg):
    cfg = override(cfg, "register_mode", "encaddr")
    st = ShieldState(cfg, DEK)
    client = RegisterClient(DEK, RegisterMode.ENCRYPTED_ADDRESS)
    w3, w7 = client.write(3, 1), client.write(7, 1)
    assert w3[1:5] == w7[1:5] == b"\xff\xff\xff\xff"
    reg_host_write(st, w3)
    reg_host_write(st, w7)
    assert reg_accel_read(st, 3) == reg_accel_read(st, 7) == 1
    assert client.read_reply(reg_host_read(st, 7), 7) == 1
