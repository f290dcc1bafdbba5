"""Shared setup for attestation tests: one device, one vendor, one honest report."""

import random
from dataclasses import dataclass, replace

from fpga_tee import attestation as att
from fpga_tee import crypto
from fpga_tee.harness.presets import sdp
from fpga_tee.trust_chain import CaRegistry, boot, provision_device_from_seed

KERNEL = b"security-kernel-v1"


@dataclass
class World:
    rng: random.Random
    registry: CaRegistry
    identity: object
    ctx: object
    vendor: att.IpVendor
    enc_bs: att.EncryptedBitstream


def make_world(seed: int = 0, trust=True, kernel=KERNEL) -> World:
    rng = random.Random(f"world:{seed}")
    registry = CaRegistry()
    identity, _ = provision_device_from_seed(100 + seed, rng.randbytes(32), registry)
    if trust:
        registry.trust_kernel(crypto.hash(kernel))
    ctx = boot(identity, kernel)
    vendor = att.IpVendor.create(registry, sdp(file_bytes=16 * 1024).cfg, rng)
    return World(rng, registry, identity, ctx, vendor, vendor.build_bitstream(rng))


def honest_report(w: World):
    ch = att.vendor_begin(w.vendor, w.rng)
    msg, k_sess = att.kernel_attest(w.ctx, ch, w.enc_bs)
    return ch, msg, k_sess


def _flip(b: bytes) -> bytes:
    return bytes([b[0] ^ 1]) + b[1:]


def mutate_field(msg: att.ReportMessage, name: str) -> att.ReportMessage:
    """Flip the first bit of one report field or signature."""
    if name in ("sigma_alpha", "sigma_session"):
        return replace(msg, **{name: _flip(getattr(msg, name))})
    return replace(msg, report=replace(msg.report, **{name: _flip(getattr(msg.report, name))}))


REPORT_FIELDS = ("nonce", "enc_bitstream_hash", "attest_public", "kernel_hash", "sigma_seckrnl")
