"""Manufacturer provisioning, the BootROM -> firmware -> Security Kernel chain,
and the port monitor that runs for the lifetime of a boot session."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from . import crypto
from .crypto import KeyPair, SymKey
from .errors import BootError, IntegrityError, ProvisioningError

FIRMWARE_VERSION = 1


@dataclass
class CaRegistry:
    """Append-only registry of device public keys and trusted kernel hashes."""

    devices: dict[int, bytes] = field(default_factory=dict)
    trusted_kernels: list[bytes] = field(default_factory=list)

    def register_device(self, serial: int, public: bytes) -> None:
        if serial in self.devices:
            raise ProvisioningError(f"device serial {serial} already registered")
        self.devices[serial] = public

    def lookup(self, serial: int) -> bytes:
        return self.devices[serial]

    def trust_kernel(self, kernel_hash: bytes) -> None:
        if len(kernel_hash) != crypto.DIGEST_LEN:
            raise ValueError("kernel hash must be 32 bytes")
        if kernel_hash not in self.trusted_kernels:
            self.trusted_kernels.append(kernel_hash)

    def is_trusted_kernel(self, kernel_hash: bytes) -> bool:
        return kernel_hash in self.trusted_kernels


@dataclass(frozen=True)
class DeviceIdentity:
    device_serial: int
    aes_device_key: SymKey
    device_keypair: KeyPair
    encrypted_firmware: bytes  # iv || ciphertext || tag


@dataclass(frozen=True)
class Firmware:
    device_key_priv: int
    firmware_version: int


class PortEvent(enum.Enum):
    JTAG_ACCESS = "jtag"
    ICAP_WRITE = "icap"
    PARTIAL_RECONFIG = "partial_reconfig"


class PortState(enum.Enum):
    CLEAN = "clean"
    TAMPERED = "tampered"


@dataclass
class PortMonitorState:
    state: PortState = PortState.CLEAN
    event_log: list[tuple[str, int, bool]] = field(default_factory=list)
    clock: int = 0

    def record(self, event: PortEvent, authorized: bool = False) -> PortState:
        self.clock += 1
        self.event_log.append((event.value, self.clock, authorized))
        # latches: nothing ever brings Tampered back to Clean in one boot session
        if not authorized:
            self.state = PortState.TAMPERED
        return self.state

    @property
    def clean(self) -> bool:
        return self.state is PortState.CLEAN


@dataclass
class SecurityKernelContext:
    kernel_hash: bytes
    attest_keypair: KeyPair
    sigma_seckrnl: bytes
    port_state: PortMonitorState = field(default_factory=PortMonitorState)
    # filled in by the attestation protocol
    session: object = None
    attested_bitstream_hash: bytes | None = None


def _firmware_plaintext(fw: Firmware) -> bytes:
    return struct.pack(">I", fw.firmware_version) + fw.device_key_priv.to_bytes(32, "big")


def provision_device_from_seed(serial: int, seed: bytes, registry: CaRegistry | None = None,
                               firmware_version: int = FIRMWARE_VERSION):
    """Deterministic provisioning from a 32-byte fixture seed.

    Returns ``(identity, (serial, device_public))``; the entry is also
    appended to ``registry`` when one is given.
    """
    if len(seed) != 32:
        raise ValueError("device seed must be 32 bytes")
    if registry is not None and serial in registry.devices:
        raise ProvisioningError(f"device serial {serial} already registered")
    aes_key = SymKey(crypto.kdf(seed, b"device-aes-key", 32))
    device_kp = crypto.keypair_from_seed(crypto.kdf(seed, b"device-keypair", 32))
    iv = crypto.kdf(seed, b"firmware-iv", crypto.IV_LEN)
    fw = Firmware(device_kp.private, firmware_version)
    blob = iv + crypto.seal(aes_key, iv, _firmware_plaintext(fw), header=b"spb-firmware")
    identity = DeviceIdentity(serial, aes_key, device_kp, blob)
    if registry is not None:
        registry.register_device(serial, device_kp.public)
    return identity, (serial, device_kp.public)


def provision_device(serial: int, rng, registry: CaRegistry | None = None):
    return provision_device_from_seed(serial, rng.randbytes(32), registry)


def boot_rom_load(identity: DeviceIdentity, candidate_key: SymKey) -> Firmware:
    blob = identity.encrypted_firmware
    iv, body = blob[:crypto.IV_LEN], blob[crypto.IV_LEN:]
    try:
        plain = crypto.unseal(candidate_key, iv, body, header=b"spb-firmware")
    except IntegrityError:
        raise BootError("SPB firmware failed authentication; boot halted") from None
    if len(plain) != 36:
        raise BootError("SPB firmware payload malformed")
    version = struct.unpack(">I", plain[:4])[0]
    return Firmware(int.from_bytes(plain[4:], "big"), version)


def attest_message(kernel_hash: bytes, attest_public: bytes) -> bytes:
    """Message covered by the kernel certificate: kernel_hash || attest_public."""
    return kernel_hash + attest_public


def firmware_boot_kernel(fw: Firmware, kernel_image: bytes) -> SecurityKernelContext:
    """Hash the kernel, derive its Attestation Key and certify it with the device key.

    ``kernel_image`` may be the concatenation of the kernel binary and a soft
    CPU bitstream; both are then covered by the same hash.
    """
    if not kernel_image:
        raise ValueError("kernel image must be non-empty")
    kernel_hash = crypto.hash(kernel_image)
    seed = crypto.kdf(crypto.sign(fw.device_key_priv, kernel_hash), b"attest-seed", 32)
    attest_kp = crypto.keypair_from_seed(seed)
    sigma = crypto.sign(fw.device_key_priv, attest_message(kernel_hash, attest_kp.public))
    return SecurityKernelContext(kernel_hash, attest_kp, sigma)


def monitor_event(ctx: SecurityKernelContext, event: PortEvent,
                  authorized: bool = False) -> PortMonitorState:
    """Feed one programming/debug port event to the kernel's monitor.

    Only a partial reconfiguration initiated by the kernel itself may be
    authorized; JTAG access is always tampering.
    """
    if event is PortEvent.JTAG_ACCESS:
        authorized = False
    ctx.port_state.record(event, authorized)
    return ctx.port_state


def boot(identity: DeviceIdentity, kernel_image: bytes,
         aes_key: SymKey | None = None) -> SecurityKernelContext:
    """Full boot: BootROM firmware decryption followed by kernel certification."""
    fw = boot_rom_load(identity, identity.aes_device_key if aes_key is None else aes_key)
    return firmware_boot_kernel(fw, kernel_image)
