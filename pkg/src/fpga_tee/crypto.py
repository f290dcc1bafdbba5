"""Deterministic cryptographic primitives.

Everything here is a pure function of its arguments. Randomness (ephemeral
keys, IVs) is always drawn from a caller-supplied ``random.Random``-like
generator so that whole scenarios replay bit-for-bit.

Building blocks:

* SHA-256 for hashing, HMAC-SHA-256 truncated to 16 bytes, HKDF-SHA-256.
* AES in counter mode with a 96-bit IV and a 32-bit big-endian block counter.
* PMAC over AES, exposed so disjoint block ranges can be processed separately
  and XOR-combined, mirroring multiple MAC engines working in parallel.
* ECDSA (RFC 6979 deterministic nonces) and ECDH over P-256.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
import threading
from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.asymmetric.utils import (
    decode_dss_signature,
    encode_dss_signature,
)
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import CounterOverflowError, CryptoError, IntegrityError, KeyExchangeError

DIGEST_LEN = 32
IV_LEN = 12
TAG_LEN = 16
BLOCK = 16
PUBLIC_KEY_LEN = 33
SIGNATURE_LEN = 64
KDF_MAX = 255 * 32
ASYM_MAX_PLAINTEXT = 4096

_CURVE = ec.SECP256R1()
# order of the P-256 base point
CURVE_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551


@dataclass(frozen=True)
class SymKey:
    """A 128- or 256-bit symmetric key."""

    raw: bytes

    def __post_init__(self):
        if len(self.raw) not in (16, 32):
            raise ValueError(f"symmetric key must be 16 or 32 bytes, got {len(self.raw)}")

    @property
    def bits(self) -> int:
        return len(self.raw) * 8

    def __repr__(self):
        # never print key material
        return f"SymKey(bits={self.bits})"


@dataclass(frozen=True)
class KeyPair:
    private: int
    public: bytes

    def __repr__(self):
        return f"KeyPair(public={self.public.hex()[:16]}...)"

    @property
    def private_bytes(self) -> bytes:
        return self.private.to_bytes(32, "big")


def _raw(key) -> bytes:
    return key.raw if isinstance(key, SymKey) else bytes(key)


# hashing / MAC / KDF -----------------------------------------------------------

def hash(msg: bytes) -> bytes:  # noqa: A001 - module-qualified as crypto.hash
    return hashlib.sha256(msg).digest()


def mac_hmac(key, msg: bytes) -> bytes:
    """HMAC-SHA-256 truncated to its leading 16 bytes."""
    return hmac.digest(_raw(key), msg, "sha256")[:TAG_LEN]


def kdf(ikm: bytes, info: bytes, out_len: int) -> bytes:
    """HKDF-SHA-256 (empty salt)."""
    if not 0 < out_len <= KDF_MAX:
        raise ValueError(f"kdf output length must be in 1..{KDF_MAX}")
    return HKDF(algorithm=hashes.SHA256(), length=out_len, salt=None, info=info).derive(ikm)


def tags_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)


# AES block primitive -------------------------------------------------------------

_tls = threading.local()


def _ecb(key: bytes):
    # ECB encryptors are stateless between update() calls, so one per key and
    # thread can be reused. Keyed by raw key bytes.
    cache = getattr(_tls, "ecb", None)
    if cache is None:
        cache = _tls.ecb = {}
    enc = cache.get(key)
    if enc is None:
        if len(cache) > 4096:
            cache.clear()
        enc = cache[key] = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc


def aes_encrypt_blocks(key, data: bytes) -> bytes:
    """Raw AES over whole 16-byte blocks."""
    if len(data) % BLOCK:
        raise ValueError("data must be a multiple of 16 bytes")
    return _ecb(_raw(key)).update(data)


def _xor(a: bytes, b: bytes) -> bytes:
    n = len(a)
    return (int.from_bytes(a, "big") ^ int.from_bytes(b[:n], "big")).to_bytes(n, "big")


def ctr_encrypt(key, iv: bytes, block_offset: int, data: bytes) -> bytes:
    """AES-CTR with counter block ``iv || be32(block_offset + i)``.

    Encryption and decryption are the same operation.
    """
    if len(iv) != IV_LEN:
        raise ValueError("IV must be 12 bytes")
    if not 0 <= block_offset < 1 << 32:
        raise ValueError("block offset must fit in 32 bits")
    nblocks = (len(data) + BLOCK - 1) // BLOCK
    if block_offset + nblocks > 1 << 32:
        raise CounterOverflowError("CTR block counter would wrap")
    if not data:
        return b""
    counters = b"".join(iv + struct.pack(">I", block_offset + i) for i in range(nblocks))
    return _xor(data, aes_encrypt_blocks(key, counters))


# PMAC ------------------------------------------------------------------------------

_MASK128 = (1 << 128) - 1


def _dbl(x: int) -> int:
    x <<= 1
    if x >> 128:
        x = (x & _MASK128) ^ 0x87
    return x


def _half(x: int) -> int:
    if x & 1:
        return (x >> 1) ^ (1 << 127) ^ 0x43
    return x >> 1


@lru_cache(maxsize=256)
def _pmac_table(key: bytes) -> tuple[tuple[int, ...], int]:
    ell = int.from_bytes(aes_encrypt_blocks(key, bytes(BLOCK)), "big")
    table = [ell]
    for _ in range(63):
        table.append(_dbl(table[-1]))
    return tuple(table), _half(ell)


def pmac_block_count(msg_len: int) -> int:
    """Number of blocks that go through the parallel (offset) path.

    The final block, full or partial, is handled by :func:`pmac_finish`.
    """
    return max(0, (msg_len + BLOCK - 1) // BLOCK - 1)


def _offset(table, i: int) -> int:
    # offset for 1-based block i is gray(i) . L, a sum of doublings of L
    g = i ^ (i >> 1)
    acc = 0
    b = 0
    while g:
        if g & 1:
            acc ^= table[b]
        g >>= 1
        b += 1
    return acc


def pmac_partial(key, msg: bytes, start: int, stop: int) -> bytes:
    """XOR of the encrypted, offset-masked body blocks ``start <= j < stop``.

    Partial sums over disjoint ranges XOR together into the sum over their
    union, which is what lets several engines share one message.
    """
    key = _raw(key)
    nbody = pmac_block_count(len(msg))
    if not 0 <= start <= stop <= nbody:
        raise ValueError("block range out of bounds")
    if start == stop:
        return bytes(BLOCK)
    table, _ = _pmac_table(key)
    off = _offset(table, start + 1)
    masked = []
    for j in range(start, stop):
        i = j + 1
        if j > start:
            off ^= table[(i & -i).bit_length() - 1]
        blk = int.from_bytes(msg[j * BLOCK:(j + 1) * BLOCK], "big") ^ off
        masked.append(blk.to_bytes(BLOCK, "big"))
    enc = aes_encrypt_blocks(key, b"".join(masked))
    acc = 0
    for k in range(0, len(enc), BLOCK):
        acc ^= int.from_bytes(enc[k:k + BLOCK], "big")
    return acc.to_bytes(BLOCK, "big")


def pmac_combine(*partials: bytes) -> bytes:
    acc = 0
    for p in partials:
        acc ^= int.from_bytes(p, "big")
    return acc.to_bytes(BLOCK, "big")


def pmac_finish(key, msg: bytes, body_sum: bytes) -> bytes:
    key = _raw(key)
    _, l_inv = _pmac_table(key)
    last = msg[pmac_block_count(len(msg)) * BLOCK:]
    sigma = int.from_bytes(body_sum, "big")
    if len(last) == BLOCK:
        sigma ^= int.from_bytes(last, "big") ^ l_inv
    else:
        padded = last + b"\x80" + bytes(BLOCK - len(last) - 1)
        sigma ^= int.from_bytes(padded, "big")
    return aes_encrypt_blocks(key, sigma.to_bytes(BLOCK, "big"))


def mac_pmac(key, msg: bytes) -> bytes:
    return pmac_finish(key, msg, pmac_partial(key, msg, 0, pmac_block_count(len(msg))))


# asymmetric ----------------------------------------------------------------------------

@lru_cache(maxsize=1024)
def _private_key(scalar: int) -> ec.EllipticCurvePrivateKey:
    return ec.derive_private_key(scalar, _CURVE)


def _public_key(pub: bytes) -> ec.EllipticCurvePublicKey:
    if len(pub) != PUBLIC_KEY_LEN:
        raise KeyExchangeError("public key must be a 33-byte compressed point")
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, pub)
    except ValueError as exc:
        raise KeyExchangeError(f"invalid public key: {exc}") from None


def _private(priv) -> int:
    return priv.private if isinstance(priv, KeyPair) else int(priv)


def keypair_from_seed(seed: bytes) -> KeyPair:
    if len(seed) != 32:
        raise ValueError("seed must be 32 bytes")
    scalar = int.from_bytes(seed, "big")
    while not 1 <= scalar < CURVE_ORDER:
        seed = hash(b"keypair-retry" + seed)
        scalar = int.from_bytes(seed, "big")
    return KeyPair(scalar, keypair_public(scalar))


def is_valid_public(pub: bytes) -> bool:
    try:
        _public_key(pub)
    except KeyExchangeError:
        return False
    return True


def sign(priv, msg: bytes) -> bytes:
    der = _private_key(_private(priv)).sign(
        msg, ec.ECDSA(hashes.SHA256(), deterministic_signing=True)
    )
    r, s = decode_dss_signature(der)
    return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def verify(pub: bytes, msg: bytes, sig: bytes) -> bool:
    if len(sig) != SIGNATURE_LEN:
        return False
    try:
        key = _public_key(pub)
        r = int.from_bytes(sig[:32], "big")
        s = int.from_bytes(sig[32:], "big")
        key.verify(encode_dss_signature(r, s), msg, ec.ECDSA(hashes.SHA256()))
    except (InvalidSignature, KeyExchangeError, ValueError):
        return False
    return True


def key_exchange(priv, pub: bytes) -> bytes:
    """ECDH; returns the 32-byte x-coordinate of the shared point."""
    peer = _public_key(pub)
    try:
        return _private_key(_private(priv)).exchange(ec.ECDH(), peer)
    except ValueError as exc:  # pragma: no cover - library rejects degenerate peers
        raise KeyExchangeError(str(exc)) from None


# envelopes ------------------------------------------------------------------------------

def _lp(*fields: bytes) -> bytes:
    return b"".join(struct.pack(">I", len(f)) + f for f in fields)


def asym_encrypt(pub: bytes, msg: bytes, rng, aad: bytes = b"") -> bytes:
    """Hybrid public-key encryption: ephemeral ECDH + HKDF + AES-CTR + HMAC.

    Output layout: ephemeral public (33) || ciphertext || tag (16).
    """
    if len(msg) > ASYM_MAX_PLAINTEXT:
        raise ValueError("asym_encrypt payload limited to 4 KiB")
    eph = keypair_from_seed(rng.randbytes(32))
    shared = key_exchange(eph, pub)
    okm = kdf(shared, b"asym-envelope" + eph.public + pub, 64)
    ct = ctr_encrypt(okm[:32], bytes(IV_LEN), 0, msg)
    tag = mac_hmac(okm[32:], _lp(aad, eph.public, ct))
    return eph.public + ct + tag


def asym_decrypt(priv, blob: bytes, aad: bytes = b"") -> bytes:
    if len(blob) < PUBLIC_KEY_LEN + TAG_LEN:
        raise IntegrityError("envelope too short")
    eph_pub = blob[:PUBLIC_KEY_LEN]
    ct = blob[PUBLIC_KEY_LEN:-TAG_LEN]
    tag = blob[-TAG_LEN:]
    if isinstance(priv, KeyPair):
        own_pub = priv.public
    else:
        own_pub = keypair_public(int(priv))
    try:
        shared = key_exchange(priv, eph_pub)
    except KeyExchangeError:
        raise IntegrityError("envelope carries an invalid ephemeral key") from None
    okm = kdf(shared, b"asym-envelope" + eph_pub + own_pub, 64)
    if not tags_equal(tag, mac_hmac(okm[32:], _lp(aad, eph_pub, ct))):
        raise IntegrityError("envelope authentication failed")
    return ctr_encrypt(okm[:32], bytes(IV_LEN), 0, ct)


def keypair_public(scalar: int) -> bytes:
    return _private_key(scalar).public_key().public_bytes(
        serialization.Encoding.X962, serialization.PublicFormat.CompressedPoint
    )


def seal(key, iv: bytes, plaintext: bytes, header: bytes = b"") -> bytes:
    """Encrypt-then-MAC envelope used for firmware, bitstreams and channel messages.

    Returns ``ciphertext || tag``; the IV and header are authenticated but
    carried by the caller.
    """
    okm = kdf(_raw(key), b"seal", 64)
    ct = ctr_encrypt(okm[:32], iv, 0, plaintext)
    return ct + mac_hmac(okm[32:], _lp(header, iv, ct))


def unseal(key, iv: bytes, blob: bytes, header: bytes = b"") -> bytes:
    if len(blob) < TAG_LEN:
        raise IntegrityError("sealed blob too short")
    okm = kdf(_raw(key), b"seal", 64)
    ct, tag = blob[:-TAG_LEN], blob[-TAG_LEN:]
    if not tags_equal(tag, mac_hmac(okm[32:], _lp(header, iv, ct))):
        raise IntegrityError("sealed blob authentication failed")
    return ctr_encrypt(okm[:32], iv, 0, ct)


def length_prefixed(*fields: bytes) -> bytes:
    """Canonical encoding: each field as be32(len) || bytes."""
    return _lp(*fields)


def split_length_prefixed(data: bytes, count: int) -> list[bytes]:
    out = []
    pos = 0
    for _ in range(count):
        if pos + 4 > len(data):
            raise CryptoError("truncated length-prefixed encoding")
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        if pos + n > len(data):
            raise CryptoError("truncated length-prefixed field")
        out.append(data[pos:pos + n])
        pos += n
    if pos != len(data):
        raise CryptoError("trailing bytes after length-prefixed encoding")
    return out
