"""Hashing, Ed25519 signatures and public-key sealing.

A single Ed25519 key pair serves as a party's identity. Sealing converts the
recipient's Ed25519 public key to its X25519 (Montgomery) form, so the same
public key doubles as the encryption key, the way a Diffie-Hellman public
value ``g^a`` does in symbolic protocol models.
"""

from __future__ import annotations

import functools
import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Optional

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import DecryptionFailure

DIGEST_SIZE = 32
SIGNATURE_SIZE = 64
PUBLIC_KEY_SIZE = 32

_FIELD_PREFIX = struct.Struct(">I")
_CURVE_P = 2**255 - 19
_SEAL_NONCE = bytes(12)  # the AEAD key is single-use (fresh ephemeral per envelope)


# ---------------------------------------------------------------------------
# Canonical field packing
# ---------------------------------------------------------------------------


def pack_fields(*fields: bytes) -> bytes:
    """Concatenate fields, each prefixed with its 4-byte big-endian length."""
    out = bytearray()
    for f in fields:
        out += _FIELD_PREFIX.pack(len(f))
        out += f
    return bytes(out)


def unpack_fields(data: bytes, count: Optional[int] = None) -> list[bytes]:
    """Inverse of :func:`pack_fields`. Raises ``ValueError`` on any framing error."""
    fields = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise ValueError("truncated length prefix")
        (n,) = _FIELD_PREFIX.unpack_from(data, pos)
        pos += 4
        if pos + n > len(data):
            raise ValueError("field overruns buffer")
        fields.append(bytes(data[pos : pos + n]))
        pos += n
    if count is not None and len(fields) != count:
        raise ValueError(f"expected {count} fields, got {len(fields)}")
    return fields


def encode_uint(value: int) -> bytes:
    return value.to_bytes(8, "big")


def decode_uint(data: bytes) -> int:
    if len(data) != 8:
        raise ValueError("integer field must be 8 bytes")
    return int.from_bytes(data, "big")


# ---------------------------------------------------------------------------
# Value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Digest:
    value: bytes

    def __post_init__(self):
        if len(self.value) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes")

    def hex(self) -> str:
        return self.value.hex()

    @classmethod
    def from_hex(cls, text: str) -> "Digest":
        return cls(bytes.fromhex(text))


ZERO_DIGEST = Digest(bytes(DIGEST_SIZE))


@dataclass(frozen=True, order=True)
class PublicKey:
    """Raw 32-byte Ed25519 verification key; also the party identifier."""

    raw: bytes

    def __post_init__(self):
        if len(self.raw) != PUBLIC_KEY_SIZE:
            raise ValueError(f"public key must be {PUBLIC_KEY_SIZE} bytes")

    def hex(self) -> str:
        return self.raw.hex()

    @classmethod
    def from_hex(cls, text: str) -> "PublicKey":
        return cls(bytes.fromhex(text))

    def short(self) -> str:
        return self.raw.hex()[:8]


@dataclass(frozen=True)
class Signature:
    value: bytes
    signer: PublicKey

    def hex(self) -> str:
        return self.value.hex()


@dataclass(frozen=True)
class SealedEnvelope:
    ciphertext: bytes
    recipient: PublicKey

    def to_bytes(self) -> bytes:
        return pack_fields(self.recipient.raw, self.ciphertext)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SealedEnvelope":
        recipient, ciphertext = unpack_fields(data, 2)
        return cls(ciphertext, PublicKey(recipient))


class KeyPair:
    """Ed25519 signing key with its public half."""

    __slots__ = ("_secret", "public")

    def __init__(self, secret: Ed25519PrivateKey):
        self._secret = secret
        self.public = PublicKey(secret.public_key().public_bytes_raw())

    @classmethod
    def generate(cls) -> "KeyPair":
        return cls(Ed25519PrivateKey.generate())

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        if len(seed) != 32:
            raise ValueError("seed must be 32 bytes")
        return cls(Ed25519PrivateKey.from_private_bytes(seed))

    @property
    def secret(self) -> Ed25519PrivateKey:
        return self._secret

    def seed(self) -> bytes:
        return self._secret.private_bytes_raw()

    def __repr__(self) -> str:
        return f"KeyPair(public={self.public.short()}...)"


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def digest(message: bytes) -> Digest:
    return Digest(hashlib.sha256(message).digest())


def digest_fields(*fields: bytes) -> Digest:
    return digest(pack_fields(*fields))


def sign(keypair: KeyPair, message: bytes) -> Signature:
    return Signature(keypair.secret.sign(message), keypair.public)


def verify(public: PublicKey, message: bytes, sig: Signature) -> bool:
    """True iff ``sig`` is a signature over ``message`` by the key paired with ``public``.

    ``sig.signer`` is informational; only ``public`` is trusted.
    """
    if len(sig.value) != SIGNATURE_SIZE:
        return False
    return _verify_raw(public.raw, bytes(message), bytes(sig.value))


# Verification is a pure function of its inputs, and a committed block's
# approvals get checked at vote intake, at commit and again on chain audit.
@functools.lru_cache(maxsize=1 << 16)
def _verify_raw(public: bytes, message: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def _montgomery_public(public: PublicKey) -> X25519PublicKey:
    # Edwards y -> Montgomery u = (1 + y) / (1 - y) mod p
    y = int.from_bytes(public.raw, "little") & ((1 << 255) - 1)
    denom = (1 - y) % _CURVE_P
    if denom == 0:
        raise ValueError("public key has no Montgomery form")
    u = (1 + y) * pow(denom, _CURVE_P - 2, _CURVE_P) % _CURVE_P
    return X25519PublicKey.from_public_bytes(u.to_bytes(32, "little"))


def _montgomery_secret(keypair: KeyPair) -> X25519PrivateKey:
    return X25519PrivateKey.from_private_bytes(hashlib.sha512(keypair.seed()).digest()[:32])


def _envelope_key(shared: bytes, ephemeral: bytes, recipient: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=b"dronepki-seal" + ephemeral + recipient,
    ).derive(shared)


def seal(recipient: PublicKey, plaintext: bytes, ephemeral_seed: Optional[bytes] = None) -> SealedEnvelope:
    """Encrypt ``plaintext`` so only the holder of ``recipient``'s secret can open it.

    ``ephemeral_seed`` (32 bytes) makes the envelope reproducible; leave it
    unset outside deterministic simulation.
    """
    eph_secret = X25519PrivateKey.from_private_bytes(ephemeral_seed or os.urandom(32))
    eph_public = eph_secret.public_key().public_bytes_raw()
    shared = eph_secret.exchange(_montgomery_public(recipient))
    key = _envelope_key(shared, eph_public, recipient.raw)
    body = ChaCha20Poly1305(key).encrypt(_SEAL_NONCE, plaintext, recipient.raw)
    return SealedEnvelope(eph_public + body, recipient)


def open_envelope(keypair: KeyPair, envelope: SealedEnvelope) -> bytes:
    if envelope.recipient != keypair.public or len(envelope.ciphertext) < 32 + 16:
        raise DecryptionFailure("envelope not addressed to this key")
    eph_public = envelope.ciphertext[:32]
    try:
        shared = _montgomery_secret(keypair).exchange(X25519PublicKey.from_public_bytes(eph_public))
        key = _envelope_key(shared, eph_public, keypair.public.raw)
        return ChaCha20Poly1305(key).decrypt(_SEAL_NONCE, envelope.ciphertext[32:], keypair.public.raw)
    except (InvalidTag, ValueError) as exc:
        raise DecryptionFailure(str(exc) or "authentication failed") from exc


def sorted_keys(keys: Iterable[PublicKey]) -> list[PublicKey]:
    return sorted(keys, key=lambda k: k.raw)
