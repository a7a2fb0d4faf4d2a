"""Transactions, blocks and challenge transcripts.

Two encodings exist for every ledger value. :func:`canonical_bytes` is the
bit-exact, length-prefixed form that gets hashed and signed; ``to_dict`` /
``from_dict`` give the hex-in-JSON form used for fixtures and traces.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import singledispatch
from typing import Any, Optional

from .crypto import (
    Digest,
    KeyPair,
    PublicKey,
    SealedEnvelope,
    Signature,
    decode_uint,
    digest,
    encode_uint,
    pack_fields,
    sign,
    unpack_fields,
    verify,
)
from .errors import EmptyDroneName, MalformedTransaction

MAX_DRONE_NAME = 253

_TAG_TX_BODY = b"dronepki/tx-body/v1"
_TAG_TX = b"dronepki/tx/v1"
_TAG_HEADER = b"dronepki/header/v1"
_TAG_BODY = b"dronepki/body/v1"
_TAG_FOOTER = b"dronepki/footer/v1"
_TAG_BLOCK = b"dronepki/block/v1"


class CrtType(enum.Enum):
    INITIAL = "initial"
    REVOKE = "revoke"

    @property
    def code(self) -> bytes:
        return b"\x01" if self is CrtType.INITIAL else b"\x02"

    @classmethod
    def from_code(cls, code: bytes) -> "CrtType":
        if code == b"\x01":
            return cls.INITIAL
        if code == b"\x02":
            return cls.REVOKE
        raise ValueError(f"unknown CRT type code {code!r}")


def _sig_to_hex(sig: Optional[Signature]) -> Optional[dict]:
    if sig is None:
        return None
    return {"value": sig.value.hex(), "signer": sig.signer.hex()}


def _sig_from_hex(data: Optional[dict]) -> Optional[Signature]:
    if data is None:
        return None
    return Signature(bytes.fromhex(data["value"]), PublicKey.from_hex(data["signer"]))


def _env_to_hex(env: Optional[SealedEnvelope]) -> Optional[dict]:
    if env is None:
        return None
    return {"ciphertext": env.ciphertext.hex(), "recipient": env.recipient.hex()}


def _env_from_hex(data: Optional[dict]) -> Optional[SealedEnvelope]:
    if data is None:
        return None
    return SealedEnvelope(bytes.fromhex(data["ciphertext"]), PublicKey.from_hex(data["recipient"]))


def _check_name(drone_name: str) -> None:
    if not drone_name:
        raise EmptyDroneName("drone name must be non-empty")
    if len(drone_name) > MAX_DRONE_NAME:
        raise MalformedTransaction(f"drone name longer than {MAX_DRONE_NAME} characters")


# ---------------------------------------------------------------------------
# Transaction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transaction:
    crt_type: CrtType
    drone_name: str
    operator_pubkey: PublicKey
    operator_signature: Signature
    expiry: int
    csr_digest: Digest

    def signing_bytes(self) -> bytes:
        return transaction_signing_bytes(
            self.crt_type, self.drone_name, self.operator_pubkey, self.expiry, self.csr_digest
        )

    def signature_valid(self) -> bool:
        return verify(self.operator_pubkey, self.signing_bytes(), self.operator_signature)

    def tx_digest(self) -> Digest:
        return digest(canonical_bytes(self))

    def to_dict(self) -> dict[str, Any]:
        return {
            "crt_type": self.crt_type.value,
            "drone_name": self.drone_name,
            "operator_pubkey": self.operator_pubkey.hex(),
            "operator_signature": self.operator_signature.hex(),
            "expiry": self.expiry,
            "csr_digest": self.csr_digest.hex(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Transaction":
        pub = PublicKey.from_hex(data["operator_pubkey"])
        return cls(
            crt_type=CrtType(data["crt_type"]),
            drone_name=data["drone_name"],
            operator_pubkey=pub,
            operator_signature=Signature(bytes.fromhex(data["operator_signature"]), pub),
            expiry=int(data["expiry"]),
            csr_digest=Digest.from_hex(data["csr_digest"]),
        )


def transaction_signing_bytes(
    crt_type: CrtType, drone_name: str, operator_pubkey: PublicKey, expiry: int, csr_digest: Digest
) -> bytes:
    return pack_fields(
        _TAG_TX_BODY,
        crt_type.code,
        drone_name.encode("utf-8"),
        operator_pubkey.raw,
        encode_uint(expiry),
        csr_digest.value,
    )


def make_transaction(
    crt_type: CrtType,
    drone_name: str,
    operator: KeyPair,
    expiry: int,
    csr_digest: Digest,
) -> Transaction:
    _check_name(drone_name)
    body = transaction_signing_bytes(crt_type, drone_name, operator.public, expiry, csr_digest)
    return Transaction(crt_type, drone_name, operator.public, sign(operator, body), expiry, csr_digest)


# ---------------------------------------------------------------------------
# Block
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockHeader:
    serial_number: int
    crt_type: CrtType
    global_prev: Digest
    service_prev: Optional[Digest] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "serial_number": self.serial_number,
            "crt_type": self.crt_type.value,
            "global_prev": self.global_prev.hex(),
            "service_prev": self.service_prev.hex() if self.service_prev else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BlockHeader":
        sp = data.get("service_prev")
        return cls(
            int(data["serial_number"]),
            CrtType(data["crt_type"]),
            Digest.from_hex(data["global_prev"]),
            Digest.from_hex(sp) if sp else None,
        )


@dataclass(frozen=True)
class BlockBody:
    drone_name: str
    operator_pubkey: PublicKey
    operator_signature: Signature
    expiry: int
    csr_digest: Digest

    @classmethod
    def from_transaction(cls, tx: Transaction) -> "BlockBody":
        return cls(tx.drone_name, tx.operator_pubkey, tx.operator_signature, tx.expiry, tx.csr_digest)

    def transaction(self, crt_type: CrtType) -> Transaction:
        return Transaction(
            crt_type,
            self.drone_name,
            self.operator_pubkey,
            self.operator_signature,
            self.expiry,
            self.csr_digest,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "drone_name": self.drone_name,
            "operator_pubkey": self.operator_pubkey.hex(),
            "operator_signature": self.operator_signature.hex(),
            "expiry": self.expiry,
            "csr_digest": self.csr_digest.hex(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BlockBody":
        pub = PublicKey.from_hex(data["operator_pubkey"])
        return cls(
            data["drone_name"],
            pub,
            Signature(bytes.fromhex(data["operator_signature"]), pub),
            int(data["expiry"]),
            Digest.from_hex(data["csr_digest"]),
        )


@dataclass(frozen=True)
class Approval:
    validator: PublicKey
    signature: Signature


@dataclass(frozen=True)
class BlockFooter:
    """Approving validators' signatures plus the validator-set size at commit."""

    approvals: tuple[Approval, ...]
    validator_count: int

    def signers(self) -> list[PublicKey]:
        return [a.validator for a in self.approvals]

    def to_dict(self) -> dict[str, Any]:
        return {
            "validator_count": self.validator_count,
            "approvals": [
                {"validator": a.validator.hex(), "signature": a.signature.hex()} for a in self.approvals
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BlockFooter":
        approvals = []
        for item in data["approvals"]:
            key = PublicKey.from_hex(item["validator"])
            approvals.append(Approval(key, Signature(bytes.fromhex(item["signature"]), key)))
        return cls(tuple(approvals), int(data["validator_count"]))


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    body: BlockBody
    footer: BlockFooter

    @property
    def serial_number(self) -> int:
        return self.header.serial_number

    @property
    def drone_name(self) -> str:
        return self.body.drone_name

    @property
    def crt_type(self) -> CrtType:
        return self.header.crt_type

    def transaction(self) -> Transaction:
        return self.body.transaction(self.header.crt_type)

    def signing_digest(self) -> Digest:
        return signing_digest(self.header, self.body)

    def block_digest(self) -> Digest:
        return digest(canonical_bytes(self))

    def to_dict(self) -> dict[str, Any]:
        return {
            "header": self.header.to_dict(),
            "body": self.body.to_dict(),
            "footer": self.footer.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Block":
        return cls(
            BlockHeader.from_dict(data["header"]),
            BlockBody.from_dict(data["body"]),
            BlockFooter.from_dict(data["footer"]),
        )


def signing_digest(header: BlockHeader, body: BlockBody) -> Digest:
    """The value every footer signature covers: digest(header || body)."""
    return digest(pack_fields(canonical_bytes(header), canonical_bytes(body)))


# ---------------------------------------------------------------------------
# Canonical encoding
# ---------------------------------------------------------------------------


@singledispatch
def canonical_bytes(value) -> bytes:
    raise TypeError(f"no canonical encoding for {type(value).__name__}")


@canonical_bytes.register
def _(value: Transaction) -> bytes:
    return pack_fields(_TAG_TX, value.signing_bytes(), value.operator_signature.value)


@canonical_bytes.register
def _(value: BlockHeader) -> bytes:
    return pack_fields(
        _TAG_HEADER,
        encode_uint(value.serial_number),
        value.crt_type.code,
        value.global_prev.value,
        value.service_prev.value if value.service_prev is not None else b"",
    )


@canonical_bytes.register
def _(value: BlockBody) -> bytes:
    return pack_fields(
        _TAG_BODY,
        value.drone_name.encode("utf-8"),
        value.operator_pubkey.raw,
        value.operator_signature.value,
        encode_uint(value.expiry),
        value.csr_digest.value,
    )


@canonical_bytes.register
def _(value: BlockFooter) -> bytes:
    entries = [pack_fields(a.validator.raw, a.signature.value) for a in value.approvals]
    return pack_fields(_TAG_FOOTER, encode_uint(value.validator_count), pack_fields(*entries))


@canonical_bytes.register
def _(value: Block) -> bytes:
    return pack_fields(
        _TAG_BLOCK,
        canonical_bytes(value.header),
        canonical_bytes(value.body),
        canonical_bytes(value.footer),
    )


def _expect_tag(actual: bytes, tag: bytes) -> None:
    if actual != tag:
        raise ValueError(f"expected tag {tag!r}, found {actual[:32]!r}")


def decode_transaction(data: bytes) -> Transaction:
    tag, body, sig = unpack_fields(data, 3)
    _expect_tag(tag, _TAG_TX)
    btag, code, name, pub, expiry, csr = unpack_fields(body, 6)
    _expect_tag(btag, _TAG_TX_BODY)
    key = PublicKey(pub)
    return Transaction(
        CrtType.from_code(code), name.decode("utf-8"), key, Signature(sig, key), decode_uint(expiry), Digest(csr)
    )


def decode_header(data: bytes) -> BlockHeader:
    tag, serial, code, gprev, sprev = unpack_fields(data, 5)
    _expect_tag(tag, _TAG_HEADER)
    return BlockHeader(decode_uint(serial), CrtType.from_code(code), Digest(gprev), Digest(sprev) if sprev else None)


def decode_body(data: bytes) -> BlockBody:
    tag, name, pub, sig, expiry, csr = unpack_fields(data, 6)
    _expect_tag(tag, _TAG_BODY)
    key = PublicKey(pub)
    return BlockBody(name.decode("utf-8"), key, Signature(sig, key), decode_uint(expiry), Digest(csr))


def decode_footer(data: bytes) -> BlockFooter:
    tag, count, packed = unpack_fields(data, 3)
    _expect_tag(tag, _TAG_FOOTER)
    approvals = []
    for entry in unpack_fields(packed):
        key, sig = unpack_fields(entry, 2)
        pk = PublicKey(key)
        approvals.append(Approval(pk, Signature(sig, pk)))
    return BlockFooter(tuple(approvals), decode_uint(count))


def decode_block(data: bytes) -> Block:
    tag, header, body, footer = unpack_fields(data, 4)
    _expect_tag(tag, _TAG_BLOCK)
    return Block(decode_header(header), decode_body(body), decode_footer(footer))


# ---------------------------------------------------------------------------
# Challenge transcripts
# ---------------------------------------------------------------------------


class TranscriptKind(enum.Enum):
    REGISTRATION = "registration"
    REVOCATION = "revocation"
    HANDSHAKE = "handshake"


@dataclass(frozen=True)
class HandshakeRecord:
    """Every value exchanged in one encrypt-then-sign token handshake."""

    certreq: bytes
    encreq: SealedEnvelope
    signature: Signature
    tokentx: bytes
    token: bytes
    enctoken: SealedEnvelope
    tokensig: Signature
    enctokendo: SealedEnvelope
    sigtokendo: Signature
    initialtoken: bytes

    def to_dict(self) -> dict[str, Any]:
        return {
            "certreq": self.certreq.hex(),
            "encreq": _env_to_hex(self.encreq),
            "signature": _sig_to_hex(self.signature),
            "tokentx": self.tokentx.hex(),
            "token": self.token.hex(),
            "enctoken": _env_to_hex(self.enctoken),
            "tokensig": _sig_to_hex(self.tokensig),
            "enctokendo": _env_to_hex(self.enctokendo),
            "sigtokendo": _sig_to_hex(self.sigtokendo),
            "initialtoken": self.initialtoken.hex(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "HandshakeRecord":
        return cls(
            certreq=bytes.fromhex(data["certreq"]),
            encreq=_env_from_hex(data["encreq"]),
            signature=_sig_from_hex(data["signature"]),
            tokentx=bytes.fromhex(data["tokentx"]),
            token=bytes.fromhex(data["token"]),
            enctoken=_env_from_hex(data["enctoken"]),
            tokensig=_sig_from_hex(data["tokensig"]),
            enctokendo=_env_from_hex(data["enctokendo"]),
            sigtokendo=_sig_from_hex(data["sigtokendo"]),
            initialtoken=bytes.fromhex(data["initialtoken"]),
        )


@dataclass(frozen=True)
class ChallengeTranscript:
    kind: TranscriptKind
    challenger: Optional[PublicKey] = None
    t0: Optional[Signature] = None
    phi0: Optional[Signature] = None
    t1: Optional[Digest] = None
    phi1: Optional[Signature] = None
    handshake: Optional[HandshakeRecord] = None

    def is_complete(self) -> bool:
        if self.kind is TranscriptKind.REGISTRATION:
            return self.t0 is not None and self.phi0 is not None
        if self.kind is TranscriptKind.REVOCATION:
            return self.t1 is not None and self.phi1 is not None
        return self.handshake is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "challenger": self.challenger.hex() if self.challenger else None,
            "t0": _sig_to_hex(self.t0),
            "phi0": _sig_to_hex(self.phi0),
            "t1": self.t1.hex() if self.t1 else None,
            "phi1": _sig_to_hex(self.phi1),
            "handshake": self.handshake.to_dict() if self.handshake else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ChallengeTranscript":
        return cls(
            kind=TranscriptKind(data["kind"]),
            challenger=PublicKey.from_hex(data["challenger"]) if data.get("challenger") else None,
            t0=_sig_from_hex(data.get("t0")),
            phi0=_sig_from_hex(data.get("phi0")),
            t1=Digest.from_hex(data["t1"]) if data.get("t1") else None,
            phi1=_sig_from_hex(data.get("phi1")),
            handshake=HandshakeRecord.from_dict(data["handshake"]) if data.get("handshake") else None,
        )
