"""Service-validator checks and token challenge-response protocols.

Registration (sign-only challenge)::

    t0   = Sign_SV( H(tx || sv_pk) )       validator -> operator
    phi0 = Sign_DO( t0 )                   operator places phi0 in the registry
    validator retrieves phi0 and checks it is DO's signature over t0

Revocation::

    t1   = H(prev_body || tx_cur || do_pk)  computed by the operator
    phi1 = Sign_DO( t1 )                    placed in the registry
    validator recomputes t1 and checks phi1 against it

The encrypt-then-sign handshake is an alternative registration challenge
(see :class:`HandshakeSession`). In every variant a "decrypt with the public
key" step is realised as signature verification against the expected value.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass
from typing import Any, Callable, Optional

from .crypto import (
    Digest,
    KeyPair,
    PublicKey,
    SealedEnvelope,
    Signature,
    digest_fields,
    open_envelope,
    pack_fields,
    seal,
    sign,
    unpack_fields,
    verify,
)
from .errors import DecryptionFailure, HandshakeAbort, NoPriorBinding
from .ledger import LedgerState, Status
from .model import (
    ChallengeTranscript,
    CrtType,
    HandshakeRecord,
    Transaction,
    TranscriptKind,
    canonical_bytes,
)
from .registry import PRESENT, Registry

DEFAULT_POLL_RETRIES = 3


class Verdict(enum.Enum):
    APPROVE = "approve"
    REJECT = "reject"


class Reason(enum.Enum):
    BAD_OPERATOR_SIGNATURE = "bad_operator_signature"
    DOMAIN_ALREADY_BOUND = "domain_already_bound"
    TOKEN_MISSING = "token_missing"
    TOKEN_MISMATCH = "token_mismatch"
    NO_PRIOR_BINDING = "no_prior_binding"
    OPERATOR_KEY_MISMATCH = "operator_key_mismatch"
    WRONG_CRT_TYPE = "wrong_crt_type"
    UNKNOWN_CHALLENGER = "unknown_challenger"
    HANDSHAKE_FAILED = "handshake_failed"


@dataclass(frozen=True)
class ValidationOutcome:
    verdict: Verdict
    reason: Optional[Reason]
    transcript: ChallengeTranscript
    validator_signature: Optional[Signature] = None

    @property
    def approved(self) -> bool:
        return self.verdict is Verdict.APPROVE

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "reason": self.reason.value if self.reason else None,
            "transcript": self.transcript.to_dict(),
            "validator_signature": self.validator_signature.hex() if self.validator_signature else None,
        }


def approve(sv: KeyPair, tx: Transaction, transcript: ChallengeTranscript) -> ValidationOutcome:
    return ValidationOutcome(Verdict.APPROVE, None, transcript, sign(sv, tx.tx_digest().value))


def reject(reason: Reason, transcript: ChallengeTranscript) -> ValidationOutcome:
    return ValidationOutcome(Verdict.REJECT, reason, transcript)


# ---------------------------------------------------------------------------
# Sanity checks
# ---------------------------------------------------------------------------


def check_key_possession(tx: Transaction) -> bool:
    return bool(tx.drone_name) and tx.signature_valid()


def check_domain_absent(ledger: LedgerState, tx: Transaction, now: int) -> bool:
    return ledger.certificate_status(tx.drone_name, now) in (Status.UNKNOWN, Status.REVOKED, Status.EXPIRED)


def _binding_problem(ledger: LedgerState, tx: Transaction) -> Optional[Reason]:
    latest = ledger.latest_block(tx.drone_name)
    if latest is None or latest.crt_type is CrtType.REVOKE:
        return Reason.NO_PRIOR_BINDING
    if latest.body.operator_pubkey != tx.operator_pubkey:
        return Reason.OPERATOR_KEY_MISMATCH
    return None


# ---------------------------------------------------------------------------
# Registration tokens
# ---------------------------------------------------------------------------


def registration_token_message(tx: Transaction, sv_public: PublicKey) -> bytes:
    return digest_fields(canonical_bytes(tx), sv_public.raw).value


def issue_registration_token(sv: KeyPair, tx: Transaction) -> Signature:
    return sign(sv, registration_token_message(tx, sv.public))


def operator_sign_token(do: KeyPair, t0: Signature) -> Signature:
    return sign(do, t0.value)


def registration_token_matches(tx: Transaction, t0: Signature, token: bytes) -> bool:
    """The validator's ``T2 equals T`` step: is ``token`` DO's signature over ``t0``?"""
    return verify(tx.operator_pubkey, t0.value, Signature(token, tx.operator_pubkey))


def retrieve_with_retries(
    registry: Registry, drone_name: str, retries: int, now: Optional[int] = None
) -> tuple[Optional[bytes], int]:
    token, status = None, 0
    for _ in range(max(1, retries)):
        token, status = registry.retrieve_token(drone_name, now)
        if status == PRESENT:
            break
    return token, status


def begin_registration(sv: KeyPair, tx: Transaction, ledger: LedgerState, now: int):
    """Checks 1-2 and token issue. Returns ``(reason, t0)``; exactly one is ``None``."""
    if tx.crt_type is not CrtType.INITIAL:
        return Reason.WRONG_CRT_TYPE, None
    if not check_key_possession(tx):
        return Reason.BAD_OPERATOR_SIGNATURE, None
    if not check_domain_absent(ledger, tx, now):
        return Reason.DOMAIN_ALREADY_BOUND, None
    return None, issue_registration_token(sv, tx)


def conclude_registration(
    sv: KeyPair, tx: Transaction, t0: Signature, token: Optional[bytes], status: int
) -> ValidationOutcome:
    phi0 = Signature(token, tx.operator_pubkey) if status == PRESENT and token is not None else None
    transcript = ChallengeTranscript(TranscriptKind.REGISTRATION, challenger=sv.public, t0=t0, phi0=phi0)
    if phi0 is None:
        return reject(Reason.TOKEN_MISSING, transcript)
    if not registration_token_matches(tx, t0, token):
        return reject(Reason.TOKEN_MISMATCH, transcript)
    return approve(sv, tx, transcript)


def validate_registration(
    sv: KeyPair,
    tx: Transaction,
    ledger: LedgerState,
    registry: Registry,
    now: int,
    operator: Optional["OperatorAgent"] = None,
    poll_retries: int = DEFAULT_POLL_RETRIES,
) -> ValidationOutcome:
    """Full registration validation with the token challenge.

    ``operator`` receives ``t0`` and is expected to place ``phi0``; pass
    ``None`` when the token has already been placed out of band.
    """
    reason, t0 = begin_registration(sv, tx, ledger, now)
    if reason is not None:
        return reject(reason, ChallengeTranscript(TranscriptKind.REGISTRATION, challenger=sv.public))
    if operator is not None:
        operator.answer_registration(tx, t0, now)
    token, status = retrieve_with_retries(registry, tx.drone_name, poll_retries)
    return conclude_registration(sv, tx, t0, token, status)


# ---------------------------------------------------------------------------
# Revocation tokens
# ---------------------------------------------------------------------------


def revocation_token_digest(ledger: LedgerState, tx_cur: Transaction, operator_public: PublicKey) -> Digest:
    latest = ledger.latest_block(tx_cur.drone_name)
    if latest is None:
        raise NoPriorBinding(f"{tx_cur.drone_name!r} has never been registered")
    return digest_fields(canonical_bytes(latest.body), canonical_bytes(tx_cur), operator_public.raw)


def issue_revocation_token(do: KeyPair, ledger: LedgerState, tx_cur: Transaction) -> tuple[Digest, Signature]:
    t1 = revocation_token_digest(ledger, tx_cur, do.public)
    return t1, sign(do, t1.value)


def begin_revocation(tx: Transaction, ledger: LedgerState) -> Optional[Reason]:
    if tx.crt_type is not CrtType.REVOKE:
        return Reason.WRONG_CRT_TYPE
    if not check_key_possession(tx):
        return Reason.BAD_OPERATOR_SIGNATURE
    return _binding_problem(ledger, tx)


def conclude_revocation(
    sv: KeyPair, tx: Transaction, ledger: LedgerState, token: Optional[bytes], status: int
) -> ValidationOutcome:
    h3 = revocation_token_digest(ledger, tx, tx.operator_pubkey)
    phi1 = Signature(token, tx.operator_pubkey) if status == PRESENT and token is not None else None
    transcript = ChallengeTranscript(TranscriptKind.REVOCATION, challenger=sv.public, t1=h3, phi1=phi1)
    if phi1 is None:
        return reject(Reason.TOKEN_MISSING, transcript)
    if not verify(tx.operator_pubkey, h3.value, phi1):
        return reject(Reason.TOKEN_MISMATCH, transcript)
    return approve(sv, tx, transcript)


def validate_revocation(
    sv: KeyPair,
    tx: Transaction,
    ledger: LedgerState,
    registry: Registry,
    now: int,
    operator: Optional["OperatorAgent"] = None,
    poll_retries: int = DEFAULT_POLL_RETRIES,
) -> ValidationOutcome:
    reason = begin_revocation(tx, ledger)
    if reason is not None:
        return reject(reason, ChallengeTranscript(TranscriptKind.REVOCATION, challenger=sv.public))
    if operator is not None:
        operator.answer_revocation(tx, ledger, now)
    token, status = retrieve_with_retries(registry, tx.drone_name, poll_retries)
    return conclude_revocation(sv, tx, ledger, token, status)


# ---------------------------------------------------------------------------
# Encrypt-then-sign handshake
# ---------------------------------------------------------------------------

Interceptor = Callable[[str, Any], Any]
Entropy = Callable[[int], bytes]


def _passthrough(name: str, value: Any) -> Any:
    return value


class HandshakeSession:
    """Step-wise handshake between an operator (``do``) and a validator.

    The four steps mirror the three messages of the protocol::

        DO -> SV   encreq, signature
        SV -> DO   enctoken, tokensig
        DO -> SV   enctokendo, sigtokendo

    Each side only holds its own secret plus the peer's public key. Any failed
    signature check, decryption, or the final token comparison raises
    :class:`HandshakeAbort` naming the step.
    """

    def __init__(self, do_public: PublicKey, sv_public: PublicKey, entropy: Optional[Entropy] = None):
        self.do_public = do_public
        self.sv_public = sv_public
        self._entropy = entropy or os.urandom
        self.values: dict[str, Any] = {}

    def operator_request(self, do: KeyPair, csr: bytes, drone_name: str):
        certreq = pack_fields(csr, drone_name.encode("utf-8"))
        encreq = seal(self.sv_public, certreq, self._entropy(32))
        signature = sign(do, encreq.to_bytes())
        self.values.update(certreq=certreq, encreq=encreq, signature=signature)
        return encreq, signature

    def validator_respond(self, sv: KeyPair, encreq: SealedEnvelope, signature: Signature,
                          expect: Optional[tuple[bytes, str]] = None):
        if not verify(self.do_public, encreq.to_bytes(), signature):
            raise HandshakeAbort("sv_verify_request", "operator signature over encreq invalid")
        try:
            d = open_envelope(sv, encreq)
        except DecryptionFailure as exc:
            raise HandshakeAbort("sv_open_request", str(exc)) from exc
        if expect is not None:
            csr, name = expect
            if d != pack_fields(csr, name.encode("utf-8")):
                raise HandshakeAbort("sv_open_request", "certificate request does not match transaction")
        tokentx = self._entropy(32)
        token = pack_fields(self.sv_public.raw, tokentx)
        enctoken = seal(self.do_public, token, self._entropy(32))
        tokensig = sign(sv, enctoken.to_bytes())
        self.values.update(tokentx=tokentx, token=token, enctoken=enctoken, tokensig=tokensig)
        return enctoken, tokensig

    def operator_confirm(self, do: KeyPair, enctoken: SealedEnvelope, tokensig: Signature):
        if not verify(self.sv_public, enctoken.to_bytes(), tokensig):
            raise HandshakeAbort("do_verify_token", "validator signature over enctoken invalid")
        enctokendo = seal(self.sv_public, enctoken.to_bytes(), self._entropy(32))
        sigtokendo = sign(do, enctokendo.to_bytes())
        return enctokendo, sigtokendo

    def validator_finish(self, sv: KeyPair, enctokendo: SealedEnvelope, sigtokendo: Signature) -> HandshakeRecord:
        if not verify(self.do_public, enctokendo.to_bytes(), sigtokendo):
            raise HandshakeAbort("sv_verify_confirmation", "operator signature over enctokendo invalid")
        try:
            initialtoken = open_envelope(sv, enctokendo)
        except DecryptionFailure as exc:
            raise HandshakeAbort("sv_open_confirmation", str(exc)) from exc
        if initialtoken != self.values["enctoken"].to_bytes():
            raise HandshakeAbort("assert", "returned token differs from the one issued")
        v = self.values
        return HandshakeRecord(
            certreq=v["certreq"],
            encreq=v["encreq"],
            signature=v["signature"],
            tokentx=v["tokentx"],
            token=v["token"],
            enctoken=v["enctoken"],
            tokensig=v["tokensig"],
            enctokendo=enctokendo,
            sigtokendo=sigtokendo,
            initialtoken=initialtoken,
        )


def run_handshake(
    do: KeyPair,
    sv: KeyPair,
    csr: bytes = b"csr",
    drone_name: str = "drone",
    *,
    entropy: Optional[Entropy] = None,
    intercept: Optional[Interceptor] = None,
) -> HandshakeRecord:
    """Run all three messages in-process.

    ``intercept(name, value)`` sees every value on the wire (``encreq``,
    ``signature``, ``enctoken``, ``tokensig``, ``enctokendo``,
    ``sigtokendo``) and returns what gets delivered, which is how tests inject
    an active attacker.
    """
    hook = intercept or _passthrough
    session = HandshakeSession(do.public, sv.public, entropy)
    encreq, signature = session.operator_request(do, csr, drone_name)
    encreq, signature = hook("encreq", encreq), hook("signature", signature)
    enctoken, tokensig = session.validator_respond(sv, encreq, signature)
    enctoken, tokensig = hook("enctoken", enctoken), hook("tokensig", tokensig)
    enctokendo, sigtokendo = session.operator_confirm(do, enctoken, tokensig)
    enctokendo, sigtokendo = hook("enctokendo", enctokendo), hook("sigtokendo", sigtokendo)
    return session.validator_finish(sv, enctokendo, sigtokendo)


def handshake_token(enctokendo: SealedEnvelope, sigtokendo: Signature) -> bytes:
    """Registry payload carrying the operator's final handshake message."""
    return pack_fields(enctokendo.to_bytes(), sigtokendo.value)


def parse_handshake_token(token: bytes, operator: PublicKey) -> tuple[SealedEnvelope, Signature]:
    env, sig = unpack_fields(token, 2)
    return SealedEnvelope.from_bytes(env), Signature(sig, operator)


# ---------------------------------------------------------------------------
# Operator side
# ---------------------------------------------------------------------------


class OperatorAgent:
    """Honest drone operator: answers challenges by writing to the registry."""

    def __init__(self, keypair: KeyPair, registry: Registry):
        self.keypair = keypair
        self.registry = registry

    @property
    def public(self) -> PublicKey:
        return self.keypair.public

    def answer_registration(self, tx: Transaction, t0: Signature, now: int = 0) -> int:
        phi0 = operator_sign_token(self.keypair, t0)
        return self.registry.place_token(self.public, tx.drone_name, phi0.value, now)

    def answer_revocation(self, tx: Transaction, ledger: LedgerState, now: int = 0) -> int:
        try:
            _, phi1 = issue_revocation_token(self.keypair, ledger, tx)
        except NoPriorBinding:
            return 0
        return self.registry.place_token(self.public, tx.drone_name, phi1.value, now)


# ---------------------------------------------------------------------------
# Voter-side transcript re-verification
# ---------------------------------------------------------------------------


def verify_transcript(
    sv: KeyPair,
    tx: Transaction,
    transcript: ChallengeTranscript,
    ledger: LedgerState,
    registry: Registry,
    now: Optional[int] = None,
) -> ValidationOutcome:
    """Re-check another validator's challenge without re-running placement.

    Repeats the sanity checks against this voter's own ledger, verifies every
    signature in the transcript, and confirms the registry (as this voter sees
    it) still holds the token the transcript claims was retrieved.
    """
    check_now = 0 if now is None else now
    if tx.crt_type is CrtType.INITIAL:
        if not check_key_possession(tx):
            return reject(Reason.BAD_OPERATOR_SIGNATURE, transcript)
        if not check_domain_absent(ledger, tx, check_now):
            return reject(Reason.DOMAIN_ALREADY_BOUND, transcript)
        if transcript.challenger is None or transcript.challenger not in ledger.validator_set:
            return reject(Reason.UNKNOWN_CHALLENGER, transcript)
        if transcript.kind is TranscriptKind.HANDSHAKE:
            return _verify_handshake_transcript(sv, tx, transcript, registry, now)
        if transcript.kind is not TranscriptKind.REGISTRATION or not transcript.is_complete():
            return reject(Reason.TOKEN_MISSING, transcript)
        if not verify(transcript.challenger, registration_token_message(tx, transcript.challenger), transcript.t0):
            return reject(Reason.TOKEN_MISMATCH, transcript)
        if not registration_token_matches(tx, transcript.t0, transcript.phi0.value):
            return reject(Reason.TOKEN_MISMATCH, transcript)
        expected = transcript.phi0.value
    else:
        reason = begin_revocation(tx, ledger)
        if reason is not None:
            return reject(reason, transcript)
        if transcript.kind is not TranscriptKind.REVOCATION or not transcript.is_complete():
            return reject(Reason.TOKEN_MISSING, transcript)
        h3 = revocation_token_digest(ledger, tx, tx.operator_pubkey)
        if transcript.t1 != h3 or not verify(tx.operator_pubkey, h3.value, transcript.phi1):
            return reject(Reason.TOKEN_MISMATCH, transcript)
        expected = transcript.phi1.value

    token, status = registry.retrieve_token(tx.drone_name, now)
    if status != PRESENT:
        return reject(Reason.TOKEN_MISSING, transcript)
    if token != expected:
        return reject(Reason.TOKEN_MISMATCH, transcript)
    return approve(sv, tx, transcript)


def _verify_handshake_transcript(
    sv: KeyPair,
    tx: Transaction,
    transcript: ChallengeTranscript,
    registry: Registry,
    now: Optional[int],
) -> ValidationOutcome:
    rec = transcript.handshake
    if rec is None:
        return reject(Reason.TOKEN_MISSING, transcript)
    op, challenger = tx.operator_pubkey, transcript.challenger
    ok = (
        verify(op, rec.encreq.to_bytes(), rec.signature)
        and verify(challenger, rec.enctoken.to_bytes(), rec.tokensig)
        and verify(op, rec.enctokendo.to_bytes(), rec.sigtokendo)
        and rec.initialtoken == rec.enctoken.to_bytes()
        and rec.certreq == pack_fields(tx.csr_digest.value, tx.drone_name.encode("utf-8"))
    )
    if not ok:
        return reject(Reason.HANDSHAKE_FAILED, transcript)
    token, status = registry.retrieve_token(tx.drone_name, now)
    if status != PRESENT:
        return reject(Reason.TOKEN_MISSING, transcript)
    if token != handshake_token(rec.enctokendo, rec.sigtokendo):
        return reject(Reason.TOKEN_MISMATCH, transcript)
    return approve(sv, tx, transcript)


def validate_registration_handshake(
    sv: KeyPair,
    tx: Transaction,
    ledger: LedgerState,
    registry: Registry,
    now: int,
    operator: KeyPair,
    poll_retries: int = DEFAULT_POLL_RETRIES,
    entropy: Optional[Entropy] = None,
) -> ValidationOutcome:
    """Registration where the token challenge is the encrypt-then-sign handshake.

    The operator's final message travels through the registry entry for the
    drone, so completing the handshake also proves control of that entry.
    """
    reason, _ = begin_registration(sv, tx, ledger, now)
    empty = ChallengeTranscript(TranscriptKind.HANDSHAKE, challenger=sv.public)
    if reason is not None:
        return reject(reason, empty)
    session = HandshakeSession(tx.operator_pubkey, sv.public, entropy)
    try:
        encreq, signature = session.operator_request(operator, tx.csr_digest.value, tx.drone_name)
        enctoken, tokensig = session.validator_respond(
            sv, encreq, signature, expect=(tx.csr_digest.value, tx.drone_name)
        )
        enctokendo, sigtokendo = session.operator_confirm(operator, enctoken, tokensig)
    except HandshakeAbort:
        return reject(Reason.HANDSHAKE_FAILED, empty)
    registry.place_token(operator.public, tx.drone_name, handshake_token(enctokendo, sigtokendo), now)
    token, status = retrieve_with_retries(registry, tx.drone_name, poll_retries)
    if status != PRESENT or token is None:
        return reject(Reason.TOKEN_MISSING, empty)
    return finish_handshake_registration(sv, tx, session, token)


def finish_handshake_registration(
    sv: KeyPair, tx: Transaction, session: HandshakeSession, token: bytes
) -> ValidationOutcome:
    empty = ChallengeTranscript(TranscriptKind.HANDSHAKE, challenger=sv.public)
    try:
        enctokendo, sigtokendo = parse_handshake_token(token, tx.operator_pubkey)
        record = session.validator_finish(sv, enctokendo, sigtokendo)
    except ValueError:
        return reject(Reason.TOKEN_MISMATCH, empty)
    except HandshakeAbort:
        return reject(Reason.TOKEN_MISMATCH, empty)
    transcript = ChallengeTranscript(TranscriptKind.HANDSHAKE, challenger=sv.public, handshake=record)
    return approve(sv, tx, transcript)
