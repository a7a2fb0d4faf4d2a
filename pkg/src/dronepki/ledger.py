"""Append-only certificate ledger with a global chain and per-drone chains."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

from .crypto import ZERO_DIGEST, Digest, PublicKey, digest, verify
from .errors import (
    BrokenGlobalChain,
    BrokenServiceChain,
    DuplicateActiveCertificate,
    InsufficientApprovals,
    MalformedTransaction,
    RevokeWithoutBinding,
    UnknownValidatorSignature,
)
from .model import Block, BlockHeader, CrtType, Transaction, canonical_bytes


class Status(enum.Enum):
    ACTIVE = "active"
    REVOKED = "revoked"
    EXPIRED = "expired"
    UNKNOWN = "unknown"


def quorum_reached(approvals: int, validator_count: int) -> bool:
    """Strictly more than half of the validator set."""
    return 2 * approvals > validator_count


@dataclass
class PendingEntry:
    pending_id: int
    tx: Transaction
    submitted: int
    votes: list = field(default_factory=list)
    failed_rounds: int = 0

    def age(self, now: int) -> int:
        return now - self.submitted


class LedgerState:
    """Single-writer ledger replica.

    ``validator_set`` is the current permissioned set; ``known_validators``
    also remembers evicted keys so historical footers still re-verify.
    """

    def __init__(self, validators: Iterable[PublicKey] = ()):
        self.blocks: list[Block] = []
        self.pending: dict[int, PendingEntry] = {}
        self.head_by_drone: dict[str, int] = {}
        self.validator_set: set[PublicKey] = set(validators)
        self.known_validators: set[PublicKey] = set(self.validator_set)
        self._digests: list[Digest] = []
        self._next_pending = 0

    # -- validator membership ------------------------------------------------

    def admit(self, key: PublicKey) -> None:
        self.validator_set.add(key)
        self.known_validators.add(key)

    def evict(self, key: PublicKey) -> None:
        self.validator_set.discard(key)

    # -- reads ---------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.blocks)

    def tip_digest(self) -> Digest:
        return self._digests[-1] if self._digests else ZERO_DIGEST

    def block_digest(self, index: int) -> Digest:
        return self._digests[index]

    def latest_block(self, drone_name: str) -> Optional[Block]:
        idx = self.head_by_drone.get(drone_name)
        return None if idx is None else self.blocks[idx]

    def drone_chain(self, drone_name: str) -> list[Block]:
        """Blocks for one drone, oldest first, found by walking service pointers."""
        chain = []
        idx = self.head_by_drone.get(drone_name)
        by_digest = None
        while idx is not None:
            block = self.blocks[idx]
            chain.append(block)
            prev = block.header.service_prev
            if prev is None:
                break
            if by_digest is None:
                by_digest = {d: i for i, d in enumerate(self._digests)}
            idx = by_digest[prev]
        chain.reverse()
        return chain

    def certificate_status(self, drone_name: str, now: int) -> Status:
        latest = self.latest_block(drone_name)
        if latest is None:
            return Status.UNKNOWN
        if latest.crt_type is CrtType.REVOKE:
            return Status.REVOKED
        if latest.body.expiry <= now:
            return Status.EXPIRED
        return Status.ACTIVE

    def next_header(self, tx: Transaction) -> BlockHeader:
        """Header a block carrying ``tx`` must have to extend the current tip."""
        head = self.head_by_drone.get(tx.drone_name)
        return BlockHeader(
            serial_number=len(self.blocks),
            crt_type=tx.crt_type,
            global_prev=self.tip_digest(),
            service_prev=None if head is None else self._digests[head],
        )

    # -- pending pool --------------------------------------------------------

    def submit(self, tx: Transaction, now: int) -> int:
        if not tx.drone_name:
            raise MalformedTransaction("empty drone name")
        if not tx.signature_valid():
            raise MalformedTransaction("operator signature does not verify")
        if tx.crt_type is CrtType.INITIAL and tx.expiry <= now:
            raise MalformedTransaction("initial certificate already expired at submission")
        pid = self._next_pending
        self._next_pending += 1
        self.pending[pid] = PendingEntry(pid, tx, now)
        return pid

    def drop_pending(self, pending_id: int) -> Optional[PendingEntry]:
        return self.pending.pop(pending_id, None)

    def pending_aged(self, now: int, age_threshold: int) -> list[int]:
        aged = [e for e in self.pending.values() if now - e.submitted >= age_threshold]
        aged.sort(key=lambda e: (e.submitted, e.pending_id))
        return [e.pending_id for e in aged]

    # -- append --------------------------------------------------------------

    def append(self, block: Block, now: Optional[int] = None, pending_id: Optional[int] = None) -> None:
        """Validate ``block`` against the tip and commit it.

        ``now`` decides whether an existing Initial has expired; without it any
        Initial at the head of a drone's chain counts as active.
        """
        header, body = block.header, block.body
        if header.serial_number != len(self.blocks):
            raise BrokenGlobalChain(f"serial {header.serial_number} != ledger height {len(self.blocks)}")
        if header.global_prev != self.tip_digest():
            raise BrokenGlobalChain("global pointer does not match digest of tip")

        head = self.head_by_drone.get(body.drone_name)
        expected_service = None if head is None else self._digests[head]
        if header.service_prev != expected_service:
            raise BrokenServiceChain(f"service pointer mismatch for {body.drone_name!r}")

        tx = block.transaction()
        if not tx.drone_name or not tx.signature_valid():
            raise MalformedTransaction("embedded transaction fails its operator signature")

        self._check_footer(block)
        self._check_lifecycle(block, now)

        self._commit(block)
        self._remove_pending(tx, pending_id)

    def _commit(self, block: Block) -> None:
        self.blocks.append(block)
        self._digests.append(digest(canonical_bytes(block)))
        self.head_by_drone[block.drone_name] = block.serial_number

    def _check_footer(self, block: Block) -> None:
        footer = block.footer
        n = len(self.validator_set)
        if footer.validator_count != n:
            raise InsufficientApprovals(f"footer records {footer.validator_count} validators, set has {n}")
        target = block.signing_digest().value
        seen = set()
        for approval in footer.approvals:
            key = approval.validator
            if key in seen:
                raise UnknownValidatorSignature(f"validator {key.short()} signed twice")
            seen.add(key)
            if key not in self.validator_set:
                raise UnknownValidatorSignature(f"{key.short()} is not a permissioned validator")
            if not verify(key, target, approval.signature):
                raise UnknownValidatorSignature(f"bad approval signature from {key.short()}")
        if not quorum_reached(len(seen), n):
            raise InsufficientApprovals(f"{len(seen)} approvals of {n} is not a majority")

    def _check_lifecycle(self, block: Block, now: Optional[int]) -> None:
        latest = self.latest_block(block.drone_name)
        if block.crt_type is CrtType.INITIAL:
            if latest is not None and latest.crt_type is CrtType.INITIAL:
                if now is None or latest.body.expiry > now:
                    raise DuplicateActiveCertificate(f"{block.drone_name!r} already has an active certificate")
        else:
            if latest is None or latest.crt_type is CrtType.REVOKE:
                raise RevokeWithoutBinding(f"{block.drone_name!r} has no binding to revoke")

    def _remove_pending(self, tx: Transaction, pending_id: Optional[int]) -> None:
        if pending_id is not None and pending_id in self.pending:
            del self.pending[pending_id]
            return
        target = canonical_bytes(tx)
        for pid, entry in self.pending.items():
            if canonical_bytes(entry.tx) == target:
                del self.pending[pid]
                return

    @classmethod
    def from_blocks(cls, blocks: Iterable[Block], validators: Iterable[PublicKey] = ()) -> "LedgerState":
        """Load a replica from exported blocks after a full :func:`verify_chain` pass.

        Footers are checked against their own recorded validator counts, since
        the set may have changed over the ledger's history.
        """
        blocks = list(blocks)
        validators = list(validators)
        report = verify_chain(blocks, validators or None)
        if not report:
            raise BrokenGlobalChain(f"block {report.failed_at}: {report.reason}")
        state = cls(validators)
        for block in blocks:
            state.known_validators.update(block.footer.signers())
            state._commit(block)
        return state


# ---------------------------------------------------------------------------
# Whole-chain verification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainReport:
    ok: bool
    blocks_checked: int
    failed_at: Optional[int] = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def verify_chain(
    source: Union[LedgerState, Iterable[Block]],
    validators: Optional[Iterable[PublicKey]] = None,
) -> ChainReport:
    """Re-derive every pointer, signature and threshold from the first block.

    Recomputes all digests from the blocks themselves; cached digests in a
    :class:`LedgerState` are never consulted. When ``validators`` is given (or
    ``source`` is a ledger), every footer signer must be one of them.
    """
    if isinstance(source, LedgerState):
        blocks = source.blocks
        allowed = set(source.known_validators) if validators is None else set(validators)
    else:
        blocks = list(source)
        allowed = None if validators is None else set(validators)

    prev = ZERO_DIGEST
    drone_heads: dict[str, tuple[Digest, CrtType]] = {}
    for i, block in enumerate(blocks):
        try:
            reason = _check_block(block, i, prev, drone_heads, allowed)
        except (ValueError, UnicodeError) as exc:
            reason = f"undecodable block: {exc}"
        if reason:
            return ChainReport(False, i, i, reason)
        d = digest(canonical_bytes(block))
        drone_heads[block.drone_name] = (d, block.crt_type)
        prev = d
    return ChainReport(True, len(blocks))


def _check_block(
    block: Block,
    index: int,
    prev: Digest,
    drone_heads: dict,
    allowed: Optional[set],
) -> str:
    header = block.header
    if header.serial_number != index:
        return f"serial {header.serial_number} at position {index}"
    if header.global_prev != prev:
        return "global pointer mismatch"
    head = drone_heads.get(block.drone_name)
    if header.service_prev != (head[0] if head else None):
        return "service pointer mismatch"
    if block.crt_type is CrtType.REVOKE and (head is None or head[1] is CrtType.REVOKE):
        return "revocation without a live binding"
    if not block.body.drone_name or not block.transaction().signature_valid():
        return "operator signature invalid"
    footer = block.footer
    target = block.signing_digest().value
    signers = set()
    for approval in footer.approvals:
        if approval.validator in signers:
            return "duplicate footer signer"
        signers.add(approval.validator)
        if allowed is not None and approval.validator not in allowed:
            return "footer signer outside validator set"
        if not verify(approval.validator, target, approval.signature):
            return "footer signature invalid"
    if not quorum_reached(len(signers), footer.validator_count):
        return "approvals do not exceed half of the validator set"
    return ""


# ---------------------------------------------------------------------------
# JSON-lines import/export
# ---------------------------------------------------------------------------


def dump_jsonl(blocks: Iterable[Block], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for block in blocks:
            fh.write(json.dumps(block.to_dict(), separators=(",", ":")))
            fh.write("\n")


def iter_jsonl(path: Union[str, Path]) -> Iterator[Block]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield Block.from_dict(json.loads(line))


def load_jsonl(path: Union[str, Path]) -> list[Block]:
    return list(iter_jsonl(path))
