"""Proof-of-Service rounds: proposer rotation, voting, and block commit.

A block commits when strictly more than half of the current validator set
approves it. The footer stores exactly the approving signatures.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .crypto import KeyPair, PublicKey, Signature, pack_fields, sign, sorted_keys, verify
from .errors import (
    BadCredential,
    DoubleVote,
    EmptyValidatorSet,
    ForeignVote,
    InvalidVoteSignature,
    LedgerError,
    MalformedTransaction,
    StaleRound,
)
from .ledger import LedgerState, quorum_reached
from .model import (
    Approval,
    Block,
    BlockBody,
    BlockFooter,
    BlockHeader,
    ChallengeTranscript,
    Transaction,
    signing_digest,
)
from .validator import Verdict

STRIKE_LIMIT = 3


def select_proposer(round_id: int, validator_set: Iterable[PublicKey]) -> PublicKey:
    ordered = sorted_keys(validator_set)
    if not ordered:
        raise EmptyValidatorSet("no validators to propose")
    return ordered[round_id % len(ordered)]


# ---------------------------------------------------------------------------
# Votes and rounds
# ---------------------------------------------------------------------------


def vote_message(verdict: Verdict, header: BlockHeader, body: BlockBody) -> bytes:
    """Approvals sign the bare block digest (so they can go straight into the
    footer); rejections sign a tagged variant so they cannot be relabelled."""
    d = signing_digest(header, body).value
    return d if verdict is Verdict.APPROVE else pack_fields(b"reject", d)


@dataclass(frozen=True)
class Vote:
    validator: PublicKey
    verdict: Verdict
    signature: Signature


def cast_vote(sv: KeyPair, verdict: Verdict, header: BlockHeader, body: BlockBody) -> Vote:
    return Vote(sv.public, verdict, sign(sv, vote_message(verdict, header, body)))


@dataclass
class Round:
    round_id: int
    proposer: PublicKey
    tx: Transaction
    transcript: ChallengeTranscript
    header: BlockHeader
    body: BlockBody
    deadline_tick: int
    pending_id: Optional[int] = None
    votes: dict[PublicKey, Vote] = field(default_factory=dict)

    @classmethod
    def propose(
        cls,
        round_id: int,
        proposer: PublicKey,
        tx: Transaction,
        transcript: ChallengeTranscript,
        ledger: LedgerState,
        deadline_tick: int,
        pending_id: Optional[int] = None,
    ) -> "Round":
        return cls(
            round_id,
            proposer,
            tx,
            transcript,
            ledger.next_header(tx),
            BlockBody.from_transaction(tx),
            deadline_tick,
            pending_id,
        )

    def add_vote(self, vote: Vote, validator_set: Iterable[PublicKey], now: Optional[int] = None) -> None:
        if now is not None and now > self.deadline_tick:
            raise StaleRound(f"round {self.round_id} closed at tick {self.deadline_tick}")
        if vote.validator not in set(validator_set):
            raise ForeignVote(f"{vote.validator.short()} is not a permissioned validator")
        if vote.validator in self.votes:
            raise DoubleVote(f"{vote.validator.short()} already voted in round {self.round_id}")
        if not verify(vote.validator, vote_message(vote.verdict, self.header, self.body), vote.signature):
            raise InvalidVoteSignature(f"vote from {vote.validator.short()} does not verify")
        self.votes[vote.validator] = vote

    def tally(self) -> Counter:
        return Counter(v.verdict for v in self.votes.values())

    def approvals(self) -> list[Vote]:
        return [self.votes[k] for k in sorted_keys(self.votes) if self.votes[k].verdict is Verdict.APPROVE]

    def to_dict(self) -> dict:
        return {
            "round_id": self.round_id,
            "proposer": self.proposer.hex(),
            "tx": self.tx.to_dict(),
            "transcript": self.transcript.to_dict(),
            "header": self.header.to_dict(),
            "deadline_tick": self.deadline_tick,
            "votes": [
                {"validator": k.hex(), "verdict": self.votes[k].verdict.value, "signature": self.votes[k].signature.hex()}
                for k in sorted_keys(self.votes)
            ],
        }


@dataclass(frozen=True)
class CommitResult:
    committed: bool
    block: Optional[Block] = None
    reason: str = ""
    approvals: int = 0
    rejections: int = 0


class RewardTally:
    """One credit per signature in each committed footer."""

    def __init__(self):
        self.credits: dict[PublicKey, int] = {}

    def credit(self, keys: Iterable[PublicKey]) -> None:
        for k in keys:
            self.credits[k] = self.credits.get(k, 0) + 1

    def total(self) -> int:
        return sum(self.credits.values())

    def to_dict(self) -> dict[str, int]:
        return {k.hex(): self.credits[k] for k in sorted_keys(self.credits)}


def collect_and_commit(
    rnd: Round,
    ledger: LedgerState,
    validator_set: Optional[Iterable[PublicKey]] = None,
    now: Optional[int] = None,
    rewards: Optional[RewardTally] = None,
) -> CommitResult:
    validators = set(ledger.validator_set if validator_set is None else validator_set)
    for key, vote in rnd.votes.items():
        if key not in validators:
            raise ForeignVote(f"{key.short()} voted but is not in the validator set")
        if not verify(key, vote_message(vote.verdict, rnd.header, rnd.body), vote.signature):
            raise InvalidVoteSignature(f"vote from {key.short()} does not verify")

    approving = rnd.approvals()
    tally = rnd.tally()
    n_approve, n_reject = tally[Verdict.APPROVE], tally[Verdict.REJECT]
    if not quorum_reached(n_approve, len(validators)):
        return CommitResult(False, None, "insufficient_approvals", n_approve, n_reject)

    footer = BlockFooter(tuple(Approval(v.validator, v.signature) for v in approving), len(validators))
    block = Block(rnd.header, rnd.body, footer)
    try:
        ledger.append(block, now=now, pending_id=rnd.pending_id)
    except (LedgerError, MalformedTransaction) as exc:
        return CommitResult(False, None, type(exc).__name__, n_approve, n_reject)
    if rewards is not None:
        rewards.credit(footer.signers())
    return CommitResult(True, block, "", n_approve, n_reject)


# ---------------------------------------------------------------------------
# Liveness and accountability
# ---------------------------------------------------------------------------


def escalate_pending(ledger: LedgerState, now: int, age_threshold: int) -> list[Transaction]:
    return [ledger.pending[pid].tx for pid in ledger.pending_aged(now, age_threshold)]


@dataclass(frozen=True)
class InactivityEntry:
    validator: PublicKey
    tick: int
    pending_id: int
    kind: str


class InactivityLog:
    """Append-only record of validators passing over work they were due to do."""

    def __init__(self):
        self.entries: list[InactivityEntry] = []
        self.counts: dict[PublicKey, int] = {}

    def record(self, validator: PublicKey, tick: int, pending_id: int, kind: str) -> None:
        self.entries.append(InactivityEntry(validator, tick, pending_id, kind))
        self.counts[validator] = self.counts.get(validator, 0) + 1

    def count(self, validator: PublicKey) -> int:
        return self.counts.get(validator, 0)

    def __len__(self) -> int:
        return len(self.entries)


class StrikeRegister:
    """Counts votes that contradicted the reference verdict of a decided round.

    The caller supplies the reference (the simulator uses its ground-truth
    oracle). Abstentions are not strikes. Keys reaching ``limit`` are returned
    once, for eviction.
    """

    def __init__(self, limit: int = STRIKE_LIMIT):
        self.limit = limit
        self.strikes: dict[PublicKey, int] = {}

    def judge(self, rnd: Round, reference: Verdict) -> list[PublicKey]:
        out = []
        for key in sorted_keys(rnd.votes):
            if rnd.votes[key].verdict is not reference:
                self.strikes[key] = self.strikes.get(key, 0) + 1
                if self.strikes[key] == self.limit:
                    out.append(key)
        return out


# ---------------------------------------------------------------------------
# Permissioned admission
# ---------------------------------------------------------------------------


def admission_message(candidate: PublicKey) -> bytes:
    return pack_fields(b"dronepki/validator-admission/v1", candidate.raw)


def issue_credential(root: KeyPair, candidate: PublicKey) -> Signature:
    return sign(root, admission_message(candidate))


def admit_validator(
    validator_set: Iterable[PublicKey],
    candidate: PublicKey,
    credential: Optional[Signature],
    root_public: PublicKey,
) -> frozenset[PublicKey]:
    if credential is None or not verify(root_public, admission_message(candidate), credential):
        raise BadCredential(f"{candidate.short()} holds no valid root credential")
    return frozenset(validator_set) | {candidate}
