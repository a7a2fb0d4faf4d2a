import itertools
import random

import pytest

from dronepki.consensus import (
    CommitResult,
    InactivityLog,
    RewardTally,
    Round,
    StrikeRegister,
    admission_message,
    admit_validator,
    cast_vote,
    collect_and_commit,
    escalate_pending,
    issue_credential,
    select_proposer,
)
from dronepki.crypto import sign, sorted_keys, verify
from dronepki.errors import (
    BadCredential,
    DoubleVote,
    EmptyValidatorSet,
    ForeignVote,
    InvalidVoteSignature,
    StaleRound,
)
from dronepki.ledger import LedgerState, verify_chain
from dronepki.model import ChallengeTranscript, CrtType, TranscriptKind
from dronepki.validator import Verdict

from _world import keys, tx


def make_round(ledger, t, round_id=0, deadline=10):
    proposer = select_proposer(round_id, ledger.validator_set)
    transcript = ChallengeTranscript(TranscriptKind.REGISTRATION, challenger=proposer)
    return Round.propose(round_id, proposer, t, transcript, ledger, deadline)


def run_round(vals, approvers, n_reject=0, rewards=None):
    ledger = LedgerState(v.public for v in vals)
    (op,) = keys(1, "cons-op")
    rnd = make_round(ledger, tx(CrtType.INITIAL, "Drone_1", op))
    for v in vals[:approvers]:
        rnd.add_vote(cast_vote(v, Verdict.APPROVE, rnd.header, rnd.body), ledger.validator_set)
    for v in vals[approvers : approvers + n_reject]:
        rnd.add_vote(cast_vote(v, Verdict.REJECT, rnd.header, rnd.body), ledger.validator_set)
    return ledger, collect_and_commit(rnd, ledger, rewards=rewards)


# -- proposer ----------------------------------------------------------------


def test_single_validator_always_proposes():
    (v,) = keys(1, "solo")
    assert {select_proposer(r, [v.public]) for r in range(10)} == {v.public}


def test_round_robin_fairness_and_order_independence():
    vals = [v.public for v in keys(4, "rr")]
    schedule = [select_proposer(r, vals) for r in range(8)]
    assert all(schedule.count(v) == 2 for v in vals)
    for perm in itertools.permutations(vals):
        assert [select_proposer(r, set(perm)) for r in range(8)] == schedule
    oracle = sorted(vals, key=lambda k: k.raw)
    assert schedule == [oracle[r % 4] for r in range(8)]


def test_empty_set():
    with pytest.raises(EmptyValidatorSet):
        select_proposer(0, [])


# -- commit rule ---------------------------------------------------------------


def test_three_of_four_commits_and_credits():
    vals = keys(4, "cc")
    rewards = RewardTally()
    ledger, result = run_round(vals, 3, rewards=rewards)
    assert result.committed and len(result.block.footer.approvals) == 3
    assert rewards.total() == 3
    assert all(rewards.credits[v.public] == 1 for v in vals[:3])
    assert vals[3].public not in rewards.credits
    assert verify_chain(ledger)


def test_two_of_four_fails_and_stays_pending():
    vals = keys(4, "cc")
    ledger = LedgerState(v.public for v in vals)
    (op,) = keys(1, "cons-op")
    t = tx(CrtType.INITIAL, "Drone_1", op)
    pid = ledger.submit(t, 0)
    rnd = make_round(ledger, t)
    rnd.pending_id = pid
    for v in vals[:2]:
        rnd.add_vote(cast_vote(v, Verdict.APPROVE, rnd.header, rnd.body), ledger.validator_set)
    result = collect_and_commit(rnd, ledger)
    assert result == CommitResult(False, None, "insufficient_approvals", 2, 0)
    assert pid in ledger.pending and len(ledger) == 0


@pytest.mark.parametrize("n", range(1, 10))
def test_threshold_exhaustive(n):
    vals = keys(n, f"th{n}")
    for k in range(n + 1):
        _, result = run_round(vals, k, n_reject=n - k)
        assert result.committed == (2 * k > n), (n, k)


def test_footer_structure():
    vals = keys(5, "footer")
    ledger, result = run_round(vals, 4, n_reject=1)
    footer = result.block.footer
    target = result.block.signing_digest().value
    signers = footer.signers()
    assert len(set(signers)) == len(signers) == 4
    assert all(verify(a.validator, target, a.signature) for a in footer.approvals)
    assert set(signers) <= ledger.validator_set
    assert footer.validator_count == 5


# -- vote intake ---------------------------------------------------------------


def test_vote_guards():
    vals = keys(4, "guard")
    outsider = keys(1, "guard-out")[0]
    ledger = LedgerState(v.public for v in vals)
    (op,) = keys(1, "cons-op")
    rnd = make_round(ledger, tx(CrtType.INITIAL, "Drone_1", op), deadline=5)
    members = ledger.validator_set
    with pytest.raises(ForeignVote):
        rnd.add_vote(cast_vote(outsider, Verdict.APPROVE, rnd.header, rnd.body), members)
    rnd.add_vote(cast_vote(vals[0], Verdict.APPROVE, rnd.header, rnd.body), members)
    with pytest.raises(DoubleVote):
        rnd.add_vote(cast_vote(vals[0], Verdict.REJECT, rnd.header, rnd.body), members)
    with pytest.raises(StaleRound):
        rnd.add_vote(cast_vote(vals[1], Verdict.APPROVE, rnd.header, rnd.body), members, now=6)
    approve = cast_vote(vals[2], Verdict.APPROVE, rnd.header, rnd.body)
    relabelled = type(approve)(approve.validator, Verdict.REJECT, approve.signature)
    with pytest.raises(InvalidVoteSignature):
        rnd.add_vote(relabelled, members)
    assert len(rnd.votes) == 1


def test_collect_rechecks_votes_against_the_set():
    vals = keys(4, "recheck")
    ledger = LedgerState(v.public for v in vals)
    (op,) = keys(1, "cons-op")
    rnd = make_round(ledger, tx(CrtType.INITIAL, "Drone_1", op))
    for v in vals:
        rnd.add_vote(cast_vote(v, Verdict.APPROVE, rnd.header, rnd.body), ledger.validator_set)
    ledger.evict(vals[0].public)
    with pytest.raises(ForeignVote):
        collect_and_commit(rnd, ledger)


def test_reward_conservation_over_many_rounds():
    vals = keys(5, "reward")
    ledger = LedgerState(v.public for v in vals)
    rewards = RewardTally()
    rng = random.Random(3)
    (op,) = keys(1, "cons-op")
    for i in range(30):
        rnd = make_round(ledger, tx(CrtType.INITIAL, f"Drone_{i}", op), round_id=i)
        for v in vals:
            verdict = Verdict.APPROVE if rng.random() < 0.6 else Verdict.REJECT
            rnd.add_vote(cast_vote(v, verdict, rnd.header, rnd.body), ledger.validator_set)
        collect_and_commit(rnd, ledger, rewards=rewards)
    assert rewards.total() == sum(len(b.footer.approvals) for b in ledger.blocks)
    assert 0 < len(ledger) < 30


# -- liveness and accountability ------------------------------------------------


def test_escalate_pending():
    ledger = LedgerState()
    assert escalate_pending(ledger, 100, 10) == []
    (op,) = keys(1, "esc")
    old = tx(CrtType.INITIAL, "Old", op)
    ledger.submit(tx(CrtType.INITIAL, "New", op), 95)
    ledger.submit(old, 50)
    assert escalate_pending(ledger, 100, 10) == [old]


def test_inactivity_counts_are_monotone():
    log = InactivityLog()
    (v,) = keys(1, "inact")
    counts = []
    for tick in range(5):
        log.record(v.public, tick, 0, "skip_challenge")
        counts.append(log.count(v.public))
    assert counts == sorted(counts) and len(log) == 5


def test_strikes_evict_at_three():
    vals = keys(3, "strike")
    ledger = LedgerState(v.public for v in vals)
    (op,) = keys(1, "cons-op")
    reg = StrikeRegister()
    evicted = []
    for i in range(4):
        rnd = make_round(ledger, tx(CrtType.INITIAL, f"D{i}", op), round_id=i)
        rnd.add_vote(cast_vote(vals[0], Verdict.APPROVE, rnd.header, rnd.body), ledger.validator_set)
        rnd.add_vote(cast_vote(vals[1], Verdict.REJECT, rnd.header, rnd.body), ledger.validator_set)
        evicted.append(reg.judge(rnd, Verdict.REJECT))
    assert evicted == [[], [], [vals[0].public], []]


# -- admission -----------------------------------------------------------------


def test_admission():
    root, cand = keys(2, "admit")
    base = frozenset(v.public for v in keys(3, "base"))
    assert cand.public in admit_validator(base, cand.public, issue_credential(root, cand.public), root.public)
    with pytest.raises(BadCredential):
        admit_validator(base, cand.public, sign(cand, admission_message(cand.public)), root.public)
    with pytest.raises(BadCredential):
        admit_validator(base, cand.public, None, root.public)


def test_sybil_wave_leaves_set_unchanged():
    (root,) = keys(1, "root")
    base = frozenset(v.public for v in keys(4, "base"))
    current = base
    for sybil in keys(100, "sybil"):
        try:
            current = admit_validator(current, sybil.public, sign(sybil, admission_message(sybil.public)), root.public)
        except BadCredential:
            pass
    assert current == base
    assert sorted_keys(current) == sorted_keys(base)
