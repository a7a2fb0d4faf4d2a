"""Deterministic discrete-event simulation of the certificate network.

Time advances in integer ticks. Every message costs ``Timing.latency`` ticks
and every processing step ``Timing.processing`` ticks. Validators run token
challenges concurrently (one job each); consensus rounds run one at a time
because each block extends the single global chain.

All protocol logic is RNG-free. The seeded generator only draws keys, drone
names, ownership, and adversary choices, and adversary draws come from their
own stream so that adding an adversary never perturbs the honest workload.
"""

from __future__ import annotations

import heapq
import json
import logging
import random
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional, Union

from .consensus import (
    Round,
    RewardTally,
    InactivityLog,
    StrikeRegister,
    admit_validator,
    cast_vote,
    collect_and_commit,
    issue_credential,
    select_proposer,
)
from .crypto import KeyPair, digest, sign, sorted_keys
from .errors import BadCredential, ConsensusError, MalformedTransaction, TickBudgetExhausted
from .ledger import LedgerState, quorum_reached, verify_chain
from .model import (
    ChallengeTranscript,
    CrtType,
    Transaction,
    TranscriptKind,
    canonical_bytes,
    make_transaction,
)
from .plugin import VerificationArray
from .registry import PRESENT, Registry, ReplicatedRegistry
from .validator import (
    HandshakeSession,
    OperatorAgent,
    Reason,
    ValidationOutcome,
    Verdict,
    approve,
    begin_registration,
    begin_revocation,
    conclude_registration,
    conclude_revocation,
    finish_handshake_registration,
    handshake_token,
    reject,
    validate_registration,
    validate_registration_handshake,
    validate_revocation,
    verify_transcript,
)

log = logging.getLogger(__name__)

SIGN_ONLY = "sign-only"
HANDSHAKE = "handshake"
MAJORITY_COMPROMISE = "majority-compromise"
HONEST_MAJORITY = "honest-majority"


@dataclass(frozen=True)
class Timing:
    """Cost model, in ticks unless noted.

    ``propagation`` is how long a placed registry record takes to become
    visible (DNS-style), which dominates a token challenge. ``scan_rate`` is
    how many pending entries a validator ranks per tick when choosing work.
    Client verification runs a ledger sync (``sync_ticks``) per batch, then
    answers ``lookups_per_tick`` queries per tick.
    """

    latency: int = 1
    processing: int = 1
    propagation: int = 48
    poll_interval: int = 20
    scan_rate: int = 100
    sync_ticks: int = 2
    lookups_per_tick: int = 8
    lifetime: int = 10_000_000
    tick_seconds: float = 0.05


@dataclass(frozen=True)
class AdversaryScenario:
    kind: str = "none"
    count: int = 0
    victim: Optional[int] = None
    offender: Optional[int] = None
    grant_acl: bool = False
    key_compromise: bool = False

    KINDS = ("none", "spoof", "malicious", "target", "sybil")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown adversary kind {self.kind!r}")
        if self.count < 0:
            raise ValueError("adversary count must be non-negative")

    @classmethod
    def parse(cls, text: str) -> "AdversaryScenario":
        """Parse the CLI form: ``none | spoof[:K] | malicious:K | target:V,O | sybil:K``."""
        kind, _, arg = text.partition(":")
        if kind == "none":
            return cls()
        if kind == "spoof":
            return cls("spoof", int(arg) if arg else 10)
        if kind in ("malicious", "sybil"):
            return cls(kind, int(arg))
        if kind == "target":
            victim, offender = (int(x) for x in arg.split(","))
            return cls("target", victim=victim, offender=offender)
        raise ValueError(f"cannot parse adversary {text!r}")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class SimConfig:
    seed: int = 1
    n_validators: int = 4
    n_operators: int = 2
    n_transactions: int = 10
    challenge_mode: str = SIGN_ONLY
    age_threshold: int = 200
    poll_retries: int = 3
    adversary: AdversaryScenario = field(default_factory=AdversaryScenario)
    mix: tuple[float, float, float] = (0.7, 0.2, 0.1)
    arrival_interval: int = 1
    strict_voting: bool = False
    partitioned_registry: bool = False
    timing: Timing = field(default_factory=Timing)
    tick_budget: Optional[int] = None

    def __post_init__(self):
        if self.n_validators < 1 or self.n_operators < 1 or self.n_transactions < 1:
            raise ValueError("validator, operator and transaction counts must be positive")
        if self.challenge_mode not in (SIGN_ONLY, HANDSHAKE):
            raise ValueError(f"unknown challenge mode {self.challenge_mode!r}")
        adv = self.adversary
        if adv.kind == "malicious" and adv.count > self.n_validators:
            raise ValueError("more malicious validators than validators")
        if adv.kind == "target":
            if adv.offender is None or not 0 <= adv.offender < self.n_validators:
                raise ValueError("offender must index an existing validator")
            if adv.victim is None or not 0 <= adv.victim < self.n_operators:
                raise ValueError("victim must index an existing operator")

    def budget(self) -> int:
        if self.tick_budget is not None:
            return self.tick_budget
        return 20_000 + 400 * (self.n_transactions + self.adversary.count)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mix"] = list(self.mix)
        return d


# ---------------------------------------------------------------------------
# Trace
# ---------------------------------------------------------------------------


@dataclass
class SimTrace:
    config: SimConfig
    events: list[dict]
    ledger: LedgerState
    registry: Any
    metrics: dict
    outcome: dict
    ops: list = field(default_factory=list, repr=False)

    def lines(self) -> list[str]:
        return [json.dumps(e, separators=(",", ":")) for e in self.events]

    def to_bytes(self) -> bytes:
        return ("\n".join(self.lines()) + "\n").encode("utf-8")

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())

    def ledger_bytes(self) -> bytes:
        return b"".join(canonical_bytes(b) for b in self.ledger.blocks)


@dataclass
class _Op:
    """One workload item and what happened to it."""

    op_id: int
    klass: str  # registration | revocation | verification
    submit_tick: int
    drone: str
    operator: int  # index, or -1 for the attacker
    legitimate: bool = True
    pending_id: Optional[int] = None
    tx: Optional[Transaction] = None
    done_tick: Optional[int] = None
    committed: bool = False
    reject_reason: Optional[str] = None
    submit_round: int = 0
    commit_round: Optional[int] = None
    answer: Optional[bool] = None


@dataclass
class _Job:
    pending_id: int
    validator: int
    started: int
    t0: Any = None
    session: Optional[HandshakeSession] = None
    polls: int = 0


@dataclass
class _Candidate:
    pending_id: int
    challenger: int
    outcome: ValidationOutcome
    ready_tick: int


class Simulation:
    def __init__(self, config: SimConfig, record: bool = True):
        self.config = config
        self.timing = config.timing
        self.record = record
        self.events: list[dict] = []
        self._queue: list = []
        self._seq = 0
        self.now = 0

        rng = random.Random(config.seed)
        adv_rng = random.Random(f"adversary:{config.seed}")
        self._build_world(rng, adv_rng)

    # -- world construction ----------------------------------------------------

    def _build_world(self, rng: random.Random, adv_rng: random.Random) -> None:
        cfg, timing = self.config, self.timing
        self.validators = [KeyPair.from_seed(rng.randbytes(32)) for _ in range(cfg.n_validators)]
        self.root = KeyPair.from_seed(rng.randbytes(32))
        self.operators = [KeyPair.from_seed(rng.randbytes(32)) for _ in range(cfg.n_operators)]
        self.vindex = {v.public: i for i, v in enumerate(self.validators)}

        admitted: frozenset = frozenset()
        for v in self.validators:
            admitted = admit_validator(admitted, v.public, issue_credential(self.root, v.public), self.root.public)
        self.ledger = LedgerState(admitted)

        if cfg.partitioned_registry:
            self.registry = ReplicatedRegistry([v.public for v in self.validators], timing.propagation)
        else:
            self.registry = Registry(timing.propagation)
        self.agents = [OperatorAgent(op, self.registry) for op in self.operators]

        init_w, rev_w, ver_w = cfg.mix
        ledger_w = init_w + rev_w
        if ledger_w <= 0:
            raise ValueError("mix needs a positive registration or revocation share")
        n_init = max(1, round(cfg.n_transactions * init_w / ledger_w))
        n_rev = min(cfg.n_transactions - n_init, n_init)
        n_init = cfg.n_transactions - n_rev
        n_query = round(cfg.n_transactions * ver_w / ledger_w)

        self.ops: list[_Op] = []
        self.drone_owner: dict[str, int] = {}
        for i in range(n_init):
            name = f"Drone_{i + 1}"
            owner = rng.randrange(cfg.n_operators)
            self.drone_owner[name] = owner
            self.registry.set_controller(name, self.operators[owner].public)
            self.ops.append(_Op(len(self.ops), "registration", i * cfg.arrival_interval, name, owner))
        self.revoke_after: dict[str, int] = {}
        for idx in sorted(rng.sample(range(n_init), n_rev)):
            op = self.ops[idx]
            rev = _Op(len(self.ops), "revocation", -1, op.drone, op.operator)
            self.ops.append(rev)
            self.revoke_after[op.drone] = rev.op_id
        names = [o.drone for o in self.ops if o.klass == "registration"]
        span = max(1, n_init)
        for j in range(n_query):
            tick = (j * span // max(1, n_query)) * cfg.arrival_interval
            self.ops.append(_Op(len(self.ops), "verification", tick, rng.choice(names), -1))
        self.csr_rng = rng

        self._setup_adversary(adv_rng)

    def _setup_adversary(self, adv_rng: random.Random) -> None:
        cfg, adv = self.config, self.config.adversary
        self.malicious: set[int] = set()
        self.offender: Optional[int] = None
        self.victim: Optional[int] = None
        self.sybils: list[KeyPair] = []
        self.attacker: Optional[KeyPair] = None
        if adv.kind == "malicious":
            self.malicious = set(adv_rng.sample(range(cfg.n_validators), adv.count))
            self._add_attacks(adv_rng, max(2, cfg.n_transactions // 3))
        elif adv.kind == "spoof":
            self._add_attacks(adv_rng, adv.count)
        elif adv.kind == "target":
            self.offender, self.victim = adv.offender, adv.victim
        elif adv.kind == "sybil":
            self.sybils = [KeyPair.from_seed(adv_rng.randbytes(32)) for _ in range(adv.count)]

    def _add_attacks(self, adv_rng: random.Random, count: int) -> None:
        """Spoofed registrations for names controlled by honest operators."""
        cfg, adv = self.config, self.config.adversary
        self.attacker = KeyPair.from_seed(adv_rng.randbytes(32))
        self.attacker_agent = OperatorAgent(self.attacker, self.registry)
        self.spoof_strategy: dict[int, str] = {}
        last = max([o.submit_tick for o in self.ops if o.submit_tick >= 0] + [0])
        for k in range(count):
            victim_owner = adv_rng.randrange(cfg.n_operators)
            name = f"Spoofed_{k + 1}"
            self.drone_owner[name] = victim_owner
            self.registry.set_controller(name, self.operators[victim_owner].public)
            strategy = adv_rng.choice(("forge", "stale", "silent"))
            if adv.grant_acl or adv.key_compromise:
                strategy = "forge"  # negative controls: the attacker plays the protocol in full
            if strategy == "stale":
                # the rightful owner once placed a token here; the attacker hopes it is reused
                stale = sign(self.operators[victim_owner], b"old-challenge:" + name.encode()).value
                self.registry.place_token(self.operators[victim_owner].public, name, stale, -10**6)
            if adv.grant_acl:
                self.registry.grant_override(name, self.attacker.public)
            tick = adv_rng.randint(0, last)
            op = _Op(len(self.ops), "registration", tick, name, -1, legitimate=bool(adv.key_compromise))
            self.spoof_strategy[op.op_id] = strategy
            self.ops.append(op)

    # -- event plumbing ----------------------------------------------------------

    def _at(self, tick: int, handler: Callable, *args) -> None:
        heapq.heappush(self._queue, (tick, self._seq, handler, args))
        self._seq += 1

    def _emit(self, event: str, **data) -> None:
        if self.record:
            self.events.append({"seq": len(self.events), "tick": self.now, "event": event, **data})

    def registry_for(self, validator: int):
        if isinstance(self.registry, ReplicatedRegistry):
            return self.registry.view(self.validators[validator].public)
        return self.registry

    def active(self, validator: int) -> bool:
        return self.validators[validator].public in self.ledger.validator_set

    # -- run ----------------------------------------------------------------------

    def run(self) -> SimTrace:
        cfg = self.config
        self._emit(
            "config",
            config=cfg.to_dict(),
            validators=[v.public.hex() for v in self.validators],
            operators=[o.public.hex() for o in self.operators],
            root=self.root.public.hex(),
            malicious=sorted(self.malicious),
            acl={name: self.operators[i].public.hex() for name, i in sorted(self.drone_owner.items())},
        )
        self.unclaimed: list = []  # heap of (submit_tick, pending_id)
        self.claimed: dict[int, int] = {}
        self.op_by_pid: dict[int, _Op] = {}
        self.failed_rounds: dict[int, int] = {}
        self.ready: list[_Candidate] = []
        self.idle: set[int] = set(range(cfg.n_validators))
        self.round_id = 0
        self.round_active = False
        self.rewards = RewardTally()
        self.inactivity = InactivityLog()
        self.strikes = StrikeRegister()
        self.evicted: list[int] = []
        self.query_queue: list[_Op] = []
        self.client_busy = False
        self.plugin = VerificationArray()
        self.discarded_votes = 0
        self.outstanding = len(self.ops)

        for op in self.ops:
            if op.klass == "registration":
                self._at(op.submit_tick, self._submit_registration, op)
            elif op.klass == "verification":
                self._at(op.submit_tick, self._enqueue_query, op)
        for sybil in self.sybils:
            self._at(0, self._sybil_admission, sybil)

        budget = cfg.budget()
        while self._queue and self.outstanding > 0:
            tick, _, handler, args = heapq.heappop(self._queue)
            if tick > budget:
                raise TickBudgetExhausted(f"tick budget {budget} exhausted", self._finish(exhausted=True))
            self.now = tick
            handler(*args)
        if self.outstanding > 0:
            raise TickBudgetExhausted("simulation stalled with unresolved work", self._finish(exhausted=True))
        return self._finish()

    # -- submissions ---------------------------------------------------------------

    def _csr(self, op: _Op) -> Any:
        return digest(b"csr:" + op.drone.encode() + b":" + str(op.op_id).encode())

    def _submit_registration(self, op: _Op) -> None:
        t = self.timing
        if op.operator >= 0:
            key = self.operators[op.operator]
        elif self.config.adversary.key_compromise:
            key = self.operators[self.drone_owner[op.drone]]
        else:
            key = self.attacker
        tx = make_transaction(CrtType.INITIAL, op.drone, key, self.now + t.lifetime, self._csr(op))
        self._submit(op, tx)

    def _submit_revocation(self, op: _Op) -> None:
        agent = self.agents[op.operator]
        registration = self.ledger.latest_block(op.drone)
        expiry = registration.body.expiry if registration is not None else self.now + self.timing.lifetime
        tx = make_transaction(CrtType.REVOKE, op.drone, agent.keypair, expiry, self._csr(op))
        # the operator places phi1 before asking validators to look for it
        agent.answer_revocation(tx, self.ledger, self.now)
        op.submit_tick = self.now
        self._submit(op, tx)

    def _submit(self, op: _Op, tx: Transaction) -> None:
        op.tx = tx
        op.submit_round = self.round_id
        try:
            pid = self.ledger.submit(tx, self.now)
        except MalformedTransaction as exc:
            self._resolve(op, committed=False, reason=f"malformed: {exc}")
            return
        op.pending_id = pid
        self.op_by_pid[pid] = op
        self._emit("submit", op=op.op_id, pending_id=pid, crt_type=tx.crt_type.value, drone=tx.drone_name,
                   operator=tx.operator_pubkey.hex())
        heapq.heappush(self.unclaimed, (op.submit_tick, pid))
        self._wake_idle()

    def _resolve(self, op: _Op, committed: bool, reason: Optional[str] = None) -> None:
        op.done_tick = self.now
        op.committed = committed
        op.reject_reason = reason
        self.outstanding -= 1

    # -- challenge phase -------------------------------------------------------------

    def _wake_idle(self) -> None:
        for v in sorted(self.idle):
            self._at(self.now, self._try_pick, v)

    def _is_victim_tx(self, pid: int) -> bool:
        if self.victim is None:
            return False
        op = self.op_by_pid.get(pid)
        return op is not None and op.operator == self.victim

    def _try_pick(self, v: int) -> None:
        if v not in self.idle or not self.active(v):
            return
        skipped = []
        chosen = None
        while self.unclaimed:
            submitted, pid = heapq.heappop(self.unclaimed)
            if pid not in self.ledger.pending or pid in self.claimed:
                continue
            if v == self.offender and self._is_victim_tx(pid):
                skipped.append((submitted, pid))
                if self.now - submitted >= self.config.age_threshold:
                    self.inactivity.record(self.validators[v].public, self.now, pid, "skip_challenge")
                    self._emit("inactivity", validator=v, pending_id=pid, kind="skip_challenge")
                continue
            chosen = pid
            break
        for item in skipped:
            heapq.heappush(self.unclaimed, item)
        if chosen is None:
            return
        self.idle.discard(v)
        self.claimed[chosen] = v
        cost = self.timing.processing + len(self.ledger.pending) // self.timing.scan_rate
        self._at(self.now + cost, self._start_challenge, _Job(chosen, v, self.now))

    def _release(self, v: int) -> None:
        self.idle.add(v)
        self._at(self.now, self._try_pick, v)

    def _start_challenge(self, job: _Job) -> None:
        v, pid = job.validator, job.pending_id
        entry = self.ledger.pending.get(pid)
        if entry is None or not self.active(v):
            self.claimed.pop(pid, None)
            if entry is not None:
                heapq.heappush(self.unclaimed, (self.op_by_pid[pid].submit_tick, pid))
                self._wake_idle()
            if self.active(v):
                self._release(v)
            return
        sv, tx = self.validators[v], entry.tx
        self._emit("challenge", validator=v, pending_id=pid)
        if v in self.malicious:
            kind = TranscriptKind.REGISTRATION if tx.crt_type is CrtType.INITIAL else TranscriptKind.REVOCATION
            self._ready(job, approve(sv, tx, ChallengeTranscript(kind, challenger=sv.public)))
            return
        t = self.timing
        if tx.crt_type is CrtType.INITIAL:
            reason, t0 = begin_registration(sv, tx, self.ledger, self.now)
            if reason is not None:
                self._ready(job, reject(reason, ChallengeTranscript(TranscriptKind.REGISTRATION, challenger=sv.public)))
                return
            if self.config.challenge_mode == HANDSHAKE:
                job.session = HandshakeSession(tx.operator_pubkey, sv.public, self._entropy(pid, v))
                self._at(self.now + t.latency, self._operator_handshake_request, job)
                return
            job.t0 = t0
            self._at(self.now + t.latency, self._operator_token, job)
        else:
            reason = begin_revocation(tx, self.ledger)
            if reason is not None:
                self._ready(job, reject(reason, ChallengeTranscript(TranscriptKind.REVOCATION, challenger=sv.public)))
                return
        self._at(self.now + t.poll_interval, self._poll, job)

    def _entropy(self, pid: int, v: int) -> Callable[[int], bytes]:
        return random.Random(f"handshake:{self.config.seed}:{pid}:{v}:{self.round_id}").randbytes

    def _operator_for(self, pid: int) -> tuple[Optional[OperatorAgent], _Op]:
        op = self.op_by_pid[pid]
        if op.operator >= 0:
            return self.agents[op.operator], op
        if self.config.adversary.key_compromise:
            return self.agents[self.drone_owner[op.drone]], op
        return self.attacker_agent, op

    def _operator_token(self, job: _Job) -> None:
        entry = self.ledger.pending.get(job.pending_id)
        if entry is None:
            return
        agent, op = self._operator_for(job.pending_id)
        strategy = self.spoof_strategy.get(op.op_id) if op.operator < 0 else None
        if strategy == "silent":
            return
        status = agent.answer_registration(entry.tx, job.t0, self.now + self.timing.processing)
        self._emit("token_placed", pending_id=job.pending_id, status=status)

    def _operator_handshake_request(self, job: _Job) -> None:
        entry = self.ledger.pending.get(job.pending_id)
        if entry is None:
            return
        agent, _ = self._operator_for(job.pending_id)
        tx = entry.tx
        msg = job.session.operator_request(agent.keypair, tx.csr_digest.value, tx.drone_name)
        self._at(self.now + self.timing.processing + self.timing.latency, self._validator_handshake_respond, job, msg)

    def _validator_handshake_respond(self, job: _Job, msg) -> None:
        entry = self.ledger.pending.get(job.pending_id)
        if entry is None:
            return
        sv, tx = self.validators[job.validator], entry.tx
        try:
            reply = job.session.validator_respond(sv, *msg, expect=(tx.csr_digest.value, tx.drone_name))
        except Exception:
            self._ready(job, reject(Reason.HANDSHAKE_FAILED, ChallengeTranscript(TranscriptKind.HANDSHAKE, challenger=sv.public)))
            return
        t = self.timing
        self._at(self.now + t.processing + t.latency, self._operator_handshake_confirm, job, reply)
        self._at(self.now + t.processing + t.poll_interval, self._poll, job)

    def _operator_handshake_confirm(self, job: _Job, reply) -> None:
        entry = self.ledger.pending.get(job.pending_id)
        if entry is None:
            return
        agent, _ = self._operator_for(job.pending_id)
        enctokendo, sigtokendo = job.session.operator_confirm(agent.keypair, *reply)
        status = self.registry.place_token(
            agent.public, entry.tx.drone_name, handshake_token(enctokendo, sigtokendo), self.now + self.timing.processing
        )
        self._emit("token_placed", pending_id=job.pending_id, status=status)

    def _poll(self, job: _Job) -> None:
        entry = self.ledger.pending.get(job.pending_id)
        if entry is None:
            return
        v = job.validator
        sv, tx = self.validators[v], entry.tx
        job.polls += 1
        token, status = self.registry_for(v).retrieve_token(tx.drone_name, self.now)
        if status != PRESENT and job.polls < self.config.poll_retries:
            self._at(self.now + self.timing.poll_interval, self._poll, job)
            return
        if tx.crt_type is CrtType.INITIAL and job.session is not None:
            if status != PRESENT:
                outcome = reject(Reason.TOKEN_MISSING, ChallengeTranscript(TranscriptKind.HANDSHAKE, challenger=sv.public))
            else:
                outcome = finish_handshake_registration(sv, tx, job.session, token)
        elif tx.crt_type is CrtType.INITIAL:
            outcome = conclude_registration(sv, tx, job.t0, token, status)
        else:
            outcome = conclude_revocation(sv, tx, self.ledger, token, status)
        self._at(self.now + self.timing.processing, self._ready, job, outcome)

    def _ready(self, job: _Job, outcome: ValidationOutcome) -> None:
        v, pid = job.validator, job.pending_id
        self._emit("challenge_result", validator=v, pending_id=pid, verdict=outcome.verdict.value,
                   reason=outcome.reason.value if outcome.reason else None)
        if pid in self.ledger.pending:
            self.ready.append(_Candidate(pid, v, outcome, self.now))
        if self.active(v):
            self._release(v)
        if not self.round_active:
            self._at(self.now, self._start_round)

    # -- consensus rounds --------------------------------------------------------------

    def _start_round(self) -> None:
        if self.round_active or not self.ready or not self.ledger.validator_set:
            return
        proposer_key = select_proposer(self.round_id, self.ledger.validator_set)
        p = self.vindex[proposer_key]
        self.ready.sort(key=lambda c: (self.op_by_pid[c.pending_id].submit_tick, c.pending_id))
        chosen = None
        for cand in self.ready:
            if p == self.offender and self._is_victim_tx(cand.pending_id):
                self.inactivity.record(proposer_key, self.now, cand.pending_id, "skip_proposal")
                self._emit("inactivity", validator=p, pending_id=cand.pending_id, kind="skip_proposal")
                continue
            chosen = cand
            break
        if chosen is None:
            self.round_id += 1
            self._at(self.now + self.timing.processing, self._start_round)
            return
        self.ready.remove(chosen)
        entry = self.ledger.pending[chosen.pending_id]
        t = self.timing
        vote_tick = self.now + t.processing + t.latency + t.processing
        deadline = vote_tick + t.latency
        rnd = Round.propose(
            self.round_id, proposer_key, entry.tx, chosen.outcome.transcript, self.ledger, deadline, chosen.pending_id
        )
        self.round_active = True
        self._at(vote_tick, self._vote, rnd, chosen)
        self._at(deadline, self._commit, rnd, chosen)

    def _verdict(self, v: int, rnd: Round, cand: _Candidate) -> Optional[Verdict]:
        if v in self.malicious:
            return Verdict.APPROVE
        if v == self.offender and self._is_victim_tx(cand.pending_id):
            self.inactivity.record(self.validators[v].public, self.now, cand.pending_id, "abstain")
            self._emit("inactivity", validator=v, pending_id=cand.pending_id, kind="abstain")
            return None
        sv = self.validators[v]
        if v == cand.challenger:
            return cand.outcome.verdict
        if self.config.strict_voting or not rnd.transcript.is_complete():
            # nothing to re-check (or told not to trust it): run the challenge ourselves
            agent, _ = self._operator_for(cand.pending_id)
            registry, retries = self.registry_for(v), self.config.poll_retries
            if rnd.tx.crt_type is CrtType.REVOKE:
                return validate_revocation(sv, rnd.tx, self.ledger, registry, self.now, agent, retries).verdict
            if self.config.challenge_mode == HANDSHAKE:
                return validate_registration_handshake(
                    sv, rnd.tx, self.ledger, registry, self.now, agent.keypair, retries,
                    self._entropy(cand.pending_id, v),
                ).verdict
            return validate_registration(sv, rnd.tx, self.ledger, registry, self.now, agent, retries).verdict
        return verify_transcript(sv, rnd.tx, rnd.transcript, self.ledger, self.registry_for(v), self.now).verdict

    def _vote(self, rnd: Round, cand: _Candidate) -> None:
        members = self.ledger.validator_set
        for key in sorted_keys(members):
            v = self.vindex[key]
            verdict = self._verdict(v, rnd, cand)
            if verdict is None:
                continue
            rnd.add_vote(cast_vote(self.validators[v], verdict, rnd.header, rnd.body), members, self.now)
        for sybil in self.sybils:
            try:
                rnd.add_vote(cast_vote(sybil, Verdict.APPROVE, rnd.header, rnd.body), members, self.now)
            except ConsensusError:
                self.discarded_votes += 1

    def _oracle_verdict(self, tx: Transaction) -> Verdict:
        """Ground truth from the ACL and the ledger, independent of any vote."""
        owner = self.drone_owner.get(tx.drone_name)
        latest = self.ledger.latest_block(tx.drone_name)
        live = latest is not None and latest.crt_type is CrtType.INITIAL and latest.body.expiry > self.now
        if not tx.signature_valid():
            ok = False
        elif tx.crt_type is CrtType.INITIAL:
            ok = owner is not None and self.operators[owner].public == tx.operator_pubkey and not live
        else:
            ok = live and latest.body.operator_pubkey == tx.operator_pubkey
        return Verdict.APPROVE if ok else Verdict.REJECT

    def _commit(self, rnd: Round, cand: _Candidate) -> None:
        n = len(self.ledger.validator_set)
        oracle = self._oracle_verdict(rnd.tx)
        result = collect_and_commit(rnd, self.ledger, now=self.now, rewards=self.rewards)
        op = self.op_by_pid[cand.pending_id]
        votes = {self.vindex[k]: vote.verdict.value for k, vote in rnd.votes.items()}
        self.round_active = False
        self.round_id += 1
        self.claimed.pop(cand.pending_id, None)
        if result.committed:
            block = result.block
            self._emit(
                "commit",
                round=rnd.round_id,
                proposer=self.vindex[rnd.proposer],
                op=op.op_id,
                legitimate=op.legitimate,
                votes={str(k): votes[k] for k in sorted(votes)},
                transcript=rnd.transcript.to_dict(),
                block=block.to_dict(),
            )
            op.commit_round = rnd.round_id
            self._resolve(op, committed=True)
            self._judge(rnd, oracle)
            rev = self.revoke_after.get(op.drone)
            if rev is not None and op.klass == "registration":
                self._at(self.now + self.timing.latency, self._submit_revocation, self.ops[rev])
        else:
            majority_reject = quorum_reached(result.rejections, n)
            self._emit("round_failed", round=rnd.round_id, op=op.op_id, reason=result.reason,
                       votes={str(k): votes[k] for k in sorted(votes)})
            if majority_reject:
                self._judge(rnd, oracle)
                self.failed_rounds[cand.pending_id] = self.failed_rounds.get(cand.pending_id, 0) + 1
            else:
                self.failed_rounds[cand.pending_id] = 0
            if self.failed_rounds.get(cand.pending_id, 0) >= 2:
                self.ledger.drop_pending(cand.pending_id)
                reason = cand.outcome.reason.value if cand.outcome.reason else result.reason
                self._emit("terminal_reject", op=op.op_id, reason=reason)
                self._resolve(op, committed=False, reason=reason)
            elif cand.pending_id in self.ledger.pending:
                heapq.heappush(self.unclaimed, (op.submit_tick, cand.pending_id))
                self._wake_idle()
        if self.ready:
            self._at(self.now, self._start_round)

    def _judge(self, rnd: Round, decided: Verdict) -> None:
        for key in self.strikes.judge(rnd, decided):
            v = self.vindex[key]
            if key in self.ledger.validator_set and len(self.ledger.validator_set) > 1:
                self.ledger.evict(key)
                self.evicted.append(v)
                self.idle.discard(v)
                self._emit("evict", validator=v, strikes=self.strikes.strikes[key])

    # -- sybils ----------------------------------------------------------------------------

    def _sybil_admission(self, sybil: KeyPair) -> None:
        forged = sign(sybil, b"dronepki/validator-admission/v1" + sybil.public.raw)
        try:
            admit_validator(self.ledger.validator_set, sybil.public, forged, self.root.public)
        except BadCredential:
            self._emit("sybil_rejected", key=sybil.public.hex())

    # -- client verification ------------------------------------------------------------------

    def _enqueue_query(self, op: _Op) -> None:
        self.query_queue.append(op)
        if not self.client_busy:
            self.client_busy = True
            self._at(self.now, self._client_batch)

    def _client_batch(self) -> None:
        t = self.timing
        batch, self.query_queue = self.query_queue, []
        self.plugin = self.plugin.sync(self.ledger, self.now)
        start = self.now + t.sync_ticks
        for i, op in enumerate(batch):
            done = start + (i + 1 + t.lookups_per_tick - 1) // t.lookups_per_tick
            self._at(done, self._answer, op)
        end = start + (len(batch) + t.lookups_per_tick - 1) // t.lookups_per_tick
        self._at(end, self._client_idle)

    def _answer(self, op: _Op) -> None:
        op.answer = self.plugin.is_valid(op.drone, self.now)
        self._emit("query", op=op.op_id, drone=op.drone, valid=op.answer)
        self._resolve(op, committed=False)

    def _client_idle(self) -> None:
        if self.query_queue:
            self._client_batch()
        else:
            self.client_busy = False

    # -- wrap-up ------------------------------------------------------------------------------------

    def _finish(self, exhausted: bool = False) -> SimTrace:
        metrics = compute_metrics(self.ops, self.ledger, self.timing)
        report = verify_chain(self.ledger)
        n = self.config.n_validators
        outcome = {
            "label": MAJORITY_COMPROMISE if 2 * len(self.malicious) > n else HONEST_MAJORITY,
            "exhausted": exhausted,
            "chain_valid": report.ok,
            "committed": sum(1 for o in self.ops if o.committed),
            "invalid_commits": sum(1 for o in self.ops if o.committed and not o.legitimate),
            "terminal_rejects": sum(1 for o in self.ops if o.done_tick is not None and o.klass != "verification"
                                    and not o.committed),
            "reject_reasons": _count(o.reject_reason for o in self.ops if o.reject_reason),
            "malicious": sorted(self.malicious),
            "evicted": list(self.evicted),
            "inactivity": {str(self.vindex[k]): c for k, c in sorted(self.inactivity.counts.items(), key=lambda kv: self.vindex[kv[0]])},
            "discarded_votes": self.discarded_votes,
            "rewards_total": self.rewards.total(),
            "footer_signatures": sum(len(b.footer.approvals) for b in self.ledger.blocks),
            "rounds": self.round_id,
            "final_tick": self.now,
            "ledger_tip": self.ledger.tip_digest().hex(),
            "ledger_digest": digest(b"".join(canonical_bytes(b) for b in self.ledger.blocks)).hex(),
        }
        self._emit("end", outcome=outcome, metrics=metrics)
        return SimTrace(self.config, self.events, self.ledger, self.registry, metrics, outcome, self.ops)


def _count(items) -> dict[str, int]:
    out: dict[str, int] = {}
    for item in items:
        out[item] = out.get(item, 0) + 1
    return dict(sorted(out.items()))


OP_CLASSES = ("registration", "revocation", "verification")


def compute_metrics(ops: list, ledger: LedgerState, timing: Timing) -> dict:
    """Per-class latency and throughput in simulated seconds.

    throughput = completed operations / (last completion - first submission)
    latency    = mean (completion - submission)
    Both are converted from ticks with ``timing.tick_seconds``.
    """
    out = {"tick_seconds": timing.tick_seconds}
    for klass in OP_CLASSES:
        done = [o for o in ops if o.klass == klass and o.done_tick is not None
                and (o.committed or klass == "verification")]
        if not done:
            out[klass] = {"completed": 0, "latency_s": 0.0, "throughput_ops": 0.0, "span_ticks": 0}
            continue
        first = min(o.submit_tick for o in done)
        last = max(o.done_tick for o in done)
        span = max(1, last - first)
        lat = sum(o.done_tick - o.submit_tick for o in done) / len(done)
        out[klass] = {
            "completed": len(done),
            "latency_s": lat * timing.tick_seconds,
            "throughput_ops": len(done) / (span * timing.tick_seconds),
            "span_ticks": span,
        }
    sizes = [len(canonical_bytes(b)) for b in ledger.blocks]
    out["block_bytes"] = sum(sizes) / len(sizes) if sizes else 0.0
    return out


def run(config: SimConfig, record: bool = True) -> SimTrace:
    return Simulation(config, record=record).run()


# ---------------------------------------------------------------------------
# Scenario injectors
# ---------------------------------------------------------------------------


@dataclass
class ScenarioOutcome:
    kind: str
    label: str
    attempts: int = 0
    commits: int = 0
    invalid_commits: int = 0
    reasons: dict = field(default_factory=dict)
    evicted: list = field(default_factory=list)
    malicious: list = field(default_factory=list)
    inactivity: dict = field(default_factory=dict)
    rounds_to_commit: list = field(default_factory=list)
    baseline_equal: Optional[bool] = None
    trace: Optional[SimTrace] = field(default=None, repr=False)

    @property
    def passed(self) -> bool:
        return self.invalid_commits == 0


def inject_spoofing(
    base: SimConfig,
    attempts: int = 100,
    grant_acl: bool = False,
    key_compromise: bool = False,
) -> ScenarioOutcome:
    cfg = replace(base, adversary=AdversaryScenario("spoof", attempts, grant_acl=grant_acl,
                                                   key_compromise=key_compromise))
    trace = run(cfg, record=False)
    spoofed = [o for o in trace.ops if o.klass == "registration" and o.operator < 0]
    commits = sum(1 for o in spoofed if o.committed)
    return ScenarioOutcome(
        kind="spoof",
        label=trace.outcome["label"],
        attempts=len(spoofed),
        commits=commits,
        invalid_commits=trace.outcome["invalid_commits"],
        reasons=_count(o.reject_reason for o in spoofed if o.reject_reason),
        trace=trace,
    )


def inject_malicious_validators(base: SimConfig, count: int) -> ScenarioOutcome:
    cfg = replace(base, adversary=AdversaryScenario("malicious", count))
    trace = run(cfg, record=False)
    out = trace.outcome
    return ScenarioOutcome(
        kind="malicious",
        label=out["label"],
        attempts=sum(1 for o in trace.ops if o.klass == "registration" and o.operator < 0),
        commits=out["committed"],
        invalid_commits=out["invalid_commits"],
        reasons=out["reject_reasons"],
        evicted=out["evicted"],
        malicious=out["malicious"],
        trace=trace,
    )


def inject_victim_targeting(base: SimConfig, victim: int, offender: int) -> ScenarioOutcome:
    cfg = replace(base, adversary=AdversaryScenario("target", victim=victim, offender=offender))
    trace = run(cfg, record=False)
    victim_ops = [o for o in trace.ops if o.operator == victim and o.klass != "verification"]
    return ScenarioOutcome(
        kind="target",
        label=trace.outcome["label"],
        attempts=len(victim_ops),
        commits=sum(1 for o in victim_ops if o.committed),
        invalid_commits=trace.outcome["invalid_commits"],
        inactivity=trace.outcome["inactivity"],
        rounds_to_commit=[o.commit_round - o.submit_round for o in victim_ops if o.committed],
        trace=trace,
    )


def inject_sybil(base: SimConfig, count: int) -> ScenarioOutcome:
    baseline = run(replace(base, adversary=AdversaryScenario()), record=False)
    trace = run(replace(base, adversary=AdversaryScenario("sybil", count)), record=False)
    return ScenarioOutcome(
        kind="sybil",
        label=trace.outcome["label"],
        attempts=count,
        commits=trace.outcome["committed"],
        invalid_commits=trace.outcome["invalid_commits"],
        baseline_equal=trace.ledger_bytes() == baseline.ledger_bytes(),
        trace=trace,
    )

