"""Independent re-verification of simulator traces.

The replayer trusts nothing the simulator computed. From the ``config``
record it takes the validator keys, the root key and the registry ACL (who
legitimately controls each drone name). It then rebuilds the ledger from the
``commit`` records and, for each one, checks:

* the block extends the rebuilt chain and its footer holds a strict majority
  of the validator set in force at that point (``evict`` records shrink it);
* the transaction is legitimate by a plain lifecycle fold: an Initial needs a
  key matching the ACL and no live certificate, a Revoke needs a live binding
  under the same key;
* any challenge transcript that claims to be complete verifies (for
  legitimate commits; on an illegitimate one a failing transcript is simply
  the evidence);
* the ``legitimate`` flag the simulator recorded agrees with that oracle.

A discrepancy is any place where the trace's claims and the re-derivation
disagree. Illegitimate commits are *not* discrepancies when the trace labels
them as such; they are reported separately as safety violations, which are
expected only in runs labelled majority-compromise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Union

from .crypto import ZERO_DIGEST, Digest, PublicKey, Signature, digest, digest_fields, verify
from .model import Block, ChallengeTranscript, CrtType, TranscriptKind, canonical_bytes


@dataclass
class ReplayReport:
    commits: int = 0
    discrepancies: list[str] = field(default_factory=list)
    safety_violations: list[int] = field(default_factory=list)
    label: str = ""
    ledger_tip: str = ""

    @property
    def ok(self) -> bool:
        return not self.discrepancies

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "commits": self.commits,
            "discrepancies": self.discrepancies,
            "safety_violations": self.safety_violations,
            "label": self.label,
            "ledger_tip": self.ledger_tip,
        }


def read_trace(path: Union[str, Path]) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def replay(events: Iterable[dict]) -> ReplayReport:
    events = list(events)
    report = ReplayReport()
    if not events or events[0].get("event") != "config":
        report.discrepancies.append("trace does not start with a config record")
        return report
    cfg = events[0]
    validators = [PublicKey.from_hex(k) for k in cfg["validators"]]
    members = set(validators)
    acl = {name: PublicKey.from_hex(k) for name, k in cfg["acl"].items()}

    tip = ZERO_DIGEST
    heads: dict[str, tuple[Digest, Block]] = {}
    serial = 0
    expected_label = None
    recorded_invalid = None
    recorded_tip = None

    for ev in events[1:]:
        kind = ev.get("event")
        if kind == "evict":
            members.discard(validators[ev["validator"]])
        elif kind == "commit":
            report.commits += 1
            where = f"commit #{serial} (tick {ev['tick']})"
            try:
                block = Block.from_dict(ev["block"])
            except (KeyError, ValueError, TypeError) as exc:
                report.discrepancies.append(f"{where}: undecodable block ({exc})")
                break
            for problem in _chain_problems(block, serial, tip, heads, members):
                report.discrepancies.append(f"{where}: {problem}")

            legit = _legitimate(block, heads, acl, ev["tick"])
            if bool(ev.get("legitimate", True)) != legit:
                report.discrepancies.append(
                    f"{where}: trace says legitimate={ev.get('legitimate')}, oracle says {legit}"
                )
            if not legit:
                # a failing transcript here is the evidence, not a trace fault
                report.safety_violations.append(serial)
            else:
                for problem in _transcript_problems(ev.get("transcript"), block, heads):
                    report.discrepancies.append(f"{where}: {problem}")

            d = digest(canonical_bytes(block))
            heads[block.drone_name] = (d, block)
            tip = d
            serial += 1
        elif kind == "end":
            outcome = ev["outcome"]
            expected_label = outcome.get("label")
            recorded_invalid = outcome.get("invalid_commits")
            recorded_tip = outcome.get("ledger_tip")
            if outcome.get("committed") is not None and outcome["committed"] != report.commits:
                # spoofed and honest commits are all ledger commits
                report.discrepancies.append(
                    f"end record counts {outcome['committed']} commits, trace holds {report.commits}"
                )

    report.label = expected_label or ""
    report.ledger_tip = tip.hex()
    if recorded_tip is not None and recorded_tip != tip.hex():
        report.discrepancies.append("end record's ledger tip differs from the rebuilt chain")
    if recorded_invalid is not None and recorded_invalid != len(report.safety_violations):
        report.discrepancies.append(
            f"end record counts {recorded_invalid} invalid commits, oracle finds {len(report.safety_violations)}"
        )
    if report.safety_violations and expected_label != "majority-compromise":
        report.discrepancies.append(
            f"{len(report.safety_violations)} invalid commits in a run not labelled majority-compromise"
        )
    return report


def replay_file(path: Union[str, Path]) -> ReplayReport:
    return replay(read_trace(path))


# ---------------------------------------------------------------------------
# Oracle pieces
# ---------------------------------------------------------------------------


def _chain_problems(block: Block, serial: int, tip: Digest, heads: dict, members: set) -> list[str]:
    out = []
    h = block.header
    if h.serial_number != serial:
        out.append(f"serial {h.serial_number}, expected {serial}")
    if h.global_prev != tip:
        out.append("global pointer does not match rebuilt tip")
    head = heads.get(block.drone_name)
    if h.service_prev != (head[0] if head else None):
        out.append("service pointer does not match rebuilt drone chain")
    if block.footer.validator_count != len(members):
        out.append(f"footer claims {block.footer.validator_count} validators, {len(members)} in force")
    target = block.signing_digest().value
    signers = set()
    for a in block.footer.approvals:
        if a.validator not in members:
            out.append(f"footer signer {a.validator.short()} not in the validator set")
        elif a.validator in signers:
            out.append(f"footer signer {a.validator.short()} repeated")
        elif not verify(a.validator, target, a.signature):
            out.append(f"footer signature from {a.validator.short()} does not verify")
        signers.add(a.validator)
    if not 2 * len(signers) > len(members):
        out.append(f"{len(signers)} of {len(members)} signatures is not a strict majority")
    return out


def _legitimate(block: Block, heads: dict, acl: dict, tick: int) -> bool:
    body = block.body
    tx = block.transaction()
    if not tx.signature_valid():
        return False
    head = heads.get(body.drone_name)
    live = head is not None and head[1].crt_type is CrtType.INITIAL and head[1].body.expiry > tick
    if block.crt_type is CrtType.INITIAL:
        return acl.get(body.drone_name) == body.operator_pubkey and not live
    return live and head[1].body.operator_pubkey == body.operator_pubkey


def _transcript_problems(data, block: Block, heads: dict) -> list[str]:
    if not data:
        return []
    try:
        tr = ChallengeTranscript.from_dict(data)
    except (KeyError, ValueError, TypeError) as exc:
        return [f"undecodable transcript ({exc})"]
    if not tr.is_complete():
        return []
    tx = block.transaction()
    op = tx.operator_pubkey
    if tr.kind is TranscriptKind.REGISTRATION:
        msg = digest_fields(canonical_bytes(tx), tr.challenger.raw).value
        if not verify(tr.challenger, msg, tr.t0):
            return ["t0 is not the challenger's signature over the transaction"]
        if not verify(op, tr.t0.value, Signature(tr.phi0.value, op)):
            return ["phi0 is not the operator's signature over t0"]
    elif tr.kind is TranscriptKind.REVOCATION:
        head = heads.get(block.drone_name)
        if head is None:
            return ["revocation transcript without a prior block"]
        t1 = digest_fields(canonical_bytes(head[1].body), canonical_bytes(tx), op.raw)
        if tr.t1 != t1:
            return ["t1 does not match the recomputed revocation digest"]
        if not verify(op, t1.value, tr.phi1):
            return ["phi1 is not the operator's signature over t1"]
    else:
        rec = tr.handshake
        if not (
            verify(op, rec.encreq.to_bytes(), rec.signature)
            and verify(tr.challenger, rec.enctoken.to_bytes(), rec.tokensig)
            and verify(op, rec.enctokendo.to_bytes(), rec.sigtokendo)
        ):
            return ["handshake transcript signatures do not verify"]
        if rec.initialtoken != rec.enctoken.to_bytes():
            return ["handshake transcript fails its final assert"]
    return []
