import dataclasses
import json

import pytest
from hypothesis import given, settings, strategies as st

from dronepki.crypto import Digest, digest
from dronepki.errors import EmptyDroneName, MalformedTransaction
from dronepki.model import (
    Block,
    BlockBody,
    BlockHeader,
    ChallengeTranscript,
    CrtType,
    Transaction,
    TranscriptKind,
    canonical_bytes,
    decode_block,
    decode_transaction,
    make_transaction,
)
from dronepki.validator import run_handshake

from _world import Corpus, keys, tx

OPS = keys(3, "model-op")


@st.composite
def transactions(draw):
    return make_transaction(
        draw(st.sampled_from(list(CrtType))),
        draw(st.text(min_size=1, max_size=60)),
        draw(st.sampled_from(OPS)),
        draw(st.integers(min_value=0, max_value=2**63 - 1)),
        Digest(draw(st.binary(min_size=32, max_size=32))),
    )


def test_crt_type_has_exactly_two_variants():
    assert {c.name for c in CrtType} == {"INITIAL", "REVOKE"}


def test_canonical_bytes_deterministic_and_expiry_sensitive():
    a = tx(CrtType.INITIAL, "Drone_1", OPS[0], expiry=10)
    b = tx(CrtType.INITIAL, "Drone_1", OPS[0], expiry=11)
    assert canonical_bytes(a) == canonical_bytes(a)
    assert canonical_bytes(a) != canonical_bytes(b)


@settings(max_examples=200, deadline=None)
@given(transactions(), transactions())
def test_transaction_encoding_is_injective(a, b):
    assert (canonical_bytes(a) == canonical_bytes(b)) == (a == b)


@settings(max_examples=100, deadline=None)
@given(transactions())
def test_transaction_round_trip(t):
    assert decode_transaction(canonical_bytes(t)) == t
    assert Transaction.from_dict(json.loads(json.dumps(t.to_dict()))) == t
    assert t.signature_valid()


def test_thousand_random_blocks_round_trip():
    blocks = []
    for seed in range(4):
        blocks += Corpus(250, seed=seed).ledger.blocks
    assert len(blocks) == 1000
    for b in blocks:
        assert decode_block(canonical_bytes(b)) == b
        assert Block.from_dict(json.loads(json.dumps(b.to_dict()))) == b
    assert len({canonical_bytes(b) for b in blocks}) == 1000


def test_make_transaction_guards():
    with pytest.raises(EmptyDroneName):
        tx(CrtType.INITIAL, "", OPS[0])
    with pytest.raises(MalformedTransaction):
        tx(CrtType.INITIAL, "x" * 254, OPS[0])
    assert tx(CrtType.INITIAL, "x" * 253, OPS[0]).signature_valid()


def test_tampering_after_construction_breaks_signature():
    t = tx(CrtType.INITIAL, "Drone_1", OPS[0], expiry=100)
    for change in (
        {"expiry": 101},
        {"drone_name": "Drone_2"},
        {"crt_type": CrtType.REVOKE},
        {"operator_pubkey": OPS[1].public},
        {"csr_digest": digest(b"other")},
    ):
        assert not dataclasses.replace(t, **change).signature_valid()


def test_block_parts_json_round_trip():
    corpus = Corpus(5, seed=9)
    for b in corpus.ledger.blocks:
        assert BlockHeader.from_dict(b.header.to_dict()) == b.header
        assert BlockBody.from_dict(b.body.to_dict()) == b.body
        assert b.transaction().signature_valid()


def test_body_copies_transaction_verbatim():
    t = tx(CrtType.INITIAL, "Drone_7", OPS[2])
    assert BlockBody.from_transaction(t).transaction(CrtType.INITIAL) == t


def test_transcript_completeness_and_json():
    sv, do = keys(2, "transcript")
    empty = ChallengeTranscript(TranscriptKind.REGISTRATION, challenger=sv.public)
    assert not empty.is_complete()
    rec = run_handshake(do, sv)
    hs = ChallengeTranscript(TranscriptKind.HANDSHAKE, challenger=sv.public, handshake=rec)
    assert hs.is_complete()
    back = ChallengeTranscript.from_dict(json.loads(json.dumps(hs.to_dict())))
    assert back == hs
    assert back.handshake.initialtoken == back.handshake.enctoken.to_bytes()
