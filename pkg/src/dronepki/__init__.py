"""Decentralized certificate management for drones.

Certificates are registered and revoked through a quorum of service
validators and recorded on a dual hash-pointer ledger. Clients check a
drone's certificate against a verification array synced from that ledger.
"""

from .crypto import Digest, KeyPair, PublicKey, Signature, digest, seal, open_envelope, sign, verify
from .ledger import LedgerState, Status, verify_chain, dump_jsonl, load_jsonl
from .model import Block, CrtType, Transaction, make_transaction
from .plugin import VerificationArray
from .registry import Registry
from .simnet import AdversaryScenario, SimConfig, Timing, run

__version__ = "0.1.0"

__all__ = [
    "AdversaryScenario",
    "Block",
    "CrtType",
    "Digest",
    "KeyPair",
    "LedgerState",
    "PublicKey",
    "Registry",
    "Signature",
    "SimConfig",
    "Status",
    "Timing",
    "Transaction",
    "VerificationArray",
    "digest",
    "dump_jsonl",
    "load_jsonl",
    "make_transaction",
    "open_envelope",
    "run",
    "seal",
    "sign",
    "verify",
    "verify_chain",
]
