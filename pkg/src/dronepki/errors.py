"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ProtocolError(Exception):
    """Base class for every error raised by this package."""


class DecryptionFailure(ProtocolError):
    pass


# --- transactions -----------------------------------------------------------


class MalformedTransaction(ProtocolError):
    pass


class EmptyDroneName(MalformedTransaction):
    pass


# --- ledger -----------------------------------------------------------------


class LedgerError(ProtocolError):
    pass


class BrokenGlobalChain(LedgerError):
    pass


class BrokenServiceChain(LedgerError):
    pass


class InsufficientApprovals(LedgerError):
    pass


class UnknownValidatorSignature(LedgerError):
    pass


class DuplicateActiveCertificate(LedgerError):
    pass


class RevokeWithoutBinding(LedgerError):
    pass


class EmptyLedger(LedgerError):
    pass


# --- validation -------------------------------------------------------------


class NoPriorBinding(ProtocolError):
    pass


class HandshakeAbort(ProtocolError):
    def __init__(self, step: str, cause: str):
        super().__init__(f"handshake aborted at {step}: {cause}")
        self.step = step
        self.cause = cause


# --- consensus --------------------------------------------------------------


class ConsensusError(ProtocolError):
    pass


class EmptyValidatorSet(ConsensusError):
    pass


class ForeignVote(ConsensusError):
    pass


class DoubleVote(ConsensusError):
    pass


class StaleRound(ConsensusError):
    pass


class InvalidVoteSignature(ConsensusError):
    pass


class BadCredential(ConsensusError):
    pass


# --- simulation -------------------------------------------------------------


class TickBudgetExhausted(ProtocolError):
    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
