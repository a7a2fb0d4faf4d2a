"""Client-side verification array kept in step with the ledger."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

from .ledger import LedgerState
from .model import Block, CrtType


@dataclass(frozen=True)
class _Latest:
    crt_type: CrtType
    expiry: int

    def valid_at(self, now: int) -> bool:
        return self.crt_type is CrtType.INITIAL and now < self.expiry


@dataclass(frozen=True)
class VerificationArray:
    """Immutable snapshot: drone name -> "certificate valid right now".

    Validity is the half-open interval ``[issue, expiry)``. Unknown, revoked
    and expired drones all read as ``False``.
    """

    statuses: Mapping[str, bool] = field(default_factory=dict)
    synced_serial: int = -1
    now: int = 0
    latest: Mapping[str, _Latest] = field(default_factory=dict, repr=False)

    def sync(self, source: LedgerState | Sequence[Block], now: int) -> "VerificationArray":
        blocks = source.blocks if isinstance(source, LedgerState) else source
        new_blocks = blocks[self.synced_serial + 1 :]
        if not new_blocks and now == self.now:
            return self
        latest = dict(self.latest)
        for block in new_blocks:
            latest[block.drone_name] = _Latest(block.crt_type, block.body.expiry)
        statuses = {name: entry.valid_at(now) for name, entry in latest.items()}
        serial = new_blocks[-1].serial_number if new_blocks else self.synced_serial
        return replace(self, statuses=statuses, synced_serial=serial, now=now, latest=latest)

    def is_valid(self, drone_name: str, now: Optional[int] = None) -> bool:
        if now is None:
            return self.statuses.get(drone_name, False)
        entry = self.latest.get(drone_name)
        return entry is not None and entry.valid_at(now)

    def to_dict(self) -> dict:
        return {"synced_serial": self.synced_serial, "now": self.now, "statuses": dict(sorted(self.statuses.items()))}


def sync(plugin: VerificationArray, ledger: LedgerState | Sequence[Block], now: int) -> VerificationArray:
    return plugin.sync(ledger, now)


def is_valid(plugin: VerificationArray, drone_name: str, now: Optional[int] = None) -> bool:
    return plugin.is_valid(drone_name, now)
