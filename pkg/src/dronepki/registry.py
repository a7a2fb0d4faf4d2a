"""Simulated token host standing in for DNS records / the operator's platform.

Writes are authorised per drone name: only the key registered as controlling
a drone's infrastructure may place tokens for it. Adversarial scenarios use
the explicit hooks (:meth:`Registry.grant_override`, :meth:`Registry.tamper`)
to break that assumption on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .crypto import PublicKey

ABSENT = 0
PRESENT = 1


@dataclass(frozen=True)
class TokenEntry:
    token: bytes
    owner: PublicKey
    placed_tick: int


class Registry:
    """Token store keyed by drone name.

    ``propagation_delay`` models how long a placed record takes to become
    visible to readers (retrievals that pass ``now`` only see entries placed
    at least that many ticks earlier).
    """

    def __init__(self, propagation_delay: int = 0):
        self.entries: dict[str, TokenEntry] = {}
        self.acl: dict[str, PublicKey] = {}
        self.propagation_delay = propagation_delay
        self._overrides: set[tuple[str, PublicKey]] = set()

    def set_controller(self, drone_name: str, key: PublicKey) -> None:
        self.acl[drone_name] = key

    def grant_override(self, drone_name: str, key: PublicKey) -> None:
        """Adversary hook: let ``key`` write ``drone_name`` regardless of the ACL."""
        self._overrides.add((drone_name, key))

    def tamper(self, drone_name: str, token: bytes, now: int = 0) -> None:
        """Adversary hook: overwrite an entry directly (e.g. a poisoned record)."""
        owner = self.acl.get(drone_name) or PublicKey(bytes(32))
        self.entries[drone_name] = TokenEntry(token, owner, now - self.propagation_delay)

    def authorized(self, caller: PublicKey, drone_name: str) -> bool:
        return self.acl.get(drone_name) == caller or (drone_name, caller) in self._overrides

    def place_token(self, caller: PublicKey, drone_name: str, token: bytes, now: int = 0) -> int:
        if not self.authorized(caller, drone_name):
            return ABSENT
        self.entries[drone_name] = TokenEntry(bytes(token), caller, now)
        return PRESENT

    def retrieve_token(self, drone_name: str, now: Optional[int] = None) -> tuple[Optional[bytes], int]:
        entry = self.entries.get(drone_name)
        if entry is None:
            return None, ABSENT
        if now is not None and entry.placed_tick + self.propagation_delay > now:
            return None, ABSENT
        return entry.token, PRESENT

    def to_dict(self) -> dict:
        return {
            "propagation_delay": self.propagation_delay,
            "acl": {name: key.hex() for name, key in sorted(self.acl.items())},
            "entries": {
                name: {"token": e.token.hex(), "owner": e.owner.hex(), "placed_tick": e.placed_tick}
                for name, e in sorted(self.entries.items())
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Registry":
        reg = cls(int(data.get("propagation_delay", 0)))
        for name, key in data.get("acl", {}).items():
            reg.acl[name] = PublicKey.from_hex(key)
        for name, e in data.get("entries", {}).items():
            reg.entries[name] = TokenEntry(bytes.fromhex(e["token"]), PublicKey.from_hex(e["owner"]), e["placed_tick"])
        return reg


class ReplicatedRegistry:
    """One independently tamperable replica per reader.

    Honest writes go to every replica; :meth:`tamper` poisons only the replica
    of the named reader, so a single poisoned resolver cannot fool the others.
    """

    def __init__(self, readers: Iterable[PublicKey], propagation_delay: int = 0):
        self.replicas: dict[PublicKey, Registry] = {r: Registry(propagation_delay) for r in readers}

    def view(self, reader: PublicKey) -> Registry:
        return self.replicas[reader]

    def set_controller(self, drone_name: str, key: PublicKey) -> None:
        for replica in self.replicas.values():
            replica.set_controller(drone_name, key)

    def place_token(self, caller: PublicKey, drone_name: str, token: bytes, now: int = 0) -> int:
        statuses = {replica.place_token(caller, drone_name, token, now) for replica in self.replicas.values()}
        return PRESENT if statuses == {PRESENT} else ABSENT

    def tamper(self, reader: PublicKey, drone_name: str, token: bytes, now: int = 0) -> None:
        self.replicas[reader].tamper(drone_name, token, now)

    def grant_override(self, drone_name: str, key: PublicKey) -> None:
        for replica in self.replicas.values():
            replica.grant_override(drone_name, key)

    def retrieve_token(self, drone_name: str, now: Optional[int] = None) -> tuple[Optional[bytes], int]:
        """Majority-free convenience read: the first replica in key order."""
        first = min(self.replicas, key=lambda k: k.raw)
        return self.replicas[first].retrieve_token(drone_name, now)
