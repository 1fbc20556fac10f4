"""Statement agreement: two parties bind to a private statement through
matching hash commitments recorded on the ledger.

The initiating party commits to the statement under fresh randomness, posts
the commitment, and hands the opening to its counterparty out of band. The
counterparty re-commits under the same randomness iff the opening checks
out, leaving two equal commitments with distinct sender attributions on the
ledger. From then on, anyone holding the opening can verify the agreement,
either through the ledger or locally against a session snapshot; the
statement itself never appears on the ledger until someone opens it.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .crypto import Opening, commit, commit_verify, gen_commit_randomness
from .ledger import Address, DuplicateSlot, Ledger, UnknownAddress, WrongSender


@dataclass(frozen=True)
class SapSnapshot:
    """Immutable view of a session, sufficient for off-ledger verification."""

    addr_client: str
    addr_server: str
    g_client: bytes | None
    g_client_sender: str | None
    g_server: bytes | None
    g_server_sender: str | None


class SapSession:
    """Ledger-hosted agreement session between one client and one server."""

    def __init__(self, session_id: int, addr_client: Address, addr_server: Address):
        self.session_id = session_id
        self.addr_client = addr_client
        self.addr_server = addr_server
        self.g_client: bytes | None = None
        self.g_client_sender: Address | None = None
        self.g_server: bytes | None = None
        self.g_server_sender: Address | None = None

    def record_client(self, sender: Address, commitment: bytes) -> None:
        if sender != self.addr_client:
            raise WrongSender("client commitment must come from the client address")
        if self.g_client is not None:
            raise DuplicateSlot("client commitment already recorded")
        self.g_client = commitment
        self.g_client_sender = sender

    def record_server(self, sender: Address, commitment: bytes) -> None:
        if sender != self.addr_server:
            raise WrongSender("server commitment must come from the server address")
        if self.g_client is None:
            raise DuplicateSlot("server commitment requires the client's first")
        if self.g_server is not None:
            raise DuplicateSlot("server commitment already recorded")
        self.g_server = commitment
        self.g_server_sender = sender

    def snapshot(self) -> SapSnapshot:
        return SapSnapshot(
            addr_client=self.addr_client.id,
            addr_server=self.addr_server.id,
            g_client=self.g_client,
            g_client_sender=self.g_client_sender.id if self.g_client_sender else None,
            g_server=self.g_server,
            g_server_sender=self.g_server_sender.id if self.g_server_sender else None,
        )

    def state_dict(self) -> dict:
        return {
            "type": "sap",
            "session_id": self.session_id,
            "addr_client": self.addr_client.id,
            "addr_server": self.addr_server.id,
            "g_client": self.g_client.hex() if self.g_client else None,
            "g_server": self.g_server.hex() if self.g_server else None,
        }


def sap_init(
    ledger: Ledger,
    addr_client: Address,
    addr_server: Address,
    statement: bytes,
    rng: random.Random,
) -> tuple[bytes, bytes, int]:
    """Deploy a session and post the client's commitment.

    Returns (randomness, commitment, session_id); the (statement, randomness)
    opening travels to the server out of band.
    """
    for addr in (addr_client, addr_server):
        if not ledger.has_address(addr):
            raise UnknownAddress(addr.id)
    r = gen_commit_randomness(rng)
    g_client = commit(statement, r)
    session = SapSession(0, addr_client, addr_server)
    session.session_id = ledger.register_session(session)
    session.record_client(addr_client, g_client)
    ledger.log_session_event("sap_commit_client", addr_client, g_client)
    return r, g_client, session.session_id


def sap_agree(
    ledger: Ledger,
    statement: bytes,
    r: bytes,
    g_client: bytes,
    addr_client: Address,
    session_id: int,
    sender: Address,
) -> tuple[bytes | None, bool]:
    """Server-side agreement step.

    Posts the matching commitment from ``sender`` iff the ledger attributes
    ``g_client`` to ``addr_client`` and the opening verifies; failure is
    reported in the returned bit, never raised.
    """
    session: SapSession = ledger.session(session_id)
    if (
        session.g_client != g_client
        or session.g_client_sender != addr_client
        or not commit_verify(g_client, Opening(statement, r))
    ):
        return None, False
    g_server = commit(statement, r)
    session.record_server(sender, g_server)
    ledger.log_session_event("sap_commit_server", sender, g_server)
    return g_server, True


def sap_verify_snapshot(opening: Opening, snap: SapSnapshot,
                        addr_client: str, addr_server: str) -> bool:
    """Pure off-ledger verification against a session snapshot."""
    if snap.g_client is None or snap.g_server is None:
        return False
    if snap.g_client_sender != addr_client or snap.g_server_sender != addr_server:
        return False
    if snap.addr_client != addr_client or snap.addr_server != addr_server:
        return False
    return commit_verify(snap.g_client, opening) and commit_verify(
        snap.g_server, opening
    )


def sap_verify(
    opening: Opening,
    g_client: bytes,
    g_server: bytes,
    addr_client: Address,
    addr_server: Address,
    session_id: int,
    ledger: Ledger,
) -> bool:
    """Verify an opening against both recorded commitments and their senders."""
    session: SapSession = ledger.session(session_id)
    snap = session.snapshot()
    if snap.g_client != g_client or snap.g_server != g_server:
        return False
    return sap_verify_snapshot(opening, snap, addr_client.id, addr_server.id)
