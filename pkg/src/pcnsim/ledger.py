"""Append-only settlement layer.

Channels open against on-chain funding and close exactly once, by whichever
valid closure submission is included first. Inclusion is asynchronous even
when the message network is synchronous: the chain actor delays each
submission by a seeded finite amount before validating it.

A closure is a full final balance assignment plus a quorum certificate over
`closure_digest(channel_id, balances)`. Committee members sign that digest
when they approve a final state, so the chain can recompute it and reject
submissions whose claimed balances do not match what was certified.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .crypto import Keystore, QuorumCertificate, payload_digest, verify_certificate
from .simnet import Actor, Scheduler


def closure_digest(channel_id: str, balances: tuple[tuple[str, int], ...]) -> str:
    fields: list = ["close", channel_id]
    for party, amount in sorted(balances):
        fields.append(party)
        fields.append(amount)
    return payload_digest(*fields)


@dataclass(frozen=True)
class ClosureSubmission:
    channel_id: str
    submitter: str
    balances: tuple[tuple[str, int], ...]
    certificate: QuorumCertificate


@dataclass
class ChannelRecord:
    channel_id: str
    parties: tuple[str, str]
    committee: tuple[str, ...]
    f: int
    funding: dict[str, int]
    status: str = "open"
    closed_by: str | None = None
    final_balances: dict[str, int] | None = None
    closed_at: int | None = None


class Ledger:
    """Validation and state; knows nothing about scheduling."""

    def __init__(self, keystore: Keystore) -> None:
        self.keystore = keystore
        self.channels: dict[str, ChannelRecord] = {}
        self.entries: list[dict] = []

    def open_channel(self, channel_id: str, parties: tuple[str, str],
                     committee: tuple[str, ...], f: int,
                     funding: dict[str, int]) -> ChannelRecord:
        if channel_id in self.channels:
            raise ValueError(f"channel already open: {channel_id}")
        if len(committee) < 3 * f + 1:
            raise ValueError("committee smaller than 3f+1")
        if any(v < 0 for v in funding.values()):
            raise ValueError("negative funding")
        rec = ChannelRecord(channel_id, parties, committee, f, dict(funding))
        self.channels[channel_id] = rec
        self.entries.append({"op": "open", "channel": channel_id, "funding": dict(funding)})
        return rec

    def include_closure(self, sub: ClosureSubmission, now: int) -> tuple[bool, str]:
        ok, reason = self._validate(sub)
        self.entries.append({"op": "close", "channel": sub.channel_id,
                             "submitter": sub.submitter, "included": ok,
                             "reason": reason, "time": now})
        if ok:
            rec = self.channels[sub.channel_id]
            rec.status = "closed"
            rec.closed_by = sub.submitter
            rec.final_balances = dict(sub.balances)
            rec.closed_at = now
        return ok, reason

    def _validate(self, sub: ClosureSubmission) -> tuple[bool, str]:
        rec = self.channels.get(sub.channel_id)
        if rec is None:
            return False, "unknown-channel"
        if rec.status == "closed":
            return False, "already-closed"
        balances = dict(sub.balances)
        if set(balances) != set(rec.parties):
            return False, "wrong-parties"
        if any(v < 0 for v in balances.values()):
            return False, "negative-balance"
        if sum(balances.values()) != sum(rec.funding.values()):
            return False, "conservation"
        expected = closure_digest(sub.channel_id, sub.balances)
        if sub.certificate.digest != expected:
            return False, "digest-mismatch"
        if sub.certificate.committee != sub.channel_id:
            # certificates are labeled with the channel they close
            return False, "wrong-committee"
        if not verify_certificate(sub.certificate, rec.f, rec.committee, self.keystore):
            return False, "bad-certificate"
        return True, "ok"


class LedgerActor(Actor):
    """Chain front end inside a run. Submissions take a finite random delay."""

    def __init__(self, actor_id: str, ledger: Ledger, seed, inclusion_cap: int = 25) -> None:
        super().__init__(actor_id)
        self.ledger = ledger
        self.rng = random.Random(f"{seed}/ledger")
        self.inclusion_cap = inclusion_cap

    def on_message(self, msg, src: str, sim: Scheduler) -> None:
        if isinstance(msg, ClosureSubmission):
            delay = self.rng.randint(1, self.inclusion_cap)
            sim.timer(self.id, sim.now + delay, "include", msg)

    def on_timer(self, tag: str, data, sim: Scheduler) -> None:
        if tag != "include":
            return
        ok, reason = self.ledger.include_closure(data, sim.now)
        sim.note("ledger", self.id, annotation={
            "op": "close", "channel": data.channel_id, "included": ok, "reason": reason,
        })
