"""Committee-registered payment channels.

A channel's state is a versioned snapshot: balances plus pending conditional
payments. Parties advance it by co-signing the next version and broadcasting
the signed digest to the channel's committee; a member registers a version on
the first fully-signed broadcast it sees and acks each party once that party
has broadcast and the registration is in place. A party treats an update as
final once 2f+1 members acked it.

Two update shapes exist. The plain flow (lock, revoke, transfer) is
proposal -> countersignature -> two broadcasts, confirming the responder
three delays after the proposal and the proposer four. The claim flow
(settle) folds the witness into the proposal and lets the claimer broadcast
its half-signed state immediately, confirming both sides three delays after
the claim.

Closure is dispute-driven: a party ships its latest snapshot (plus the salt
that blinds the registered digest) to the members, who resolve every pending
conditional payment (paid exactly when a valid witness arrived by the
deadline), sign the resulting final balances once, and feed the signatures
back so the initiator can assemble a closure certificate for the chain.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any

from .crypto import (
    LockCondition,
    Keystore,
    Signature,
    assemble_certificate,
    enc_int,
    enc_str,
    lock_verify,
    payload_digest,
)
from .ledger import ClosureSubmission, closure_digest
from .simnet import Actor, Scheduler


class ChannelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionalPayment:
    cp_id: str
    payer: str
    payee: str
    amount: int
    condition: LockCondition
    timelock: int

    def to_bytes(self) -> bytes:
        return b"".join([
            enc_str(self.cp_id), enc_str(self.payer), enc_str(self.payee),
            enc_int(self.amount), enc_str(self.condition.group.name),
            enc_int(self.condition.image), enc_int(self.timelock),
        ])


@dataclass(frozen=True)
class ChannelSnapshot:
    channel_id: str
    version: int
    balances: tuple[tuple[str, int], ...]
    payments: tuple[ConditionalPayment, ...] = ()

    def to_bytes(self) -> bytes:
        parts = [enc_str(self.channel_id), enc_int(self.version),
                 enc_int(len(self.balances))]
        for party, amount in sorted(self.balances):
            parts.append(enc_str(party))
            parts.append(enc_int(amount))
        parts.append(enc_int(len(self.payments)))
        for cp in sorted(self.payments, key=lambda c: c.cp_id):
            parts.append(cp.to_bytes())
        return b"".join(parts)

    def digest(self, salt: bytes) -> str:
        return hashlib.sha256(self.to_bytes() + salt).hexdigest()

    def balance_of(self, party: str) -> int:
        for p, v in self.balances:
            if p == party:
                return v
        raise ChannelError(f"no such party: {party}")

    def payment(self, cp_id: str) -> ConditionalPayment:
        for cp in self.payments:
            if cp.cp_id == cp_id:
                return cp
        raise ChannelError(f"no such payment: {cp_id}")

    def _with_balance(self, party: str, amount: int) -> tuple[tuple[str, int], ...]:
        if amount < 0:
            raise ChannelError("balance would go negative")
        return tuple(sorted((p, amount if p == party else v) for p, v in self.balances))


def initial_snapshot(channel_id: str, funding: dict[str, int]) -> ChannelSnapshot:
    return ChannelSnapshot(channel_id, 0, tuple(sorted(funding.items())))


def apply_lock(snap: ChannelSnapshot, cp: ConditionalPayment) -> ChannelSnapshot:
    if cp.amount <= 0:
        raise ChannelError("lock amount must be positive")
    if any(p.cp_id == cp.cp_id for p in snap.payments):
        raise ChannelError(f"duplicate payment id: {cp.cp_id}")
    if {cp.payer, cp.payee} != {p for p, _ in snap.balances}:
        raise ChannelError("payment parties do not match channel")
    balances = snap._with_balance(cp.payer, snap.balance_of(cp.payer) - cp.amount)
    payments = tuple(sorted(snap.payments + (cp,), key=lambda c: c.cp_id))
    return ChannelSnapshot(snap.channel_id, snap.version + 1, balances, payments)


def _remove(snap: ChannelSnapshot, cp_id: str, credit_to: str) -> ChannelSnapshot:
    cp = snap.payment(cp_id)
    balances = snap._with_balance(credit_to, snap.balance_of(credit_to) + cp.amount)
    payments = tuple(p for p in snap.payments if p.cp_id != cp_id)
    return ChannelSnapshot(snap.channel_id, snap.version + 1, balances, payments)


def apply_settle(snap: ChannelSnapshot, cp_id: str) -> ChannelSnapshot:
    return _remove(snap, cp_id, snap.payment(cp_id).payee)


def apply_revoke(snap: ChannelSnapshot, cp_id: str) -> ChannelSnapshot:
    return _remove(snap, cp_id, snap.payment(cp_id).payer)


def apply_transfer(snap: ChannelSnapshot, src: str, dst: str, amount: int) -> ChannelSnapshot:
    if amount <= 0:
        raise ChannelError("transfer amount must be positive")
    balances = snap._with_balance(src, snap.balance_of(src) - amount)
    snap2 = ChannelSnapshot(snap.channel_id, snap.version, balances, snap.payments)
    balances = snap2._with_balance(dst, snap2.balance_of(dst) + amount)
    return ChannelSnapshot(snap.channel_id, snap.version + 1, balances, snap.payments)


def apply_op(snap: ChannelSnapshot, purpose: str, op: Any) -> ChannelSnapshot:
    if purpose == "lock":
        return apply_lock(snap, op)
    if purpose == "settle":
        return apply_settle(snap, op)
    if purpose == "revoke":
        return apply_revoke(snap, op)
    if purpose == "transfer":
        src, dst, amount = op
        return apply_transfer(snap, src, dst, amount)
    raise ChannelError(f"unknown purpose: {purpose}")


# ---------------------------------------------------------------------------
# wire messages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UpdateProposal:
    channel_id: str
    version: int
    purpose: str
    op: Any
    salt: bytes
    digest: str
    sig: Signature
    witness: int | None = None


@dataclass(frozen=True)
class UpdateAccept:
    channel_id: str
    version: int
    digest: str
    sig: Signature


@dataclass(frozen=True)
class UpdateReject:
    channel_id: str
    version: int
    reason: str


@dataclass(frozen=True)
class StateBroadcast:
    channel_id: str
    version: int
    digest: str
    sigs: tuple[Signature, ...]
    sender: str


@dataclass(frozen=True)
class RegistrationAck:
    channel_id: str
    version: int
    digest: str
    member: str
    sig: Signature


@dataclass(frozen=True)
class DisputeSubmission:
    channel_id: str
    kind: str  # "payee" or "payer"
    snapshot: ChannelSnapshot
    salt: bytes
    cp_id: str
    witness: int | None
    initiator: str


@dataclass(frozen=True)
class DisputeRefused:
    channel_id: str
    reason: str


@dataclass(frozen=True)
class PeerClosureNotice:
    channel_id: str
    initiator: str
    kind: str


@dataclass(frozen=True)
class WitnessNotice:
    channel_id: str
    cp_id: str
    witness: int


@dataclass(frozen=True)
class FinalStateSig:
    channel_id: str
    balances: tuple[tuple[str, int], ...]
    digest: str
    member: str
    sig: Signature


def ack_digest(channel_id: str, version: int, digest: str) -> str:
    return payload_digest("ack", channel_id, version, digest)


# ---------------------------------------------------------------------------
# party-side channel view
# ---------------------------------------------------------------------------

@dataclass
class PendingUpdate:
    snapshot: ChannelSnapshot
    salt: bytes
    purpose: str
    op: Any
    role: str  # "proposer" or "responder"
    digest: str
    acks: set[str] = field(default_factory=set)


class PartyChannelView:
    """One party's live handle on one channel."""

    def __init__(self, owner: "ChannelParty", channel_id: str, peer: str,
                 committee: tuple[str, ...], f: int, funding: dict[str, int],
                 delta: int) -> None:
        self.owner = owner
        self.channel_id = channel_id
        self.peer = peer
        self.committee = committee
        self.f = f
        self.delta = delta
        self.snapshot = initial_snapshot(channel_id, funding)
        self.salt = b""
        self.pending: PendingUpdate | None = None
        self.closing = False

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    def _sign(self, digest: str) -> Signature:
        return self.owner.keystore.keypair(self.owner.id).sign(digest)

    # -- outbound -------------------------------------------------------------

    def propose(self, purpose: str, op: Any, sim: Scheduler, witness: int | None = None) -> None:
        if self.pending is not None:
            raise ChannelError("update already in flight")
        if self.closing:
            raise ChannelError("channel is closing")
        snap = apply_op(self.snapshot, purpose, op)
        salt = sim.app_rng.randbytes(16)
        digest = snap.digest(salt)
        self.pending = PendingUpdate(snap, salt, purpose, op, "proposer", digest)
        msg = UpdateProposal(self.channel_id, snap.version, purpose, op, salt,
                             digest, self._sign(digest), witness)
        sim.send(self.owner.id, self.peer, msg, {"category": "party", "purpose": purpose})
        if purpose == "settle":
            # claim flow: announce the half-signed state right away
            self._broadcast(sim, (self._sign(digest),), snap.version, digest)
        self._arm_abort(sim, digest)

    def _arm_abort(self, sim: Scheduler, digest: str) -> None:
        # fires only if the update is not confirmed within 4 delta
        sim.timer(self.owner.id, sim.now + 4 * self.delta + 1, "chan-abort",
                  (self.channel_id, digest))

    def _broadcast(self, sim: Scheduler, sigs: tuple[Signature, ...], version: int, digest: str) -> None:
        msg = StateBroadcast(self.channel_id, version, digest, sigs, self.owner.id)
        for m in self.committee:
            out = self.owner.filter_broadcast(self, m, msg)
            if out is not None:
                sim.send(self.owner.id, m, out, {"category": "member", "phase": "broadcast"})

    def submit_dispute(self, kind: str, cp_id: str, witness: int | None, sim: Scheduler) -> None:
        self.closing = True
        msg = DisputeSubmission(self.channel_id, kind, self.snapshot, self.salt,
                                cp_id, witness, self.owner.id)
        for m in self.committee:
            sim.send(self.owner.id, m, msg, {"category": "dispute", "kind": kind})

    # -- inbound --------------------------------------------------------------

    def on_proposal(self, msg: UpdateProposal, src: str, sim: Scheduler) -> None:
        reason = self._check_proposal(msg, src, sim)
        if reason is None:
            reason = self.owner.screen_update(self, msg, sim)
        if reason is not None:
            sim.send(self.owner.id, src,
                     UpdateReject(self.channel_id, msg.version, reason),
                     {"category": "party", "purpose": "reject"})
            return
        snap = apply_op(self.snapshot, msg.purpose, msg.op)
        my_sig = self._sign(msg.digest)
        self.pending = PendingUpdate(snap, msg.salt, msg.purpose, msg.op, "responder", msg.digest)
        if msg.purpose != "settle":
            sim.send(self.owner.id, src,
                     UpdateAccept(self.channel_id, msg.version, msg.digest, my_sig),
                     {"category": "party", "purpose": "accept"})
        self._broadcast(sim, (msg.sig, my_sig), msg.version, msg.digest)
        self._arm_abort(sim, msg.digest)

    def _check_proposal(self, msg: UpdateProposal, src: str, sim: Scheduler) -> str | None:
        if src != self.peer:
            return "wrong-sender"
        if self.closing:
            return "closing"
        if self.pending is not None:
            return "busy"
        if msg.version != self.snapshot.version + 1:
            return "bad-version"
        try:
            snap = apply_op(self.snapshot, msg.purpose, msg.op)
        except ChannelError as e:
            return str(e)
        if snap.digest(msg.salt) != msg.digest:
            return "digest-mismatch"
        if not (msg.sig.signer == self.peer and self.owner.keystore.verify(msg.sig)
                and msg.sig.digest == msg.digest):
            return "bad-signature"
        now = sim.now
        if msg.purpose == "lock":
            cp: ConditionalPayment = msg.op
            if cp.timelock - now <= 4 * self.delta:
                return "timelock-too-close"
            for p in self.snapshot.payments:
                if p.timelock - now <= 4 * self.delta:
                    return "channel-near-deadline"
        elif msg.purpose == "settle":
            cp = self.snapshot.payment(msg.op)
            if msg.witness is None or not lock_verify(cp.condition, msg.witness):
                return "bad-witness"
            if not now < cp.timelock:
                return "expired"
            if cp.payee != self.peer:
                return "not-payee"
        elif msg.purpose == "revoke":
            cp = self.snapshot.payment(msg.op)
            if src != cp.payee and not (src == cp.payer and now >= cp.timelock):
                return "revoke-not-allowed"
        return None

    def on_accept(self, msg: UpdateAccept, src: str, sim: Scheduler) -> None:
        p = self.pending
        if (p is None or p.role != "proposer" or src != self.peer
                or msg.version != p.snapshot.version or msg.digest != p.digest):
            return
        if not (msg.sig.signer == self.peer and self.owner.keystore.verify(msg.sig)
                and msg.sig.digest == p.digest):
            return
        self._broadcast(sim, (self._sign(p.digest), msg.sig), p.snapshot.version, p.digest)

    def on_reject(self, msg: UpdateReject, src: str, sim: Scheduler) -> None:
        p = self.pending
        if p is None or src != self.peer or msg.version != p.snapshot.version:
            return
        self.pending = None
        self.owner.on_update_rejected(self, p, msg.reason, sim)

    def on_ack(self, msg: RegistrationAck, src: str, sim: Scheduler) -> None:
        p = self.pending
        if p is None or msg.version != p.snapshot.version or msg.digest != p.digest:
            return
        if src not in self.committee or msg.member != src:
            return
        if not (self.owner.keystore.verify(msg.sig)
                and msg.sig.digest == ack_digest(self.channel_id, msg.version, msg.digest)):
            return
        p.acks.add(src)
        if len(p.acks) >= self.quorum:
            self.snapshot, self.salt = p.snapshot, p.salt
            self.pending = None
            self.owner.on_update_confirmed(self, p, sim)

    def on_abort_timer(self, digest: str, sim: Scheduler) -> None:
        p = self.pending
        if p is None or p.digest != digest:
            return  # already confirmed or replaced; stale timer
        self.pending = None
        self.owner.on_update_aborted(self, p, sim)


class ChannelParty(Actor):
    """Base actor owning channel views; protocol layers subclass the hooks."""

    def __init__(self, actor_id: str, keystore: Keystore, chain_id: str | None = None) -> None:
        super().__init__(actor_id)
        self.keystore = keystore
        self.chain_id = chain_id
        self.views: dict[str, PartyChannelView] = {}
        self._final_sigs: dict[tuple[str, str], dict[str, FinalStateSig]] = {}
        self._submitted: set[str] = set()

    def attach_channel(self, channel_id: str, peer: str, committee: tuple[str, ...],
                       f: int, funding: dict[str, int], delta: int) -> PartyChannelView:
        view = PartyChannelView(self, channel_id, peer, committee, f, funding, delta)
        self.views[channel_id] = view
        return view

    # -- hooks ----------------------------------------------------------------

    def screen_update(self, view: PartyChannelView, msg: UpdateProposal,
                      sim: Scheduler) -> str | None:
        """Protocol-level veto on an otherwise valid proposal."""
        return None

    def filter_broadcast(self, view: PartyChannelView, member: str,
                         msg: StateBroadcast) -> StateBroadcast | None:
        """Per-member rewrite of outgoing state broadcasts. None drops it."""
        return msg

    def on_update_confirmed(self, view: PartyChannelView, update: PendingUpdate,
                            sim: Scheduler) -> None:
        pass

    def on_update_rejected(self, view: PartyChannelView, update: PendingUpdate,
                           reason: str, sim: Scheduler) -> None:
        pass

    def on_update_aborted(self, view: PartyChannelView, update: PendingUpdate,
                          sim: Scheduler) -> None:
        pass

    def on_peer_closure(self, view: PartyChannelView, msg: PeerClosureNotice,
                        sim: Scheduler) -> None:
        pass

    def on_witness_notice(self, view: PartyChannelView, msg: WitnessNotice,
                          sim: Scheduler) -> None:
        pass

    def on_dispute_refused(self, view: PartyChannelView, msg: DisputeRefused,
                           sim: Scheduler) -> None:
        pass

    def on_channel_closed(self, view: PartyChannelView, balances: tuple[tuple[str, int], ...],
                          sim: Scheduler) -> None:
        pass

    # -- dispatch ---------------------------------------------------------------

    def on_message(self, msg: Any, src: str, sim: Scheduler) -> None:
        view = self.views.get(getattr(msg, "channel_id", None))
        if view is None:
            return
        if isinstance(msg, UpdateProposal):
            view.on_proposal(msg, src, sim)
        elif isinstance(msg, UpdateAccept):
            view.on_accept(msg, src, sim)
        elif isinstance(msg, UpdateReject):
            view.on_reject(msg, src, sim)
        elif isinstance(msg, RegistrationAck):
            view.on_ack(msg, src, sim)
        elif isinstance(msg, FinalStateSig):
            self._collect_final_sig(view, msg, src, sim)
        elif isinstance(msg, PeerClosureNotice):
            view.closing = True
            self.on_peer_closure(view, msg, sim)
        elif isinstance(msg, WitnessNotice):
            self.on_witness_notice(view, msg, sim)
        elif isinstance(msg, DisputeRefused):
            self.on_dispute_refused(view, msg, sim)

    def on_timer(self, tag: str, data: Any, sim: Scheduler) -> None:
        if tag == "chan-abort":
            channel_id, digest = data
            view = self.views.get(channel_id)
            if view is not None:
                view.on_abort_timer(digest, sim)

    # -- closure certificates ---------------------------------------------------

    def _collect_final_sig(self, view: PartyChannelView, msg: FinalStateSig,
                           src: str, sim: Scheduler) -> None:
        if src not in view.committee or msg.member != src:
            return
        if msg.digest != closure_digest(view.channel_id, msg.balances):
            return
        if not (self.keystore.verify(msg.sig) and msg.sig.digest == msg.digest):
            return
        key = (view.channel_id, msg.digest)
        sigs = self._final_sigs.setdefault(key, {})
        sigs[src] = msg
        if len(sigs) >= view.quorum and view.channel_id not in self._submitted:
            self._submitted.add(view.channel_id)
            cert = assemble_certificate(view.channel_id, 0, msg.digest,
                                        [m.sig for m in sigs.values()],
                                        view.f, view.committee, self.keystore)
            sub = ClosureSubmission(view.channel_id, self.id, msg.balances, cert)
            if self.chain_id is not None:
                sim.send(self.id, self.chain_id, sub, {"category": "ledger"})
            self.on_channel_closed(view, msg.balances, sim)


# ---------------------------------------------------------------------------
# committee member
# ---------------------------------------------------------------------------

@dataclass
class _Registration:
    digest: str
    received_at: int
    broadcasters: set[str] = field(default_factory=set)
    fully_signed: bool = False
    registered: bool = False
    acked: set[str] = field(default_factory=set)


@dataclass
class _ClosureState:
    initiator: str
    kind: str
    snapshot: ChannelSnapshot
    resolutions: dict[str, str] = field(default_factory=dict)  # cp_id -> paid|revoked
    final_digest: str | None = None


@dataclass
class _MemberChannel:
    channel_id: str
    parties: tuple[str, str]
    f: int
    latest_version: int
    latest_digest: str
    registrations: dict[int, _Registration] = field(default_factory=dict)
    held: dict[int, _Registration] = field(default_factory=dict)
    frozen: bool = False
    witnesses: dict[str, tuple[int, int]] = field(default_factory=dict)  # cp_id -> (witness, arrived_at)
    witness_sent: set[str] = field(default_factory=set)
    peer_informed: bool = False
    closure: _ClosureState | None = None


class CommitteeMember(Actor):
    def __init__(self, actor_id: str, keystore: Keystore) -> None:
        super().__init__(actor_id)
        self.keystore = keystore
        self.channels: dict[str, _MemberChannel] = {}

    def attach_channel(self, channel_id: str, parties: tuple[str, str], f: int,
                       initial_digest: str) -> None:
        self.channels[channel_id] = _MemberChannel(channel_id, parties, f, 0, initial_digest)

    def _sign(self, digest: str) -> Signature:
        return self.keystore.keypair(self.id).sign(digest)

    def on_message(self, msg: Any, src: str, sim: Scheduler) -> None:
        ch = self.channels.get(getattr(msg, "channel_id", None))
        if ch is None:
            return
        if isinstance(msg, StateBroadcast):
            self._on_broadcast(ch, msg, src, sim)
        elif isinstance(msg, DisputeSubmission):
            self._on_dispute(ch, msg, src, sim)

    def on_timer(self, tag: str, data: Any, sim: Scheduler) -> None:
        if tag != "cp-deadline":
            return
        channel_id, cp_id = data
        ch = self.channels.get(channel_id)
        if ch is None or ch.closure is None or cp_id in ch.closure.resolutions:
            return
        self._resolve_cp(ch, cp_id, sim)
        self._maybe_finalize(ch, sim)

    # -- registration -----------------------------------------------------------

    def _on_broadcast(self, ch: _MemberChannel, msg: StateBroadcast, src: str,
                      sim: Scheduler) -> None:
        if src != msg.sender or src not in ch.parties:
            return
        valid = [s for s in msg.sigs
                 if s.signer in ch.parties and s.digest == msg.digest
                 and self.keystore.verify(s)]
        if not any(s.signer == src for s in valid):
            return  # a broadcast must at least carry the sender's own signature
        if msg.version <= ch.latest_version:
            reg = ch.registrations.get(msg.version)
            if reg is None or reg.digest != msg.digest:
                return
            reg.broadcasters.add(src)
        else:
            reg = ch.held.get(msg.version)
            if reg is None:
                reg = _Registration(msg.digest, sim.now)
                ch.held[msg.version] = reg
            elif reg.digest != msg.digest:
                return  # conflicting digest for the same version; first wins
            reg.broadcasters.add(src)
            if len({s.signer for s in valid}) == 2:
                reg.fully_signed = True
        if ch.frozen:
            return
        self._advance(ch)
        self._send_acks(ch, sim)

    def _advance(self, ch: _MemberChannel) -> None:
        # versions register strictly in order, each on its first fully-signed
        # broadcast; a held successor registers as soon as the gap closes
        while True:
            nxt = ch.held.get(ch.latest_version + 1)
            if nxt is None or not nxt.fully_signed:
                return
            del ch.held[ch.latest_version + 1]
            nxt.registered = True
            ch.latest_version += 1
            ch.latest_digest = nxt.digest
            ch.registrations[ch.latest_version] = nxt

    def _send_acks(self, ch: _MemberChannel, sim: Scheduler) -> None:
        for version, reg in ch.registrations.items():
            if not reg.registered:
                continue
            for party in reg.broadcasters - reg.acked:
                reg.acked.add(party)
                ack = RegistrationAck(ch.channel_id, version, reg.digest, self.id,
                                      self._sign(ack_digest(ch.channel_id, version, reg.digest)))
                sim.send(self.id, party, ack, {"category": "member", "phase": "ack"})

    # -- disputes and closure -----------------------------------------------------

    def _on_dispute(self, ch: _MemberChannel, msg: DisputeSubmission, src: str,
                    sim: Scheduler) -> None:
        if src != msg.initiator or src not in ch.parties:
            return
        if ch.closure is not None and ch.closure.final_digest is not None:
            self._refuse(ch, src, "already-resolved", sim)
            return
        if msg.snapshot.version != ch.latest_version or \
                msg.snapshot.digest(msg.salt) != ch.latest_digest:
            self._refuse(ch, src, "stale-state", sim)
            return
        try:
            cp = msg.snapshot.payment(msg.cp_id)
        except ChannelError:
            self._refuse(ch, src, "unknown-payment", sim)
            return

        if msg.kind == "payee":
            if src != cp.payee:
                self._refuse(ch, src, "not-payee", sim)
                return
            if msg.witness is None or not lock_verify(cp.condition, msg.witness):
                self._refuse(ch, src, "bad-witness", sim)
                return
            if sim.now <= cp.timelock and msg.cp_id not in ch.witnesses:
                ch.witnesses[msg.cp_id] = (msg.witness, sim.now)
        elif msg.kind == "payer":
            # Either side may flush an expired, unwitnessed lock; the payee
            # needs this when a byzantine payer locks coins and goes silent.
            if src not in (cp.payer, cp.payee):
                self._refuse(ch, src, "not-payer", sim)
                return
            if not sim.now > cp.timelock:
                self._refuse(ch, src, "not-expired", sim)
                return
            if msg.cp_id in ch.witnesses:
                self._refuse(ch, src, "witness-recorded", sim)
                return
        else:
            self._refuse(ch, src, "bad-kind", sim)
            return

        if ch.closure is None:
            ch.frozen = True
            ch.closure = _ClosureState(msg.initiator, msg.kind, msg.snapshot)
            self._inform_peer(ch, msg, sim)
            for cp2 in ch.closure.snapshot.payments:
                if cp2.cp_id in ch.witnesses or sim.now > cp2.timelock:
                    self._resolve_cp(ch, cp2.cp_id, sim)
                else:
                    sim.timer(self.id, cp2.timelock + 1, "cp-deadline",
                              (ch.channel_id, cp2.cp_id))
        else:
            # closure already running; a timely witness may still flip its payment
            if msg.cp_id in ch.witnesses and msg.cp_id not in ch.closure.resolutions:
                self._resolve_cp(ch, msg.cp_id, sim)
        self._maybe_finalize(ch, sim)

    def _refuse(self, ch: _MemberChannel, dst: str, reason: str, sim: Scheduler) -> None:
        sim.send(self.id, dst, DisputeRefused(ch.channel_id, reason),
                 {"category": "dispute", "phase": "refuse"})

    def _inform_peer(self, ch: _MemberChannel, msg: DisputeSubmission, sim: Scheduler) -> None:
        if ch.peer_informed:
            return
        ch.peer_informed = True
        peer = ch.parties[0] if msg.initiator == ch.parties[1] else ch.parties[1]
        sim.send(self.id, peer, PeerClosureNotice(ch.channel_id, msg.initiator, msg.kind),
                 {"category": "dispute", "phase": "inform"})

    def _resolve_cp(self, ch: _MemberChannel, cp_id: str, sim: Scheduler) -> None:
        closure = ch.closure
        cp = closure.snapshot.payment(cp_id)
        if cp_id in ch.witnesses:
            closure.resolutions[cp_id] = "paid"
            if cp_id not in ch.witness_sent:
                ch.witness_sent.add(cp_id)
                sim.send(self.id, cp.payer,
                         WitnessNotice(ch.channel_id, cp_id, ch.witnesses[cp_id][0]),
                         {"category": "dispute", "phase": "witness"})
        else:
            closure.resolutions[cp_id] = "revoked"

    def _final_balances(self, closure: _ClosureState) -> tuple[tuple[str, int], ...]:
        snap = closure.snapshot
        for cp in snap.payments:
            if closure.resolutions[cp.cp_id] == "paid":
                snap = apply_settle(snap, cp.cp_id)
            else:
                snap = apply_revoke(snap, cp.cp_id)
        return snap.balances

    def _maybe_finalize(self, ch: _MemberChannel, sim: Scheduler) -> None:
        closure = ch.closure
        if closure is None or closure.final_digest is not None:
            return
        if any(cp.cp_id not in closure.resolutions for cp in closure.snapshot.payments):
            return
        balances = self._final_balances(closure)
        digest = closure_digest(ch.channel_id, balances)
        closure.final_digest = digest
        msg = FinalStateSig(ch.channel_id, balances, digest, self.id, self._sign(digest))
        sim.send(self.id, closure.initiator, msg, {"category": "dispute", "phase": "final"})
