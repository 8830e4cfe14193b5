"""Synchronous multi-hop payments over committee-registered channels.

A payment is a chain of conditional payments whose lock conditions are
linked by per-hop scalars: the witness that settles hop i, minus hop i's
link secret, settles hop i-1.  Only the payment originator knows all the
secrets, so a settlement wave can only travel backward from the receiver,
one hop at a time.

Roles fall out of position on the route: the sender builds the plan and
locks the first hop, intermediaries validate and re-lock toward the next
party, and the receiver acknowledges the final lock so the sender can
release the settlement witness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .channel import (
    ChannelError,
    ChannelParty,
    ConditionalPayment,
    DisputeSubmission,
    PartyChannelView,
    PendingUpdate,
    StateBroadcast,
    UpdateProposal,
    WitnessNotice,
)
from .crypto import (
    CyclicGroup,
    HopPayload,
    Keystore,
    LockCondition,
    OnionError,
    OnionPacket,
    build_onion,
    lock_apply,
    lock_combine,
    lock_verify,
    onion_key,
    peel_onion,
    scalar_sub,
)
from .simnet import Scheduler


# ---------------------------------------------------------------------------
# payment planning (sender side)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RouteHop:
    """One channel on the route.

    fee is the forwarding fee the hop's payer charges (zero on the first
    hop, the sender forwards for free); margin is the timelock spacing
    this channel consumes.
    """

    channel_id: str
    payer: str
    payee: str
    fee: int = 0
    margin: int = 6


@dataclass
class PaymentPlan:
    payment_id: str
    amount: int
    route: tuple[RouteHop, ...]
    group: CyclicGroup
    values: tuple[int, ...]       # locked amount per hop
    timelocks: tuple[int, ...]    # absolute expiry per hop
    conditions: tuple[LockCondition, ...]
    secrets: tuple[int, ...]      # per-hop link secrets, sender-only
    receiver_witness: int         # opens the last hop's condition
    onion: OnionPacket
    receiver: str
    first_cp: ConditionalPayment


def hop_onion_key(payment_id: str, party: str) -> bytes:
    return onion_key(f"{payment_id}/{party}")


def cp_name(payment_id: str, hop: int) -> str:
    return f"{payment_id}:{hop}"


def parse_cp(cp_id: str) -> tuple[str, int]:
    pid, hop = cp_id.rsplit(":", 1)
    return pid, int(hop)


def setup_payment(payment_id: str, route: list[RouteHop] | tuple[RouteHop, ...],
                  amount: int, group: CyclicGroup, rng, start: int) -> PaymentPlan:
    """Derive amounts, expiries, linked lock conditions, and the onion.

    Hop i locks amount + the fees of every hop after i, and expires at
    start + the sum of margins from hop i to the end, so each forwarder
    earns its fee and keeps a full margin between its two expiries.
    """
    route = tuple(route)
    k = len(route)
    if k == 0:
        raise ValueError("route must have at least one hop")
    if amount <= 0:
        raise ValueError("amount must be positive")
    for i in range(k - 1):
        if route[i].payee != route[i + 1].payer:
            raise ValueError(f"route breaks between hop {i} and {i + 1}")

    values = tuple(amount + sum(h.fee for h in route[i + 1:]) for i in range(k))
    timelocks = tuple(start + sum(h.margin for h in route[i:]) for i in range(k))

    secrets = tuple(rng.randrange(1, group.order) for _ in range(k))
    running = 0
    witnesses = []
    for s in secrets:
        running = (running + s) % group.order
        witnesses.append(running)
    conditions = tuple(lock_apply(group, y) for y in witnesses)

    payloads = []
    for i in range(1, k):
        payloads.append(HopPayload(route[i].payee, values[i],
                                   conditions[i - 1].image, conditions[i].image,
                                   secrets[i], timelocks[i]))
    terminal = HopPayload(None, amount, conditions[k - 1].image, None, None,
                          timelocks[k - 1])
    payloads.append(terminal)
    # payload j goes to the payee of hop j
    keys = [hop_onion_key(payment_id, route[i].payee) for i in range(k)]
    # route order: payload for hop 1's processing comes first
    onion = build_onion(payloads, keys)

    first_cp = ConditionalPayment(cp_name(payment_id, 0), route[0].payer,
                                  route[0].payee, values[0], conditions[0],
                                  timelocks[0])
    return PaymentPlan(payment_id, amount, route, group, values, timelocks,
                       conditions, secrets, witnesses[k - 1], onion,
                       route[-1].payee, first_cp)


# ---------------------------------------------------------------------------
# hop validation (pure, shared by parties and offline checks)
# ---------------------------------------------------------------------------

def check_forward(payload: HopPayload, in_cp: ConditionalPayment,
                  out_balance: int, fee: int, margin: int,
                  group: CyclicGroup) -> str | None:
    """Why a forwarder must refuse this hop, or None if it is safe."""
    if payload.next_party is None or payload.link_secret is None or payload.image_out is None:
        return "malformed"
    if payload.amount <= 0:
        return "bad-amount"
    if out_balance < payload.amount:
        return "insufficient-balance"
    if in_cp.amount - payload.amount < fee:
        return "fee-too-low"
    if in_cp.timelock - payload.timelock < margin:
        return "margin-too-small"
    if payload.image_in != in_cp.condition.image:
        return "condition-mismatch"
    derived = lock_combine(in_cp.condition, lock_apply(group, payload.link_secret))
    if derived.image != payload.image_out:
        return "condition-mismatch"
    return None


def check_receive(payload: HopPayload, in_cp: ConditionalPayment,
                  expected_amount: int | None, margin: int, now: int) -> str | None:
    """Why the receiver must refuse the terminal hop, or None."""
    if expected_amount is None:
        return "unknown-payment"
    if payload.amount != expected_amount:
        return "amount-mismatch"
    if in_cp.amount != payload.amount:
        return "amount-mismatch"
    if payload.image_in != in_cp.condition.image:
        return "condition-mismatch"
    if payload.timelock != in_cp.timelock:
        return "timelock-mismatch"
    if in_cp.timelock - now < margin:
        return "expiry-too-close"
    return None


# ---------------------------------------------------------------------------
# wire messages between parties
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PaymentOnion:
    payment_id: str
    origin: str
    packet: OnionPacket


@dataclass(frozen=True)
class LockedNotice:
    payment_id: str
    receiver: str


@dataclass(frozen=True)
class WitnessReveal:
    payment_id: str
    witness: int


@dataclass(frozen=True)
class OobRelay:
    """Colluder-to-colluder witness transfer outside the protocol."""

    payment_id: str
    witness: int


# ---------------------------------------------------------------------------
# party state per payment
# ---------------------------------------------------------------------------

@dataclass
class HopState:
    payment_id: str
    origin: str | None = None
    in_channel: str | None = None
    in_cp: ConditionalPayment | None = None
    payload: HopPayload | None = None
    rest: OnionPacket | None = None
    out_channel: str | None = None
    out_cp: ConditionalPayment | None = None
    witness_in: int | None = None   # opens in_cp, learned from downstream
    witness_out: int | None = None  # witness our payee settled out_cp with
    status: str = "new"


HONEST = {"kind": "honest"}


class SyncParty(ChannelParty):
    """A payment-network participant: sender, forwarder, and receiver."""

    def __init__(self, actor_id: str, keystore: Keystore, chain_id: str,
                 group: CyclicGroup, behavior: dict | None = None,
                 receiver_margin: int = 6) -> None:
        super().__init__(actor_id, keystore, chain_id)
        self.group = group
        self.behavior = dict(behavior) if behavior else dict(HONEST)
        self.receiver_margin = receiver_margin
        self.fees: dict[str, int] = {}      # channel -> fee charged to forward out
        self.margins: dict[str, int] = {}   # channel -> spacing required on incoming
        self.expected: dict[str, int] = {}  # payment -> amount agreed as receiver
        self.plans: dict[str, PaymentPlan] = {}
        self.hops: dict[str, HopState] = {}
        self.peer_channel: dict[str, str] = {}
        self._claim_witness: dict[str, int] = {}  # update digest -> claim witness
        self._history: list[tuple[str, Any, bytes]] = []  # behavior: stale snapshots
        self._silent = bool(self.behavior.get("silent", False))

    def attach_channel(self, channel_id: str, peer: str, committee: tuple[str, ...],
                       f: int, funding: dict[str, int], delta: int) -> PartyChannelView:
        view = super().attach_channel(channel_id, peer, committee, f, funding, delta)
        self.peer_channel[peer] = channel_id
        return view

    # -- behavior helpers -------------------------------------------------------

    @property
    def kind(self) -> str:
        return self.behavior["kind"]

    def _pending_cp_ids(self, view: PartyChannelView) -> set[str]:
        return {p.cp_id for p in view.snapshot.payments}

    # -- sender entry point -------------------------------------------------------

    def start_payment(self, plan: PaymentPlan, sim: Scheduler) -> None:
        pid = plan.payment_id
        self.plans[pid] = plan
        hs = HopState(pid, origin=self.id, out_channel=plan.route[0].channel_id,
                      out_cp=plan.first_cp, rest=plan.onion, status="locking")
        self.hops[pid] = hs
        sim.note("payment", self.id, annotation={
            "payment": pid, "event": "start", "amount": plan.amount,
            "hops": len(plan.route)})
        view = self.views[hs.out_channel]
        try:
            if view.closing or view.pending is not None:
                raise ChannelError("channel unavailable")
            view.propose("lock", plan.first_cp, sim)
        except ChannelError:
            hs.status = "failed"
            sim.note("payment", self.id, annotation={
                "payment": pid, "event": "failed"})

    # -- message dispatch -------------------------------------------------------

    def on_message(self, msg: Any, src: str, sim: Scheduler) -> None:
        if self._silent:
            return
        if isinstance(msg, PaymentOnion):
            self._on_onion(msg, src, sim)
        elif isinstance(msg, LockedNotice):
            self._on_locked(msg, src, sim)
        elif isinstance(msg, WitnessReveal):
            self._on_reveal(msg, src, sim)
        elif isinstance(msg, OobRelay):
            self._on_oob(msg, src, sim)
        else:
            super().on_message(msg, src, sim)

    def on_timer(self, tag: str, data: Any, sim: Scheduler) -> None:
        if self._silent:
            return
        if tag == "pay-expire":
            self._on_pay_expire(data, sim)
        elif tag == "claim-deadline":
            self._on_claim_deadline(data, sim)
        elif tag == "expire-flush":
            self._on_expire_flush(data, sim)
        elif tag == "retry-claim":
            self._try_claim(data, sim)
        elif tag == "behave":
            self._on_behave(data, sim)
        else:
            super().on_timer(tag, data, sim)

    # -- onion processing -------------------------------------------------------

    def _on_onion(self, msg: PaymentOnion, src: str, sim: Scheduler) -> None:
        pid = msg.payment_id
        try:
            payload, rest = peel_onion(msg.packet, hop_onion_key(pid, self.id))
        except OnionError:
            sim.note("payment", self.id, annotation={
                "payment": pid, "event": "garbled-onion"})
            return
        hs = self.hops.get(pid)
        if hs is None or hs.in_cp is None:
            # lock must land before the onion; out-of-band packets are dropped
            sim.note("payment", self.id, annotation={
                "payment": pid, "event": "onion-without-lock"})
            return
        hs.payload = payload
        hs.origin = msg.origin
        if payload.next_party is None:
            self._receive_terminal(hs, payload, sim)
        else:
            hs.rest = rest
            self._forward(hs, payload, sim)

    def _receive_terminal(self, hs: HopState, payload: HopPayload, sim: Scheduler) -> None:
        reason = check_receive(payload, hs.in_cp, self.expected.get(hs.payment_id),
                               self.receiver_margin, sim.now)
        if reason is not None:
            self._reject_incoming(hs, reason, sim)
            return
        hs.status = "locked"
        sim.send(self.id, hs.origin, LockedNotice(hs.payment_id, self.id),
                 {"category": "notice", "payment": hs.payment_id})

    def _forward(self, hs: HopState, payload: HopPayload, sim: Scheduler) -> None:
        out_ch = self.peer_channel.get(payload.next_party)
        reason = None
        if out_ch is None:
            reason = "no-route"
        else:
            view = self.views[out_ch]
            if view.closing or view.pending is not None:
                reason = "channel-busy"
            else:
                reason = check_forward(payload, hs.in_cp,
                                       view.snapshot.balance_of(self.id),
                                       self.fees.get(out_ch, 0),
                                       self.margins.get(hs.in_channel, 0),
                                       self.group)
        if reason is not None:
            self._reject_incoming(hs, reason, sim)
            return
        _, hop_in = parse_cp(hs.in_cp.cp_id)
        out_cp = ConditionalPayment(cp_name(hs.payment_id, hop_in + 1), self.id,
                                    payload.next_party, payload.amount,
                                    LockCondition(payload.image_out, self.group),
                                    payload.timelock)
        hs.out_channel = out_ch
        hs.out_cp = out_cp
        hs.status = "locking"
        try:
            self.views[out_ch].propose("lock", out_cp, sim)
        except ChannelError:
            self._reject_incoming(hs, "channel-busy", sim)

    def _reject_incoming(self, hs: HopState, reason: str, sim: Scheduler) -> None:
        hs.status = "rejected"
        sim.note("payment", self.id, annotation={
            "payment": hs.payment_id, "event": "hop-rejected", "reason": reason})
        view = self.views[hs.in_channel]
        if hs.in_cp.cp_id in self._pending_cp_ids(view) and not view.closing:
            try:
                view.propose("revoke", hs.in_cp.cp_id, sim)
            except ChannelError:
                pass

    # -- settlement trigger messages ----------------------------------------------

    def _on_locked(self, msg: LockedNotice, src: str, sim: Scheduler) -> None:
        plan = self.plans.get(msg.payment_id)
        if plan is None or src != plan.receiver:
            return
        if self.kind == "withhold_reveal":
            sim.note("payment", self.id, annotation={
                "payment": msg.payment_id, "event": "reveal-withheld"})
            return
        sim.send(self.id, src, WitnessReveal(msg.payment_id, plan.receiver_witness),
                 {"category": "notice", "payment": msg.payment_id})
        if self.kind == "silent_after_reveal":
            self._silent = True

    def _on_reveal(self, msg: WitnessReveal, src: str, sim: Scheduler) -> None:
        hs = self.hops.get(msg.payment_id)
        if hs is None or hs.in_cp is None:
            return
        if not lock_verify(hs.in_cp.condition, msg.witness):
            sim.note("payment", self.id, annotation={
                "payment": msg.payment_id, "event": "bad-reveal"})
            return
        hs.witness_in = msg.witness
        hs.status = "claiming"
        if self.kind == "withhold_claim":
            return
        if self.kind == "dispute_instead_of_claim":
            view = self.views[hs.in_channel]
            if not view.closing:
                view.submit_dispute("payee", hs.in_cp.cp_id, msg.witness, sim)
            return
        self._try_claim(msg.payment_id, sim)

    def _on_oob(self, msg: OobRelay, src: str, sim: Scheduler) -> None:
        if self.kind != "wormhole_claim":
            return
        hs = self.hops.get(msg.payment_id)
        if hs is None or hs.in_cp is None or hs.payload is None:
            return
        # the relayed witness skips the honest hops between us, so the
        # scalar we can strip is not the one the chain expects here
        guess = scalar_sub(self.group, msg.witness, hs.payload.link_secret)
        view = self.views[hs.in_channel]
        if view.closing or view.pending is not None:
            return
        try:
            view.propose("settle", hs.in_cp.cp_id, sim, witness=guess)
        except ChannelError:
            pass

    # -- claims -------------------------------------------------------------------

    def _try_claim(self, pid: str, sim: Scheduler) -> None:
        hs = self.hops.get(pid)
        if hs is None or hs.in_cp is None or hs.witness_in is None:
            return
        view = self.views[hs.in_channel]
        if view.closing or hs.in_cp.cp_id not in self._pending_cp_ids(view):
            return
        if sim.now >= hs.in_cp.timelock:
            return
        if view.pending is not None:
            sim.timer(self.id, sim.now + 1, "retry-claim", pid)
            return
        try:
            view.propose("settle", hs.in_cp.cp_id, sim, witness=hs.witness_in)
        except ChannelError:
            sim.timer(self.id, sim.now + 1, "retry-claim", pid)

    # -- channel event hooks --------------------------------------------------------

    def screen_update(self, view: PartyChannelView, msg: UpdateProposal,
                      sim: Scheduler) -> str | None:
        if self.kind == "refuse_claims" and msg.purpose == "settle":
            return "declined"
        if msg.purpose == "settle" and msg.witness is not None:
            self._claim_witness[msg.digest] = msg.witness
        return None

    def filter_broadcast(self, view: PartyChannelView, member: str,
                         msg: StateBroadcast) -> StateBroadcast | None:
        if self.kind == "equivocating_sender":
            victims = self.behavior.get("victims", ())
            if member in victims:
                fake = "0" * len(msg.digest)
                sig = self.keystore.keypair(self.id).sign(fake)
                return StateBroadcast(msg.channel_id, msg.version, fake,
                                      (sig,), msg.sender)
        return msg

    def on_update_confirmed(self, view: PartyChannelView, update: PendingUpdate,
                            sim: Scheduler) -> None:
        if self.kind == "stale_state_closure":
            self._history.append((view.channel_id, view.snapshot, view.salt))
        if update.purpose in ("lock", "settle", "revoke"):
            cp_id = update.op.cp_id if update.purpose == "lock" else update.op
            pid, _ = parse_cp(cp_id)
            sim.note("channel", self.id, annotation={
                "event": "update", "channel": view.channel_id,
                "purpose": update.purpose, "payment": pid, "cp": cp_id})
        if update.purpose == "lock":
            self._lock_confirmed(view, update, sim)
        elif update.purpose == "settle":
            self._settle_confirmed(view, update, sim)
        elif update.purpose == "revoke":
            self._revoke_confirmed(view, update, sim)

    def _lock_confirmed(self, view: PartyChannelView, update: PendingUpdate,
                        sim: Scheduler) -> None:
        cp: ConditionalPayment = update.op
        pid, _ = parse_cp(cp.cp_id)
        if cp.payer == self.id:
            sim.timer(self.id, cp.timelock, "pay-expire", (view.channel_id, cp.cp_id))
            hs = self.hops.get(pid)
            if hs is not None and hs.rest is not None:
                sim.send(self.id, cp.payee,
                         PaymentOnion(pid, hs.origin or self.id, hs.rest),
                         {"category": "onion", "payment": pid})
                hs.rest = None
                hs.status = "forwarded"
                if self.kind == "silent_after_forward":
                    self._silent = True
        else:
            hs = self.hops.setdefault(pid, HopState(pid))
            hs.in_channel = view.channel_id
            hs.in_cp = cp
            sim.timer(self.id, cp.timelock - view.delta, "claim-deadline",
                      (view.channel_id, cp.cp_id))
            sim.timer(self.id, cp.timelock + 1, "expire-flush",
                      (view.channel_id, cp.cp_id))

    def _settle_confirmed(self, view: PartyChannelView, update: PendingUpdate,
                          sim: Scheduler) -> None:
        pid, _ = parse_cp(update.op)
        hs = self.hops.get(pid)
        if update.role == "responder":
            # our outgoing lock was just claimed; the witness travels upstream
            w = self._claim_witness.pop(update.digest, None)
            if hs is None:
                return
            hs.witness_out = w
            if self.kind == "wormhole_skip" and hs.payload is not None and w is not None:
                derived = scalar_sub(self.group, w, hs.payload.link_secret)
                sim.send(self.id, self.behavior["accomplice"], OobRelay(pid, derived),
                         {"category": "adversary_oob", "payment": pid})
                return
            if hs.payload is not None and w is not None:
                hs.witness_in = scalar_sub(self.group, w, hs.payload.link_secret)
                self._try_claim(pid, sim)
            elif pid in self.plans:
                hs.status = "settled"
                sim.note("payment", self.id, annotation={
                    "payment": pid, "event": "complete"})
        else:
            if hs is not None:
                hs.status = "settled"
                if hs.payload is not None and hs.payload.next_party is None:
                    sim.note("payment", self.id, annotation={
                        "payment": pid, "event": "received"})

    def _revoke_confirmed(self, view: PartyChannelView, update: PendingUpdate,
                          sim: Scheduler) -> None:
        pid, _ = parse_cp(update.op)
        if update.role == "responder":
            # we were the payer: our forward was handed back, unwind upstream
            self._fail_upstream(pid, sim)

    def _fail_upstream(self, pid: str, sim: Scheduler) -> None:
        hs = self.hops.get(pid)
        if hs is not None and hs.in_cp is not None:
            view = self.views[hs.in_channel]
            if hs.in_cp.cp_id in self._pending_cp_ids(view) and not view.closing:
                try:
                    view.propose("revoke", hs.in_cp.cp_id, sim)
                except ChannelError:
                    pass
        elif pid in self.plans:
            if hs is not None:
                hs.status = "failed"
            sim.note("payment", self.id, annotation={
                "payment": pid, "event": "failed"})

    def on_update_rejected(self, view: PartyChannelView, update: PendingUpdate,
                           reason: str, sim: Scheduler) -> None:
        self._update_failed(view, update, f"rejected:{reason}", sim)

    def on_update_aborted(self, view: PartyChannelView, update: PendingUpdate,
                          sim: Scheduler) -> None:
        self._update_failed(view, update, "aborted", sim)

    def _update_failed(self, view: PartyChannelView, update: PendingUpdate,
                       what: str, sim: Scheduler) -> None:
        if update.purpose == "lock" and update.role == "proposer":
            pid, _ = parse_cp(update.op.cp_id)
            sim.note("payment", self.id, annotation={
                "payment": pid, "event": "forward-failed", "detail": what})
            self._fail_upstream(pid, sim)
        elif update.purpose == "settle" and update.role == "proposer":
            pid, _ = parse_cp(update.op)
            hs = self.hops.get(pid)
            if (hs is not None and hs.witness_in is not None and not view.closing
                    and hs.in_cp.cp_id in self._pending_cp_ids(view)
                    and sim.now > hs.in_cp.timelock - view.delta):
                # cooperative claim failed past the dispute deadline, so the
                # deadline timer can no longer cover us; dispute right away
                view.submit_dispute("payee", hs.in_cp.cp_id, hs.witness_in, sim)

    def on_witness_notice(self, view: PartyChannelView, msg: WitnessNotice,
                          sim: Scheduler) -> None:
        # a closure resolved our outgoing lock; recover the upstream witness
        pid, _ = parse_cp(msg.cp_id)
        hs = self.hops.get(pid)
        if hs is None or hs.payload is None or hs.payload.link_secret is None:
            return
        if hs.out_cp is None or msg.cp_id != hs.out_cp.cp_id:
            return
        if self.kind == "wormhole_skip":
            return
        if hs.witness_in is None:
            hs.witness_in = scalar_sub(self.group, msg.witness, hs.payload.link_secret)
            self._try_claim(pid, sim)

    # -- expiry timers ---------------------------------------------------------------

    def _on_pay_expire(self, data: tuple[str, str], sim: Scheduler) -> None:
        channel_id, cp_id = data
        view = self.views[channel_id]
        if view.closing or cp_id not in self._pending_cp_ids(view):
            return
        view.submit_dispute("payer", cp_id, None, sim)

    def _on_claim_deadline(self, data: tuple[str, str], sim: Scheduler) -> None:
        channel_id, cp_id = data
        if self.kind == "wormhole_skip":
            return
        pid, _ = parse_cp(cp_id)
        hs = self.hops.get(pid)
        view = self.views[channel_id]
        if hs is None or hs.witness_in is None:
            return
        if view.closing or cp_id not in self._pending_cp_ids(view):
            return
        view.submit_dispute("payee", cp_id, hs.witness_in, sim)

    def _on_expire_flush(self, data: tuple[str, str], sim: Scheduler) -> None:
        # Incoming lock expired without a witness; close the channel so the
        # coins return to the payer instead of sitting locked forever.
        channel_id, cp_id = data
        pid, _ = parse_cp(cp_id)
        hs = self.hops.get(pid)
        if hs is not None and hs.witness_in is not None:
            return
        view = self.views[channel_id]
        if view.closing or cp_id not in self._pending_cp_ids(view):
            return
        view.submit_dispute("payer", cp_id, None, sim)

    # -- scripted misbehavior ----------------------------------------------------------

    def _on_behave(self, data: Any, sim: Scheduler) -> None:
        if self.kind == "stale_state_closure" and self._history:
            channel_id, snap, salt = self._history[int(self.behavior.get("index", 0))]
            cp_id = self.behavior.get("cp_id")
            if cp_id is None and snap.payments:
                cp_id = snap.payments[0].cp_id
            view = self.views[channel_id]
            msg = DisputeSubmission(channel_id, self.behavior.get("dispute", "payer"),
                                    snap, salt, cp_id, None, self.id)
            for m in view.committee:
                sim.send(self.id, m, msg, {"category": "dispute", "kind": "stale"})

    def schedule_misbehavior(self, at: int, sim: Scheduler, data: Any = None) -> None:
        sim.timer(self.id, at, "behave", data)
