"""Committee-governed channels with totally ordered execution.

Every channel is run by one committee of n = 3f+1 members.  Payments are
locked hop by hop: a committee orders each request through consensus,
executes it against the channel balance, informs both channel parties, and
hands the payment to the next committee on the route.  The last committee
settles immediately and a SUCCESS wave travels back, unlocking each hop.
Nothing here uses hash locks or timelocks; safety comes from the order of
execution inside each committee.

Two wire formats are supported.  In the basic mode the full route and the
sender-assigned payment id travel in the clear, which mirrors the textbook
presentation.  In "full" mode the route is sealed in a layered packet that
each committee peels with a shared committee key, ids are relabeled at
every hop, and forwarding fees are deducted along the way.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Optional

from .broadcast import (CostModel, OrdCommit, OrdDecide, OrdPrepare, OrdPropose,
                        OrderingNode)
from .channel import FinalStateSig
from .crypto import (HopPayload, Keystore, OnionError, OnionPacket, Signature,
                     assemble_certificate, build_onion, onion_key,
                     payload_digest, peel_onion)
from .ledger import ClosureSubmission, closure_digest
from .simnet import Actor, Scheduler, message_digest

PAY = "PAY"
SUCCESS = "SUCCESS"
REJECT = "REJECT"
CLOSE = "CLOSE"


# ---------------------------------------------------------------------------
# routing directory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelInfo:
    """Static facts about one committee-run channel."""

    channel_id: str
    parties: tuple[str, str]
    roster: tuple[str, ...]
    f: int
    fee: int = 0


class Directory:
    """Which committee runs the channel between two parties.

    The directory is public routing data; it carries no balances.
    """

    def __init__(self, channels) -> None:
        self.channels: dict[str, ChannelInfo] = {}
        self._by_pair: dict[tuple[str, str], ChannelInfo] = {}
        for info in channels:
            if info.channel_id in self.channels:
                raise ValueError(f"duplicate channel {info.channel_id}")
            self.channels[info.channel_id] = info
            a, b = info.parties
            self._by_pair[(a, b)] = info
            self._by_pair[(b, a)] = info

    def between(self, a: str, b: str) -> ChannelInfo:
        info = self._by_pair.get((a, b))
        if info is None:
            raise KeyError(f"no channel between {a} and {b}")
        return info

    def path_channels(self, path) -> list[ChannelInfo]:
        if len(path) < 2:
            raise ValueError("path needs at least two parties")
        return [self.between(path[i], path[i + 1]) for i in range(len(path) - 1)]


def committee_key(channel_id: str) -> bytes:
    # all members of a committee share its peel key; simulation-grade
    return onion_key(f"psync/{channel_id}")


# ---------------------------------------------------------------------------
# wire messages
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Activation:
    """One unit of committee work, byte-identical across all submitters.

    origin is the principal whose id counter the payment runs under: the
    sending party at the first hop, the previous committee after a relabel.
    path is the cleartext route (basic mode); packet the sealed one (full).
    """

    kind: str
    origin: str
    pay_id: int
    amount: int
    path: tuple[str, ...] | None = None
    packet: OnionPacket | None = None
    requester: str | None = None  # CLOSE only


def activation_digest(act: Activation) -> str:
    return payload_digest("pact", message_digest(act))


@dataclass(frozen=True)
class PaymentEnvelope:
    """An activation plus who vouches for it.

    via names the sending principal (party id or committee id); sig is from
    the concrete sender.  Committees act on f+1 matching envelopes from the
    previous committee, or on a single signed request from a channel party.
    """

    act: Activation
    via: str
    sig: Signature


@dataclass(frozen=True)
class BalanceNotify:
    channel_id: str
    kind: str
    origin: str
    pay_id: int
    amount: int
    payer: str
    payee: str
    balances: tuple[tuple[str, int], ...]
    msg_no: int | None
    sig: Signature


def notify_digest(nt: "BalanceNotify") -> str:
    fields: list = ["pnotif", nt.channel_id, nt.kind, nt.origin, nt.pay_id,
                    nt.amount, nt.payer, nt.payee,
                    "-" if nt.msg_no is None else nt.msg_no]
    for party, bal in nt.balances:
        fields.append(party)
        fields.append(bal)
    return payload_digest(*fields)


@dataclass(frozen=True)
class CloseRequest:
    channel_id: str
    requester: str
    sig: Signature


def close_request_digest(channel_id: str, requester: str) -> str:
    return payload_digest("close-req", channel_id, requester)


@dataclass
class _Lock:
    payer: str
    payee: str
    amount: int
    act: Activation        # the PAY as this committee received it
    hop: int | None        # position in the cleartext path, if visible
    path: tuple[str, ...] | None


def payment_label(origin: str, pay_id: int) -> str:
    return f"{origin}#{pay_id}"


# ---------------------------------------------------------------------------
# committee member
# ---------------------------------------------------------------------------

class PsyncMember(Actor):
    """One member of the committee running a single channel.

    Requests enter consensus as soon as they are vouched for; execution is
    gated so each originator's payments apply in id order, with future ids
    parked until the gap closes.  Balance changes happen only inside
    on_ordered, which every honest member replays identically.
    """

    def __init__(self, actor_id: str, channel: ChannelInfo, directory: Directory,
                 keystore: Keystore, model: CostModel, delta: int,
                 chain_id: str = "chain", mode: str = "alg1",
                 behavior: dict | None = None) -> None:
        super().__init__(actor_id)
        self.channel = channel
        self.directory = directory
        self.keystore = keystore
        self.delta = delta
        self.chain_id = chain_id
        self.mode = mode
        self.behavior = behavior or {"kind": "honest"}
        self.balances: dict[str, int] = {}
        self.avail: dict[str, int] = {}
        self.next_id: dict[str, int] = {}
        self.pending: dict[tuple[str, int], _Lock] = {}
        self.held: dict[str, dict[int, tuple[Activation, int]]] = {}
        self.closing = False
        self.close_requester: str | None = None
        self.closed = False
        self.node = OrderingNode(self, channel.channel_id, channel.roster,
                                 channel.f, model, delta, keystore)
        self._thresh: dict[tuple[str, str], set[str]] = {}
        self._entered: set[str] = set()
        self._out_seq = 0                      # full mode: next downstream label
        self._route: dict[int, tuple[str, int]] = {}  # out id -> upstream key
        kind = self.behavior.get("kind")
        if kind == "stalling_leader":
            self.stall_proposals = True
        if kind == "equivocating_member":
            self.rewrite_proposal = self._equivocate

    def fund(self, balances: dict[str, int]) -> None:
        if set(balances) != set(self.channel.parties):
            raise ValueError("funding must cover exactly the channel parties")
        self.balances = dict(balances)
        self.avail = dict(balances)

    @property
    def kind(self) -> str:
        return self.behavior.get("kind", "honest")

    # -- event routing --------------------------------------------------------

    def on_message(self, msg: Any, src: str, sim: Scheduler) -> None:
        if self.kind == "silent":
            return
        if isinstance(msg, (OrdPropose, OrdPrepare, OrdCommit, OrdDecide)):
            self.node.on_message(msg, src, sim)
        elif isinstance(msg, PaymentEnvelope):
            self._on_envelope(msg, src, sim)
        elif isinstance(msg, CloseRequest):
            self._on_close_request(msg, src, sim)

    def on_timer(self, tag: str, data: Any, sim: Scheduler) -> None:
        if self.kind == "silent":
            return
        if tag in ("ord-flush", "ord-view") and data and data[0] == self.node.cid:
            self.node.on_timer(tag, data, sim)

    def _equivocate(self, cid: str, slot: int, view: int, target: str, value: Any):
        # leader fault: feed half the roster a tampered amount
        if self.channel.roster.index(target) % 2 == 0:
            return value
        if isinstance(value, Activation):
            return replace(value, amount=value.amount + 1)
        if isinstance(value, PaymentEnvelope):
            return replace(value, act=replace(value.act, amount=value.act.amount + 1))
        return value

    # -- admission -------------------------------------------------------------

    def _on_envelope(self, env: PaymentEnvelope, src: str, sim: Scheduler) -> None:
        act = env.act
        digest = activation_digest(act)
        if not (env.sig.signer == src and env.sig.digest == digest
                and self.keystore.verify(env.sig)):
            return
        if digest in self._entered:
            return
        if env.via in self.channel.parties:
            # a party request is self-authenticating: order the whole envelope
            if src != env.via or not self._valid_party_request(env):
                return
            if act.pay_id < self.next_id.get(act.origin, 0):
                sim.note("member-log", self.id, annotation={
                    "event": "discarded-stale", "payment": payment_label(act.origin, act.pay_id)})
                return
            self._entered.add(digest)
            self.node.submit(env, sim)
            return
        upstream = self.directory.channels.get(env.via)
        if upstream is None or src not in upstream.roster:
            return
        got = self._thresh.setdefault((env.via, digest), set())
        got.add(src)
        if len(got) >= upstream.f + 1:
            self._entered.add(digest)
            self.node.submit(act, sim)

    def _on_close_request(self, msg: CloseRequest, src: str, sim: Scheduler) -> None:
        if src != msg.requester or not self._valid_close_request(msg):
            return
        digest = close_request_digest(msg.channel_id, msg.requester)
        if digest in self._entered:
            return
        self._entered.add(digest)
        self.node.submit(msg, sim)

    def _valid_party_request(self, env: PaymentEnvelope) -> bool:
        act = env.act
        return (env.via in self.channel.parties
                and act.kind == PAY and act.origin == env.via
                and act.pay_id >= 0 and act.amount > 0
                and env.sig.signer == env.via
                and env.sig.digest == activation_digest(act)
                and self.keystore.verify(env.sig))

    def _valid_close_request(self, msg: CloseRequest) -> bool:
        return (msg.channel_id == self.channel.channel_id
                and msg.requester in self.channel.parties
                and msg.sig.signer == msg.requester
                and msg.sig.digest == close_request_digest(msg.channel_id, msg.requester)
                and self.keystore.verify(msg.sig))

    def validate_ordering_value(self, cid: str, value: Any) -> bool:
        """External validity for consensus proposals.

        Self-authenticating values verify directly; bare inter-committee
        activations are valid once this member has its own f+1 vouches, which
        every honest member eventually collects from the honest majority of
        the sending committee.
        """
        if isinstance(value, PaymentEnvelope):
            return self._valid_party_request(value)
        if isinstance(value, CloseRequest):
            return self._valid_close_request(value)
        if isinstance(value, Activation):
            return activation_digest(value) in self._entered
        return False

    # -- ordered execution -------------------------------------------------------

    def on_ordered(self, cid: str, slot: int, value: Any, sim: Scheduler) -> None:
        if isinstance(value, PaymentEnvelope) and self._valid_party_request(value):
            value = value.act
        elif isinstance(value, CloseRequest) and self._valid_close_request(value):
            value = Activation(CLOSE, value.requester, 0, 0, requester=value.requester)
        if not isinstance(value, Activation):
            sim.note("member-log", self.id, annotation={"event": "ignored-garbage", "seq": slot})
            return
        if value.kind == PAY:
            self._ordered_pay(value, slot, sim)
        elif value.kind == SUCCESS:
            self._exec_success(value, slot, sim)
        elif value.kind == REJECT:
            self._exec_reject(value, slot, sim)
        elif value.kind == CLOSE:
            self._exec_close(value, slot, sim)
        else:
            sim.note("member-log", self.id, annotation={"event": "ignored-kind", "seq": slot})
        self._maybe_finalize_close(sim)

    def _ordered_pay(self, act: Activation, slot: int, sim: Scheduler) -> None:
        expected = self.next_id.get(act.origin, 0)
        if act.pay_id < expected:
            sim.note("member-log", self.id, annotation={
                "event": "duplicate-pay", "payment": payment_label(act.origin, act.pay_id)})
            return
        if act.pay_id > expected:
            # ordered now, executed once it becomes the expected id
            self.held.setdefault(act.origin, {})[act.pay_id] = (act, slot)
            sim.note("member-log", self.id, annotation={
                "event": "held", "payment": payment_label(act.origin, act.pay_id),
                "waiting_for": expected})
            return
        self._exec_pay(act, slot, sim)
        while True:
            expected = self.next_id.get(act.origin, 0)
            parked = self.held.get(act.origin, {}).pop(expected, None)
            if parked is None:
                break
            self._exec_pay(parked[0], parked[1], sim)

    def _exec_pay(self, act: Activation, slot: int, sim: Scheduler) -> None:
        # the id is consumed whether the payment locks or bounces
        self.next_id[act.origin] = act.pay_id + 1
        route = self._resolve(act)
        if route is None:
            sim.note("member-log", self.id, annotation={
                "event": "ignored-pay", "payment": payment_label(act.origin, act.pay_id)})
            self._note_exec(sim, act, slot, PAY, "ignored")
            # best effort: bounce a committee-forwarded dud so upstream unlocks
            upstream = self.directory.channels.get(act.origin)
            if upstream is not None and act.origin != self.channel.channel_id:
                back = Activation(REJECT, act.origin, act.pay_id, act.amount)
                self._send_committee(sim, upstream, back,
                                     {"category": "transfer", "kind": REJECT,
                                      "payment": payment_label(act.origin, act.pay_id)})
            return
        payer, payee, amount, hop, nxt = route
        key = (act.origin, act.pay_id)
        if self.closing or self.avail.get(payer, 0) < amount:
            reason = "closing" if self.closing else "insufficient-balance"
            self._notify(sim, REJECT, act, amount, payer, payee, None)
            self._transfer_back(sim, REJECT, act, amount, hop)
            self._note_exec(sim, act, slot, PAY, "rejected", reason)
            return
        self.avail[payer] -= amount
        path = act.path
        k = (len(path) - 1) if path else None
        if nxt is None:
            # last hop: settle in the same activation
            self.balances[payer] -= amount
            self.balances[payee] += amount
            self.avail[payee] = self.avail.get(payee, 0) + amount
            done_no = 2 * k if k is not None else None
            self._notify(sim, SUCCESS, act, amount, payer, payee, done_no)
            self._transfer_back(sim, SUCCESS, act, amount, hop)
            self._note_exec(sim, act, slot, PAY, "applied", "settled")
        else:
            self.pending[key] = _Lock(payer, payee, amount, act, hop, path)
            lock_no = 2 * (hop + 1) if hop is not None else None
            self._notify(sim, PAY, act, amount, payer, payee, lock_no)
            self._forward(sim, act, amount, payee, hop, nxt)
            self._note_exec(sim, act, slot, PAY, "applied", "locked")

    def _exec_success(self, act: Activation, slot: int, sim: Scheduler) -> None:
        lock = self.pending.pop(self._back_key(act), None)
        if lock is None:
            sim.note("member-log", self.id, annotation={
                "event": "unknown-success", "payment": payment_label(act.origin, act.pay_id)})
            self._note_exec(sim, act, slot, SUCCESS, "ignored")
            return
        self.balances[lock.payer] -= lock.amount
        self.balances[lock.payee] += lock.amount
        self.avail[lock.payee] = self.avail.get(lock.payee, 0) + lock.amount
        msg_no = None
        if lock.hop is not None and lock.path is not None:
            k = len(lock.path) - 1
            msg_no = 2 * k + 2 * (k - 1 - lock.hop)
        self._notify(sim, SUCCESS, lock.act, lock.amount, lock.payer, lock.payee, msg_no)
        self._transfer_back(sim, SUCCESS, lock.act, lock.amount, lock.hop,
                            msg_no + 1 if msg_no is not None else None)
        self._note_exec(sim, lock.act, slot, SUCCESS, "applied")

    def _exec_reject(self, act: Activation, slot: int, sim: Scheduler) -> None:
        lock = self.pending.pop(self._back_key(act), None)
        if lock is None:
            sim.note("member-log", self.id, annotation={
                "event": "unknown-reject", "payment": payment_label(act.origin, act.pay_id)})
            self._note_exec(sim, act, slot, REJECT, "ignored")
            return
        # single restore; the lock entry is gone so a replay cannot double-credit
        self.avail[lock.payer] += lock.amount
        self._notify(sim, REJECT, lock.act, lock.amount, lock.payer, lock.payee, None)
        self._transfer_back(sim, REJECT, lock.act, lock.amount, lock.hop)
        self._note_exec(sim, lock.act, slot, REJECT, "applied")

    def _exec_close(self, act: Activation, slot: int, sim: Scheduler) -> None:
        if self.closing:
            sim.note("member-log", self.id, annotation={"event": "already-closing"})
            return
        self.closing = True
        self.close_requester = act.requester or act.origin
        self._note_exec(sim, act, slot, CLOSE, "applied",
                        "deferred" if self.pending else "immediate")

    def _maybe_finalize_close(self, sim: Scheduler) -> None:
        if not self.closing or self.closed or self.pending:
            return
        self.closed = True
        balances = self._final_balances()
        digest = closure_digest(self.channel.channel_id, balances)
        sig = self.keystore.keypair(self.id).sign(digest)
        fss = FinalStateSig(self.channel.channel_id, balances, digest, self.id, sig)
        sim.send(self.id, self.close_requester, fss, {"category": "close"})

    def _final_balances(self) -> tuple[tuple[str, int], ...]:
        balances = dict(self.balances)
        if self.kind == "wrong_balance_closure":
            a, b = self.channel.parties
            gainer = self.behavior.get("beneficiary", a)
            loser = b if gainer == a else a
            shift = min(self.behavior.get("shift", 10), balances[loser])
            balances[gainer] += shift
            balances[loser] -= shift
        return tuple(sorted(balances.items()))

    # -- route resolution --------------------------------------------------------

    def _resolve(self, act: Activation):
        """Work out payer, payee, locked amount, hop index, and the next leg.

        Returns (payer, payee, amount, hop, next_leg) where next_leg is None
        at the last hop or (next_info, forward_activation_fields) otherwise.
        """
        if self.mode == "alg1":
            path = act.path
            if not path or len(path) < 2:
                return None
            mine = set(self.channel.parties)
            for i in range(len(path) - 1):
                if {path[i], path[i + 1]} == mine:
                    payer, payee = path[i], path[i + 1]
                    hop = i
                    break
            else:
                return None
            if act.amount <= 0:
                return None
            nxt = None
            if hop + 2 < len(path):
                try:
                    info = self.directory.between(path[hop + 1], path[hop + 2])
                except KeyError:
                    return None
                nxt = (info, act.amount, None)
            return payer, payee, act.amount, hop, nxt
        # full mode: the sealed layer names the party after our payee
        if act.packet is None:
            return None
        try:
            payload, rest = peel_onion(act.packet, committee_key(self.channel.channel_id))
        except OnionError:
            return None
        if act.origin in self.channel.parties:
            payer = act.origin
        else:
            upstream = self.directory.channels.get(act.origin)
            if upstream is None:
                return None
            shared = set(upstream.parties) & set(self.channel.parties)
            if len(shared) != 1:
                return None
            payer = shared.pop()
        pair = set(self.channel.parties)
        pair.discard(payer)
        payee = pair.pop()
        if payload.amount != act.amount or act.amount <= 0:
            return None
        if payload.next_party is None:
            return (payer, payee, act.amount, None, None) if rest is None else None
        if rest is None:
            return None
        try:
            info = self.directory.between(payee, payload.next_party)
        except KeyError:
            return None
        return payer, payee, act.amount, None, (info, act.amount - info.fee, rest)

    def _back_key(self, act: Activation) -> tuple[str, int]:
        if self.mode == "alg1":
            return (act.origin, act.pay_id)
        if act.origin == self.channel.channel_id:
            # a downstream committee answers using the label we assigned
            return self._route.get(act.pay_id, ("?", -1))
        return (act.origin, act.pay_id)

    # -- emission ------------------------------------------------------------------

    def _notify(self, sim: Scheduler, kind: str, act: Activation, amount: int,
                payer: str, payee: str, msg_no: int | None) -> None:
        snapshot = tuple(sorted(self.balances.items()))
        for party in self.channel.parties:
            nt = BalanceNotify(self.channel.channel_id, kind, act.origin, act.pay_id,
                               amount, payer, payee, snapshot, msg_no, None)
            nt = replace(nt, sig=self.keystore.keypair(self.id).sign(notify_digest(nt)))
            ann = {"category": "party", "kind": kind,
                   "payment": payment_label(act.origin, act.pay_id)}
            if msg_no is not None:
                ann["msg"] = msg_no
            sim.send(self.id, party, nt, ann)

    def _forward(self, sim: Scheduler, act: Activation, amount: int, payee: str,
                 hop: int | None, nxt) -> None:
        info, fwd_amount, rest = nxt
        if fwd_amount <= 0:
            return  # fee exceeds value; the lock will expire via reject upstream
        if self.mode == "alg1":
            fwd = replace(act, amount=fwd_amount)
        else:
            out_id = self._out_seq
            self._out_seq += 1
            self._route[out_id] = (act.origin, act.pay_id)
            fwd = Activation(PAY, self.channel.channel_id, out_id, fwd_amount, packet=rest)
        ann = {"category": "transfer", "kind": PAY,
               "payment": payment_label(fwd.origin, fwd.pay_id)}
        if hop is not None:
            ann["msg"] = 2 * (hop + 1) + 1
        self._send_committee(sim, info, fwd, ann)

    def _transfer_back(self, sim: Scheduler, kind: str, act: Activation, amount: int,
                       hop: int | None, msg_no: int | None = None) -> None:
        if self.mode == "alg1":
            if hop is None or hop == 0:
                return  # the notifications double as the sender's receipt
            info = self.directory.between(act.path[hop - 1], act.path[hop])
            back = Activation(kind, act.origin, act.pay_id, amount, path=act.path)
            if msg_no is None and kind == SUCCESS and hop == len(act.path) - 2:
                msg_no = 2 * (len(act.path) - 1) + 1
        else:
            if act.origin in self.channel.parties:
                return
            info = self.directory.channels.get(act.origin)
            if info is None:
                return
            back = Activation(kind, act.origin, act.pay_id, amount)
        ann = {"category": "transfer", "kind": kind,
               "payment": payment_label(back.origin, back.pay_id)}
        if msg_no is not None:
            ann["msg"] = msg_no
        self._send_committee(sim, info, back, ann)

    def _send_committee(self, sim: Scheduler, info: ChannelInfo, act: Activation,
                        ann: dict) -> None:
        sig = self.keystore.keypair(self.id).sign(activation_digest(act))
        env = PaymentEnvelope(act, self.channel.channel_id, sig)
        for member in info.roster:
            sim.send(self.id, member, env, dict(ann))

    def _note_exec(self, sim: Scheduler, act: Activation, slot: int, action: str,
                   result: str, detail: str | None = None) -> None:
        ann = {"committee": self.channel.channel_id, "action": action,
               "payment": payment_label(act.origin, act.pay_id),
               "result": result, "seq": slot}
        if detail is not None:
            ann["detail"] = detail
        sim.note("executed", self.id, annotation=ann)


# ---------------------------------------------------------------------------
# channel party
# ---------------------------------------------------------------------------

@dataclass
class PartyAccount:
    """A party's own view of one channel: total and uncommitted balance."""

    balance: int
    avail: int


class PsyncParty(Actor):
    """End user of committee-run channels.

    pay() optimistically locks the outgoing amount and fires a single signed
    request at the first committee; every later state change is accepted only
    once f+1 members of the relevant committee report it.
    """

    def __init__(self, actor_id: str, directory: Directory, keystore: Keystore,
                 chain_id: str = "chain", mode: str = "alg1",
                 behavior: dict | None = None) -> None:
        super().__init__(actor_id)
        self.directory = directory
        self.keystore = keystore
        self.chain_id = chain_id
        self.mode = mode
        self.behavior = behavior or {"kind": "honest"}
        self.accounts: dict[str, PartyAccount] = {}
        self.next_pay_id = 0
        self.results: dict[int, str] = {}
        self.credited: list[tuple[str, int]] = []
        self._locked_out: set[tuple[str, str]] = set()
        self._thresh: dict[tuple[str, str], dict[str, BalanceNotify]] = {}
        self._applied: set[tuple[str, str]] = set()
        self._close_sigs: dict[str, dict[str, dict[str, Signature]]] = {}
        self._close_submitted: set[str] = set()

    def init_channel(self, channel_id: str, amount: int) -> None:
        self.accounts[channel_id] = PartyAccount(amount, amount)

    # -- actions ---------------------------------------------------------------

    def pay(self, path, amount: int, sim: Scheduler) -> int:
        path = tuple(path)
        if len(path) < 2 or path[0] != self.id:
            raise ValueError("path must start at this party")
        if amount <= 0:
            raise ValueError("amount must be positive")
        infos = self.directory.path_channels(path)
        locked = amount
        if self.mode != "alg1":
            locked += sum(info.fee for info in infos[1:])
        acct = self.accounts.get(infos[0].channel_id)
        if acct is None:
            raise ValueError("no account on the first channel")
        if acct.avail < locked and not self.behavior.get("overspend"):
            raise ValueError("insufficient available balance")
        acct.avail -= locked
        pay_id = self.next_pay_id
        self.next_pay_id += 1
        self._locked_out.add((infos[0].channel_id, payment_label(self.id, pay_id)))
        if self.mode == "alg1":
            act = Activation(PAY, self.id, pay_id, locked, path=path)
        else:
            act = Activation(PAY, self.id, pay_id, locked,
                             packet=self._seal_route(path, amount, infos))
        sig = self.keystore.keypair(self.id).sign(activation_digest(act))
        env = PaymentEnvelope(act, self.id, sig)
        label = payment_label(self.id, pay_id)
        for member in infos[0].roster:
            sim.send(self.id, member, env,
                     {"category": "request", "msg": 1, "payment": label})
        sim.note("payment", self.id, annotation={
            "event": "start", "payment": label, "amount": amount, "hops": len(infos)})
        return pay_id

    def _seal_route(self, path, amount: int, infos) -> OnionPacket:
        payloads = []
        for i, info in enumerate(infos):
            nxt = path[i + 2] if i + 2 < len(path) else None
            hop_amount = amount + sum(c.fee for c in infos[i + 1:])
            payloads.append(HopPayload(nxt, hop_amount, None, None, None, 0))
        return build_onion(payloads, [committee_key(c.channel_id) for c in infos])

    def close_channel(self, channel_id: str, sim: Scheduler) -> None:
        info = self.directory.channels[channel_id]
        if self.id not in info.parties:
            raise ValueError("not a party of this channel")
        sig = self.keystore.keypair(self.id).sign(
            close_request_digest(channel_id, self.id))
        req = CloseRequest(channel_id, self.id, sig)
        for member in info.roster:
            sim.send(self.id, member, req, {"category": "request", "kind": CLOSE})

    # -- inbound ------------------------------------------------------------------

    def on_message(self, msg: Any, src: str, sim: Scheduler) -> None:
        if self.behavior.get("kind") == "silent":
            return
        if isinstance(msg, BalanceNotify):
            self._on_notify(msg, src, sim)
        elif isinstance(msg, FinalStateSig):
            self._on_final_sig(msg, src, sim)

    def _on_notify(self, nt: BalanceNotify, src: str, sim: Scheduler) -> None:
        info = self.directory.channels.get(nt.channel_id)
        if info is None or src not in info.roster or self.id not in info.parties:
            return
        digest = notify_digest(nt)
        if not (nt.sig is not None and nt.sig.signer == src
                and nt.sig.digest == digest and self.keystore.verify(nt.sig)):
            return
        key = (nt.channel_id, digest)
        if key in self._applied:
            return
        got = self._thresh.setdefault(key, {})
        got[src] = nt
        if len(got) < info.f + 1:
            return
        self._applied.add(key)
        self._apply_notify(nt, sim)

    def _apply_notify(self, nt: BalanceNotify, sim: Scheduler) -> None:
        acct = self.accounts.get(nt.channel_id)
        mine = nt.origin == self.id
        label = payment_label(nt.origin, nt.pay_id)
        gate = (nt.channel_id, label)  # outgoing funds move only after a seen lock
        if nt.kind == PAY:
            if nt.payer == self.id and acct is not None and gate not in self._locked_out:
                acct.avail -= nt.amount
                self._locked_out.add(gate)
            sim.note("payment", self.id, annotation={
                "event": "locked", "payment": label, "channel": nt.channel_id})
        elif nt.kind == SUCCESS:
            if nt.payer == self.id and acct is not None:
                acct.balance -= nt.amount
                if gate in self._locked_out:
                    self._locked_out.discard(gate)
                else:
                    acct.avail -= nt.amount  # settled in one step, no prior lock report

            if nt.payee == self.id and acct is not None:
                acct.balance += nt.amount
                acct.avail += nt.amount
                self.credited.append((label, nt.amount))
                sim.note("payment", self.id, annotation={
                    "event": "credited", "payment": label, "amount": nt.amount})
            if mine:
                self.results[nt.pay_id] = "success"
                sim.note("payment", self.id, annotation={
                    "event": "complete", "payment": label})
        elif nt.kind == REJECT:
            if nt.payer == self.id and acct is not None and gate in self._locked_out:
                acct.avail += nt.amount
                self._locked_out.discard(gate)
            if mine:
                self.results[nt.pay_id] = "rejected"
                sim.note("payment", self.id, annotation={
                    "event": "failed", "payment": label})

    def _on_final_sig(self, fss: FinalStateSig, src: str, sim: Scheduler) -> None:
        info = self.directory.channels.get(fss.channel_id)
        if info is None or src not in info.roster or src != fss.member:
            return
        if fss.channel_id in self._close_submitted:
            return
        if fss.digest != closure_digest(fss.channel_id, fss.balances):
            return
        if not (fss.sig.signer == src and fss.sig.digest == fss.digest
                and self.keystore.verify(fss.sig)):
            return
        per_digest = self._close_sigs.setdefault(fss.channel_id, {})
        got = per_digest.setdefault(fss.digest, {})
        got[src] = fss.sig
        if len(got) < 2 * info.f + 1:
            return
        cert = assemble_certificate(fss.channel_id, 0, fss.digest,
                                    list(got.values()), info.f, info.roster,
                                    self.keystore)
        self._close_submitted.add(fss.channel_id)
        sub = ClosureSubmission(fss.channel_id, self.id, fss.balances, cert)
        sim.send(self.id, self.chain_id, sub, {"category": "ledger"})
        sim.note("payment", self.id, annotation={
            "event": "close-submitted", "channel": fss.channel_id})
