"""Committee communication primitives.

Two layers live here. The echo-certificate broadcast gives a single sender a
consistent one-shot broadcast: receivers echo a signature over the value
digest, the sender turns 2f+1 echoes into a certificate, and receivers
deliver only certified values, so no two honest receivers can deliver
different values for the same broadcast id.

The ordering engine gives each committee a total order over submitted
values. One physical protocol runs regardless of configuration: the slot
leader proposes, everyone exchanges prepare votes, a 2f+1 prepare quorum
triggers signed commit votes, and a 2f+1 commit quorum decides. Nodes that
decide gossip a decide certificate so stragglers catch up, and a 4-delta
view timer rotates the leader round-robin when a slot stalls.

Cost models deliberately change nothing about that message pattern. A model
contributes per-phase pacing charges (senders hold messages so each phase
takes the charged time even though the wire stays within one delta) and the
annotation constants used by the accounting layer: the per-instance message
cost and latency attributed to the modeled protocol.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .crypto import Keystore, QuorumCertificate, Signature, assemble_certificate, \
    payload_digest, verify_certificate
from .simnet import Actor, Scheduler, message_digest


# ---------------------------------------------------------------------------
# cost models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostModel:
    """Accounting profile for one ordering instance."""

    name: str
    phase_charges: tuple[int, int, int]  # per phase, in delta units

    def c_msg(self, n: int) -> int:
        if n <= 1:
            return 0
        if self.name == "pbft-like":
            # propose n, prepare n*n, commit n*n, self-delivery included
            return 2 * n * n + n
        # linear vote collection and aggregate distribution
        return 8 * n

    def c_lat(self, n: int, delta: int) -> int:
        if n <= 1:
            return 0
        return sum(self.phase_charges) * delta


COST_MODELS = {
    "pbft-like": CostModel("pbft-like", (1, 1, 1)),
    "hotstuff-like": CostModel("hotstuff-like", (2, 3, 3)),
}


# ---------------------------------------------------------------------------
# echo-certificate broadcast
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CbSend:
    bid: str
    value: Any


@dataclass(frozen=True)
class CbEcho:
    bid: str
    digest: str
    voter: str
    sig: Signature


@dataclass(frozen=True)
class CbCert:
    bid: str
    value: Any
    cert: QuorumCertificate


def echo_digest(bid: str, value: Any) -> str:
    return payload_digest("cb-echo", bid, message_digest(value))


class CbReceiver(Actor):
    def __init__(self, actor_id: str, sender: str, roster: tuple[str, ...], f: int,
                 keystore: Keystore) -> None:
        super().__init__(actor_id)
        self.sender = sender
        self.roster = roster
        self.f = f
        self.keystore = keystore
        self.echoed: set[str] = set()
        self.delivered: dict[str, Any] = {}

    def on_message(self, msg: Any, src: str, sim: Scheduler) -> None:
        if isinstance(msg, CbSend) and src == self.sender:
            if msg.bid in self.echoed:
                return  # echo binds this node to one digest per broadcast id
            self.echoed.add(msg.bid)
            d = echo_digest(msg.bid, msg.value)
            echo = CbEcho(msg.bid, d, self.id, self.keystore.keypair(self.id).sign(d))
            sim.send(self.id, self.sender, echo, {"category": "cb", "phase": "echo"})
        elif isinstance(msg, CbCert):
            if msg.bid in self.delivered:
                return
            if msg.cert.digest != echo_digest(msg.bid, msg.value):
                return
            if not verify_certificate(msg.cert, self.f, self.roster, self.keystore):
                return
            self.delivered[msg.bid] = msg.value
            sim.note("cb-deliver", self.id, annotation={"bid": msg.bid})


class CbSender(Actor):
    def __init__(self, actor_id: str, roster: tuple[str, ...], f: int,
                 keystore: Keystore) -> None:
        super().__init__(actor_id)
        self.roster = roster
        self.f = f
        self.keystore = keystore
        self.values: dict[str, Any] = {}
        self.echoes: dict[str, dict[str, Signature]] = {}
        self.certified: set[str] = set()

    def broadcast(self, bid: str, value: Any, sim: Scheduler) -> None:
        self.values[bid] = value
        for r in self.roster:
            sim.send(self.id, r, CbSend(bid, value), {"category": "cb", "phase": "send"})

    def on_message(self, msg: Any, src: str, sim: Scheduler) -> None:
        if not isinstance(msg, CbEcho) or src != msg.voter or src not in self.roster:
            return
        value = self.values.get(msg.bid)
        if value is None or msg.digest != echo_digest(msg.bid, value):
            return
        if not (self.keystore.verify(msg.sig) and msg.sig.digest == msg.digest):
            return
        got = self.echoes.setdefault(msg.bid, {})
        got[src] = msg.sig
        if len(got) >= 2 * self.f + 1 and msg.bid not in self.certified:
            self.certified.add(msg.bid)
            cert = assemble_certificate(msg.bid, 0, msg.digest, list(got.values()),
                                        self.f, self.roster, self.keystore)
            for r in self.roster:
                sim.send(self.id, r, CbCert(msg.bid, value, cert),
                         {"category": "cb", "phase": "cert"})


# ---------------------------------------------------------------------------
# ordering engine
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrdPropose:
    cid: str
    slot: int
    view: int
    value: Any
    digest: str
    sig: Signature


@dataclass(frozen=True)
class OrdPrepare:
    cid: str
    slot: int
    view: int
    digest: str
    voter: str


@dataclass(frozen=True)
class OrdCommit:
    cid: str
    slot: int
    digest: str
    voter: str
    sig: Signature


@dataclass(frozen=True)
class OrdDecide:
    cid: str
    slot: int
    value: Any
    digest: str
    sigs: tuple[Signature, ...]


def propose_digest(cid: str, slot: int, view: int, value_digest: str) -> str:
    return payload_digest("ord-prop", cid, slot, view, value_digest)


def commit_digest(cid: str, slot: int, value_digest: str) -> str:
    return payload_digest("ord-commit", cid, slot, value_digest)


@dataclass
class _SlotState:
    view: int = 0
    timer_view: int = -1
    proposal: Any = None
    proposal_digest: str | None = None
    prepared_views: set[int] = field(default_factory=set)
    committed: bool = False
    prepares: dict[str, set[str]] = field(default_factory=dict)
    commits: dict[str, dict[str, Signature]] = field(default_factory=dict)
    gossiped: bool = False
    proposed_views: set[int] = field(default_factory=set)


class OrderingNode:
    """Per-member consensus handle; the owning actor routes messages here."""

    def __init__(self, owner: Actor, cid: str, roster: tuple[str, ...], f: int,
                 model: CostModel, delta: int, keystore: Keystore) -> None:
        self.owner = owner
        self.cid = cid
        self.roster = roster
        self.f = f
        self.model = model
        self.delta = delta
        self.keystore = keystore
        self.n = len(roster)
        self.pending: list[Any] = []
        self.log: list[Any] = []  # decided values, in slot order
        self.slots: dict[int, _SlotState] = {}

    # -- helpers ---------------------------------------------------------------

    @property
    def quorum(self) -> int:
        return 2 * self.f + 1

    def leader_of(self, slot: int, view: int) -> str:
        return self.roster[(slot + view) % self.n]

    def _slot(self, slot: int) -> _SlotState:
        return self.slots.setdefault(slot, _SlotState())

    def _annotation(self) -> dict:
        return {"category": "ordering", "cid": self.cid}

    def _paced_send(self, sim: Scheduler, targets: list[tuple[str, Any]], phase: int) -> None:
        hold = (self.model.phase_charges[phase] - 1) * self.delta
        if hold <= 0:
            for dst, msg in targets:
                sim.send(self.owner.id, dst, msg, self._annotation())
        else:
            sim.timer(self.owner.id, sim.now + hold, "ord-flush", (self.cid, targets))

    def flush(self, targets: list[tuple[str, Any]], sim: Scheduler) -> None:
        for dst, msg in targets:
            sim.send(self.owner.id, dst, msg, self._annotation())

    def _ensure_timer(self, slot: int, sim: Scheduler) -> None:
        st = self._slot(slot)
        if st.timer_view < st.view:
            st.timer_view = st.view
            sim.timer(self.owner.id, sim.now + 4 * self.delta, "ord-view",
                      (self.cid, slot, st.view))

    # -- submission --------------------------------------------------------------

    def submit(self, value: Any, sim: Scheduler) -> None:
        if self.n == 1:
            # degenerate committee: no protocol at all
            self.log.append(value)
            self._note_decide(len(self.log) - 1, sim)
            self.owner.on_ordered(self.cid, len(self.log) - 1, value, sim)
            return
        self.pending.append(value)
        slot = len(self.log)
        self._ensure_timer(slot, sim)
        self._try_propose(sim)

    def _try_propose(self, sim: Scheduler) -> None:
        slot = len(self.log)
        st = self._slot(slot)
        if self.leader_of(slot, st.view) != self.owner.id or st.view in st.proposed_views:
            return
        if getattr(self.owner, "stall_proposals", False):
            return  # byzantine: sit on the slot and let the view timer fire
        value = st.proposal if st.proposal is not None else (self.pending[0] if self.pending else None)
        if value is None:
            return
        st.proposed_views.add(st.view)
        rewrite = getattr(self.owner, "rewrite_proposal", None)
        targets = []
        for r in self.roster:
            v = value if rewrite is None else rewrite(self.cid, slot, st.view, r, value)
            vd = message_digest(v)
            sig = self.keystore.keypair(self.owner.id).sign(
                propose_digest(self.cid, slot, st.view, vd))
            targets.append((r, OrdPropose(self.cid, slot, st.view, v, vd, sig)))
        self._paced_send(sim, targets, 0)

    # -- message handling ----------------------------------------------------------

    def on_message(self, msg: Any, src: str, sim: Scheduler) -> None:
        if isinstance(msg, OrdPropose):
            self._on_propose(msg, src, sim)
        elif isinstance(msg, OrdPrepare):
            self._on_prepare(msg, src, sim)
        elif isinstance(msg, OrdCommit):
            self._on_commit(msg, src, sim)
        elif isinstance(msg, OrdDecide):
            self._on_decide(msg, src, sim)

    def on_timer(self, tag: str, data: Any, sim: Scheduler) -> None:
        if tag == "ord-flush":
            _cid, targets = data
            self.flush(targets, sim)
        elif tag == "ord-view":
            _cid, slot, view = data
            if slot < len(self.log):
                return  # decided; lazily disarmed
            st = self._slot(slot)
            if st.view != view:
                return  # stale timer from an earlier view
            st.view += 1
            self._ensure_timer(slot, sim)
            self._try_propose(sim)

    def _on_propose(self, msg: OrdPropose, src: str, sim: Scheduler) -> None:
        if msg.slot < len(self.log):
            return
        st = self._slot(msg.slot)
        if msg.view < st.view or src != self.leader_of(msg.slot, msg.view):
            return
        if message_digest(msg.value) != msg.digest:
            return
        if not (msg.sig.signer == src and self.keystore.verify(msg.sig)
                and msg.sig.digest == propose_digest(self.cid, msg.slot, msg.view, msg.digest)):
            return
        if msg.view > st.view:
            st.view = msg.view
        self._ensure_timer(msg.slot, sim)
        if st.view in st.prepared_views:
            return  # one prepare per view; an equivocating leader splits votes
        validate = getattr(self.owner, "validate_ordering_value", None)
        if validate is not None and not validate(self.cid, msg.value):
            return  # externally invalid; leave the view open for a timeout
        st.prepared_views.add(st.view)
        if st.proposal is None:
            st.proposal = msg.value
            st.proposal_digest = msg.digest
        prep = OrdPrepare(self.cid, msg.slot, st.view, msg.digest, self.owner.id)
        self._paced_send(sim, [(r, prep) for r in self.roster], 1)

    def _on_prepare(self, msg: OrdPrepare, src: str, sim: Scheduler) -> None:
        if msg.slot < len(self.log) or src != msg.voter or src not in self.roster:
            return
        st = self._slot(msg.slot)
        self._ensure_timer(msg.slot, sim)
        voters = st.prepares.setdefault(msg.digest, set())
        voters.add(src)
        if len(voters) >= self.quorum and not st.committed:
            st.committed = True
            sig = self.keystore.keypair(self.owner.id).sign(
                commit_digest(self.cid, msg.slot, msg.digest))
            cm = OrdCommit(self.cid, msg.slot, msg.digest, self.owner.id, sig)
            self._paced_send(sim, [(r, cm) for r in self.roster], 2)

    def _on_commit(self, msg: OrdCommit, src: str, sim: Scheduler) -> None:
        if msg.slot < len(self.log) or src != msg.voter or src not in self.roster:
            return
        if not (msg.sig.signer == src and self.keystore.verify(msg.sig)
                and msg.sig.digest == commit_digest(self.cid, msg.slot, msg.digest)):
            return
        st = self._slot(msg.slot)
        st.commits.setdefault(msg.digest, {})[src] = msg.sig
        self._check_decide(msg.slot, sim)

    def _on_decide(self, msg: OrdDecide, src: str, sim: Scheduler) -> None:
        if msg.slot < len(self.log):
            return
        if message_digest(msg.value) != msg.digest:
            return
        target = commit_digest(self.cid, msg.slot, msg.digest)
        good = {s.signer for s in msg.sigs
                if s.signer in self.roster and s.digest == target and self.keystore.verify(s)}
        if len(good) < self.quorum:
            return
        st = self._slot(msg.slot)
        st.proposal, st.proposal_digest = msg.value, msg.digest
        for s in msg.sigs:
            if s.signer in good:
                st.commits.setdefault(msg.digest, {})[s.signer] = s
        self._check_decide(msg.slot, sim)

    # -- deciding -------------------------------------------------------------------

    def _check_decide(self, slot: int, sim: Scheduler) -> None:
        while True:
            slot = len(self.log)
            st = self.slots.get(slot)
            if st is None:
                return
            ready = None
            for digest, sigs in st.commits.items():
                if len(sigs) >= self.quorum and st.proposal_digest == digest \
                        and st.proposal is not None:
                    ready = digest
                    break
            if ready is None:
                return
            value = st.proposal
            self.log.append(value)
            vd = message_digest(value)
            self.pending = [p for p in self.pending if message_digest(p) != vd]
            self._note_decide(slot, sim)
            if not st.gossiped:
                st.gossiped = True
                dec = OrdDecide(self.cid, slot, value, ready,
                                tuple(st.commits[ready].values()))
                for r in self.roster:
                    if r != self.owner.id:
                        sim.send(self.owner.id, r, dec, self._annotation())
            self.owner.on_ordered(self.cid, slot, value, sim)
            if self.pending:
                self._ensure_timer(len(self.log), sim)
                self._try_propose(sim)

    def _note_decide(self, slot: int, sim: Scheduler) -> None:
        sim.note("ordered", self.owner.id, annotation={
            "cid": self.cid, "slot": slot, "protocol": self.model.name,
            "n": self.n, "c_msg": self.model.c_msg(self.n),
            "c_lat": self.model.c_lat(self.n, self.delta),
        })
