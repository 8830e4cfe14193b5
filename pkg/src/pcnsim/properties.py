"""Trace-checkable security properties for finished runs.

Four checks, one per definition: balance security (an honest intermediary's
adjacent channels settle identically and a paying sender implies a paid
receiver), correctness (all-honest runs with sufficient balance pay in full),
coin availability (no honest party's coins stay locked at quiescence), and
atomicity (balance security plus: no revoked channel sits between two paid
ones on an honest sender's path).

The checkers are pure functions over a WorldView, a protocol-neutral summary
of one run. Extractors build WorldViews from the two protocol stacks: channel
update notes plus committee closure state for the synchronous protocol,
committee execution notes for the committee-governed one. Every counterexample
carries an index into the run's trace so a verdict can be audited against
trace.ndjson.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

UNLOCKED = "unlocked"
LOCKED = "locked"
PAID = "paid"
REVOKED = "revoked"

CHECK_LABELS = {
    "def1": "balance-security",
    "def2": "correctness",
    "def3": "coin-availability",
    "def4": "atomicity",
}


@dataclass(frozen=True)
class PaymentSpec:
    """One multi-hop payment as configured: parties p0..pk, channels c0..c(k-1)."""

    payment: str
    parties: tuple[str, ...]
    channels: tuple[str, ...]
    expect_success: bool | None = None  # None: correctness asserts nothing

    def __post_init__(self):
        if len(self.parties) != len(self.channels) + 1 or not self.channels:
            raise ValueError("path must have one more party than channels")


@dataclass(frozen=True)
class PaymentOutcome:
    spec: PaymentSpec
    statuses: tuple[str, ...]            # per channel, final
    pointers: tuple[int | None, ...]     # trace index of the decisive record

    def __post_init__(self):
        if len(self.statuses) != len(self.spec.channels):
            raise ValueError("one status per channel")
        if len(self.pointers) != len(self.spec.channels):
            raise ValueError("one pointer per channel")


@dataclass(frozen=True)
class ResidualLock:
    subject: str          # actor still holding the lock
    channel: str
    detail: str
    trace_index: int | None


@dataclass(frozen=True)
class WorldView:
    protocol: str
    outcomes: tuple[PaymentOutcome, ...]
    residual_locks: tuple[ResidualLock, ...] = ()
    byzantine: frozenset[str] = frozenset()
    quiesced: bool = True


@dataclass(frozen=True)
class Counterexample:
    payment: str | None
    subject: str
    reason: str
    trace_index: int | None

    def to_dict(self) -> dict:
        return {"payment": self.payment, "subject": self.subject,
                "reason": self.reason, "trace_index": self.trace_index}


@dataclass(frozen=True)
class Verdict:
    check: str
    passed: bool
    checked: int
    counterexamples: tuple[Counterexample, ...] = ()
    detail: str = ""

    @property
    def label(self) -> str:
        return CHECK_LABELS[self.check]

    def to_dict(self) -> dict:
        return {"check": self.check, "label": self.label, "passed": self.passed,
                "checked": self.checked, "detail": self.detail,
                "counterexamples": [c.to_dict() for c in self.counterexamples]}


def _verdict(check, checked, ces, detail="") -> Verdict:
    return Verdict(check, not ces, checked, tuple(ces), detail)


# ---------------------------------------------------------------------------
# the four checks
# ---------------------------------------------------------------------------

def check_balance_security(world: WorldView) -> Verdict:
    """Def. 1: honest intermediaries settle both adjacent channels the same
    way, and an honest sender's paid first hop implies a paid last hop."""
    checked = 0
    ces = []
    for oc in world.outcomes:
        spec, st = oc.spec, oc.statuses
        for i in range(1, len(spec.parties) - 1):
            if spec.parties[i] in world.byzantine:
                continue
            checked += 1
            fed, paid_out = st[i - 1] == PAID, st[i] == PAID
            if paid_out and not fed:
                ces.append(Counterexample(
                    spec.payment, spec.parties[i],
                    f"paid {spec.channels[i]} without being paid on {spec.channels[i - 1]}",
                    oc.pointers[i]))
            elif fed and not paid_out:
                ces.append(Counterexample(
                    spec.payment, spec.parties[i],
                    f"was paid on {spec.channels[i - 1]} without paying {spec.channels[i]}",
                    oc.pointers[i - 1]))
        if spec.parties[0] not in world.byzantine:
            checked += 1
            if st[0] == PAID and st[-1] != PAID:
                ces.append(Counterexample(
                    spec.payment, spec.parties[0],
                    f"sender paid on {spec.channels[0]} but receiver unpaid on {spec.channels[-1]}",
                    oc.pointers[0]))
    return _verdict("def1", checked, ces)


def check_correctness(world: WorldView) -> Verdict:
    """Def. 2: with every party honest, payments with sufficient balance end
    fully paid and the rest end with no channel paid. Vacuous under faults."""
    if world.byzantine:
        return _verdict("def2", 0, [], "vacuous: fault plan present")
    checked = 0
    ces = []
    for oc in world.outcomes:
        spec, st = oc.spec, oc.statuses
        if spec.expect_success is None:
            continue
        checked += 1
        if spec.expect_success:
            for i, s in enumerate(st):
                if s != PAID:
                    ces.append(Counterexample(
                        spec.payment, spec.channels[i],
                        f"expected paid, ended {s}", oc.pointers[i]))
        else:
            for i, s in enumerate(st):
                if s == PAID:
                    ces.append(Counterexample(
                        spec.payment, spec.channels[i],
                        "paid despite insufficient balance", oc.pointers[i]))
    return _verdict("def2", checked, ces)


def check_availability(world: WorldView) -> Verdict:
    """Def. 3: at quiescence no honest party's channel is still locked."""
    ces = [Counterexample(None, r.subject,
                          f"still locked on {r.channel}: {r.detail}", r.trace_index)
           for r in world.residual_locks]
    if not world.quiesced:
        ces.append(Counterexample(
            None, "scheduler",
            "run stopped on its event or time budget before draining", None))
    # every payment's every channel is an obligation that had to resolve
    checked = sum(len(oc.statuses) for oc in world.outcomes) + (0 if world.quiesced else 1)
    return _verdict("def3", checked, ces)


def check_atomicity(world: WorldView) -> Verdict:
    """Def. 4: balance security, plus no honest sender's path may hold two
    paid channels separated by an unpaid one whose payee is honest (the
    wormhole shape).

    The honest-payee gate matters: adjacent colluders can always skip their
    own mutual channel and settle internally, which harms nobody and is not
    a wormhole.
    """
    base = check_balance_security(world)
    checked = base.checked
    ces = list(base.counterexamples)
    for oc in world.outcomes:
        spec, st = oc.spec, oc.statuses
        if spec.parties[0] in world.byzantine:
            continue
        checked += 1
        paid = [i for i, s in enumerate(st) if s == PAID]
        for i, s in enumerate(st):
            if s == PAID or spec.parties[i + 1] in world.byzantine:
                continue
            if any(a < i for a in paid) and any(b > i for b in paid):
                ces.append(Counterexample(
                    spec.payment, spec.channels[i],
                    f"{spec.channels[i]} ended {s} between paid channels",
                    oc.pointers[i]))
                break
    return _verdict("def4", checked, ces)


CHECKS = {
    "def1": check_balance_security,
    "def2": check_correctness,
    "def3": check_availability,
    "def4": check_atomicity,
}


def run_all_checks(world: WorldView) -> tuple[Verdict, ...]:
    """All four verdicts, always, in definition order."""
    return tuple(CHECKS[name](world) for name in ("def1", "def2", "def3", "def4"))


def verdicts_to_json(verdicts) -> str:
    return json.dumps({v.check: v.to_dict() for v in verdicts}, indent=2,
                      sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# world extraction: synchronous protocol
# ---------------------------------------------------------------------------

def _note_records(sim):
    return list(enumerate(sim.trace.records))


def syncpcn_world(sim, specs, parties, members, ledger,
                  byzantine=frozenset()) -> WorldView:
    """Summarize a finished synchronous-protocol run.

    Channel statuses come from quorum-confirmed update notes emitted by honest
    parties; an on-ledger closure overrides them with the committee's majority
    resolution of whatever was still pending when the channel froze.
    """
    byzantine = frozenset(byzantine)
    honest = lambda a: a not in byzantine

    # (payment, channel) -> (status, trace index), later evidence wins
    status: dict[tuple[str, str], tuple[str, int | None]] = {}
    purpose_map = {"lock": LOCKED, "settle": PAID, "revoke": REVOKED}
    for idx, rec in _note_records(sim):
        if rec.kind != "channel" or not honest(rec.src):
            continue
        ann = rec.annotation or {}
        if ann.get("event") != "update" or ann.get("purpose") not in purpose_map:
            continue
        key = (ann["payment"], ann["channel"])
        new = purpose_map[ann["purpose"]]
        cur = status.get(key)
        if cur is None or cur[0] == LOCKED or new != LOCKED:
            status[key] = (new, idx)

    # ledger close pointers, for closure-resolved payments
    close_idx: dict[str, int] = {}
    for idx, rec in _note_records(sim):
        ann = rec.annotation or {}
        if rec.kind == "ledger" and ann.get("op") == "close" and ann.get("included"):
            close_idx.setdefault(ann["channel"], idx)

    # majority committee resolution per frozen channel
    for channel_id in {c for spec in specs for c in spec.channels}:
        votes: dict[str, Counter] = {}
        for m in members:
            if not honest(m.id):
                continue
            ch = m.channels.get(channel_id)
            if ch is None or ch.closure is None:
                continue
            for cp_id, res in ch.closure.resolutions.items():
                votes.setdefault(cp_id, Counter())[res] += 1
        for cp_id, counter in votes.items():
            res = counter.most_common(1)[0][0]
            pid = cp_id.rsplit(":", 1)[0]
            status[(pid, channel_id)] = (PAID if res == "paid" else REVOKED,
                                         close_idx.get(channel_id))

    outcomes = []
    for spec in specs:
        sts, ptrs = [], []
        for ch in spec.channels:
            st, idx = status.get((spec.payment, ch), (UNLOCKED, None))
            sts.append(st)
            ptrs.append(idx)
        outcomes.append(PaymentOutcome(spec, tuple(sts), tuple(ptrs)))

    residual = []
    for pid_key, (st, idx) in sorted(status.items()):
        if st != LOCKED:
            continue
        pid, channel_id = pid_key
        rec = ledger.channels.get(channel_id)
        if rec is not None and rec.status == "closed":
            continue  # resolved on-ledger; off-chain snapshots are moot
        owner = next((p.id for p in parties.values()
                      if honest(p.id) and channel_id in p.views), None)
        if owner is not None:
            residual.append(ResidualLock(owner, channel_id,
                                         f"payment {pid} never resolved", idx))

    return WorldView("syncpcn", tuple(outcomes), tuple(residual), byzantine,
                     quiesced=not (sim.budget_exceeded or sim.time_limit_hit))


# ---------------------------------------------------------------------------
# world extraction: committee-governed protocol
# ---------------------------------------------------------------------------

def _psync_exec_notes(sim, byzantine):
    """Honest members' execution notes: (index, committee, action, payment,
    result, detail, seq), one representative per (committee, payment, action,
    result) since honest members execute identically."""
    seen = set()
    out = []
    for idx, rec in enumerate(sim.trace.records):
        if rec.kind != "executed" or rec.src in byzantine:
            continue
        ann = rec.annotation or {}
        key = (ann["committee"], ann["payment"], ann["action"], ann["result"])
        if key in seen:
            continue
        seen.add(key)
        out.append((idx, ann["committee"], ann["action"], ann["payment"],
                    ann["result"], ann.get("detail"), ann["seq"]))
    return out


def _full_mode_labels(spec, notes):
    """Per-channel payment labels when committees relabel as they forward.

    A committee's n-th forwarded lock gets downstream label "<cid>#<n-1>";
    locks forward in execution order, so the rank of this payment's lock
    among the committee's locks recovers the label it travels under next.
    """
    labels = [spec.payment]
    for pos, cid in enumerate(spec.channels[:-1]):
        locked = sorted((seq, pay) for (_i, com, act, pay, res, det, seq) in notes
                        if com == cid and act == "PAY" and res == "applied"
                        and det == "locked")
        rank = next((r for r, (_s, pay) in enumerate(locked)
                     if pay == labels[pos]), None)
        if rank is None:
            labels.append(None)  # never locked here; downstream saw nothing
        else:
            labels.append(f"{cid}#{rank}")
    return labels


def psyncpcn_world(sim, specs, parties, members, byzantine=frozenset(),
                   mode="alg1") -> WorldView:
    """Summarize a finished committee-governed run from execution notes."""
    byzantine = frozenset(byzantine)
    notes = _psync_exec_notes(sim, byzantine)

    outcomes = []
    for spec in specs:
        if mode == "full":
            labels = _full_mode_labels(spec, notes)
        else:
            labels = [spec.payment] * len(spec.channels)
        sts, ptrs = [], []
        for cid, label in zip(spec.channels, labels):
            st, ptr = UNLOCKED, None
            if label is not None:
                for idx, com, act, pay, res, det, _seq in notes:
                    if com != cid or pay != label or res != "applied":
                        continue
                    if act == "PAY":
                        nxt = PAID if det == "settled" else LOCKED
                    elif act == "SUCCESS":
                        nxt = PAID
                    elif act == "REJECT":
                        nxt = REVOKED
                    else:
                        continue
                    if st == LOCKED or st == UNLOCKED:
                        st, ptr = nxt, idx
            sts.append(st)
            ptrs.append(ptr)
        outcomes.append(PaymentOutcome(spec, tuple(sts), tuple(ptrs)))

    residual = []
    lock_idx = {}
    for idx, com, act, pay, res, det, _seq in notes:
        if act == "PAY" and res == "applied" and det == "locked":
            lock_idx[(com, pay)] = idx
    for m in members:
        if m.id in byzantine:
            continue
        for key, lock in sorted(m.pending.items()):
            cid = m.channel.channel_id
            residual.append(ResidualLock(
                m.id, cid, f"pending lock {key[0]}#{key[1]} for {lock.amount}",
                lock_idx.get((cid, f"{key[0]}#{key[1]}"))))
    for p in parties.values():
        if p.id in byzantine:
            continue
        for cid, acct in sorted(p.accounts.items()):
            if acct.avail != acct.balance:
                residual.append(ResidualLock(
                    p.id, cid,
                    f"available {acct.avail} differs from balance {acct.balance}",
                    None))

    protocol = "psyncpcn-full" if mode == "full" else "psyncpcn"
    return WorldView(protocol, tuple(outcomes), tuple(residual), byzantine,
                     quiesced=not (sim.budget_exceeded or sim.time_limit_hit))
