import random

import pytest

from pcnsim.channel import CommitteeMember, ConditionalPayment
from pcnsim.crypto import (
    DEFAULT_GROUP,
    TOY_GROUP,
    Keystore,
    lock_apply,
    lock_combine,
    lock_verify,
    peel_onion,
    scalar_sub,
)
from pcnsim.ledger import Ledger, LedgerActor
from pcnsim.simnet import NetworkModel, Scheduler
from pcnsim.syncpcn import (
    PaymentOnion,
    RouteHop,
    SyncParty,
    check_forward,
    check_receive,
    hop_onion_key,
    setup_payment,
)


def make_route(k, margin, fee=1):
    hops = []
    for i in range(k):
        hops.append(RouteHop(f"c{i}", f"P{i}", f"P{i + 1}",
                             fee=0 if i == 0 else fee,
                             margin=margin[i] if isinstance(margin, list) else margin))
    return hops


def build_line(k, n=4, amount=100, fee=1, margin=None, seed="s", behaviors=None,
               delta=1, policy="constant", funding=200, funding_map=None,
               required_margin=None, expected="auto", group=TOY_GROUP):
    """Linear payment network: P0 .. Pk joined by channels c0 .. c(k-1)."""
    if margin is None:
        margin = (6 * k + 6) * delta
    f = (n - 1) // 3
    behaviors = behaviors or {}
    ks = Keystore(f"keys/{seed}")
    sim = Scheduler(NetworkModel(delta=delta, policy=policy), seed)
    ledger = Ledger(ks)
    sim.register(LedgerActor("chain", ledger, seed))
    committee = tuple(f"m{i}" for i in range(n))
    members = [sim.register(CommitteeMember(m, ks)) for m in committee]

    parties = {}
    for i in range(k + 1):
        name = f"P{i}"
        p = SyncParty(name, ks, "chain", group, behavior=behaviors.get(name),
                      receiver_margin=6 * delta)
        parties[name] = sim.register(p)

    route = make_route(k, margin, fee)
    for i, hop in enumerate(route):
        fund = (funding_map or {}).get(hop.channel_id, {hop.payer: funding,
                                                        hop.payee: funding})
        ledger.open_channel(hop.channel_id, (hop.payer, hop.payee), committee, f, fund)
        d0 = None
        for who, peer in ((hop.payer, hop.payee), (hop.payee, hop.payer)):
            view = parties[who].attach_channel(hop.channel_id, peer, committee,
                                               f, fund, delta)
            d0 = view.snapshot.digest(b"")
        for m in members:
            m.attach_channel(hop.channel_id, (hop.payer, hop.payee), f, d0)

    for i in range(1, k):
        parties[f"P{i}"].fees[f"c{i}"] = fee
    for i in range(1, k + 1):
        req = required_margin if required_margin is not None else route[i - 1].margin
        parties[f"P{i}"].margins[f"c{i - 1}"] = req

    plan = setup_payment("pay", route, amount, group,
                         random.Random(f"{seed}/pay"), start=0)
    if expected == "auto":
        parties[f"P{k}"].expected["pay"] = amount
    elif expected is not None:
        parties[f"P{k}"].expected["pay"] = expected

    return sim, ledger, parties, members, plan, route


def counted_sends(sim):
    return sim.trace.sends("party") + sim.trace.sends("member") + sim.trace.sends("notice")


def payment_notes(sim, event):
    return [r for r in sim.trace.of_kind("payment")
            if (r.annotation or {}).get("event") == event]


# ---------------------------------------------------------------------------
# plan derivation
# ---------------------------------------------------------------------------

def test_setup_amounts_and_expiries():
    route = make_route(3, margin=6)
    plan = setup_payment("pay", route, 100, TOY_GROUP, random.Random(1), start=0)
    assert plan.values == (102, 101, 100)
    assert plan.timelocks == (18, 12, 6)
    assert plan.first_cp.amount == 102 and plan.first_cp.timelock == 18
    assert plan.receiver == "P3"


def test_setup_condition_chain_and_witness():
    route = make_route(4, margin=8, fee=2)
    plan = setup_payment("pay", route, 50, DEFAULT_GROUP, random.Random(7), start=5)
    # each condition is the previous one advanced by that hop's secret
    for i in range(1, 4):
        stepped = lock_combine(plan.conditions[i - 1],
                               lock_apply(DEFAULT_GROUP, plan.secrets[i]))
        assert stepped == plan.conditions[i]
    assert lock_verify(plan.conditions[3], plan.receiver_witness)
    # walking the witness back one secret opens the previous hop
    y2 = scalar_sub(DEFAULT_GROUP, plan.receiver_witness, plan.secrets[3])
    assert lock_verify(plan.conditions[2], y2)
    assert plan.timelocks == (5 + 32, 5 + 24, 5 + 16, 5 + 8)


def test_setup_onion_peels_in_route_order():
    route = make_route(3, margin=6)
    plan = setup_payment("pay", route, 100, TOY_GROUP, random.Random(3), start=0)
    packet = plan.onion
    seen = []
    for party in ("P1", "P2", "P3"):
        payload, packet = peel_onion(packet, hop_onion_key("pay", party))
        seen.append((payload.next_party, payload.amount, payload.timelock))
    assert packet is None
    assert seen == [("P2", 101, 12), ("P3", 100, 6), (None, 100, 6)]


def test_setup_rejects_bad_routes():
    with pytest.raises(ValueError):
        setup_payment("pay", [], 5, TOY_GROUP, random.Random(1), 0)
    with pytest.raises(ValueError):
        setup_payment("pay", make_route(2, 6), 0, TOY_GROUP, random.Random(1), 0)
    broken = [RouteHop("c0", "P0", "P1"), RouteHop("c1", "PX", "P2")]
    with pytest.raises(ValueError):
        setup_payment("pay", broken, 5, TOY_GROUP, random.Random(1), 0)


# ---------------------------------------------------------------------------
# hop checks in isolation
# ---------------------------------------------------------------------------

def forward_fixture():
    plan = setup_payment("pay", make_route(3, margin=6), 100, TOY_GROUP,
                         random.Random(11), start=0)
    in_cp = plan.first_cp
    payload, _ = peel_onion(plan.onion, hop_onion_key("pay", "P1"))
    return plan, in_cp, payload


def test_check_forward_accepts_honest_hop():
    _, in_cp, payload = forward_fixture()
    assert check_forward(payload, in_cp, 150, 1, 6, TOY_GROUP) is None


def test_check_forward_rejections():
    plan, in_cp, payload = forward_fixture()
    assert check_forward(payload, in_cp, 100, 1, 6, TOY_GROUP) == "insufficient-balance"
    assert check_forward(payload, in_cp, 150, 2, 6, TOY_GROUP) == "fee-too-low"
    assert check_forward(payload, in_cp, 150, 1, 7, TOY_GROUP) == "margin-too-small"
    import dataclasses
    wrong_in = dataclasses.replace(payload, image_in=payload.image_in + 1)
    assert check_forward(wrong_in, in_cp, 150, 1, 6, TOY_GROUP) == "condition-mismatch"
    wrong_link = dataclasses.replace(payload, link_secret=payload.link_secret + 1)
    assert check_forward(wrong_link, in_cp, 150, 1, 6, TOY_GROUP) == "condition-mismatch"
    terminal = dataclasses.replace(payload, next_party=None)
    assert check_forward(terminal, in_cp, 150, 1, 6, TOY_GROUP) == "malformed"


def test_check_receive_rejections():
    plan = setup_payment("pay", make_route(1, margin=12), 100, TOY_GROUP,
                         random.Random(5), start=0)
    payload, rest = peel_onion(plan.onion, hop_onion_key("pay", "P1"))
    assert rest is None
    in_cp = plan.first_cp
    assert check_receive(payload, in_cp, 100, 6, now=5) is None
    assert check_receive(payload, in_cp, None, 6, now=5) == "unknown-payment"
    assert check_receive(payload, in_cp, 99, 6, now=5) == "amount-mismatch"
    assert check_receive(payload, in_cp, 100, 6, now=7) == "expiry-too-close"
    import dataclasses
    short = dataclasses.replace(in_cp, amount=99)
    assert check_receive(payload, short, 100, 6, now=5) == "amount-mismatch"
    shifted = dataclasses.replace(in_cp, timelock=13)
    assert check_receive(payload, shifted, 100, 6, now=5) == "timelock-mismatch"
    other = dataclasses.replace(in_cp, condition=lock_apply(TOY_GROUP, 9))
    assert check_receive(payload, other, 100, 6, now=5) == "condition-mismatch"


# ---------------------------------------------------------------------------
# happy path accounting
# ---------------------------------------------------------------------------

def test_single_hop_happy_path_counts():
    sim, ledger, parties, members, plan, route = build_line(k=1, n=4)
    parties["P0"].start_payment(plan, sim)
    sim.run()
    done = payment_notes(sim, "complete")
    assert len(done) == 1 and done[0].time == 10   # (8k + 2) delta
    assert len(counted_sends(sim)) == 37           # 8nk + 3k + 2
    assert len(sim.trace.sends("party")) == 3
    assert len(sim.trace.sends("member")) == 32
    assert len(sim.trace.sends("notice")) == 2
    assert len(sim.trace.sends("onion")) == 1      # excluded from the count
    snap = parties["P0"].views["c0"].snapshot
    assert snap.balance_of("P0") == 100 and snap.balance_of("P1") == 300
    assert snap.payments == ()


def test_two_hop_happy_path_counts_and_fees():
    sim, ledger, parties, members, plan, route = build_line(k=2, n=4)
    parties["P0"].start_payment(plan, sim)
    sim.run()
    done = payment_notes(sim, "complete")
    assert len(done) == 1 and done[0].time == 18
    assert len(counted_sends(sim)) == 72
    assert payment_notes(sim, "received")[0].src == "P2"
    c0 = parties["P0"].views["c0"].snapshot
    c1 = parties["P1"].views["c1"].snapshot
    assert c0.balance_of("P0") == 99 and c0.balance_of("P1") == 301
    assert c1.balance_of("P1") == 100 and c1.balance_of("P2") == 300
    # the forwarder nets exactly its fee
    assert (c0.balance_of("P1") - 200) + (c1.balance_of("P1") - 200) == 1


def test_three_hop_larger_committee_counts():
    sim, ledger, parties, members, plan, route = build_line(k=3, n=7, seed="w")
    parties["P0"].start_payment(plan, sim)
    sim.run()
    done = payment_notes(sim, "complete")
    assert len(done) == 1 and done[0].time == 26
    assert len(counted_sends(sim)) == 8 * 7 * 3 + 3 * 3 + 2
    assert parties["P3"].hops["pay"].status == "settled"


def test_happy_path_replay_is_deterministic():
    runs = []
    for _ in range(2):
        sim, ledger, parties, members, plan, route = build_line(
            k=2, n=4, seed="rep", policy="uniform")
        parties["P0"].start_payment(plan, sim)
        sim.run()
        runs.append(sim.trace.to_ndjson())
    assert runs[0] == runs[1]
    sim, ledger, parties, members, plan, route = build_line(
        k=2, n=4, seed="rep2", policy="uniform")
    parties["P0"].start_payment(plan, sim)
    sim.run()
    assert sim.trace.to_ndjson() != runs[0]
    assert payment_notes(sim, "complete")  # still settles under varied delays


# ---------------------------------------------------------------------------
# refusal and unwind paths
# ---------------------------------------------------------------------------

def test_receiver_rejects_wrong_amount_and_gives_back():
    sim, ledger, parties, members, plan, route = build_line(k=1, expected=99)
    parties["P0"].start_payment(plan, sim)
    sim.run()
    rej = payment_notes(sim, "hop-rejected")
    assert rej and rej[0].annotation["reason"] == "amount-mismatch"
    assert payment_notes(sim, "failed")
    snap = parties["P0"].views["c0"].snapshot
    assert snap.balance_of("P0") == 200 and snap.payments == ()
    assert ledger.channels["c0"].status == "open"


def test_receiver_rejects_tight_expiry():
    # margin 8 passes the lock-time floor but leaves only 3 delta at arrival
    sim, ledger, parties, members, plan, route = build_line(k=1, margin=8)
    parties["P0"].start_payment(plan, sim)
    sim.run()
    rej = payment_notes(sim, "hop-rejected")
    assert rej and rej[0].annotation["reason"] == "expiry-too-close"
    assert parties["P0"].views["c0"].snapshot.balance_of("P0") == 200


def test_forwarder_rejects_thin_balance():
    sim, ledger, parties, members, plan, route = build_line(
        k=2, funding_map={"c1": {"P1": 50, "P2": 200}})
    parties["P0"].start_payment(plan, sim)
    sim.run()
    rej = payment_notes(sim, "hop-rejected")
    assert rej and rej[0].annotation["reason"] == "insufficient-balance"
    assert rej[0].src == "P1"
    assert payment_notes(sim, "failed")
    assert parties["P0"].views["c0"].snapshot.balance_of("P0") == 200


def test_forwarder_rejects_thin_margin():
    sim, ledger, parties, members, plan, route = build_line(
        k=2, margin=[23, 24], required_margin=24)
    parties["P0"].start_payment(plan, sim)
    sim.run()
    rej = payment_notes(sim, "hop-rejected")
    assert rej and rej[0].annotation["reason"] == "margin-too-small"
    assert payment_notes(sim, "failed")


def test_silent_middle_unwinds_to_sender():
    sim, ledger, parties, members, plan, route = build_line(
        k=2, behaviors={"P2": {"kind": "honest", "silent": True}})
    parties["P0"].start_payment(plan, sim)
    sim.run()
    assert payment_notes(sim, "forward-failed")
    assert payment_notes(sim, "failed")
    for cid in ("c0", "c1"):
        assert ledger.channels[cid].status == "open"
    c0 = parties["P0"].views["c0"].snapshot
    assert c0.balance_of("P0") == 200 and c0.payments == ()


def test_onion_without_lock_is_dropped():
    sim, ledger, parties, members, plan, route = build_line(k=1)
    sim.send("P0", "P1", PaymentOnion("pay", "P0", plan.onion),
             {"category": "onion"})
    sim.run()
    assert payment_notes(sim, "onion-without-lock")
    assert parties["P1"].views["c0"].snapshot.version == 0


def test_garbled_onion_is_dropped():
    sim, ledger, parties, members, plan, route = build_line(k=2)
    # deliver P2's layer to P1: the outer strip fails authentication
    inner = peel_onion(plan.onion, hop_onion_key("pay", "P1"))[1]
    sim.send("P0", "P1", PaymentOnion("pay", "P0", inner), {"category": "onion"})
    sim.run()
    assert payment_notes(sim, "garbled-onion")


# ---------------------------------------------------------------------------
# disputes driven by payment behavior
# ---------------------------------------------------------------------------

def test_withheld_reveal_ends_in_payer_refund():
    sim, ledger, parties, members, plan, route = build_line(
        k=1, behaviors={"P0": {"kind": "withhold_reveal"}})
    parties["P0"].start_payment(plan, sim)
    sim.run()
    rec = ledger.channels["c0"]
    assert rec.status == "closed" and rec.closed_by == "P0"
    assert rec.final_balances == {"P0": 200, "P1": 200}
    assert not payment_notes(sim, "complete")


def test_silent_payer_payee_disputes_and_is_paid():
    sim, ledger, parties, members, plan, route = build_line(
        k=1, behaviors={"P0": {"kind": "silent_after_reveal"}})
    parties["P0"].start_payment(plan, sim)
    sim.run()
    rec = ledger.channels["c0"]
    assert rec.status == "closed" and rec.closed_by == "P1"
    assert rec.final_balances == {"P0": 100, "P1": 300}
    for m in members:
        assert m.channels["c0"].closure.resolutions == {"pay:0": "paid"}


def test_dispute_race_payee_wins():
    # receiver sits on the witness; both expiry timers end up firing
    sim, ledger, parties, members, plan, route = build_line(
        k=1, behaviors={"P1": {"kind": "withhold_claim"}})
    parties["P0"].start_payment(plan, sim)
    sim.run()
    rec = ledger.channels["c0"]
    assert rec.status == "closed" and rec.closed_by == "P1"
    assert rec.final_balances == {"P0": 100, "P1": 300}
    payer_disputes = [r for r in sim.trace.sends("dispute")
                      if r.src == "P0" and (r.annotation or {}).get("kind") == "payer"]
    assert len(payer_disputes) == 4  # the payer did contest, one per member
    refusals = [r for r in sim.trace.sends("dispute")
                if (r.annotation or {}).get("phase") == "refuse" and r.dst == "P0"]
    assert len(refusals) == 4


def test_witness_notice_lets_upstream_recover():
    sim, ledger, parties, members, plan, route = build_line(
        k=2, behaviors={"P2": {"kind": "dispute_instead_of_claim"}})
    parties["P0"].start_payment(plan, sim)
    sim.run()
    assert ledger.channels["c1"].status == "closed"
    assert ledger.channels["c1"].final_balances == {"P1": 100, "P2": 300}
    # the closure leaked the witness back to the forwarder, who then
    # claimed its incoming hop cooperatively
    assert ledger.channels["c0"].status == "open"
    c0 = parties["P0"].views["c0"].snapshot
    assert c0.balance_of("P0") == 99 and c0.balance_of("P1") == 301
    assert payment_notes(sim, "complete")


def test_stale_snapshot_closure_is_refused():
    sim, ledger, parties, members, plan, route = build_line(
        k=1, behaviors={"P0": {"kind": "stale_state_closure"}})
    parties["P0"].start_payment(plan, sim)
    parties["P0"].schedule_misbehavior(20, sim)
    sim.run()
    assert payment_notes(sim, "complete")        # payment itself was fine
    assert ledger.channels["c0"].status == "open"
    refusals = [r for r in sim.trace.sends("dispute")
                if (r.annotation or {}).get("phase") == "refuse" and r.dst == "P0"]
    assert len(refusals) == 4
    for m in members:
        assert m.channels["c0"].latest_version == 2
        assert m.channels["c0"].closure is None


def test_equivocating_broadcaster_tolerated_up_to_f():
    sim, ledger, parties, members, plan, route = build_line(
        k=1, behaviors={"P0": {"kind": "equivocating_sender", "victims": ("m0",)}})
    parties["P0"].start_payment(plan, sim)
    sim.run()
    assert payment_notes(sim, "complete")
    # the lock registers everywhere via the honest peer's full broadcast;
    # the settle claim is half-signed from the claimer, so the lied-to
    # member can lag, but the 2f+1 honest members carry the update
    assert members[0].channels["c0"].latest_version >= 1
    assert sum(m.channels["c0"].latest_version == 2 for m in members) >= 3
    snap_a = parties["P0"].views["c0"].snapshot
    snap_b = parties["P1"].views["c0"].snapshot
    assert snap_a == snap_b and snap_a.version == 2


# ---------------------------------------------------------------------------
# wormhole collusion
# ---------------------------------------------------------------------------

def test_wormhole_skip_fails_and_costs_the_colluders():
    sim, ledger, parties, members, plan, route = build_line(
        k=4, seed="worm",
        behaviors={"P1": {"kind": "wormhole_claim"},
                   "P3": {"kind": "wormhole_skip", "accomplice": "P1"}})
    parties["P0"].start_payment(plan, sim)
    sim.run()
    assert not sim.budget_exceeded

    oob = sim.trace.sends("adversary_oob")
    assert len(oob) == 1 and oob[0].src == "P3" and oob[0].dst == "P1"
    # the short-cut witness does not open the upstream lock
    rejects = [r for r in sim.trace.sends("party")
               if (r.annotation or {}).get("purpose") == "reject" and r.src == "P0"]
    assert len(rejects) == 1
    assert not payment_notes(sim, "complete")

    # every channel the honest victim touches is refunded identically
    for cid in ("c0", "c1", "c2"):
        rec = ledger.channels[cid]
        assert rec.status == "closed"
        assert set(rec.final_balances.values()) == {200}
    # the receiver was still paid, out of the skipping colluder's pocket
    c3 = parties["P3"].views["c3"].snapshot
    assert c3.balance_of("P3") == 100 and c3.balance_of("P4") == 300

    def net(party, channels):
        total = 0
        for cid in channels:
            rec = ledger.channels[cid]
            if rec.status == "closed":
                total += rec.final_balances[party] - 200
            else:
                total += parties[party].views[cid].snapshot.balance_of(party) - 200
        return total

    attacker_gain = net("P1", ("c0", "c1")) + net("P3", ("c2", "c3"))
    colluder_fees = route[1].fee + route[3].fee
    assert attacker_gain <= colluder_fees
    assert attacker_gain == -100
    assert net("P2", ("c1", "c2")) == 0
