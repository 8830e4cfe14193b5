import pytest

from pcnsim.broadcast import COST_MODELS
from pcnsim.crypto import Keystore
from pcnsim.ledger import Ledger, LedgerActor
from pcnsim.psyncpcn import (
    PAY,
    REJECT,
    SUCCESS,
    Activation,
    ChannelInfo,
    Directory,
    PaymentEnvelope,
    PsyncMember,
    PsyncParty,
    activation_digest,
    notify_digest,
)
from pcnsim.simnet import Actor, NetworkModel, Scheduler


def build_net(k, n=4, funding=200, fee=0, mode="alg1", model="pbft-like",
              seed="ps", delta=1, policy="constant", funding_map=None,
              party_behaviors=None, member_behaviors=None):
    """Linear network P0 .. Pk where channel c{i} is run by its own committee."""
    f = (n - 1) // 3
    ks = Keystore(f"keys/{seed}")
    sim = Scheduler(NetworkModel(delta=delta, policy=policy), seed)
    ledger = Ledger(ks)
    sim.register(LedgerActor("chain", ledger, seed))
    infos = []
    for i in range(k):
        cid = f"c{i}"
        roster = tuple(f"{cid}.m{j}" for j in range(n))
        infos.append(ChannelInfo(cid, (f"P{i}", f"P{i + 1}"), roster, f,
                                 fee=0 if i == 0 else fee))
    directory = Directory(infos)
    cost = COST_MODELS[model]
    members = {}
    mb = member_behaviors or {}
    for info in infos:
        fund = (funding_map or {}).get(info.channel_id,
                                       {info.parties[0]: funding, info.parties[1]: funding})
        for m in info.roster:
            mem = PsyncMember(m, info, directory, ks, cost, delta,
                              mode=mode, behavior=mb.get(m))
            mem.fund(dict(fund))
            members[m] = sim.register(mem)
        ledger.open_channel(info.channel_id, info.parties, info.roster, f, fund)
    pb = party_behaviors or {}
    parties = {}
    for i in range(k + 1):
        name = f"P{i}"
        party = PsyncParty(name, directory, ks, mode=mode, behavior=pb.get(name))
        parties[name] = sim.register(party)
    for info in infos:
        fund = (funding_map or {}).get(info.channel_id,
                                       {info.parties[0]: funding, info.parties[1]: funding})
        for p in info.parties:
            parties[p].init_channel(info.channel_id, fund[p])
    return sim, ledger, directory, parties, members, infos


class Driver(Actor):
    """Fires scripted callbacks at chosen times."""

    def __init__(self, actions):
        super().__init__("drv")
        self.actions = actions

    def on_message(self, msg, src, sim):
        pass

    def on_timer(self, tag, data, sim):
        self.actions[tag](sim)


def counted_total(sim):
    """Party notifications + ordering charge + one logical transfer per activation."""
    party = len(sim.trace.sends("party"))
    c_msg = 0
    seen = set()
    for r in sim.trace.of_kind("ordered"):
        a = r.annotation
        if (a["cid"], a["slot"]) not in seen:
            seen.add((a["cid"], a["slot"]))
            c_msg += a["c_msg"]
    acts = set()
    for r in sim.trace.of_kind("executed"):
        a = r.annotation
        if a["result"] in ("applied", "rejected"):
            acts.add((a["committee"], a["payment"], a["action"]))
    return party + c_msg + len(acts)


def payment_notes(sim, event):
    return [r for r in sim.trace.of_kind("payment")
            if (r.annotation or {}).get("event") == event]


def member_logs(sim, event):
    return [r for r in sim.trace.of_kind("member-log")
            if (r.annotation or {}).get("event") == event]


def committee_sum(members, infos, cid):
    info = next(i for i in infos if i.channel_id == cid)
    sums = {tuple(sorted(members[m].balances.items())) for m in info.roster
            if members[m].kind == "honest"}
    assert len(sums) == 1, f"honest members disagree on {cid}: {sums}"
    return dict(next(iter(sums)))


def party_env(ks, origin, pay_id, amount, path):
    act = Activation(PAY, origin, pay_id, amount, path=tuple(path))
    sig = ks.keypair(origin).sign(activation_digest(act))
    return PaymentEnvelope(act, origin, sig)


# ---------------------------------------------------------------------------
# party account hand traces
# ---------------------------------------------------------------------------

def test_pay_locks_available_balance_first():
    sim, ledger, d, parties, members, infos = build_net(
        1, funding_map={"c0": {"P0": 10, "P1": 10}})
    p0 = parties["P0"]
    pid = p0.pay(["P0", "P1"], 4, sim)
    acct = p0.accounts["c0"]
    # available drops at once, the total only after f+1 SUCCESS reports
    assert (acct.balance, acct.avail) == (10, 6)
    sim.run()
    assert p0.results[pid] == "success"
    assert (acct.balance, acct.avail) == (6, 6)
    p1 = parties["P1"].accounts["c0"]
    assert (p1.balance, p1.avail) == (14, 14)
    assert parties["P1"].credited == [("P0#0", 4)]


def test_back_to_back_payments_use_consecutive_ids():
    sim, ledger, d, parties, members, infos = build_net(1)
    a = parties["P0"].pay(["P0", "P1"], 5, sim)
    b = parties["P0"].pay(["P0", "P1"], 7, sim)
    assert (a, b) == (0, 1)
    sim.run()
    assert parties["P0"].results == {0: "success", 1: "success"}
    for m in infos[0].roster:
        assert members[m].next_id == {"P0": 2}
    assert committee_sum(members, infos, "c0") == {"P0": 188, "P1": 212}


def test_insufficient_local_balance_raises():
    sim, ledger, d, parties, members, infos = build_net(1, funding=5)
    with pytest.raises(ValueError):
        parties["P0"].pay(["P0", "P1"], 6, sim)
    with pytest.raises(KeyError):
        parties["P0"].pay(["P0", "P9"], 1, sim)


# ---------------------------------------------------------------------------
# id discipline at the committee
# ---------------------------------------------------------------------------

def test_stale_id_discarded_without_ordering():
    sim, ledger, d, parties, members, infos = build_net(1, seed="stale")
    ks = members["c0.m0"].keystore
    parties["P0"].pay(["P0", "P1"], 3, sim)
    parties["P0"].pay(["P0", "P1"], 3, sim)
    sim.run()
    slots_before = {(r.annotation["cid"], r.annotation["slot"])
                    for r in sim.trace.of_kind("ordered")}
    # a fresh envelope reusing id 0 is below nextId and never enters ordering
    env = party_env(ks, "P0", 0, 9, ("P0", "P1"))
    for m in infos[0].roster:
        sim.send("P0", m, env, {"category": "request"})
    sim.run()
    assert len(member_logs(sim, "discarded-stale")) == 4
    slots_after = {(r.annotation["cid"], r.annotation["slot"])
                   for r in sim.trace.of_kind("ordered")}
    assert slots_after == slots_before
    assert committee_sum(members, infos, "c0") == {"P0": 194, "P1": 206}


def test_future_id_ordered_now_executed_in_order():
    sim, ledger, d, parties, members, infos = build_net(1, seed="gap")
    ks = members["c0.m0"].keystore
    # id 5 arrives first: it may be ordered immediately but must wait its turn
    for m in infos[0].roster:
        sim.send("P0", m, party_env(ks, "P0", 5, 1, ("P0", "P1")), {"category": "request"})
    sim.run()
    assert len(member_logs(sim, "held")) == 4
    assert committee_sum(members, infos, "c0") == {"P0": 200, "P1": 200}
    for i in range(5):
        env = party_env(ks, "P0", i, 1, ("P0", "P1"))
        for m in infos[0].roster:
            sim.send("P0", m, env, {"category": "request"})
    sim.run()
    for m in infos[0].roster:
        assert members[m].next_id == {"P0": 6}
    assert committee_sum(members, infos, "c0") == {"P0": 194, "P1": 206}
    # execution order follows ids even though id 5 was ordered first
    m0 = infos[0].roster[0]
    execs = [r.annotation["payment"] for r in sim.trace.of_kind("executed")
             if r.src == m0 and r.annotation["result"] == "applied"]
    assert execs == [f"P0#{i}" for i in range(6)]


def test_duplicate_and_unknown_results_are_single_effect():
    sim, ledger, d, parties, members, infos = build_net(2, seed="dup")
    ks = members["c0.m0"].keystore
    parties["P0"].pay(["P0", "P1", "P2"], 50, sim)
    sim.run()
    assert parties["P0"].results[0] == "success"
    base_c0 = committee_sum(members, infos, "c0")
    # replaying the sender's request verbatim is ignored outright
    env = party_env(ks, "P0", 0, 50, ("P0", "P1", "P2"))
    for m in infos[0].roster:
        sim.send("P0", m, env, {"category": "request"})
    sim.run()
    assert committee_sum(members, infos, "c0") == base_c0
    # a late REJECT for an already settled payment is ignored and logged
    back = Activation(REJECT, "P0", 0, 50, path=("P0", "P1", "P2"))
    for src in infos[1].roster[:2]:
        sig = ks.keypair(src).sign(activation_digest(back))
        for m in infos[0].roster:
            sim.send(src, m, PaymentEnvelope(back, "c1", sig), {"category": "transfer"})
    sim.run()
    assert len(member_logs(sim, "unknown-reject")) == 4
    assert committee_sum(members, infos, "c0") == base_c0
    applied = [r for r in sim.trace.of_kind("executed")
               if r.annotation["committee"] == "c0"
               and r.annotation["action"] == SUCCESS
               and r.annotation["result"] == "applied"]
    assert len(applied) == 4  # one per member, a single settlement


# ---------------------------------------------------------------------------
# end to end payments
# ---------------------------------------------------------------------------

def test_single_hop_settles_in_one_activation():
    sim, ledger, d, parties, members, infos = build_net(1, n=4)
    parties["P0"].pay(["P0", "P1"], 25, sim)
    sim.run()
    assert len(payment_notes(sim, "complete")) == 1
    assert len(sim.trace.sends("party")) == 8       # both parties, all members
    assert len(sim.trace.sends("transfer")) == 0    # no next committee
    assert len(sim.trace.sends("request")) == 4
    c_msg = COST_MODELS["pbft-like"].c_msg(4)
    assert counted_total(sim) == 2 * 4 + c_msg + 1


def test_two_hop_timeline_and_exact_count():
    sim, ledger, d, parties, members, infos = build_net(2, n=4)
    parties["P0"].pay(["P0", "P1", "P2"], 40, sim)
    sim.run()
    done = payment_notes(sim, "complete")
    credited = [r for r in payment_notes(sim, "credited") if r.src == "P2"]
    assert done[0].time == 13 and credited[0].time == 9
    c_msg = COST_MODELS["pbft-like"].c_msg(4)
    assert counted_total(sim) == 3 * (2 * 4 + c_msg + 1)
    assert len(sim.trace.sends("party")) == 3 * 8
    assert len(sim.trace.sends("transfer")) == 2 * 16
    assert committee_sum(members, infos, "c0") == {"P0": 160, "P1": 240}
    assert committee_sum(members, infos, "c1") == {"P1": 160, "P2": 240}
    # intermediary mirrors both its channels
    assert parties["P1"].accounts["c0"].balance == 240
    assert parties["P1"].accounts["c1"].balance == 160


@pytest.mark.parametrize("model,theta_per_hop", [("pbft-like", 6), ("hotstuff-like", 16)])
@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("n", [4, 7])
def test_counted_messages_exact_and_latency_in_band(model, theta_per_hop, k, n):
    sim, ledger, d, parties, members, infos = build_net(k, n=n, model=model)
    parties["P0"].pay([f"P{i}" for i in range(k + 1)], 10, sim)
    sim.run()
    assert len(payment_notes(sim, "complete")) == 1
    cost = COST_MODELS[model]
    assert counted_total(sim) == (2 * k - 1) * (2 * n + cost.c_msg(n) + 1)
    latency = payment_notes(sim, "complete")[0].time
    theta = theta_per_hop * k
    assert 0.5 * theta <= latency <= 2 * theta


def test_fig3_message_numbering_on_three_hops():
    sim, ledger, d, parties, members, infos = build_net(3, n=4)
    parties["P0"].pay(["P0", "P1", "P2", "P3"], 10, sim)
    sim.run()
    by_no = {}
    for r in sim.trace.sends():
        ann = r.annotation or {}
        if "msg" in ann:
            by_no.setdefault(ann["msg"], set()).add((ann["category"], ann.get("kind")))
    assert by_no[1] == {("request", None)}
    assert by_no[2] == by_no[4] == {("party", PAY)}
    assert by_no[3] == by_no[5] == {("transfer", PAY)}
    assert by_no[6] == {("party", SUCCESS)}          # last committee reports done
    assert by_no[7] == by_no[9] == {("transfer", SUCCESS)}
    assert by_no[8] == by_no[10] == {("party", SUCCESS)}
    assert max(by_no) == 10


def test_insufficient_channel_balance_rejects_backward():
    sim, ledger, d, parties, members, infos = build_net(
        2, funding_map={"c1": {"P1": 50, "P2": 200}}, seed="rej")
    parties["P0"].pay(["P0", "P1", "P2"], 100, sim)
    sim.run()
    assert parties["P0"].results[0] == "rejected"
    rejected = [r for r in sim.trace.of_kind("executed")
                if r.annotation["result"] == "rejected"]
    assert {r.annotation["committee"] for r in rejected} == {"c1"}
    assert rejected[0].annotation["detail"] == "insufficient-balance"
    # every lock was undone
    assert committee_sum(members, infos, "c0") == {"P0": 200, "P1": 200}
    acct = parties["P0"].accounts["c0"]
    assert (acct.balance, acct.avail) == (200, 200)
    for m in infos[0].roster:
        assert members[m].pending == {}
        assert members[m].avail == {"P0": 200, "P1": 200}


def test_overspending_sender_is_caught_by_committee():
    sim, ledger, d, parties, members, infos = build_net(
        1, party_behaviors={"P0": {"kind": "honest", "overspend": True}}, seed="os")
    parties["P0"].pay(["P0", "P1"], 150, sim)
    parties["P0"].pay(["P0", "P1"], 150, sim)
    sim.run()
    assert parties["P0"].results == {0: "success", 1: "rejected"}
    assert committee_sum(members, infos, "c0") == {"P0": 50, "P1": 350}
    acct = parties["P0"].accounts["c0"]
    assert (acct.balance, acct.avail) == (50, 50)


# ---------------------------------------------------------------------------
# agreement and conservation
# ---------------------------------------------------------------------------

def test_honest_members_agree_on_log_and_state():
    sim, ledger, d, parties, members, infos = build_net(2, seed="agree")
    parties["P0"].pay(["P0", "P1", "P2"], 10, sim)
    parties["P0"].pay(["P0", "P1", "P2"], 20, sim)
    parties["P2"].pay(["P2", "P1", "P0"], 5, sim)
    sim.run()
    for info in infos:
        logs = [members[m].node.log for m in info.roster]
        assert all(l == logs[0] for l in logs)
        states = [(members[m].balances, members[m].avail, members[m].next_id)
                  for m in info.roster]
        assert all(s == states[0] for s in states)
        assert all(members[m].pending == {} for m in info.roster)
        total = sum(members[info.roster[0]].balances.values())
        assert total == 400
    # party mirrors match the committee at quiescence
    for info in infos:
        bal = committee_sum(members, infos, info.channel_id)
        for p in info.parties:
            acct = parties[p].accounts[info.channel_id]
            assert acct.balance == bal[p] == acct.avail


def test_consecutive_ids_per_originator_in_executions():
    sim, ledger, d, parties, members, infos = build_net(1, seed="ids")
    for _ in range(4):
        parties["P0"].pay(["P0", "P1"], 2, sim)
    for _ in range(2):
        parties["P1"].pay(["P1", "P0"], 3, sim)
    sim.run()
    m0 = infos[0].roster[0]
    seen = {}
    for r in sim.trace.of_kind("executed"):
        if r.src != m0 or r.annotation["action"] != PAY:
            continue
        origin, pid = r.annotation["payment"].split("#")
        seen.setdefault(origin, []).append(int(pid))
    assert seen == {"P0": [0, 1, 2, 3], "P1": [0, 1]}


# ---------------------------------------------------------------------------
# member faults
# ---------------------------------------------------------------------------

def test_silent_member_is_tolerated():
    sim, ledger, d, parties, members, infos = build_net(
        2, member_behaviors={"c0.m1": {"kind": "silent"}, "c1.m2": {"kind": "silent"}},
        seed="quiet")
    parties["P0"].pay(["P0", "P1", "P2"], 30, sim)
    sim.run()
    assert parties["P0"].results[0] == "success"
    assert committee_sum(members, infos, "c0") == {"P0": 170, "P1": 230}


def test_stalling_leader_recovers_via_view_change():
    sim, ledger, d, parties, members, infos = build_net(
        1, member_behaviors={"c0.m0": {"kind": "stalling_leader"}}, seed="stall")
    parties["P0"].pay(["P0", "P1"], 30, sim)
    sim.run()
    assert parties["P0"].results[0] == "success"
    # slot 0's first leader sat on the request, so a later view decided it
    assert payment_notes(sim, "complete")[0].time > 5


def test_equivocating_leader_cannot_alter_amounts():
    sim, ledger, d, parties, members, infos = build_net(
        1, member_behaviors={"c0.m0": {"kind": "equivocating_member"}}, seed="equiv")
    parties["P0"].pay(["P0", "P1"], 30, sim)
    sim.run()
    assert parties["P0"].results[0] == "success"
    assert committee_sum(members, infos, "c0") == {"P0": 170, "P1": 230}
    logs = [members[m].node.log for m in infos[0].roster if members[m].kind == "honest"]
    assert all(l == logs[0] for l in logs)


def test_garbage_ordered_value_is_ignored():
    sim, ledger, d, parties, members, infos = build_net(1)
    members["c0.m0"].on_ordered("c0", 0, "junk", sim)
    assert len(member_logs(sim, "ignored-garbage")) == 1


def test_forged_notify_below_quorum_has_no_effect():
    sim, ledger, d, parties, members, infos = build_net(1, seed="forge")
    ks = members["c0.m0"].keystore
    from pcnsim.psyncpcn import BalanceNotify
    from dataclasses import replace as dc_replace
    nt = BalanceNotify("c0", SUCCESS, "P1", 0, 150, "P1", "P0",
                       (("P0", 350), ("P1", 50)), None, None)
    nt = dc_replace(nt, sig=ks.keypair("c0.m0").sign(notify_digest(nt)))
    sim.send("c0.m0", "P0", nt, {"category": "party"})
    sim.send("c0.m0", "P0", nt, {"category": "party"})  # same signer twice
    sim.run()
    acct = parties["P0"].accounts["c0"]
    assert (acct.balance, acct.avail) == (200, 200)


# ---------------------------------------------------------------------------
# cooperative closure
# ---------------------------------------------------------------------------

def test_close_after_payment_publishes_final_balances():
    sim, ledger, d, parties, members, infos = build_net(1, seed="close")
    parties["P0"].pay(["P0", "P1"], 4, sim)
    driver = Driver({"close": lambda s: parties["P0"].close_channel("c0", s)})
    sim.register(driver)
    sim.timer("drv", 20, "close")
    sim.run()
    rec = ledger.channels["c0"]
    assert rec.status == "closed"
    assert dict(rec.final_balances) == {"P0": 196, "P1": 204}
    assert rec.closed_by == "P0"


def test_close_waits_for_inflight_payment():
    sim, ledger, d, parties, members, infos = build_net(3, seed="defer")
    parties["P0"].pay(["P0", "P1", "P2", "P3"], 100, sim)
    driver = Driver({"close": lambda s: parties["P1"].close_channel("c1", s)})
    sim.register(driver)
    sim.timer("drv", 10, "close")  # lands between c1's lock and its unlock
    sim.run()
    deferred = [r for r in sim.trace.of_kind("executed")
                if r.annotation["action"] == "CLOSE"
                and r.annotation.get("detail") == "deferred"]
    assert deferred, "closure should have found the lock still pending"
    assert parties["P0"].results[0] == "success"
    rec = ledger.channels["c1"]
    assert rec.status == "closed"
    assert dict(rec.final_balances) == {"P1": 100, "P2": 300}


def test_new_payments_refused_while_closing():
    sim, ledger, d, parties, members, infos = build_net(1, seed="gate")
    driver = Driver({
        "close": lambda s: parties["P0"].close_channel("c0", s),
        "pay": lambda s: parties["P0"].pay(["P0", "P1"], 5, s),
    })
    sim.register(driver)
    sim.timer("drv", 0, "close")
    sim.timer("drv", 30, "pay")
    sim.run()
    assert parties["P0"].results[0] == "rejected"
    rejected = [r for r in sim.trace.of_kind("executed")
                if r.annotation["result"] == "rejected"]
    assert rejected and rejected[0].annotation["detail"] == "closing"
    assert dict(ledger.channels["c0"].final_balances) == {"P0": 200, "P1": 200}


def test_wrong_balance_closure_outvoted():
    sim, ledger, d, parties, members, infos = build_net(
        1, member_behaviors={"c0.m3": {"kind": "wrong_balance_closure",
                                       "beneficiary": "P1", "shift": 25}},
        seed="liar")
    parties["P0"].pay(["P0", "P1"], 10, sim)
    driver = Driver({"close": lambda s: parties["P1"].close_channel("c0", s)})
    sim.register(driver)
    sim.timer("drv", 20, "close")
    sim.run()
    rec = ledger.channels["c0"]
    assert rec.status == "closed"
    assert dict(rec.final_balances) == {"P0": 190, "P1": 210}


# ---------------------------------------------------------------------------
# sealed-route mode
# ---------------------------------------------------------------------------

def test_full_mode_fees_and_relabeled_ids():
    sim, ledger, d, parties, members, infos = build_net(3, fee=1, mode="full", seed="oni")
    parties["P0"].pay(["P0", "P1", "P2", "P3"], 100, sim)
    sim.run()
    assert parties["P0"].results[0] == "success"
    assert [amt for _, amt in parties["P3"].credited] == [100]
    assert committee_sum(members, infos, "c0") == {"P0": 98, "P1": 302}
    assert committee_sum(members, infos, "c1") == {"P1": 99, "P2": 301}
    assert committee_sum(members, infos, "c2") == {"P2": 100, "P3": 300}
    # downstream committees track the previous committee's counter, not P0's
    for m in infos[1].roster:
        assert members[m].next_id == {"c0": 1}
    for m in infos[2].roster:
        assert members[m].next_id == {"c1": 1}
    cost = COST_MODELS["pbft-like"]
    assert counted_total(sim) == 5 * (2 * 4 + cost.c_msg(4) + 1)


def test_full_mode_reject_unwinds_through_labels():
    sim, ledger, d, parties, members, infos = build_net(
        2, fee=1, mode="full", funding_map={"c1": {"P1": 50, "P2": 200}}, seed="onr")
    parties["P0"].pay(["P0", "P1", "P2"], 100, sim)
    sim.run()
    assert parties["P0"].results[0] == "rejected"
    assert committee_sum(members, infos, "c0") == {"P0": 200, "P1": 200}
    acct = parties["P0"].accounts["c0"]
    assert (acct.balance, acct.avail) == (200, 200)
    for m in infos[0].roster:
        assert members[m].pending == {}


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------

def test_replay_is_byte_identical():
    def run(seed):
        sim, ledger, d, parties, members, infos = build_net(
            2, seed=seed, policy="uniform")
        parties["P0"].pay(["P0", "P1", "P2"], 12, sim)
        sim.run()
        assert parties["P0"].results[0] == "success"
        return sim.trace.to_ndjson()

    assert run("r1") == run("r1")
    assert run("r1") != run("r2")
