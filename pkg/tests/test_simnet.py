import json

import pytest

from pcnsim.simnet import (
    ASYNCHRONOUS,
    Actor,
    NetworkModel,
    PARTIALLY_SYNCHRONOUS,
    Scheduler,
    TraceLog,
    canonical_json,
    message_digest,
)


class Sink(Actor):
    def __init__(self, actor_id):
        super().__init__(actor_id)
        self.got = []

    def on_message(self, msg, src, sim):
        self.got.append((sim.now, src, msg))


class Echo(Actor):
    """Replies once per incoming message; used to generate traffic."""

    def __init__(self, actor_id, peer, rounds):
        super().__init__(actor_id)
        self.peer = peer
        self.rounds = rounds

    def on_message(self, msg, src, sim):
        if self.rounds > 0:
            self.rounds -= 1
            sim.send(self.id, self.peer, {"n": msg["n"] + 1}, {"category": "test"})


def drive(net, seed, count=200):
    sim = Scheduler(net, seed)
    sink = sim.register(Sink("B"))
    for i in range(count):
        sim.send("A", "B", {"n": i}, {"category": "test"})
    sim.run()
    return sim, sink


def test_synchronous_delay_within_bound():
    # a message sent at time t arrives strictly after t and by t + delta
    sim, sink = drive(NetworkModel(kind="synchronous", delta=3), seed=11)
    assert len(sink.got) == 200
    for at, _, _ in sink.got:
        assert 1 <= at <= 3


def test_synchronous_uniform_spans_range():
    sim, sink = drive(NetworkModel(kind="synchronous", delta=3), seed=11)
    seen = {at for at, _, _ in sink.got}
    assert seen == {1, 2, 3}


def test_constant_policy_pins_delay():
    sim, sink = drive(NetworkModel(kind="synchronous", delta=2, policy="constant"), seed=7)
    assert {at for at, _, _ in sink.got} == {2}


def test_partial_synchrony_respects_gst():
    net = NetworkModel(kind=PARTIALLY_SYNCHRONOUS, delta=1, gst=50, cap=30)
    sim = Scheduler(net, seed=3)
    sink = sim.register(Sink("B"))
    for _ in range(100):
        sim.send("A", "B", {"x": 0}, None)  # all at t=0, before gst
    sim.run()
    early = [at for at, _, _ in sink.got]
    assert max(early) > 1          # some delays exceed the bound before gst
    assert max(early) <= 30        # but stay finite and capped

    sim2 = Scheduler(net, seed=3)
    sink2 = sim2.register(Sink("B"))
    sim2.timer("B", 50, "noop")
    sim2.run()
    sim2.now = 50
    for _ in range(100):
        sim2.send("A", "B", {"x": 0}, None)
    sim2.run()
    assert all(50 < at <= 51 for at, _, _ in sink2.got)


def test_asynchronous_is_finite_and_capped():
    sim, sink = drive(NetworkModel(kind=ASYNCHRONOUS, delta=1, cap=40), seed=5, count=500)
    assert len(sink.got) == 500
    assert all(1 <= at <= 40 for at, _, _ in sink.got)


def test_delay_override_is_bound_checked():
    sim = Scheduler(NetworkModel(delta=2), seed=1,
                    delay_override=lambda s, d, m, now, rng: 9)
    sim.register(Sink("B"))
    with pytest.raises(ValueError):
        sim.send("A", "B", {"x": 1}, None)


def test_tie_break_follows_send_order():
    sim = Scheduler(NetworkModel(delta=1, policy="constant"), seed=0)
    sink = sim.register(Sink("B"))
    for i in range(10):
        sim.send("A", "B", {"n": i}, None)
    sim.run()
    assert [m["n"] for _, _, m in sink.got] == list(range(10))


def test_replay_is_byte_identical():
    def run(seed):
        net = NetworkModel(delta=4)
        sim = Scheduler(net, seed)
        sim.register(Echo("A", "B", rounds=30))
        sim.register(Echo("B", "A", rounds=30))
        sim.send("A", "B", {"n": 0}, {"category": "test"})
        sim.run()
        return sim.trace.to_ndjson()

    assert run("s1") == run("s1")
    assert run("s1") != run("s2")


def test_trace_record_shape():
    sim = Scheduler(NetworkModel(delta=1), seed=2)
    sim.register(Sink("B"))
    sim.send("A", "B", {"n": 1}, {"category": "party", "payment": "pay-0"})
    sim.note("state", "B", annotation={"phase": "idle"})
    sim.run()
    for line in sim.trace.to_ndjson().decode().splitlines():
        rec = json.loads(line)
        assert sorted(rec) == ["annotation", "from", "kind", "payload_digest", "time", "to"]
    kinds = [r.kind for r in sim.trace.records]
    assert kinds == ["send", "state", "deliver"]


def test_timers_fire_in_order_and_are_untraced():
    fired = []

    class T(Actor):
        def on_timer(self, tag, data, sim):
            fired.append((sim.now, tag, data))

    sim = Scheduler(NetworkModel(delta=1), seed=0)
    sim.register(T("A"))
    sim.timer("A", 7, "later", {"k": 1})
    sim.timer("A", 3, "sooner")
    sim.run()
    assert fired == [(3, "sooner", None), (7, "later", {"k": 1})]
    assert sim.trace.records == []


def test_event_budget_reported_not_raised():
    class Pinger(Actor):
        def on_message(self, msg, src, sim):
            sim.send(self.id, self.id, {"n": msg["n"] + 1}, None)

    sim = Scheduler(NetworkModel(delta=1), seed=0, max_events=500)
    sim.register(Pinger("A"))
    sim.send("A", "A", {"n": 0}, None)
    sim.run()
    assert sim.budget_exceeded
    assert sim.events_processed == 500


def test_time_limit_stops_run():
    class Pinger(Actor):
        def on_message(self, msg, src, sim):
            sim.send(self.id, self.id, {"n": msg["n"] + 1}, None)

    sim = Scheduler(NetworkModel(delta=1, policy="constant"), seed=0, time_limit=100)
    sim.register(Pinger("A"))
    sim.send("A", "A", {"n": 0}, None)
    sim.run()
    assert sim.time_limit_hit
    assert sim.now <= 100


def test_canonical_json_is_stable():
    assert canonical_json({"b": 1, "a": b"\x01\xff"}) == '{"a":"01ff","b":1}'
    assert canonical_json([1, "x", None, True]) == '[1,"x",null,true]'
    d1 = message_digest({"a": 1, "b": 2})
    d2 = message_digest({"b": 2, "a": 1})
    assert d1 == d2 and len(d1) == 64


def test_app_rng_is_stable_across_runs():
    a = Scheduler(NetworkModel(), seed="s").app_rng.random()
    b = Scheduler(NetworkModel(), seed="s").app_rng.random()
    assert a == b


def test_duplicate_actor_rejected():
    sim = Scheduler(NetworkModel(), seed=0)
    sim.register(Sink("A"))
    with pytest.raises(ValueError):
        sim.register(Sink("A"))
