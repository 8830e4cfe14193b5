"""Declarative scenario configs and the runner behind the command line.

A scenario is a JSON document; all times are integers in delta units and all
amounts are integers in base coin units, so runs replay byte-identically.

Top-level keys:
  protocol   "syncpcn" | "psyncpcn" | "psyncpcn-full"
  seed       string or integer
  delta      synchronous delay bound, >= 1
  network    {"kind", "policy", "gst", "cap"}; defaults synchronous/uniform
  cost_model "pbft-like" | "hotstuff-like"; committee-governed protocols only
  channels   [{"id", "parties": [a, b], "deposits": {a: .., b: ..},
               "committee": [...], "f", "fee", "timelock_margin"}]
  payments   [{"id", "sender", "receiver", "amount", "path", "start",
               "expect_success"}]
  faults     {"parties": {name: {"kind", ...}}, "members": {name: {"kind", ...}}}
  time_limit, max_events, report_complexity   optional

Validation happens before anything runs; a ConfigError names the offending
field by path ("channels[1].f"). Runs that pass validation stay within the
threat model: committees have n >= 3f+1 members with at most f of them faulty,
timelock margins are at least 6 delta, and payments sharing a channel start
at least 4 delta apart.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from . import analysis
from .broadcast import COST_MODELS
from .channel import CommitteeMember
from .crypto import DEFAULT_GROUP, TOY_GROUP, Keystore
from .ledger import Ledger, LedgerActor
from .properties import PaymentSpec, Verdict, WorldView, psyncpcn_world, run_all_checks, syncpcn_world
from .psyncpcn import ChannelInfo, Directory, PsyncMember, PsyncParty
from .simnet import (
    ASYNCHRONOUS,
    PARTIALLY_SYNCHRONOUS,
    SYNCHRONOUS,
    Actor,
    NetworkModel,
    Scheduler,
)
from .syncpcn import RouteHop, SyncParty, setup_payment

PROTOCOLS = ("syncpcn", "psyncpcn", "psyncpcn-full")
RESERVED_IDS = {"chain", "drv"}

SYNC_PARTY_KINDS = {
    "honest", "silent", "withhold_reveal", "withhold_claim", "refuse_claims",
    "dispute_instead_of_claim", "silent_after_reveal", "silent_after_forward",
    "stale_state_closure", "equivocating_sender", "wormhole_skip",
    "wormhole_claim",
}
SYNC_MEMBER_KINDS = {"silent"}
PSYNC_PARTY_KINDS = {"honest", "silent", "overspend"}
PSYNC_MEMBER_KINDS = {"honest", "silent", "stalling_leader",
                      "equivocating_member", "wrong_balance_closure"}


class ConfigError(ValueError):
    """Invalid scenario input; `field` is the path of the offending entry."""

    def __init__(self, field_path: str, problem: str) -> None:
        self.field = field_path
        super().__init__(f"{field_path}: {problem}")


# ---------------------------------------------------------------------------
# parsed form
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelConfig:
    channel_id: str
    parties: tuple[str, str]
    deposits: tuple[tuple[str, int], ...]
    committee: tuple[str, ...]
    f: int
    fee: int = 0
    timelock_margin: int | None = None  # synchronous protocol only

    def deposit_of(self, party: str) -> int:
        return dict(self.deposits)[party]


@dataclass(frozen=True)
class PaymentConfig:
    payment_id: str
    sender: str
    receiver: str
    amount: int
    path: tuple[str, ...]
    start: int = 0
    expect_success: bool | None = None


@dataclass(frozen=True)
class FaultPlan:
    parties: tuple[tuple[str, tuple[tuple[str, object], ...]], ...] = ()
    members: tuple[tuple[str, tuple[tuple[str, object], ...]], ...] = ()

    def party_behaviors(self) -> dict[str, dict]:
        return {name: dict(b) for name, b in self.parties}

    def member_behaviors(self) -> dict[str, dict]:
        return {name: dict(b) for name, b in self.members}

    @property
    def empty(self) -> bool:
        return not self.parties and not self.members


@dataclass(frozen=True)
class ScenarioConfig:
    protocol: str
    seed: str
    delta: int
    network: NetworkModel
    channels: tuple[ChannelConfig, ...]
    payments: tuple[PaymentConfig, ...]
    faults: FaultPlan = FaultPlan()
    cost_model: str | None = None
    time_limit: int | None = None
    max_events: int = 2_000_000
    report_complexity: bool | None = None  # None: decide from the shape
    toy_group: bool = False

    def channel_between(self, a: str, b: str) -> ChannelConfig:
        for ch in self.channels:
            if {a, b} == set(ch.parties):
                return ch
        raise KeyError(f"no channel between {a} and {b}")

    def party_names(self) -> tuple[str, ...]:
        names: list[str] = []
        for ch in self.channels:
            for p in ch.parties:
                if p not in names:
                    names.append(p)
        return tuple(names)

    def byzantine(self) -> frozenset[str]:
        return frozenset(n for n, _b in self.faults.parties) | \
            frozenset(n for n, _b in self.faults.members)


# ---------------------------------------------------------------------------
# parsing and validation
# ---------------------------------------------------------------------------

def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise ConfigError(f"{path}.{key}" if path else key, "missing")
    return obj[key]


def _as_int(value, path: str, minimum: int | None = None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(path, "must be an integer")
    if minimum is not None and value < minimum:
        raise ConfigError(path, f"must be >= {minimum}")
    return value


def _as_str(value, path: str) -> str:
    if not isinstance(value, str) or not value:
        raise ConfigError(path, "must be a non-empty string")
    return value


def _as_list(value, path: str) -> list:
    if not isinstance(value, list):
        raise ConfigError(path, "must be a list")
    return value


def _as_dict(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, "must be an object")
    return value


def _parse_network(data, delta: int) -> NetworkModel:
    data = _as_dict(data, "network")
    kind = data.get("kind", SYNCHRONOUS)
    if kind not in (SYNCHRONOUS, PARTIALLY_SYNCHRONOUS, ASYNCHRONOUS):
        raise ConfigError("network.kind", f"unknown kind {kind!r}")
    policy = data.get("policy", "uniform")
    if policy not in ("uniform", "constant"):
        raise ConfigError("network.policy", f"unknown policy {policy!r}")
    gst = _as_int(data.get("gst", 0), "network.gst", 0)
    cap = _as_int(data.get("cap", 0), "network.cap", 0)
    return NetworkModel(kind=kind, delta=delta, gst=gst, policy=policy, cap=cap)


def _parse_channel(data, i: int, delta: int, seen_ids: set,
                   protocol: str) -> ChannelConfig:
    path = f"channels[{i}]"
    data = _as_dict(data, path)
    cid = _as_str(_require(data, "id", path), f"{path}.id")
    if cid in seen_ids:
        raise ConfigError(f"{path}.id", f"duplicate channel id {cid!r}")
    parties = _as_list(_require(data, "parties", path), f"{path}.parties")
    if len(parties) != 2 or len(set(parties)) != 2:
        raise ConfigError(f"{path}.parties", "need exactly two distinct parties")
    parties = tuple(_as_str(p, f"{path}.parties") for p in parties)
    deposits = _as_dict(_require(data, "deposits", path), f"{path}.deposits")
    if set(deposits) != set(parties):
        raise ConfigError(f"{path}.deposits", "keys must be exactly the two parties")
    dep = tuple((p, _as_int(deposits[p], f"{path}.deposits.{p}", 0)) for p in parties)
    committee = _as_list(_require(data, "committee", path), f"{path}.committee")
    committee = tuple(_as_str(m, f"{path}.committee") for m in committee)
    if len(set(committee)) != len(committee):
        raise ConfigError(f"{path}.committee", "member names must be unique")
    f = _as_int(_require(data, "f", path), f"{path}.f", 0)
    if len(committee) < 3 * f + 1:
        raise ConfigError(f"{path}.committee",
                          f"{len(committee)} members cannot tolerate f={f}; need 3f+1")
    fee = _as_int(data.get("fee", 0), f"{path}.fee", 0)
    margin = data.get("timelock_margin")
    if margin is not None:
        if protocol != "syncpcn":
            raise ConfigError(f"{path}.timelock_margin",
                              "only the synchronous protocol uses timelocks")
        margin = _as_int(margin, f"{path}.timelock_margin", 6 * delta)
    bad = (set(parties) | set(committee)) & RESERVED_IDS
    if bad:
        raise ConfigError(f"{path}", f"reserved actor name {sorted(bad)[0]!r}")
    if set(parties) & set(committee):
        raise ConfigError(f"{path}.committee", "committee must not include the parties")
    return ChannelConfig(cid, parties, dep, committee, f, fee, margin)


def _parse_payment(data, j: int, cfg_channels: list[ChannelConfig],
                   delta: int, seen_ids: set) -> PaymentConfig:
    path = f"payments[{j}]"
    data = _as_dict(data, path)
    pid = _as_str(data.get("id", f"pay{j}"), f"{path}.id")
    if pid in seen_ids:
        raise ConfigError(f"{path}.id", f"duplicate payment id {pid!r}")
    route = _as_list(_require(data, "path", path), f"{path}.path")
    route = tuple(_as_str(p, f"{path}.path") for p in route)
    if len(route) < 2:
        raise ConfigError(f"{path}.path", "need at least two parties")
    if len(set(route)) != len(route):
        raise ConfigError(f"{path}.path", "parties may appear only once")
    sender = _as_str(_require(data, "sender", path), f"{path}.sender")
    receiver = _as_str(_require(data, "receiver", path), f"{path}.receiver")
    if sender != route[0]:
        raise ConfigError(f"{path}.sender", "must be the first party on the path")
    if receiver != route[-1]:
        raise ConfigError(f"{path}.receiver", "must be the last party on the path")
    pairs = {frozenset(ch.parties) for ch in cfg_channels}
    for a, b in zip(route, route[1:]):
        if frozenset((a, b)) not in pairs:
            raise ConfigError(f"{path}.path", f"no channel between {a} and {b}")
    amount = _as_int(_require(data, "amount", path), f"{path}.amount", 1)
    start = _as_int(data.get("start", 0), f"{path}.start", 0)
    if start % delta:
        raise ConfigError(f"{path}.start", "times are in whole delta units")
    expect = data.get("expect_success")
    if expect is not None and not isinstance(expect, bool):
        raise ConfigError(f"{path}.expect_success", "must be a boolean")
    return PaymentConfig(pid, sender, receiver, amount, route, start, expect)


def _payment_channels(channels, payment) -> tuple[str, ...]:
    pair_to_id = {frozenset(ch.parties): ch.channel_id for ch in channels}
    return tuple(pair_to_id[frozenset((a, b))]
                 for a, b in zip(payment.path, payment.path[1:]))


def _parse_faults(data, protocol: str, channels: list[ChannelConfig],
                  party_names: set) -> FaultPlan:
    data = _as_dict(data, "faults")
    party_kinds = SYNC_PARTY_KINDS if protocol == "syncpcn" else PSYNC_PARTY_KINDS
    member_kinds = SYNC_MEMBER_KINDS if protocol == "syncpcn" else PSYNC_MEMBER_KINDS
    all_members = {m for ch in channels for m in ch.committee}

    parties = []
    for name, spec in sorted(_as_dict(data.get("parties", {}), "faults.parties").items()):
        path = f"faults.parties.{name}"
        if name not in party_names:
            raise ConfigError(path, "not a configured party")
        spec = _as_dict(spec, path)
        kind = _as_str(_require(spec, "kind", path), f"{path}.kind")
        if kind not in party_kinds:
            raise ConfigError(f"{path}.kind", f"unknown kind {kind!r}")
        if kind == "wormhole_skip":
            acc = _as_str(_require(spec, "accomplice", path), f"{path}.accomplice")
            if acc not in party_names:
                raise ConfigError(f"{path}.accomplice", "not a configured party")
        if kind == "equivocating_sender":
            for v in _as_list(_require(spec, "victims", path), f"{path}.victims"):
                if v not in all_members:
                    raise ConfigError(f"{path}.victims", f"{v!r} is not a member")
            spec = dict(spec, victims=tuple(spec["victims"]))
        parties.append((name, tuple(sorted(spec.items()))))

    members = []
    byz_by_channel: dict[str, int] = {}
    for name, spec in sorted(_as_dict(data.get("members", {}), "faults.members").items()):
        path = f"faults.members.{name}"
        if name not in all_members:
            raise ConfigError(path, "not a configured committee member")
        spec = _as_dict(spec, path)
        kind = _as_str(_require(spec, "kind", path), f"{path}.kind")
        if kind not in member_kinds:
            raise ConfigError(f"{path}.kind", f"unknown kind {kind!r}")
        members.append((name, tuple(sorted(spec.items()))))
        for ch in channels:
            if name in ch.committee:
                byz_by_channel[ch.channel_id] = byz_by_channel.get(ch.channel_id, 0) + 1
    for ch in channels:
        if byz_by_channel.get(ch.channel_id, 0) > ch.f:
            raise ConfigError("faults.members",
                              f"{ch.channel_id} has more than f={ch.f} faulty members")
    return FaultPlan(tuple(parties), tuple(members))


def parse_config(data: dict) -> ScenarioConfig:
    """Validate a raw config mapping; raises ConfigError with a field path."""
    data = _as_dict(data, "")
    protocol = _require(data, "protocol", "")
    if protocol not in PROTOCOLS:
        raise ConfigError("protocol", f"unknown protocol {protocol!r}")
    seed = data.get("seed", "0")
    if not isinstance(seed, (str, int)) or isinstance(seed, bool):
        raise ConfigError("seed", "must be a string or integer")
    seed = str(seed)
    delta = _as_int(data.get("delta", 1), "delta", 1)
    network = _parse_network(data.get("network", {}), delta)
    if protocol == "syncpcn" and network.kind != SYNCHRONOUS:
        raise ConfigError("network.kind",
                          "the timelock protocol assumes a synchronous network")

    raw_channels = _as_list(_require(data, "channels", ""), "channels")
    if not raw_channels:
        raise ConfigError("channels", "need at least one channel")
    channels: list[ChannelConfig] = []
    ids: set[str] = set()
    members_seen: set[str] = set()
    for i, ch in enumerate(raw_channels):
        parsed = _parse_channel(ch, i, delta, ids, protocol)
        if protocol != "syncpcn":
            overlap = members_seen & set(parsed.committee)
            if overlap:
                raise ConfigError(f"channels[{i}].committee",
                                  f"{sorted(overlap)[0]!r} already serves another "
                                  "channel; committees are per-channel here")
        members_seen |= set(parsed.committee)
        ids.add(parsed.channel_id)
        channels.append(parsed)
    party_names = {p for ch in channels for p in ch.parties}
    if party_names & members_seen:
        raise ConfigError("channels", "a party name collides with a member name")

    payments: list[PaymentConfig] = []
    pids: set[str] = set()
    for j, p in enumerate(_as_list(data.get("payments", []), "payments")):
        parsed = _parse_payment(p, j, channels, delta, pids)
        pids.add(parsed.payment_id)
        payments.append(parsed)
    for j, p in enumerate(payments):
        mine = set(_payment_channels(channels, p))
        for q in payments[:j]:
            if mine & set(_payment_channels(channels, q)):
                if abs(p.start - q.start) < 4 * delta:
                    raise ConfigError(
                        f"payments[{j}].start",
                        f"within 4 delta of {q.payment_id!r} on a shared channel")

    faults = _parse_faults(data.get("faults", {}), protocol, channels, party_names)

    cost_model = data.get("cost_model")
    if protocol == "syncpcn":
        if cost_model is not None:
            raise ConfigError("cost_model",
                              "only committee-governed protocols charge a cost model")
    else:
        if cost_model is None:
            raise ConfigError("cost_model", "missing")
        if cost_model not in COST_MODELS:
            raise ConfigError("cost_model", f"unknown cost model {cost_model!r}")

    time_limit = data.get("time_limit")
    if time_limit is not None:
        time_limit = _as_int(time_limit, "time_limit", 6 * delta)
        latest = max((p.start for p in payments), default=0)
        if time_limit <= latest:
            raise ConfigError("time_limit", "ends before the last payment starts")
    max_events = _as_int(data.get("max_events", 2_000_000), "max_events", 1000)
    report = data.get("report_complexity")
    if report is not None and not isinstance(report, bool):
        raise ConfigError("report_complexity", "must be a boolean")
    toy = data.get("toy_group", False)
    if not isinstance(toy, bool):
        raise ConfigError("toy_group", "must be a boolean")

    unknown = set(data) - {"protocol", "seed", "delta", "network", "channels",
                           "payments", "faults", "cost_model", "time_limit",
                           "max_events", "report_complexity", "toy_group"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")

    return ScenarioConfig(protocol, seed, delta, network, tuple(channels),
                          tuple(payments), faults, cost_model, time_limit,
                          max_events, report, toy)


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = path.read_text()
    except OSError as e:
        raise ConfigError(str(path), f"cannot read config: {e}") from e
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"not valid JSON: {e}") from e
    return parse_config(data)


# ---------------------------------------------------------------------------
# runtime construction
# ---------------------------------------------------------------------------

class _SilentMember(CommitteeMember):
    """A crashed registration member: hears nothing, says nothing."""

    def on_message(self, msg, src, sim):
        pass

    def on_timer(self, tag, data, sim):
        pass


class _Driver(Actor):
    """Injects configured payments (and scripted misbehavior) on schedule."""

    def __init__(self, runtime: "Runtime") -> None:
        super().__init__("drv")
        self.runtime = runtime

    def on_timer(self, tag, data, sim):
        if tag == "start-payment":
            self.runtime.launch(data, sim)


@dataclass
class Runtime:
    config: ScenarioConfig
    sim: Scheduler
    ledger: Ledger
    parties: dict
    members: dict
    plans: dict = field(default_factory=dict)    # syncpcn payment plans
    labels: dict = field(default_factory=dict)   # payment id -> run-time label

    def launch(self, payment_id: str, sim: Scheduler) -> None:
        p = next(q for q in self.config.payments if q.payment_id == payment_id)
        if self.config.protocol == "syncpcn":
            self.labels[payment_id] = payment_id
            self.parties[p.sender].start_payment(self.plans[payment_id], sim)
            return
        try:
            pay_id = self.parties[p.sender].pay(list(p.path), p.amount, sim)
        except (ValueError, KeyError) as e:
            # refused before anything hit the wire; nothing to unwind
            self.labels[payment_id] = f"{p.sender}#refused-{payment_id}"
            sim.note("payment", p.sender, annotation={
                "event": "refused", "payment": payment_id, "reason": str(e)})
            return
        self.labels[payment_id] = f"{p.sender}#{pay_id}"


def _build_sync(cfg: ScenarioConfig, sim: Scheduler, ks: Keystore,
                ledger: Ledger) -> Runtime:
    group = TOY_GROUP if cfg.toy_group else DEFAULT_GROUP
    pb = cfg.faults.party_behaviors()
    mb = cfg.faults.member_behaviors()

    members: dict[str, CommitteeMember] = {}
    for ch in cfg.channels:
        for m in ch.committee:
            if m in members:
                continue
            cls = _SilentMember if mb.get(m, {}).get("kind") == "silent" else CommitteeMember
            members[m] = sim.register(cls(m, ks))

    parties: dict[str, SyncParty] = {}
    for name in cfg.party_names():
        parties[name] = sim.register(SyncParty(
            name, ks, "chain", group, behavior=pb.get(name),
            receiver_margin=6 * cfg.delta))

    for ch in cfg.channels:
        deposits = dict(ch.deposits)
        ledger.open_channel(ch.channel_id, ch.parties, ch.committee, ch.f, deposits)
        d0 = None
        for who, peer in (ch.parties, ch.parties[::-1]):
            view = parties[who].attach_channel(ch.channel_id, peer, ch.committee,
                                               ch.f, deposits, cfg.delta)
            d0 = view.snapshot.digest(b"")
        for m in ch.committee:
            members[m].attach_channel(ch.channel_id, ch.parties, ch.f, d0)

    rt = Runtime(cfg, sim, ledger, parties, members)
    margins = _channel_margins(cfg)
    for p in cfg.payments:
        hops = []
        for idx, (a, b) in enumerate(zip(p.path, p.path[1:])):
            ch = cfg.channel_between(a, b)
            hops.append(RouteHop(ch.channel_id, a, b,
                                 fee=0 if idx == 0 else ch.fee,
                                 margin=margins[ch.channel_id]))
            if idx > 0:
                parties[a].fees[ch.channel_id] = ch.fee
            parties[b].margins[ch.channel_id] = margins[ch.channel_id]
        plan = setup_payment(p.payment_id, hops, p.amount, group,
                             random.Random(f"{cfg.seed}/{p.payment_id}"),
                             start=p.start)
        rt.plans[p.payment_id] = plan
        parties[p.receiver].expected[p.payment_id] = p.amount
    return rt


def _channel_margins(cfg: ScenarioConfig) -> dict[str, int]:
    # one margin per channel, shared by every payment crossing it; the
    # default leaves room for a full lock round trip on the longest route
    out: dict[str, int] = {}
    for ch in cfg.channels:
        if ch.timelock_margin is not None:
            out[ch.channel_id] = ch.timelock_margin
            continue
        longest = 1
        for p in cfg.payments:
            if ch.channel_id in _payment_channels(cfg.channels, p):
                longest = max(longest, len(p.path) - 1)
        out[ch.channel_id] = (6 * longest + 6) * cfg.delta
    return out


def _build_psync(cfg: ScenarioConfig, sim: Scheduler, ks: Keystore,
                 ledger: Ledger) -> Runtime:
    mode = "full" if cfg.protocol == "psyncpcn-full" else "alg1"
    cost = COST_MODELS[cfg.cost_model]
    pb = cfg.faults.party_behaviors()
    mb = cfg.faults.member_behaviors()

    infos = [ChannelInfo(ch.channel_id, ch.parties, ch.committee, ch.f, ch.fee)
             for ch in cfg.channels]
    directory = Directory(infos)

    members: dict[str, PsyncMember] = {}
    for ch, info in zip(cfg.channels, infos):
        deposits = dict(ch.deposits)
        for m in ch.committee:
            mem = PsyncMember(m, info, directory, ks, cost, cfg.delta,
                              mode=mode, behavior=mb.get(m))
            mem.fund(deposits)
            members[m] = sim.register(mem)
        ledger.open_channel(ch.channel_id, ch.parties, ch.committee, ch.f, deposits)

    parties: dict[str, PsyncParty] = {}
    for name in cfg.party_names():
        parties[name] = sim.register(PsyncParty(name, directory, ks, mode=mode,
                                                behavior=pb.get(name)))
    for ch in cfg.channels:
        for p, amount in ch.deposits:
            parties[p].init_channel(ch.channel_id, amount)
    return Runtime(cfg, sim, ledger, parties, members)


def build_runtime(cfg: ScenarioConfig) -> Runtime:
    ks = Keystore(f"keys/{cfg.seed}")
    sim = Scheduler(cfg.network, cfg.seed, max_events=cfg.max_events,
                    time_limit=cfg.time_limit)
    ledger = Ledger(ks)
    sim.register(LedgerActor("chain", ledger, cfg.seed))
    if cfg.protocol == "syncpcn":
        rt = _build_sync(cfg, sim, ks, ledger)
    else:
        rt = _build_psync(cfg, sim, ks, ledger)
    driver = sim.register(_Driver(rt))
    for p in cfg.payments:
        sim.timer(driver.id, p.start, "start-payment", p.payment_id)
    for name, b in cfg.faults.parties:
        b = dict(b)
        if "at" in b:
            rt.parties[name].schedule_misbehavior(int(b["at"]), sim)
    return rt


# ---------------------------------------------------------------------------
# running and reporting
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    config: ScenarioConfig
    sim: Scheduler
    world: WorldView
    verdicts: tuple[Verdict, ...]
    metrics: dict

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    @property
    def budget_exceeded(self) -> bool:
        return self.sim.budget_exceeded

    def write_artifacts(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "trace": out / "trace.ndjson",
            "metrics": out / "metrics.json",
            "verdicts": out / "verdicts.json",
        }
        paths["trace"].write_bytes(self.sim.trace.to_ndjson())
        paths["metrics"].write_text(
            json.dumps(self.metrics, indent=2, sort_keys=True) + "\n")
        from .properties import verdicts_to_json
        paths["verdicts"].write_text(verdicts_to_json(self.verdicts))
        return paths


def _world_specs(rt: Runtime) -> list[PaymentSpec]:
    cfg = rt.config
    specs = []
    for p in cfg.payments:
        label = rt.labels.get(p.payment_id, p.payment_id)
        specs.append(PaymentSpec(label, p.path,
                                 _payment_channels(cfg.channels, p),
                                 expect_success=p.expect_success))
    return specs


def _uniform_happy_line(cfg: ScenarioConfig) -> tuple[int, int] | None:
    """(n, k) when the run matches the instrumented-complexity shape."""
    if not cfg.faults.empty or len(cfg.payments) != 1:
        return None
    if cfg.network.policy != "constant":
        return None
    p = cfg.payments[0]
    if p.expect_success is False:
        return None
    if _payment_channels(cfg.channels, p) != tuple(c.channel_id for c in cfg.channels):
        return None
    sizes = {len(c.committee) for c in cfg.channels}
    if len(sizes) != 1:
        return None
    return sizes.pop(), len(cfg.channels)


def _channel_balances(rt: Runtime, ch: ChannelConfig, rec, byz) -> dict[str, int]:
    """Spendable per-party balance, preferring honest observers.

    A closed channel's on-chain split is authoritative; an open one is read
    from an honest endpoint's snapshot (timelock protocol) or an honest
    committee member (ordered protocol).  Locked amounts are not included.
    """
    if rec.final_balances is not None:
        return dict(rec.final_balances)
    if rt.config.protocol == "syncpcn":
        sources = sorted(ch.parties, key=lambda p: p in byz)
        for name in sources:
            view = rt.parties[name].views.get(ch.channel_id)
            if view is not None:
                return {p: v for p, v in view.snapshot.balances}
        return dict(ch.deposits)
    sources = sorted(ch.committee, key=lambda m: m in byz)
    for name in sources:
        member = rt.members.get(name)
        if member is not None and member.balances:
            return dict(member.balances)
    return dict(ch.deposits)


def _metrics(rt: Runtime, world: WorldView) -> dict:
    cfg, sim = rt.config, rt.sim
    cats = sorted({(r.annotation or {}).get("category", "?")
                   for r in sim.trace.sends()})
    by_cat = {c: len(sim.trace.sends(c)) for c in cats}
    if cfg.protocol == "syncpcn":
        counted = sum(by_cat.get(c, 0) for c in analysis.SYNC_COUNTED)
    else:
        counted, _bd = analysis.psyncpcn_counted(sim.trace)
    m = {
        "protocol": cfg.protocol,
        "seed": cfg.seed,
        "delta": cfg.delta,
        "final_time": sim.now,
        "events": sim.events_processed,
        "quiesced": world.quiesced,
        "budget_exceeded": sim.budget_exceeded,
        "time_limit_hit": sim.time_limit_hit,
        "messages": {"counted": counted, "by_category": by_cat},
        "payments": [
            {"id": p.payment_id, "label": rt.labels.get(p.payment_id),
             "sender": p.sender, "receiver": p.receiver, "amount": p.amount,
             "channels": list(oc.spec.channels), "statuses": list(oc.statuses)}
            for p, oc in zip(cfg.payments, world.outcomes)
        ],
        "channels": {},
    }
    byz = cfg.byzantine()
    for ch in cfg.channels:
        rec = rt.ledger.channels[ch.channel_id]
        entry = {"status": rec.status}
        if rec.final_balances is not None:
            entry["final_balances"] = dict(rec.final_balances)
        entry["balances"] = _channel_balances(rt, ch, rec, byz)
        m["channels"][ch.channel_id] = entry

    shape = _uniform_happy_line(cfg)
    want = cfg.report_complexity
    if want is None:
        want = shape is not None
    if want:
        if shape is None:
            raise ConfigError("report_complexity",
                              "run shape does not support formula comparison")
        n, k = shape
        try:
            report = analysis.compare_trace(sim.trace, cfg.protocol, n, k,
                                            delta=cfg.delta,
                                            cost_model=cfg.cost_model)
        except ValueError as e:
            # the payment never completed, so there is no happy path to
            # measure; only a forced report turns that into an error
            if isinstance(e, analysis.AccountingMismatch):
                raise
            if cfg.report_complexity:
                raise ConfigError("report_complexity", str(e)) from e
        else:
            m["complexity"] = report.row() | {"breakdown": report.breakdown}
    return m


def happy_line(protocol: str, k: int, n: int, *, cost_model: str | None = None,
               delta: int = 1, seed: str = "cell", amount: int = 100,
               max_events: int = 2_000_000) -> ScenarioConfig:
    """Canonical fault-free line: one payment over k channels, n-member
    committees, constant delays.  This is the shape the cost formulas are
    measured against."""
    if k < 1:
        raise ConfigError("k", "need at least one channel")
    f = (n - 1) // 3
    sync = protocol == "syncpcn"
    channels = [{
        "id": f"c{i}",
        "parties": [f"P{i}", f"P{i + 1}"],
        "deposits": {f"P{i}": 4 * amount, f"P{i + 1}": 4 * amount},
        "committee": [f"c{i}.m{j}" for j in range(n)],
        "f": f,
    } for i in range(k)]
    data = {
        "protocol": protocol,
        "seed": seed,
        "delta": delta,
        "network": {"kind": SYNCHRONOUS if sync else PARTIALLY_SYNCHRONOUS,
                    "policy": "constant", "gst": 0},
        "channels": channels,
        "payments": [{"id": "pay0", "sender": "P0", "receiver": f"P{k}",
                      "path": [f"P{i}" for i in range(k + 1)],
                      "amount": amount, "expect_success": True}],
        "max_events": max_events,
    }
    if not sync:
        data["cost_model"] = cost_model or "pbft-like"
    return parse_config(data)


def run_scenario(cfg: ScenarioConfig) -> RunResult:
    rt = build_runtime(cfg)
    rt.sim.run()
    specs = _world_specs(rt)
    byz = cfg.byzantine()
    if cfg.protocol == "syncpcn":
        world = syncpcn_world(rt.sim, specs, rt.parties, rt.members.values(),
                              rt.ledger, byzantine=byz)
    else:
        mode = "full" if cfg.protocol == "psyncpcn-full" else "alg1"
        world = psyncpcn_world(rt.sim, specs, rt.parties, rt.members.values(),
                               byzantine=byz, mode=mode)
    verdicts = run_all_checks(world)
    return RunResult(cfg, rt.sim, world, verdicts, _metrics(rt, world))


def run_file(path: str | Path, seed: str | None = None,
             out_dir: str | Path | None = None) -> RunResult:
    cfg = load_config(path)
    if seed is not None:
        cfg = ScenarioConfig(cfg.protocol, str(seed), cfg.delta, cfg.network,
                             cfg.channels, cfg.payments, cfg.faults,
                             cfg.cost_model, cfg.time_limit, cfg.max_events,
                             cfg.report_complexity, cfg.toy_group)
    result = run_scenario(cfg)
    if out_dir is not None:
        result.write_artifacts(out_dir)
    return result


# ---------------------------------------------------------------------------
# randomized scenarios for the property suites
# ---------------------------------------------------------------------------

def random_scenario(rng: random.Random, protocol: str) -> ScenarioConfig:
    """A line topology within the threat model, with a randomized fault plan.

    Shapes follow the security suites: k <= 4 hops, committees of 4 or 7, at
    most f faulty members per committee, parties drawn from the scripted
    misbehavior library. All-honest draws carry exact success expectations
    so the correctness check has teeth.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    sync = protocol == "syncpcn"
    k = rng.randint(1, 4)
    n = rng.choice([4, 7])
    f = (n - 1) // 3
    delta = rng.choice([1, 1, 2])
    names = [f"P{i}" for i in range(k + 1)]

    deficient = rng.random() < 0.25 and k >= 2
    short_channel = rng.randrange(1, k) if deficient else None
    amount = rng.randint(10, 200)

    channels = []
    for i in range(k):
        payer, payee = names[i], names[i + 1]
        deposit = amount // 2 if i == short_channel else 1000
        channels.append({
            "id": f"c{i}", "parties": [payer, payee],
            "deposits": {payer: deposit, payee: 1000},
            "committee": [f"c{i}.m{j}" for j in range(n)], "f": f,
            "fee": 0 if i == 0 else rng.randint(0, 3),
        })

    payments = [{"id": "pay0", "sender": names[0], "receiver": names[-1],
                 "amount": amount, "path": names, "start": 0}]
    if not deficient and rng.random() < 0.3:
        payments.append({"id": "pay1", "sender": names[0],
                         "receiver": names[-1], "amount": rng.randint(1, 50),
                         "path": names, "start": (8 * k + 12) * delta})

    faults: dict = {"parties": {}, "members": {}}
    roll = rng.random()
    if roll < 0.45:
        pass  # all honest; expectations below give def2 real work
    elif roll < 0.75 or k < 3:
        faults["parties"] = _random_party_faults(rng, protocol, names, channels)
    else:
        # colluders around an honest victim (the wormhole shape)
        if sync:
            faults["parties"] = {
                names[1]: {"kind": "wormhole_claim"},
                names[-2]: {"kind": "wormhole_skip", "accomplice": names[1]},
            }
        else:
            faults["parties"] = {names[1]: {"kind": "silent"}}
    if rng.random() < 0.4:
        victim_ch = rng.choice(channels)
        byz = rng.sample(list(victim_ch["committee"]), rng.randint(1, f))
        kinds = (["silent"] if sync else
                 ["silent", "stalling_leader", "equivocating_member",
                  "wrong_balance_closure"])
        faults["members"] = {m: {"kind": rng.choice(kinds)} for m in byz}

    all_honest = not faults["parties"] and not faults["members"]
    if all_honest:
        for p in payments:
            p["expect_success"] = not deficient

    data = {
        "protocol": protocol,
        "seed": f"rand-{rng.randrange(1 << 30)}",
        "delta": delta,
        "network": {"policy": rng.choice(["constant", "uniform"])},
        "channels": channels,
        "payments": payments,
        "faults": faults,
        "max_events": 400_000,
    }
    if not sync:
        data["cost_model"] = rng.choice(list(COST_MODELS))
    return parse_config(data)


def _random_party_faults(rng, protocol, names, channels) -> dict:
    if protocol == "syncpcn":
        kinds = ["withhold_reveal", "withhold_claim", "refuse_claims",
                 "dispute_instead_of_claim", "silent_after_reveal",
                 "silent_after_forward", "equivocating_sender", "silent"]
        who = rng.choice(names)
        kind = rng.choice(kinds)
        spec: dict = {"kind": kind}
        if kind == "silent":
            spec = {"kind": "honest", "silent": True}
        if kind == "equivocating_sender":
            ch = rng.choice(channels)
            if who not in ch["parties"]:
                who = ch["parties"][0]
            spec["victims"] = [rng.choice(ch["committee"])]
        if kind in ("silent_after_forward",) and who in (names[0], names[-1]):
            who = names[len(names) // 2] if len(names) > 2 else names[0]
        return {who: spec}
    who = rng.choice(names)
    kind = rng.choice(["silent", "overspend"])
    if kind == "overspend" and who != names[0]:
        kind = "silent"  # only a sender can try to overspend
    return {who: {"kind": kind}}
