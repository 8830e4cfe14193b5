"""Deterministic discrete-event simulation core.

Time is an integer count of delta-units. Every run is a pure function of
(scenario, seed): delays come from seeded generators, ties break on a
monotone sequence number, and actors receive randomness only through the
scheduler's application RNG. The trace log records sends, deliveries, and
state transitions and serializes to newline-delimited JSON with a stable
byte representation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable

SYNCHRONOUS = "synchronous"
PARTIALLY_SYNCHRONOUS = "partially-synchronous"
ASYNCHRONOUS = "asynchronous"


def canonical_json(obj: Any) -> str:
    """Stable JSON text for digests and byte-identical replay."""
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def _plain(obj: Any):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {"__type__": type(obj).__name__}
        for f in dataclasses.fields(obj):
            out[f.name] = _plain(getattr(obj, f.name))
        return out
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, bytes):
        return obj.hex()
    if obj is None or isinstance(obj, (int, str, bool)):
        return obj
    raise TypeError(f"not canonicalizable: {type(obj)!r}")


def message_digest(msg: Any) -> str:
    return hashlib.sha256(canonical_json(msg).encode()).hexdigest()


# ---------------------------------------------------------------------------
# trace log
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRecord:
    time: int
    kind: str
    src: str
    dst: str
    payload_digest: str | None
    annotation: dict | None

    def to_json(self) -> str:
        return json.dumps({
            "time": self.time,
            "kind": self.kind,
            "from": self.src,
            "to": self.dst,
            "payload_digest": self.payload_digest,
            "annotation": _plain(self.annotation) if self.annotation else None,
        }, sort_keys=True, separators=(",", ":"))


class TraceLog:
    def __init__(self) -> None:
        self.records: list[TraceRecord] = []

    def append(self, record: TraceRecord) -> int:
        self.records.append(record)
        return len(self.records) - 1

    def to_ndjson(self) -> bytes:
        return ("\n".join(r.to_json() for r in self.records) + "\n").encode()

    def of_kind(self, kind: str) -> list[TraceRecord]:
        return [r for r in self.records if r.kind == kind]

    def sends(self, category: str | None = None) -> list[TraceRecord]:
        out = []
        for r in self.records:
            if r.kind != "send":
                continue
            if category is None or (r.annotation or {}).get("category") == category:
                out.append(r)
        return out


# ---------------------------------------------------------------------------
# network models
# ---------------------------------------------------------------------------

@dataclass
class NetworkModel:
    """Per-message delay policy.

    synchronous: every delay in [1, delta]; policy "constant" pins it to
    exactly delta (used by the complexity scenarios so measured latency is
    an exact multiple of delta).
    partially-synchronous: unbounded (finite, capped) before gst, then
    synchronous.
    asynchronous: arbitrary finite capped delays, no loss.
    """

    kind: str = SYNCHRONOUS
    delta: int = 1
    gst: int = 0
    policy: str = "uniform"
    cap: int = 0  # 0 means 50 * delta

    def __post_init__(self) -> None:
        if self.kind not in (SYNCHRONOUS, PARTIALLY_SYNCHRONOUS, ASYNCHRONOUS):
            raise ValueError(f"unknown network kind: {self.kind}")
        if self.delta < 1:
            raise ValueError("delta must be a positive integer")
        if self.policy not in ("uniform", "constant"):
            raise ValueError(f"unknown delay policy: {self.policy}")
        if self.cap == 0:
            self.cap = 50 * self.delta

    def _bounded(self, rng: random.Random) -> int:
        if self.policy == "constant":
            return self.delta
        return rng.randint(1, self.delta)

    def _unbounded(self, rng: random.Random) -> int:
        # heavy-tailed but finite; messages are never lost
        raw = int(rng.paretovariate(1.1))
        return max(1, min(self.delta + raw, self.cap))

    def delay(self, rng: random.Random, now: int) -> int:
        if self.kind == SYNCHRONOUS:
            return self._bounded(rng)
        if self.kind == PARTIALLY_SYNCHRONOUS:
            return self._bounded(rng) if now >= self.gst else self._unbounded(rng)
        return self._unbounded(rng)

    def bound_for(self, now: int) -> int | None:
        """Max legal delay for a send at `now`, or None if only finiteness holds."""
        if self.kind == SYNCHRONOUS:
            return self.delta
        if self.kind == PARTIALLY_SYNCHRONOUS and now >= self.gst:
            return self.delta
        return None


# ---------------------------------------------------------------------------
# actors and scheduler
# ---------------------------------------------------------------------------

class Actor:
    """Base event handler. Subclasses own all protocol state."""

    def __init__(self, actor_id: str) -> None:
        self.id = actor_id

    def on_message(self, msg: Any, src: str, sim: "Scheduler") -> None:  # pragma: no cover
        raise NotImplementedError

    def on_timer(self, tag: str, data: Any, sim: "Scheduler") -> None:
        pass


_DELIVER = 0
_TIMER = 1


class Scheduler:
    """Single event heap over (time, seq); seq is assignment order."""

    def __init__(self, network: NetworkModel, seed, trace: TraceLog | None = None,
                 max_events: int = 2_000_000, time_limit: int | None = None,
                 delay_override: Callable[[str, str, Any, int, random.Random], int | None] | None = None) -> None:
        self.network = network
        self.trace = trace if trace is not None else TraceLog()
        self.net_rng = random.Random(f"{seed}/net")
        self.app_rng = random.Random(f"{seed}/app")
        self.max_events = max_events
        self.time_limit = time_limit
        self.delay_override = delay_override
        self.now = 0
        self.actors: dict[str, Actor] = {}
        self._heap: list[tuple[int, int, int, str, str, Any, dict | None]] = []
        self._seq = 0
        self.events_processed = 0
        self.budget_exceeded = False
        self.time_limit_hit = False

    def register(self, actor: Actor) -> Actor:
        if actor.id in self.actors:
            raise ValueError(f"duplicate actor id: {actor.id}")
        self.actors[actor.id] = actor
        return actor

    # -- event creation ------------------------------------------------------

    def send(self, src: str, dst: str, msg: Any, annotation: dict | None = None) -> None:
        delay = None
        if self.delay_override is not None:
            delay = self.delay_override(src, dst, msg, self.now, self.net_rng)
        if delay is None:
            delay = self.network.delay(self.net_rng, self.now)
        bound = self.network.bound_for(self.now)
        if delay < 1 or (bound is not None and delay > bound):
            raise ValueError(f"delay {delay} outside model bounds at t={self.now}")
        digest = message_digest(msg)
        self.trace.append(TraceRecord(self.now, "send", src, dst, digest, annotation))
        self._seq += 1
        heapq.heappush(self._heap, (self.now + delay, self._seq, _DELIVER, src, dst, msg, annotation))

    def timer(self, actor_id: str, at: int, tag: str, data: Any = None) -> None:
        if at < self.now:
            at = self.now
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, _TIMER, actor_id, actor_id, (tag, data), None))

    def note(self, kind: str, src: str, dst: str = "-", annotation: dict | None = None,
             digest: str | None = None) -> int:
        """Record a state transition or measurement annotation."""
        return self.trace.append(TraceRecord(self.now, kind, src, dst, digest, annotation))

    # -- run loop -------------------------------------------------------------

    def run(self) -> None:
        while self._heap:
            if self.events_processed >= self.max_events:
                self.budget_exceeded = True
                break
            time, _seq, etype, src, dst, payload, annotation = heapq.heappop(self._heap)
            if self.time_limit is not None and time > self.time_limit:
                self.time_limit_hit = True
                break
            self.now = time
            self.events_processed += 1
            actor = self.actors.get(dst)
            if actor is None:
                continue
            if etype == _DELIVER:
                self.trace.append(TraceRecord(time, "deliver", src, dst,
                                              message_digest(payload), annotation))
                actor.on_message(payload, src, self)
            else:
                tag, data = payload
                actor.on_timer(tag, data, self)
