"""Closed-form cost formulas, committee-sampling probabilities, and
trace-versus-formula comparison.

Everything here is a pure function.  The probability math uses exact
big-integer binomials reduced to floats only at the end, because values
like C(1200, 300) are far beyond any fixed-width representation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .simnet import TraceLog

THETA_MESSAGES = {
    "pbft-like": lambda n, k: 4 * k * n * n,
    "hotstuff-like": lambda n, k: 18 * k * n,
}
THETA_LATENCY = {
    "pbft-like": lambda k, delta: 6 * k * delta,
    "hotstuff-like": lambda k, delta: 16 * k * delta,
}


def _check_nk(n: int, k: int, delta: int) -> None:
    if n < 1:
        raise ValueError("committee size n must be at least 1")
    if k < 1:
        raise ValueError("hop count k must be at least 1")
    if delta < 1:
        raise ValueError("delta must be at least 1")


def syncpcn_expected(n: int, k: int, delta: int = 1) -> tuple[int, int]:
    """Happy-path message count and latency of a k-hop timelock payment."""
    _check_nk(n, k, delta)
    return 8 * n * k + 3 * k + 2, (8 * k + 2) * delta


def psyncpcn_expected(n: int, k: int, c_msg: int, c_lat: int,
                      delta: int = 1) -> tuple[int, int]:
    """Happy-path cost of a k-hop ordered-execution payment.

    c_msg and c_lat are the per-instance consensus charges, measured from an
    instrumented run or taken from a cost model.
    """
    _check_nk(n, k, delta)
    if c_msg < 0 or c_lat < 0:
        raise ValueError("consensus charges cannot be negative")
    return (2 * k - 1) * (2 * n + c_msg + 1), 2 * k * c_lat + 2 * delta


# ---------------------------------------------------------------------------
# committee sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingParams:
    """Draw n members from a global pool of N holding F faulty ones."""

    N: int
    F: int
    n: int

    def __post_init__(self) -> None:
        if not 0 <= self.F <= self.N:
            raise ValueError("need 0 <= F <= N")
        if not 1 <= self.n <= self.N:
            raise ValueError("need 1 <= n <= N")


def committee_correct_fraction(params: SamplingParams) -> Fraction:
    """Exact probability that a sampled committee has at most n/3 faults.

    The faulty count in the sample is hypergeometric; the sum runs from
    zero (an all-honest draw counts as correct).
    """
    N, F, n = params.N, params.F, params.n
    total = math.comb(N, n)
    good = sum(math.comb(F, fp) * math.comb(N - F, n - fp)
               for fp in range(0, n // 3 + 1))
    return Fraction(good, total)


def committee_correct_probability(params: SamplingParams) -> float:
    return float(committee_correct_fraction(params))


def default_size_grid(N: int, max_f: int = 100) -> list[int]:
    """Committee sizes n = 3f+1 for f = 1..max_f, capped at the pool size."""
    return [3 * f + 1 for f in range(1, max_f + 1) if 3 * f + 1 <= N]


def sampling_curve(N: int, F: int, sizes: Sequence[int] | None = None) -> list[tuple[int, float]]:
    if sizes is None:
        sizes = default_size_grid(N)
    return [(n, committee_correct_probability(SamplingParams(N, F, n)))
            for n in sizes]


FIG3_FAULTY_COUNTS = (300, 325, 350, 375, 400, 425, 450)


def sampling_plot_csv(N: int = 1200,
                      faulty_counts: Sequence[int] = FIG3_FAULTY_COUNTS,
                      sizes: Sequence[int] | None = None) -> str:
    """P_correct against committee size, one column per global faulty count."""
    if sizes is None:
        sizes = default_size_grid(N)
    curves = {F: dict(sampling_curve(N, F, sizes)) for F in faulty_counts}
    lines = ["n," + ",".join(f"F={F}" for F in faulty_counts)]
    for n in sizes:
        lines.append(f"{n}," + ",".join(f"{curves[F][n]:.10f}" for F in faulty_counts))
    return "\n".join(lines) + "\n"


def incentive_threshold(f: int, f_cm: float, p_s: float) -> float:
    """Minimum fee that makes forwarding profitable for committee members.

    Each of the 3f+1 members of the two committees adjacent to a hop incurs
    f_cm; the fee is collected only on success (probability p_s).
    """
    if not 0 < p_s <= 1:
        raise ValueError("success probability must be in (0, 1]")
    if f < 0 or f_cm < 0:
        raise ValueError("f and f_CM cannot be negative")
    return 2 * (3 * f + 1) * f_cm / p_s


# ---------------------------------------------------------------------------
# trace accounting
# ---------------------------------------------------------------------------

SYNC_COUNTED = ("party", "member", "notice")


@dataclass(frozen=True)
class ComplexityReport:
    protocol: str
    k: int
    n: int
    measured_messages: int
    measured_latency: int
    expected_messages: int
    expected_latency: int
    cost_model: str | None = None
    breakdown: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "protocol": self.protocol, "k": self.k, "n": self.n,
            "cost_model": self.cost_model or "",
            "measured_messages": self.measured_messages,
            "measured_latency": self.measured_latency,
            "expected_messages": self.expected_messages,
            "expected_latency": self.expected_latency,
        }


class AccountingMismatch(ValueError):
    """Measured trace costs disagree with the formulas."""

    def __init__(self, message: str, report: ComplexityReport) -> None:
        super().__init__(f"{message}; breakdown: {report.breakdown}")
        self.report = report


def _payment_span(trace: TraceLog) -> int:
    starts = [r.time for r in trace.of_kind("payment")
              if (r.annotation or {}).get("event") == "start"]
    dones = [r.time for r in trace.of_kind("payment")
             if (r.annotation or {}).get("event") == "complete"]
    if not starts or not dones:
        raise ValueError("trace has no completed payment to measure")
    return max(dones) - min(starts)


def syncpcn_measured(trace: TraceLog) -> tuple[int, int, dict]:
    breakdown = {cat: len(trace.sends(cat)) for cat in SYNC_COUNTED}
    return sum(breakdown.values()), _payment_span(trace), breakdown


def psyncpcn_counted(trace: TraceLog) -> tuple[int, dict]:
    """Count party notifications, consensus charges, and logical transfers.

    Consensus cost comes from the instrumented per-decision notes (one per
    member, deduplicated per instance); each executed activation contributes
    one logical hand-off message.
    """
    party = len(trace.sends("party"))
    instances: dict[tuple[str, int], dict] = {}
    for r in trace.of_kind("ordered"):
        a = r.annotation or {}
        instances.setdefault((a["cid"], a["slot"]), a)
    c_msg_total = sum(a["c_msg"] for a in instances.values())
    activations = set()
    for r in trace.of_kind("executed"):
        a = r.annotation or {}
        if a.get("result") in ("applied", "rejected"):
            activations.add((a["committee"], a["payment"], a["action"]))
    breakdown = {
        "party": party,
        "consensus": c_msg_total,
        "activations": len(activations),
        "instances": len(instances),
        "wire_transfers": len(trace.sends("transfer")),
        "wire_ordering": len(trace.sends("ordering")),
        "wire_requests": len(trace.sends("request")),
    }
    return party + c_msg_total + len(activations), breakdown


def psyncpcn_measured(trace: TraceLog) -> tuple[int, int, dict]:
    total, breakdown = psyncpcn_counted(trace)
    return total, _payment_span(trace), breakdown


def _instrumented_charges(trace: TraceLog) -> tuple[int, int]:
    charges = {(a["c_msg"], a["c_lat"]) for a in
               ((r.annotation or {}) for r in trace.of_kind("ordered"))}
    if len(charges) != 1:
        raise ValueError(f"inconsistent consensus charges in trace: {charges}")
    return next(iter(charges))


def compare_trace(trace: TraceLog, protocol: str, n: int, k: int,
                  delta: int = 1, cost_model: str | None = None) -> ComplexityReport:
    """Check a fault-free happy-path trace against the cost formulas.

    The timelock protocol must match exactly.  The ordered-execution
    protocol must match its closed form exactly given the instrumented
    consensus charges, and sit within [0.5, 2]x of the asymptotic envelope
    of the declared cost model.
    """
    if protocol == "syncpcn":
        measured, latency, breakdown = syncpcn_measured(trace)
        exp_m, exp_l = syncpcn_expected(n, k, delta)
        report = ComplexityReport(protocol, k, n, measured, latency,
                                  exp_m, exp_l, None, breakdown)
        if measured != exp_m:
            raise AccountingMismatch(
                f"measured {measured} messages, formula gives {exp_m}", report)
        if latency != exp_l:
            raise AccountingMismatch(
                f"measured latency {latency}, formula gives {exp_l}", report)
        return report
    if protocol in ("psyncpcn", "psyncpcn-full"):
        if cost_model not in THETA_MESSAGES:
            raise ValueError(f"unknown cost model: {cost_model!r}")
        measured, latency, breakdown = psyncpcn_measured(trace)
        c_msg, c_lat = _instrumented_charges(trace)
        exp_m, exp_l = psyncpcn_expected(n, k, c_msg, c_lat, delta)
        report = ComplexityReport(protocol, k, n, measured, latency,
                                  exp_m, exp_l, cost_model, breakdown)
        if measured != exp_m:
            raise AccountingMismatch(
                f"measured {measured} messages, formula gives {exp_m}", report)
        theta_m = THETA_MESSAGES[cost_model](n, k)
        theta_l = THETA_LATENCY[cost_model](k, delta)
        if not (0.5 * theta_m <= measured <= 2 * theta_m):
            raise AccountingMismatch(
                f"messages {measured} outside [0.5,2]x of {theta_m}", report)
        if not (0.5 * theta_l <= latency <= 2 * theta_l):
            raise AccountingMismatch(
                f"latency {latency} outside [0.5,2]x of {theta_l}", report)
        return report
    raise ValueError(f"unknown protocol: {protocol!r}")


def reports_to_json(reports: Iterable[ComplexityReport]) -> str:
    return json.dumps([r.row() | {"breakdown": r.breakdown} for r in reports],
                      indent=2, sort_keys=True)


def reports_to_csv(reports: Iterable[ComplexityReport]) -> str:
    cols = ["protocol", "k", "n", "cost_model", "measured_messages",
            "measured_latency", "expected_messages", "expected_latency"]
    lines = [",".join(cols)]
    for r in reports:
        row = r.row()
        lines.append(",".join(str(row[c]) for c in cols))
    return "\n".join(lines) + "\n"
