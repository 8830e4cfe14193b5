#!/usr/bin/env python3
"""A fault-free multi-hop payment, with its message accounting.

Runs a 3-hop payment on the synchronous protocol and a 2-hop payment on
the committee-replicated variant under both ordering cost models, then
prints the measured totals next to the closed forms they must match.
"""

from pcnsim.scenario import happy_line, run_scenario


def show(title: str, res) -> None:
    c = res.metrics["complexity"]
    print(f"\n{title}")
    print(f"  checks: {'all pass' if res.passed else 'VIOLATION'}"
          f"  (events={res.metrics['events']}, final_time={res.metrics['final_time']})")
    print(f"  messages: measured {c['measured_messages']},"
          f" closed form {c['expected_messages']}")
    print(f"  latency:  measured {c['measured_latency']},"
          f" closed form {c['expected_latency']}")


def main() -> None:
    k, n = 3, 4
    res = run_scenario(happy_line("syncpcn", k, n, seed="demo/sync"))
    show(f"syncpcn, k={k} hops, committees of n={n}", res)
    print(f"  formula: 8nk+3k+2 = {8 * n * k + 3 * k + 2},"
          f" latency (8k+2)d = {8 * k + 2}")

    k, n = 2, 4
    for model in ("pbft-like", "hotstuff-like"):
        res = run_scenario(happy_line("psyncpcn", k, n, cost_model=model,
                                      seed=f"demo/{model}"))
        show(f"psyncpcn ({model}), k={k} hops, committees of n={n}", res)

    print("\nEvery run above is deterministic: same seed, same trace bytes.")


if __name__ == "__main__":
    main()
