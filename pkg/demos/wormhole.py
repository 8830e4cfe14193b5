#!/usr/bin/env python3
"""Two colluding forwarders try to cut an honest one out of the route.

P1 and P3 bracket the honest P2: P3 skips the cooperative claim toward
P2 and leaks the witness straight back to its accomplice, who tries to
claim upstream anyway. The run shows the attack failing: the honest
middle sees both of its channels resolve the same way, and the
colluders end up strictly out of pocket.
"""

from importlib.resources import files

from pcnsim.scenario import load_config, run_scenario


def main() -> None:
    path = files("pcnsim").joinpath("scenarios", "wormhole-attack.json")
    cfg = load_config(str(path))
    res = run_scenario(cfg)

    print("scenario: wormhole-attack (P1 + P3 collude around honest P2)")
    pay = res.metrics["payments"][0]
    print(f"  channel outcomes: {dict(zip(pay['channels'], pay['statuses']))}")

    deposits = {ch.channel_id: dict(ch.deposits) for ch in cfg.channels}
    attackers = {"P1", "P3"}
    gain = 0
    for cid, entry in sorted(res.metrics["channels"].items()):
        deltas = {p: entry["balances"][p] - deposits[cid][p]
                  for p in entry["balances"]}
        print(f"  {cid} [{entry['status']}]: balance deltas {deltas}")
        gain += sum(d for p, d in deltas.items() if p in attackers)

    print(f"  attacker aggregate delta: {gain:+d} coins"
          f" (honest forwarding would have earned them +3 in fees)")
    for v in res.verdicts:
        print(f"  {v.check} {v.label}: {'pass' if v.passed else 'FAIL'}")


if __name__ == "__main__":
    main()
