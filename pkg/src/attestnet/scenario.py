"""Scenario files: topology, roles, workload, faults, and the run artifacts.

A scenario is a JSON object:

    {
      "protocol": "bft" | "cr" | "peerreview",
      "seed": 0,
      "rounds": 5,
      "n": 3, "f": 1,
      "attack": {"kind": "...", ...},          # optional
      "faults": {"seed": 0, "actions": [...]}  # optional wire-fault schedule
    }

Attack kinds per protocol:
    bft:        equivocate {round}, wrong_value {round}, crash {node, after_round},
                replay {session, sender, index}, reorder {...}, drop {...}
    cr:         lie {position, commit}
    peerreview: mutate_result {node, round}, rewrite_log {node, seq}

Run artifacts are JSON-serializable dicts: accepted values, flags,
diagnostics, and verdicts. A run is "safe" when no client accepted a wrong
value and every injected deviation was detected.
"""

import json
from dataclasses import dataclass, field

from .protocols.bft import BftCluster, BftReplica, EquivocatingLeader, WrongValueLeader
from .protocols.chain import ChainCluster, LyingMiddle
from .protocols.peerreview import MutatingChild, PrScenario, rewrite_log_entry
from .simnet import FaultAction, FaultSchedule


@dataclass
class ScenarioResult:
    ok: bool
    lines: list[dict] = field(default_factory=list)

    def dumps(self) -> str:
        return "\n".join(json.dumps(line, sort_keys=True) for line in self.lines)


def load_scenario(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def run_scenario(spec: dict) -> ScenarioResult:
    protocol = spec.get("protocol", "bft")
    if protocol == "bft":
        return _run_bft(spec)
    if protocol == "cr":
        return _run_cr(spec)
    if protocol == "peerreview":
        return _run_peerreview(spec)
    raise ValueError(f"unknown protocol {protocol!r}")


def _fault_schedule(spec: dict) -> FaultSchedule | None:
    faults = spec.get("faults")
    if not faults:
        return None
    return FaultSchedule(seed=faults.get("seed", spec.get("seed", 0)),
                         actions=[FaultAction(**a) for a in faults.get("actions", [])])


def _run_bft(spec: dict) -> ScenarioResult:
    seed = spec.get("seed", 0)
    rounds = spec.get("rounds", 5)
    n, f = spec.get("n", 3), spec.get("f", 1)
    attack = spec.get("attack") or {}
    kind = attack.get("kind", "none")

    leader_cls, leader_kwargs = BftReplica, {}
    if kind == "equivocate":
        leader_cls = EquivocatingLeader
        leader_kwargs = {"equivocate_round": attack.get("round", 1)}
    elif kind == "wrong_value":
        leader_cls = WrongValueLeader
        leader_kwargs = {"lie_round": attack.get("round", 1)}

    cluster = BftCluster.build(n=n, f=f, seed=seed, leader_cls=leader_cls,
                               leader_kwargs=leader_kwargs, clients=2)
    schedule = _fault_schedule(spec)
    if schedule is None and kind in ("replay", "reorder", "drop"):
        schedule = FaultSchedule(seed=seed, actions=[FaultAction(
            kind=kind,
            session=attack.get("session"),
            sender=attack.get("sender"),
            index=attack.get("index", 0),
            earlier_index=attack.get("earlier_index", 0))])
    if schedule is not None:
        cluster.cluster.net.install_schedule(schedule)

    crash = attack if kind == "crash" else None
    lines: list[dict] = []
    for round_id in range(1, rounds + 1):
        if crash and round_id == crash.get("after_round", 1) + 1:
            cluster.replicas[crash.get("node", n)].crashed = True
        req = cluster.clients[0].issue(round_id)
        cluster.replicas[cluster.leader_id].leader_handle(req)
        cluster.drain()
        values = {c.client_id: c.observed.get(req) for c in cluster.clients}
        lines.append({
            "round": round_id,
            "accepted": {str(k): (v.hex() if v else None) for k, v in values.items()},
        })

    flags = [{"accuser": fl.accuser, "accused": fl.accused, "reason": fl.reason}
             for fl in cluster.all_flags()]
    observed = [set(c.observed.items()) for c in cluster.clients]
    agreement = True
    for req in cluster.clients[0].observed:
        vals = {c.observed[req] for c in cluster.clients if req in c.observed}
        if len(vals) > 1:
            agreement = False
    byzantine_leader = kind in ("equivocate", "wrong_value")
    detected = bool(flags) if byzantine_leader else True
    ok = agreement and detected
    lines.append({
        "protocol": "bft", "agreement": agreement, "flags": flags,
        "values": {str(k): v for k, v in cluster.correct_values().items()},
        "ok": ok,
    })
    return ScenarioResult(ok=ok, lines=lines)


def _run_cr(spec: dict) -> ScenarioResult:
    seed = spec.get("seed", 0)
    rounds = spec.get("rounds", 4)
    n, f = spec.get("n", 3), spec.get("f", 1)
    attack = spec.get("attack") or {}
    kind = attack.get("kind", "none")

    node_cls_at, node_kwargs_at = {}, {}
    if kind == "lie":
        position = attack.get("position", 1)
        node_cls_at[position] = LyingMiddle
        node_kwargs_at[position] = {"lie_at_commit": attack.get("commit", 1)}
    cluster = ChainCluster.build(n=n, f=f, seed=seed, node_cls_at=node_cls_at,
                                 node_kwargs_at=node_kwargs_at, clients=2)
    schedule = _fault_schedule(spec)
    if schedule is not None:
        cluster.cluster.net.install_schedule(schedule)

    lines: list[dict] = []
    wrong_accept = False
    for round_id in range(1, rounds + 1):
        key = b"k%d" % round_id
        value = b"v%d" % (round_id * 17)
        req = cluster.run_put(0, round_id, key, value)
        accepted = cluster.clients[0].accepted_value(req)
        if accepted is not None and not accepted.endswith(value):
            wrong_accept = True
        lines.append({"round": round_id,
                      "accepted": accepted.hex() if accepted else None})

    flags = [{"accuser": fl.accuser, "position": fl.accused_position,
              "reason": fl.reason} for fl in cluster.all_flags()]
    histories = cluster.commit_histories()
    honest = kind == "none"
    if honest:
        identical = len({tuple(h) for h in histories.values()}) == 1
        ok = identical and not wrong_accept
    else:
        ok = bool(flags) and not wrong_accept
    lines.append({"protocol": "cr", "flags": flags,
                  "commit_histories": {str(k): v for k, v in histories.items()},
                  "ok": ok})
    return ScenarioResult(ok=ok, lines=lines)


def _run_peerreview(spec: dict) -> ScenarioResult:
    seed = spec.get("seed", 0)
    rounds = spec.get("rounds", 4)
    attack = spec.get("attack") or {}
    kind = attack.get("kind", "none")

    child_cls_at, child_kwargs_at = {}, {}
    if kind == "mutate_result":
        node = attack.get("node", 2)
        child_cls_at[node] = MutatingChild
        child_kwargs_at[node] = {"mutate_round": attack.get("round", 1)}
    scenario = PrScenario.build(seed=seed, n_children=spec.get("children", 2),
                                child_cls_at=child_cls_at,
                                child_kwargs_at=child_kwargs_at)
    commands = [b"cmd-%d" % r for r in range(1, rounds + 1)]
    scenario.run_rounds(commands)
    if kind == "rewrite_log":
        node = scenario.children[attack.get("node", 2)]
        rewrite_log_entry(node, attack.get("seq", 0), b"\x52rewritten-history")

    verdicts = scenario.audit_all()
    lines = [{"node": node, "verdict": v.kind, "seq": v.seq}
             for node, v in verdicts.items()]
    if kind == "none":
        ok = all(v.consistent for v in verdicts.values())
    else:
        target = attack.get("node", 2)
        ok = not verdicts[target].consistent
    lines.append({"protocol": "peerreview", "ok": ok})
    return ScenarioResult(ok=ok, lines=lines)
