"""Accountability protocol: tamper-evident logs audited by witnesses.

A root streams commands to child nodes; every sent and received attested
message is appended to the owner's tamper-evident log, and a child also logs
its execution result, whose attested entry doubles as its response. A
witness holds a reference implementation of the deterministic child spec
plus (audited sequence, expected state); an audit walks new entries, checks
the cumulative-digest chain and the attestation tags, replays the commands
through the reference implementation, and reports the first deviation. Fault
model: only network-observable misbehavior is detectable, and detection is
the guarantee (bad actions may take effect before they are exposed).
"""

import struct
from dataclasses import dataclass, field

from ..kernel import AttestedMessage
from ..wire import decode_frame, encode_frame
from .common import ClusterNet, ProtocolConfig, build_cluster, log_session, transport_session
from .logchain import GENESIS_DIGEST, TamperEvidentLog, chain_digest

ENTRY_SENT = 0x53
ENTRY_RECV = 0x52
ENTRY_EXEC = 0x58

VERDICT_CONSISTENT = "Consistent"
VERDICT_EXPOSED = "Exposed"
VERDICT_CHAIN_BREAK = "ChainBreak"


def reference_execute(cmd: bytes) -> bytes:
    """The deterministic child specification all parties agree on."""
    return b"ack:" + cmd[::-1]


def encode_exec(result: bytes, cmd: bytes) -> bytes:
    return (bytes([ENTRY_EXEC]) + struct.pack(">I", len(result)) + result
            + struct.pack(">I", len(cmd)) + cmd)


def decode_exec(ctx: bytes) -> tuple[bytes, bytes]:
    (rlen,) = struct.unpack_from(">I", ctx, 1)
    result = ctx[5:5 + rlen]
    (clen,) = struct.unpack_from(">I", ctx, 5 + rlen)
    cmd = ctx[9 + rlen:9 + rlen + clen]
    return result, cmd


@dataclass
class Verdict:
    kind: str
    seq: int | None = None
    expected: bytes | None = None
    found: bytes | None = None

    @property
    def consistent(self) -> bool:
        return self.kind == VERDICT_CONSISTENT


class PrNode:
    """One participant: logs all attested traffic it sends and receives."""

    def __init__(self, node_id: int, cluster: ClusterNet):
        self.node_id = node_id
        self.cluster = cluster
        self.endpoint = cluster.endpoints[node_id]
        self.log = TamperEvidentLog()

    def _log_attested(self, kind: int, msg: AttestedMessage) -> AttestedMessage:
        ctx = bytes([kind]) + encode_frame(msg)
        entry_msg = self.endpoint.local_send(log_session(self.node_id), ctx)
        self.log.append(seq=entry_msg.counter, ctx=ctx, tag=entry_msg.tag)
        return entry_msg

    def _log_exec(self, result: bytes, cmd: bytes) -> AttestedMessage:
        ctx = encode_exec(result, cmd)
        entry_msg = self.endpoint.local_send(log_session(self.node_id), ctx)
        self.log.append(seq=entry_msg.counter, ctx=ctx, tag=entry_msg.tag)
        return entry_msg


class PrRoot(PrNode):
    """Streaming source: one command per round, fanned out to all children."""

    def __init__(self, node_id: int, cluster: ClusterNet, children: list[int]):
        super().__init__(node_id, cluster)
        self.children = children
        self.responses: dict[int, list[bytes]] = {c: [] for c in children}

    def send(self, ctx: bytes) -> None:
        for child in self.children:
            sent = self.endpoint.auth_send(
                transport_session(self.node_id, child), ctx)
            self._log_attested(ENTRY_SENT, sent)

    def step(self) -> bool:
        progressed = False
        for child in self.children:
            session = transport_session(self.node_id, child)
            for msg in self.endpoint.poll(session):
                progressed = True
                self._log_attested(ENTRY_RECV, msg)
                self.responses[child].append(msg.payload)
        return progressed


class PrChild(PrNode):
    """Executes commands per the deterministic spec; response = attested log entry."""

    def __init__(self, node_id: int, cluster: ClusterNet, root_id: int):
        super().__init__(node_id, cluster)
        self.root_id = root_id

    def execute(self, cmd: bytes) -> bytes:
        return reference_execute(cmd)

    def step(self) -> bool:
        progressed = False
        session = transport_session(self.node_id, self.root_id)
        for msg in self.endpoint.poll(session):
            progressed = True
            self._log_attested(ENTRY_RECV, msg)
            result = self.execute(msg.payload)
            response_entry = self._log_exec(result, msg.payload)
            self.endpoint.auth_send(session, encode_frame(response_entry))
        return progressed


class MutatingChild(PrChild):
    """Byzantine child: logs (and answers with) a deviated execution result."""

    def __init__(self, node_id: int, cluster: ClusterNet, root_id: int,
                 mutate_round: int):
        super().__init__(node_id, cluster, root_id)
        self.mutate_round = mutate_round
        self._round = 0

    def execute(self, cmd: bytes) -> bytes:
        self._round += 1
        result = reference_execute(cmd)
        if self._round == self.mutate_round:
            return b"lie:" + result[4:]
        return result


def rewrite_log_entry(node: PrNode, index: int, new_ctx: bytes) -> None:
    """Tamper with stored history (test fixture for the chain-break path)."""
    entry = node.log.entries[index]
    node.log.entries[index] = type(entry)(seq=entry.seq, ctx=new_ctx,
                                          tag=entry.tag,
                                          cum_digest=entry.cum_digest)


class Witness:
    """Auditor co-located with a node; reads the log through a shared handle."""

    def __init__(self, node: PrNode, verifier_endpoint):
        self.node = node
        # Read-only view plus a verification kernel holding the log key.
        self.verifier = verifier_endpoint
        self.audited_seq = 0
        self.expected_state: dict[str, int] = {"processed": 0}
        self._prev_digest = GENESIS_DIGEST
        self._pending_cmds: list[bytes] = []

    def audit(self) -> Verdict:
        """Walk entries from the audited sequence number; replay the spec."""
        log = self.node.log
        while self.audited_seq < len(log):
            entry = log.get(self.audited_seq)
            if entry.cum_digest != chain_digest(self._prev_digest, entry.ctx,
                                                entry.seq):
                return Verdict(VERDICT_CHAIN_BREAK, seq=entry.seq)
            probe = AttestedMessage(tag=entry.tag, payload=entry.ctx,
                                    device=self.node.node_id,
                                    session=log_session(self.node.node_id),
                                    counter=entry.seq)
            if not self.verifier.kernel.tag_matches(probe):
                return Verdict(VERDICT_CHAIN_BREAK, seq=entry.seq)
            verdict = self._replay(entry.seq, entry.ctx)
            if verdict is not None:
                return verdict
            self._prev_digest = entry.cum_digest
            self.audited_seq += 1
        return Verdict(VERDICT_CONSISTENT, seq=self.audited_seq)

    def _replay(self, seq: int, ctx: bytes) -> Verdict | None:
        kind = ctx[0]
        if kind == ENTRY_RECV:
            inner = decode_frame(ctx[1:])
            self._pending_cmds.append(inner.payload)
            return None
        if kind == ENTRY_EXEC:
            found, cmd = decode_exec(ctx)
            if not self._pending_cmds or self._pending_cmds[0] != cmd:
                return Verdict(VERDICT_EXPOSED, seq=seq,
                               expected=self._pending_cmds[0] if self._pending_cmds else b"",
                               found=cmd)
            self._pending_cmds.pop(0)
            expected = reference_execute(cmd)
            if found != expected:
                return Verdict(VERDICT_EXPOSED, seq=seq, expected=expected,
                               found=found)
            self.expected_state["processed"] += 1
            return None
        return None  # SENT entries replay trivially for the streaming root


@dataclass
class PrScenario:
    cluster: ClusterNet
    root: PrRoot
    children: dict[int, PrChild]
    witnesses: dict[int, Witness]
    config: ProtocolConfig = field(default=None)

    @classmethod
    def build(cls, seed: int = 0, n_children: int = 2,
              child_cls_at: dict[int, type] | None = None,
              child_kwargs_at: dict[int, dict] | None = None) -> "PrScenario":
        root_id = 1
        child_ids = list(range(2, 2 + n_children))
        devices = [root_id] + child_ids
        cluster = build_cluster(devices, seed)
        root = PrRoot(root_id, cluster, child_ids)
        children: dict[int, PrChild] = {}
        for child_id in child_ids:
            child_cls = (child_cls_at or {}).get(child_id, PrChild)
            kwargs = (child_kwargs_at or {}).get(child_id, {})
            children[child_id] = child_cls(child_id, cluster, root_id, **kwargs)
        witnesses = {child_id: Witness(children[child_id],
                                       cluster.endpoints[root_id])
                     for child_id in child_ids}
        config = ProtocolConfig(n=len(devices), f=len(devices) - 1)
        return cls(cluster=cluster, root=root, children=children,
                   witnesses=witnesses, config=config)

    def run_rounds(self, commands: list[bytes]) -> None:
        for cmd in commands:
            self.root.send(cmd)
            self.drain()

    def drain(self) -> None:
        while True:
            self.cluster.net.run_until_quiescent()
            progressed = self.root.step()
            for child_id in sorted(self.children):
                if self.children[child_id].step():
                    progressed = True
            if not progressed and not self.cluster.net.has_pending():
                break

    def audit_all(self) -> dict[int, Verdict]:
        return {child_id: witness.audit()
                for child_id, witness in sorted(self.witnesses.items())}
