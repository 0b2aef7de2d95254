"""BFT counter: honest runs, equivocation detection, crash forwarding, quorums."""

import struct

from attestnet.checker import check_leader_strategies
from attestnet.protocols.bft import (
    BftCluster,
    BftReplica,
    EquivocatingLeader,
    WrongValueLeader,
)
from attestnet.protocols.common import encode_reply_payload


def test_honest_run_ten_increments():
    cluster = BftCluster.build(n=3, f=1, seed=1)
    client = cluster.clients[0]
    for round_id in range(1, 11):
        req = cluster.run_request(0, round_id)
        value = client.accepted_value(req)
        assert value == struct.pack(">Q", round_id)
        # quorum means at least f+1 = 2 identical replies arrived
        assert len(client.replies[req]) >= 2
    assert cluster.correct_values() == {1: 10, 2: 10, 3: 10}
    assert cluster.all_flags() == []


def test_equivocating_leader_flagged_by_correct_follower():
    cluster = BftCluster.build(n=3, f=1, seed=2,
                               leader_cls=EquivocatingLeader,
                               leader_kwargs={"equivocate_round": 2})
    client = cluster.clients[0]
    for round_id in range(1, 4):
        cluster.run_request(0, round_id)
    flags = cluster.all_flags()
    assert any(f.accused == 1 and f.reason == "equivocation" for f in flags)
    # no accepted value ever disagrees with the deterministic execution
    for req, value in client.accepted.items():
        (round_id,) = struct.unpack(">Q", value)
        assert 1 <= round_id <= 3


def test_equivocation_strategy_space_exhaustively_safe():
    # oracle for the two-follower round: enumeration over every leader
    # strategy shows conflicting applies are impossible without a flag
    report = check_leader_strategies()
    assert report.holds, report.line()


def test_wrong_value_leader_exposed_and_never_committed():
    cluster = BftCluster.build(n=3, f=1, seed=3,
                               leader_cls=WrongValueLeader,
                               leader_kwargs={"lie_round": 1})
    client = cluster.clients[0]
    req = cluster.run_request(0, 1)
    assert client.accepted_value(req) is None     # lie never reaches quorum
    flags = cluster.all_flags()
    assert any(f.accused == 1 and f.reason == "state-mismatch" for f in flags)


class CrashAfterFirstSendLeader(BftReplica):
    """Leader that reaches only one follower before failing."""

    def leader_handle(self, req: bytes) -> None:
        from attestnet.protocols.bft import KIND_PROOF, encode_inner
        from attestnet.protocols.common import log_session, transport_session
        from attestnet.wire import encode_frame

        output = self.value + 1
        self.value = output
        self.applied.add(req)
        attested = self.endpoint.local_send(log_session(self.node_id),
                                            encode_inner(req, output))
        first_follower = self.peers[0]
        self.endpoint.auth_send(transport_session(self.node_id, first_follower),
                                bytes([KIND_PROOF]) + encode_frame(attested))
        self.crashed = True


def test_leader_crash_mid_broadcast_forwarding_closure():
    cluster = BftCluster.build(n=3, f=1, seed=4,
                               leader_cls=CrashAfterFirstSendLeader)
    client = cluster.clients[0]
    req = cluster.run_request(0, 1)
    # both correct followers applied the increment through forwarding
    assert cluster.replicas[2].value == 1
    assert cluster.replicas[3].value == 1
    # the two follower replies form the quorum despite the crashed leader
    assert client.accepted_value(req) == struct.pack(">Q", 1)


def test_client_quorum_two_identical_beat_one_conflicting():
    cluster = BftCluster.build(n=3, f=1, seed=5)
    client = cluster.clients[0]
    req = client.issue(1)
    good = encode_reply_payload(req, struct.pack(">Q", 1))
    bad = encode_reply_payload(req, struct.pack(">Q", 99))
    client.deliver(cluster.cluster.keyring.sign(1, bad))
    assert client.accepted_value(req) is None     # one conflicting reply
    client.deliver(cluster.cluster.keyring.sign(2, good))
    assert client.accepted_value(req) is None     # still only one good vote
    client.deliver(cluster.cluster.keyring.sign(3, good))
    assert client.accepted_value(req) == struct.pack(">Q", 1)


def test_replies_for_foreign_requests_not_counted():
    cluster = BftCluster.build(n=3, f=1, seed=6, clients=2)
    mine, theirs = cluster.clients
    req_theirs = theirs.issue(1)
    payload = encode_reply_payload(req_theirs, struct.pack(">Q", 1))
    for device in (1, 2):
        mine.deliver(cluster.cluster.keyring.sign(device, payload))
    assert mine.accepted == {}             # never issued by this client
    assert mine.observed.get(req_theirs) == struct.pack(">Q", 1)


def test_single_reply_never_accepted():
    cluster = BftCluster.build(n=3, f=1, seed=7)
    client = cluster.clients[0]
    req = client.issue(1)
    payload = encode_reply_payload(req, struct.pack(">Q", 1))
    client.deliver(cluster.cluster.keyring.sign(2, payload))
    assert client.accepted_value(req) is None


def test_unsigned_reply_ignored():
    from attestnet.protocols.common import SignedReply

    cluster = BftCluster.build(n=3, f=1, seed=8)
    client = cluster.clients[0]
    req = client.issue(1)
    payload = encode_reply_payload(req, struct.pack(">Q", 1))
    client.deliver(SignedReply(device=2, payload=payload, signature=b"\x00" * 64))
    client.deliver(SignedReply(device=3, payload=payload, signature=b"\x00" * 64))
    assert client.accepted_value(req) is None
    assert client.ignored == 2
