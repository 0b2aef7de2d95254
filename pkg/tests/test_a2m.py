"""Attested append-only memory: digest chain, boundaries, manifest replay."""

import hashlib

import pytest

from attestnet.device import DeviceConfig, Endpoint, SessionConfig, SimClock
from attestnet.errors import AuthFailure, OutOfRange
from attestnet.protocols.a2m import A2mStore
from attestnet.protocols.logchain import GENESIS_DIGEST, LogEntry

LOG = 5
MANIFEST = 6
KEY_LOG = bytes(range(32))
KEY_MAN = bytes(range(32, 64))

# Frozen: SHA-384(b"a" || 0 as 8 BE bytes || 48 zero bytes), computed with
# hashlib directly before the library existed.
ENTRY0_DIGEST = bytes.fromhex(
    "56de2079df8ab67c2bc3d6809ca69ea21c7d2cc78654903ccb0afe553abfcd7e"
    "50f5f2ec6c28a497ac848cb7d0587597"
)


def make_store():
    endpoint = Endpoint(DeviceConfig(device=1, sessions=[
        SessionConfig(LOG, 1, KEY_LOG), SessionConfig(MANIFEST, 1, KEY_MAN)]),
        clock=SimClock())
    return A2mStore(endpoint, manifest_log=MANIFEST)


def chain_oracle(entries: list[tuple[int, bytes]]) -> list[bytes]:
    """Independent fold over the digest-chain definition."""
    digests = []
    prev = b"\x00" * 48
    for seq, ctx in entries:
        prev = hashlib.sha384(ctx + seq.to_bytes(8, "big") + prev).digest()
        digests.append(prev)
    return digests


def test_three_appends_sequential_seqs():
    store = make_store()
    seqs = [store.append(LOG, bytes([i]))[1] for i in range(3)]
    assert seqs == [0, 1, 2]


def test_entry_zero_digest_matches_definition():
    store = make_store()
    store.append(LOG, b"a")
    assert store.lookup(LOG, 0).cum_digest == ENTRY0_DIGEST


def test_hundred_appends_chain_matches_independent_fold():
    store = make_store()
    ctxs = [b"entry-%03d" % i for i in range(100)]
    for ctx in ctxs:
        store.append(LOG, ctx)
    stored = [store.lookup(LOG, i).cum_digest for i in range(100)]
    expected = chain_oracle([(i, ctxs[i]) for i in range(100)])
    assert stored == expected


def test_lookup_is_pure_read():
    store = make_store()
    store.append(LOG, b"x")
    send_before = store.endpoint.kernel.session_state(LOG).send_cnt
    recv_before = store.endpoint.kernel.session_state(LOG).recv_cnt
    store.lookup(LOG, 0)
    assert store.endpoint.kernel.session_state(LOG).send_cnt == send_before
    assert store.endpoint.kernel.session_state(LOG).recv_cnt == recv_before


def test_verify_lookup_accepts_live_entry():
    store = make_store()
    store.append(LOG, b"ok")
    store.verify_lookup(LOG, store.lookup(LOG, 0))


def test_corrupted_ctx_fails_auth():
    store = make_store()
    store.append(LOG, b"genuine")
    entry = store.lookup(LOG, 0)
    forged = LogEntry(seq=entry.seq, ctx=b"tampered", tag=entry.tag,
                      cum_digest=entry.cum_digest)
    with pytest.raises(AuthFailure):
        store.verify_lookup(LOG, forged)


def test_truncate_moves_boundary():
    store = make_store()
    for i in range(4):
        store.append(LOG, bytes([i]))
    early = store.lookup(LOG, 1)
    store.truncate(LOG, head=2, z=b"z" * 32)
    with pytest.raises(OutOfRange):
        store.verify_lookup(LOG, early)      # boundary check fires first
    live = store.lookup(LOG, 3)
    store.verify_lookup(LOG, live)


def test_manifest_replay_yields_boundaries():
    store = make_store()
    for i in range(5):
        store.append(LOG, bytes([i]))
    store.truncate(LOG, head=2, z=b"n" * 32)
    store.append(LOG, b"after")
    # oracle per the algorithm: walk the manifest backwards to the last
    # truncation marker of this log
    head, trnc_seq = store.manifest_bounds(LOG)
    assert head == 2
    assert trnc_seq == 5     # the marker appended after entries 0..4


def test_truncate_twice_same_nonce_distinct_manifest_entries():
    store = make_store()
    for i in range(3):
        store.append(LOG, bytes([i]))
    e1 = store.truncate(LOG, head=1, z=b"q" * 32)
    e2 = store.truncate(LOG, head=2, z=b"q" * 32)
    assert e1.seq != e2.seq
    assert e1.ctx != e2.ctx     # inner attestation counters differ


def test_truncate_beyond_tail_rejected():
    store = make_store()
    store.append(LOG, b"only")
    with pytest.raises(OutOfRange):
        store.truncate(LOG, head=9, z=b"z" * 32)


def test_prefix_property_between_snapshots():
    """Earlier entries form a digest-verified prefix of any later snapshot."""
    store = make_store()
    for i in range(10):
        store.append(LOG, b"p%d" % i)
    snap1 = [store.lookup(LOG, i).cum_digest for i in range(10)]
    for i in range(10, 20):
        store.append(LOG, b"p%d" % i)
    snap2 = [store.lookup(LOG, i).cum_digest for i in range(20)]
    assert snap2[:10] == snap1
    # and the chain still verifies from genesis
    ctxs = [(i, b"p%d" % i) for i in range(20)]
    assert chain_oracle(ctxs) == snap2
