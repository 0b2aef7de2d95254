"""Attestation kernel: the entire trusted computing base of one emulated device.

The kernel binds every outgoing message to a per-session monotonic counter
under an HMAC, and accepts incoming messages only in exact counter order.
Together the two halves give non-equivocation (a sender cannot bind two
different payloads to one (device, session, counter) triple) and transferable
authentication (anyone holding the session key can check who produced a
message, even after forwarding).

Concretely a tag is HMAC-SHA-384 over

    payload ‖ device-id (4 bytes, big-endian) ‖ counter (8 bytes, big-endian)

zero-padded from 48 to 64 bytes. The session id selects the key but is not
part of the MAC input. Attest samples the send counter *before* incrementing
it; verify accepts only the exact expected receive counter and advances it by
one. A rejected message never moves a counter, so a correct retransmission of
the expected counter can still be accepted afterwards.
"""

import hmac
from dataclasses import dataclass, field

from .errors import (
    AuthFailure,
    CounterMismatch,
    CounterOverflow,
    DuplicateSession,
    PayloadTooLarge,
    UnknownSession,
)

MAC_LEN = 48                    # HMAC-SHA-384 output
TAG_LEN = 64                    # wire tag: MAC zero-padded to 64 bytes
KEY_LEN = 32
DEVICE_WIRE_LEN = 4
COUNTER_WIRE_LEN = 8
SESSION_LIMIT = 2 ** 32
DEVICE_LIMIT = 2 ** 32
COUNTER_LIMIT = 2 ** 64
DEFAULT_MAX_PAYLOAD = 64 * 1024

_TAG_PAD = b"\x00" * (TAG_LEN - MAC_LEN)


@dataclass
class SessionState:
    """Per-session key and monotonic counters.

    The key is deliberately excluded from repr so session secrets never leak
    into logs or assertion messages. Counters only ever move forward, by
    exactly one per successful attest/verify.
    """

    key: bytes = field(repr=False)
    send_cnt: int = 0
    recv_cnt: int = 0

    def __post_init__(self):
        if len(self.key) != KEY_LEN:
            raise ValueError(f"session key must be {KEY_LEN} bytes")


@dataclass(frozen=True)
class AttestedMessage:
    """Wire unit: payload plus the attestation binding it to (device, session, counter)."""

    tag: bytes
    payload: bytes
    device: int
    session: int
    counter: int

    def triple(self) -> tuple[int, int, int]:
        """The non-equivocation identity of this message."""
        return (self.device, self.session, self.counter)


def mac_input(payload: bytes, device: int, counter: int) -> bytes:
    return (
        payload
        + device.to_bytes(DEVICE_WIRE_LEN, "big")
        + counter.to_bytes(COUNTER_WIRE_LEN, "big")
    )


def compute_tag(key: bytes, payload: bytes, device: int, counter: int) -> bytes:
    """64-byte attestation tag: HMAC-SHA-384 zero-padded to 64 bytes."""
    mac = hmac.digest(key, mac_input(payload, device, counter), "sha384")
    return mac + _TAG_PAD


def attest_with(state: SessionState, device: int, session: int, payload: bytes,
                max_payload: int = DEFAULT_MAX_PAYLOAD) -> AttestedMessage:
    """Attest a payload against an explicit session state.

    The emitted counter is the send counter sampled before the increment,
    so a fresh session emits 0, 1, 2, ... with no repeats. Deterministic for
    fixed (key, payload, device, session, counter).
    """
    if len(payload) > max_payload:
        raise PayloadTooLarge(f"{len(payload)} > {max_payload}")
    if state.send_cnt >= COUNTER_LIMIT:
        raise CounterOverflow("send counter exhausted")
    counter = state.send_cnt
    tag = compute_tag(state.key, payload, device, counter)
    state.send_cnt = counter + 1
    return AttestedMessage(tag=tag, payload=payload, device=device,
                           session=session, counter=counter)


def verify_with(state: SessionState, msg: AttestedMessage) -> AttestedMessage:
    """Verify a message against an explicit session state.

    Acceptance requires the recomputed tag to match *and* the counter to be
    exactly the expected receive counter; only then does the counter advance.
    Tag mismatch raises AuthFailure; a valid tag with the wrong counter
    (replay, gap, or reorder) raises CounterMismatch and leaves the state
    untouched.
    """
    expected_tag = compute_tag(state.key, msg.payload, msg.device, msg.counter)
    if not hmac.compare_digest(expected_tag, msg.tag):
        raise AuthFailure("tag mismatch")
    if msg.counter != state.recv_cnt:
        raise CounterMismatch(expected=state.recv_cnt, got=msg.counter)
    if state.recv_cnt >= COUNTER_LIMIT:
        raise CounterOverflow("receive counter exhausted")
    state.recv_cnt += 1
    return msg


class AttestationKernel:
    """Keystore plus counter store for one device.

    All operations on one device are serialized by the owning task; the
    kernel itself performs no locking.
    """

    def __init__(self, device: int, max_payload: int = DEFAULT_MAX_PAYLOAD):
        if not 0 <= device < DEVICE_LIMIT:
            raise ValueError("device id out of 32-bit range")
        self.device = device
        self.max_payload = max_payload
        self._sessions: dict[int, SessionState] = {}

    def provision_session(self, session: int, key: bytes) -> SessionState:
        """Install a shared key for a session with zeroed counters."""
        if not 0 <= session < SESSION_LIMIT:
            raise ValueError("session id out of 32-bit range")
        if session in self._sessions:
            raise DuplicateSession(f"session {session}")
        state = SessionState(key=key)
        self._sessions[session] = state
        return state

    def session_state(self, session: int) -> SessionState:
        try:
            return self._sessions[session]
        except KeyError:
            raise UnknownSession(f"session {session}") from None

    def sessions(self) -> list[int]:
        return list(self._sessions)

    def attest(self, session: int, payload: bytes) -> AttestedMessage:
        state = self.session_state(session)
        return attest_with(state, self.device, session, payload, self.max_payload)

    def verify(self, msg: AttestedMessage) -> AttestedMessage:
        state = self.session_state(msg.session)
        return verify_with(state, msg)

    def tag_matches(self, msg: AttestedMessage) -> bool:
        """Pure MAC check with no counter movement.

        Used where entries are re-checked out of stream order (stored log
        entries, echoed messages); the session's key still decides validity.
        """
        state = self.session_state(msg.session)
        expected = compute_tag(state.key, msg.payload, msg.device, msg.counter)
        return hmac.compare_digest(expected, msg.tag)
