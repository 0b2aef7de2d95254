"""Deterministic discrete-event network with a scripted adversary.

The base contract without an adversary is reliable FIFO: exactly-once,
in-order delivery per session. A fault schedule perturbs traffic on the wire,
between the sender's kernel and the receiver's kernel: drop, duplicate,
delay, reorder, single-bit tamper, replay, and forged-frame injection. The
transport retransmits any frame that has not been accepted until a retry
budget is exhausted; retransmitted frames are byte-identical (same counter),
which is what makes duplicate rejection by the receive counter correct.

Identical (topology, workload, schedule, seed) always produces the identical
event trace and endpoint diagnostics: simulated time advances only at event
processing, ties break on submission order, and the only randomness is the
schedule's seeded generator for forged-frame content.
"""

import heapq
import json
import random
import socket
import struct
import threading
from dataclasses import dataclass, field, asdict

from .device import Endpoint, SimClock
from .errors import FrameError, TransportClosed, UnknownPeer
from .wire import FRAME_OVERHEAD, decode_frame

DEFAULT_RETRY_BUDGET = 16
DEFAULT_BASE_LATENCY_NS = 1_500
DEFAULT_PER_BYTE_NS = 2

ACTION_KINDS = ("drop", "duplicate", "delay", "reorder", "tamper", "replay", "forge")


@dataclass(frozen=True)
class FaultAction:
    """One scripted adversarial action.

    Matches the index-th frame submission observed on the (session, sender)
    stream; None fields match anything. Each action fires at most once.
    """

    kind: str
    session: int | None = None
    sender: int | None = None
    index: int | None = None
    delay_ns: int = 0
    bit_offset: int = 160        # default: first payload byte
    earlier_index: int = 0
    frame: bytes | None = None

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")

    def matches(self, session: int, sender: int, index: int) -> bool:
        return (
            (self.session is None or self.session == session)
            and (self.sender is None or self.sender == sender)
            and (self.index is None or self.index == index)
        )


@dataclass
class FaultSchedule:
    """Deterministic script of adversarial actions; empty means loss-free FIFO."""

    seed: int = 0
    actions: list[FaultAction] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict) -> "FaultSchedule":
        actions = [FaultAction(**a) if not isinstance(a, FaultAction) else a
                   for a in data.get("actions", [])]
        return cls(seed=data.get("seed", 0), actions=actions)

    @classmethod
    def load(cls, path: str) -> "FaultSchedule":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"seed": self.seed, "actions": [asdict(a) for a in self.actions]}


@dataclass(frozen=True)
class NetEvent:
    """One delivery-level observation, totally ordered by (time, sequence)."""

    time_ns: int
    src: int
    dst: int
    session: int
    disposition: str   # delivered | dropped | tampered | duplicated | forged
    accepted: bool
    attempt: int
    frame: bytes = field(repr=False)


class _FrameRecord:
    __slots__ = ("data", "src", "dst", "session", "attempts", "accepted")

    def __init__(self, data: bytes, src: int, dst: int, session: int):
        self.data = data
        self.src = src
        self.dst = dst
        self.session = session
        self.attempts = 0
        self.accepted = False


class Network:
    """Single-threaded deterministic simulator core."""

    def __init__(self, clock: SimClock | None = None,
                 retry_budget: int = DEFAULT_RETRY_BUDGET,
                 base_latency_ns: int = DEFAULT_BASE_LATENCY_NS,
                 per_byte_ns: int = DEFAULT_PER_BYTE_NS):
        self.clock = clock if clock is not None else SimClock()
        self.retry_budget = retry_budget
        self.base_latency_ns = base_latency_ns
        self.per_byte_ns = per_byte_ns
        self.endpoints: dict[int, Endpoint] = {}
        self.declared: set[int] = set()
        self.trace: list[NetEvent] = []
        self.exhausted: list[_FrameRecord] = []
        self.closed = False
        self._queue: list[tuple[int, int, str, object]] = []
        self._seq = 0
        self._schedule = FaultSchedule()
        self._rng = random.Random(0)
        self._stream_index: dict[tuple[int, int], int] = {}
        self._stream_history: dict[tuple[int, int], list[bytes]] = {}
        self._pending_swap: dict[tuple[int, int], tuple[_FrameRecord, str]] = {}
        self._spent_actions: set[int] = set()

    # -- topology ------------------------------------------------------------

    def declare_device(self, device: int) -> None:
        self.declared.add(device)

    def attach(self, endpoint: Endpoint) -> None:
        self.endpoints[endpoint.device] = endpoint
        self.declared.add(endpoint.device)
        endpoint.transport = self

    def knows_device(self, device: int) -> bool:
        return device in self.declared

    # -- adversary -------------------------------------------------------------

    def install_schedule(self, schedule: FaultSchedule) -> None:
        self._schedule = schedule
        self._rng = random.Random(schedule.seed)
        self._stream_index.clear()
        self._stream_history.clear()
        self._pending_swap.clear()
        self._spent_actions.clear()

    def _next_action(self, session: int, sender: int, index: int) -> FaultAction | None:
        for i, action in enumerate(self._schedule.actions):
            if i in self._spent_actions:
                continue
            if action.matches(session, sender, index):
                self._spent_actions.add(i)
                return action
        return None

    def _forged_frame(self, action: FaultAction, template: bytes) -> bytes:
        if action.frame is not None:
            return action.frame
        # Same header and payload as the template, random tag: the strongest
        # forgery an adversary without the session key can aim at.
        body = template[:-64]
        return body + self._rng.randbytes(64)

    # -- submission ------------------------------------------------------------

    def latency_for(self, data: bytes) -> int:
        return self.base_latency_ns + self.per_byte_ns * len(data)

    def submit(self, src: int, dst: int, session: int, data: bytes) -> None:
        """Sender-side entry; applies adversarial actions at observation time."""
        if self.closed:
            raise TransportClosed("network closed")
        if dst not in self.endpoints:
            raise UnknownPeer(f"device {dst}")
        record = _FrameRecord(data, src, dst, session)
        self._observe(record, "delivered")

    def _observe(self, record: _FrameRecord, disposition: str) -> None:
        stream = (record.session, record.src)
        index = self._stream_index.get(stream, 0)
        self._stream_index[stream] = index + 1
        self._stream_history.setdefault(stream, []).append(record.data)

        # Release a held reorder frame after this one.
        held = self._pending_swap.pop(stream, None)

        action = self._next_action(record.session, record.src, index)
        if action is None:
            arrival = self._enqueue_delivery(record, disposition, 0)
        elif action.kind == "drop":
            arrival = self._enqueue_drop(record)
        elif action.kind == "delay":
            arrival = self._enqueue_delivery(record, disposition, action.delay_ns)
        elif action.kind == "duplicate":
            arrival = self._enqueue_delivery(record, disposition, 0)
            dup = _FrameRecord(record.data, record.src, record.dst, record.session)
            dup.accepted = True  # duplicates never retransmit on rejection
            self._enqueue_delivery(dup, "duplicated", 0, after_ns=arrival)
        elif action.kind == "tamper":
            arrival = self._enqueue_tampered(record, action.bit_offset)
        elif action.kind == "reorder":
            self._pending_swap[stream] = (record, disposition)
            arrival = self.clock.now_ns
        elif action.kind == "replay":
            arrival = self._enqueue_delivery(record, disposition, 0)
            history = self._stream_history[stream]
            src_idx = min(action.earlier_index, len(history) - 1)
            replayed = _FrameRecord(history[src_idx], record.src, record.dst, record.session)
            replayed.accepted = True
            self._enqueue_delivery(replayed, "duplicated", 0, after_ns=arrival)
        elif action.kind == "forge":
            arrival = self._enqueue_delivery(record, disposition, 0)
            forged = _FrameRecord(self._forged_frame(action, record.data),
                                  record.src, record.dst, record.session)
            forged.accepted = True
            self._enqueue_delivery(forged, "forged", 0, after_ns=arrival)

        if held is not None:
            # The held frame lands strictly after the frame that released it.
            held_record, held_disposition = held
            self._enqueue_delivery(held_record, held_disposition, 0,
                                   after_ns=arrival)

    def _push(self, time_ns: int, kind: str, payload: object) -> None:
        heapq.heappush(self._queue, (time_ns, self._seq, kind, payload))
        self._seq += 1

    def _enqueue_delivery(self, record: _FrameRecord, disposition: str,
                          extra_ns: int, after_ns: int | None = None) -> int:
        arrival = self.clock.now_ns + self.latency_for(record.data) + extra_ns
        if after_ns is not None:
            arrival = max(arrival, after_ns + 1)
        self._push(arrival, "deliver", (record, record.data, disposition))
        return arrival

    def _enqueue_tampered(self, record: _FrameRecord, bit_offset: int) -> int:
        mutated = bytearray(record.data)
        byte_i, bit_i = divmod(bit_offset % (len(mutated) * 8), 8)
        mutated[byte_i] ^= 1 << bit_i
        arrival = self.clock.now_ns + self.latency_for(record.data)
        self._push(arrival, "deliver", (record, bytes(mutated), "tampered"))
        return arrival

    def _enqueue_drop(self, record: _FrameRecord) -> int:
        arrival = self.clock.now_ns + self.latency_for(record.data)
        self._push(arrival, "drop", record)
        return arrival

    # -- event loop --------------------------------------------------------------

    def _flush_swaps(self) -> None:
        for stream in sorted(self._pending_swap):
            record, disposition = self._pending_swap.pop(stream)
            self._enqueue_delivery(record, disposition, 0)

    def step(self) -> bool:
        """Process one event; returns False when the queue is empty."""
        if not self._queue:
            if self._pending_swap:
                self._flush_swaps()
            if not self._queue:
                return False
        time_ns, _, kind, payload = heapq.heappop(self._queue)
        self.clock.advance_to(time_ns)
        if kind == "drop":
            record = payload
            record.attempts += 1
            self.trace.append(NetEvent(time_ns, record.src, record.dst, record.session,
                                       "dropped", False, record.attempts, record.data))
            self._maybe_retransmit(record)
            return True
        record, data, disposition = payload
        record.attempts += 1
        endpoint = self.endpoints.get(record.dst)
        accepted = endpoint.deliver_frame(data) if endpoint is not None else False
        if accepted and data == record.data:
            record.accepted = True
        self.trace.append(NetEvent(time_ns, record.src, record.dst, record.session,
                                   disposition, accepted, record.attempts, data))
        if not record.accepted:
            self._maybe_retransmit(record)
        return True

    def _maybe_retransmit(self, record: _FrameRecord) -> None:
        if record.accepted:
            return
        if record.attempts > self.retry_budget:
            self.exhausted.append(record)
            return
        self._observe(record, "delivered")

    def has_pending(self) -> bool:
        return bool(self._queue) or bool(self._pending_swap)

    def run_until_quiescent(self) -> None:
        """Drain all pending events; terminates because every action either
        consumes a frame or decrements a retry budget."""
        while self.step():
            pass


def deliver_loop(net: Network, schedule: FaultSchedule | None = None) -> list[NetEvent]:
    """Install a schedule, drain the network, and return the new events."""
    if schedule is not None:
        net.install_schedule(schedule)
    start = len(net.trace)
    net.run_until_quiescent()
    return net.trace[start:]


def run_until_quiescent(net: Network) -> None:
    net.run_until_quiescent()


# -- stream-socket bridge ------------------------------------------------------
#
# Socket wire protocol: 4-byte big-endian frame length, then the frame bytes.
# One bridge carries one point-to-point connection; determinism is not
# promised in socket mode.

_LEN_PREFIX = struct.Struct(">I")
MAX_SOCKET_FRAME = FRAME_OVERHEAD + 1024 * 1024


class SocketBridge:
    """Carries an endpoint's frames over a stream socket."""

    def __init__(self, endpoint: Endpoint):
        self.endpoint = endpoint
        endpoint.transport = self
        self._sock: socket.socket | None = None
        self._listener: socket.socket | None = None
        self._reader: threading.Thread | None = None
        self.closed = False
        self.codec_errors = 0

    # address is (host, port); port 0 picks a free port, returned for peers.
    def listen(self, address: tuple[str, int]) -> tuple[str, int]:
        self._listener = socket.create_server(address)
        return self._listener.getsockname()

    def accept(self) -> None:
        assert self._listener is not None
        conn, _ = self._listener.accept()
        self._start(conn)

    def connect(self, address: tuple[str, int]) -> None:
        self._start(socket.create_connection(address))

    def _start(self, sock: socket.socket) -> None:
        self._sock = sock
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def submit(self, src: int, dst: int, session: int, data: bytes) -> None:
        if self.closed or self._sock is None:
            raise TransportClosed("socket bridge closed")
        self._sock.sendall(_LEN_PREFIX.pack(len(data)) + data)

    def _recv_exactly(self, n: int) -> bytes | None:
        chunks = []
        remaining = n
        while remaining:
            chunk = self._sock.recv(remaining)
            if not chunk:
                return None
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def _read_loop(self) -> None:
        try:
            while not self.closed:
                header = self._recv_exactly(_LEN_PREFIX.size)
                if header is None:
                    break
                (length,) = _LEN_PREFIX.unpack(header)
                if length < FRAME_OVERHEAD or length > MAX_SOCKET_FRAME:
                    raise FrameError(f"implausible frame length {length}")
                data = self._recv_exactly(length)
                if data is None:
                    break
                decode_frame(data)  # peers speaking garbage close the connection
                self.endpoint.deliver_frame(data)
        except (FrameError, OSError):
            self.codec_errors += 1
        finally:
            self.close()

    def close(self) -> None:
        self.closed = True
        for sock in (self._sock, self._listener):
            if sock is not None:
                try:
                    sock.close()
                except OSError:
                    pass


def real_socket_bridge(endpoint: Endpoint, address: tuple[str, int],
                       listen: bool = False) -> SocketBridge:
    """Bind an endpoint to a stream socket; same kernel semantics as sim mode."""
    bridge = SocketBridge(endpoint)
    if listen:
        bridge.listen(address)
    else:
        bridge.connect(address)
    return bridge
