"""Exception taxonomy for the attested-networking emulator.

Every rejection path raises (or records) a distinct class so adversarial
tests can assert exactly which defense fired.
"""


class AttestnetError(Exception):
    """Base class for all library errors."""


# --- attestation kernel -----------------------------------------------------

class KernelError(AttestnetError):
    """Base class for attestation-kernel rejections."""


class UnknownSession(KernelError):
    """Session id is not provisioned in the keystore."""


class DuplicateSession(KernelError):
    """Session id already provisioned on this device."""


class PayloadTooLarge(KernelError):
    """Payload exceeds the configured maximum."""


class AuthFailure(KernelError):
    """Recomputed tag does not match the received tag (tampering or wrong key)."""


class CounterMismatch(KernelError):
    """Message counter is not the expected receive counter (replay, gap, reorder)."""

    def __init__(self, expected: int, got: int):
        super().__init__(f"expected counter {expected}, got {got}")
        self.expected = expected
        self.got = got


class CounterOverflow(KernelError):
    """A 64-bit session counter would wrap; hard error, never modular."""


# --- wire / transport -------------------------------------------------------

class FrameError(AttestnetError):
    """Byte sequence is not a well-formed wire frame."""


class TransportClosed(AttestnetError):
    """Transport cannot accept further submissions."""


class UnknownPeer(AttestnetError):
    """Destination device is not reachable through the network handle."""


class RetryBudgetExhausted(AttestnetError):
    """A frame was never accepted within its retransmission budget."""


# --- remote attestation -----------------------------------------------------

class HandshakeError(AttestnetError):
    """Base class for remote-attestation failures."""


class BadDeviceSignature(HandshakeError):
    """Hardware-key certificate over the controller binary does not verify."""


class MeasurementMismatch(HandshakeError):
    """Controller binary digest differs from the vendor's expected digest."""


class StaleNonce(HandshakeError):
    """Attestation certificate does not carry the vendor's fresh nonce."""


class BadControllerSignature(HandshakeError):
    """Controller signature over (cert, nonce) does not verify."""


class ChannelAuthFailure(HandshakeError):
    """Provisioning ciphertext failed authenticated decryption."""


class IdentityFrozen(HandshakeError):
    """Device already provisioned; re-provisioning is rejected."""


# --- transformation wrapper -------------------------------------------------

class TransformError(AttestnetError):
    """Base class for CFT-to-BFT wrapper rejections."""


class SenderStateMismatch(TransformError):
    """Sender's reported state hash disagrees with the local simulation."""


class EchoForged(TransformError):
    """Echoed receiver message does not carry a valid tag under our identity."""


class ViewLag(TransformError):
    """Echoed receiver message is not our most recent sent message."""


class NonDeterministicSpec(TransformError):
    """State machine failed the determinism probe at registration."""


# --- protocols ----------------------------------------------------------------

class ProtocolError(AttestnetError):
    """Base class for protocol-level failures."""


class OutOfRange(ProtocolError):
    """Log index outside the live [head, tail) window."""


class ChainValidationFailure(ProtocolError):
    """A proof-of-execution chain is inconsistent at some position."""

    def __init__(self, position: int, detail: str = ""):
        super().__init__(f"chain invalid at position {position}: {detail}")
        self.position = position
        self.detail = detail


class ChainBreak(ProtocolError):
    """Cumulative digest chain broken (log tampering)."""


class QuorumTimeout(ProtocolError):
    """Client never assembled f+1 identical replies (liveness only)."""


# --- checker ------------------------------------------------------------------

class InstanceTooLarge(AttestnetError):
    """Bounded instance exceeds the exhaustively checkable limits."""
