"""Wire frame codec: bit-exact layout and bijectivity."""

import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attestnet.errors import FrameError
from attestnet.kernel import AttestedMessage
from attestnet.wire import FRAME_OVERHEAD, decode_frame, encode_frame

# Hand-assembled golden frame: session=0x00010203, device=0x0A0B0C0D,
# counter=0x1122334455667788, payload=b"golden", tag = the frozen oracle tag
# from test_kernel zero-padded to 64 bytes. Field packing written out here
# independently of the codec under test.
GOLDEN_FRAME = bytes.fromhex(
    "000102030a0b0c0d112233445566778800000006676f6c64656e"
    "48c8ca211d47e3fde344510bfc808720ea71a374ef90140ab1dda811caa0994a"
    "836591e08528927655bae05e02a5ead8"
    "00000000000000000000000000000000"
)
GOLDEN_MSG = AttestedMessage(
    tag=bytes.fromhex(
        "48c8ca211d47e3fde344510bfc808720ea71a374ef90140ab1dda811caa0994a"
        "836591e08528927655bae05e02a5ead8") + b"\x00" * 16,
    payload=b"golden",
    device=0x0A0B0C0D,
    session=0x00010203,
    counter=0x1122334455667788,
)


def test_golden_frame_encode():
    assert encode_frame(GOLDEN_MSG) == GOLDEN_FRAME
    assert len(GOLDEN_FRAME) == FRAME_OVERHEAD + 6


def test_golden_frame_decode():
    assert decode_frame(GOLDEN_FRAME) == GOLDEN_MSG


def test_layout_field_offsets():
    # session(4) device(4) counter(8) payload_len(4) payload tag(64), all BE
    session, device, counter, plen = struct.unpack_from(">IIQI", GOLDEN_FRAME)
    assert session == 0x00010203
    assert device == 0x0A0B0C0D
    assert counter == 0x1122334455667788
    assert plen == 6
    assert GOLDEN_FRAME[20:26] == b"golden"
    assert GOLDEN_FRAME[26:] == GOLDEN_MSG.tag


def test_short_frame_rejected():
    with pytest.raises(FrameError):
        decode_frame(GOLDEN_FRAME[:50])


def test_trailing_bytes_rejected():
    with pytest.raises(FrameError):
        decode_frame(GOLDEN_FRAME + b"x")


def test_length_field_mismatch_rejected():
    mutated = bytearray(GOLDEN_FRAME)
    mutated[19] ^= 0x01   # payload_len low byte
    with pytest.raises(FrameError):
        decode_frame(bytes(mutated))


@given(
    session=st.integers(min_value=0, max_value=2**32 - 1),
    device=st.integers(min_value=0, max_value=2**32 - 1),
    counter=st.integers(min_value=0, max_value=2**64 - 1),
    payload=st.binary(min_size=0, max_size=256),
    tag=st.binary(min_size=64, max_size=64),
)
@settings(max_examples=200, deadline=None)
def test_codec_bijective_on_valid_frames(session, device, counter, payload, tag):
    msg = AttestedMessage(tag=tag, payload=payload, device=device,
                          session=session, counter=counter)
    data = encode_frame(msg)
    assert len(data) == FRAME_OVERHEAD + len(payload)
    assert decode_frame(data) == msg
