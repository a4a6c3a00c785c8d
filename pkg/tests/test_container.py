"""Policy container encode/decode: framing, integrity, batch semantics."""

import struct
import zlib

import pytest
from hypothesis import given, settings, strategies as st

from blegate.vm import isa
from blegate.vm.ctx import EVENT_ANY, STATE_ANY, Hook
from blegate.vm.program import (
    ContainerError,
    PolicyProgram,
    decode_container,
    decode_containers,
    encode_container,
    verify_program,
)

_CODE = bytes.fromhex("b700000000000000" "9500000000000000")  # mov r0,0; exit

# layout oracle: magic, version 1, id_len 2, "kb", hook 3, event/state any,
# reserved 0, 16-byte program, CRC-32 over everything before it
_GOLDEN = bytes.fromhex(
    "4946573101026b6203ffff0010000000"
    "b700000000000000"
    "9500000000000000"
    "c7a14c9e")


def _prog(ident="kb", hook=int(Hook.SMP_RX), code=_CODE, **kw):
    return PolicyProgram(ident, hook, code, **kw)


def _refit_crc(buf: bytes) -> bytes:
    return buf[:-4] + struct.pack("<I", zlib.crc32(buf[:-4]))


def test_golden_container_bytes():
    assert encode_container(_prog()) == _GOLDEN
    program, offset = decode_container(_GOLDEN)
    assert offset == len(_GOLDEN)
    assert program == _prog()
    assert program.event == EVENT_ANY and program.state == STATE_ANY


def test_batch_decodes_in_order():
    batch = b"".join(encode_container(_prog(ident=f"rule-{i}", event=i))
                     for i in range(3))
    programs = decode_containers(batch)
    assert [p.program_id for p in programs] == ["rule-0", "rule-1", "rule-2"]
    assert [p.event for p in programs] == [0, 1, 2]


def test_id_byte_length_bounds():
    with pytest.raises(ContainerError):
        _prog(ident="")
    with pytest.raises(ContainerError):
        _prog(ident="x" * 17)
    # length is counted in encoded bytes, not characters
    with pytest.raises(ContainerError):
        _prog(ident="é" * 9)
    for ok in ("x", "x" * 16, "é" * 8):
        decoded, _ = decode_container(encode_container(_prog(ident=ok)))
        assert decoded.program_id == ok


def test_filter_bytes_must_fit():
    for field in ("hook", "event", "state"):
        with pytest.raises(ContainerError):
            _prog(**{field: 256})
        with pytest.raises(ContainerError):
            _prog(**{field: -1})


def test_every_single_byte_flip_is_rejected():
    for at in range(len(_GOLDEN)):
        tampered = bytearray(_GOLDEN)
        tampered[at] ^= 0x40
        with pytest.raises(ContainerError):
            decode_container(bytes(tampered))


def test_every_truncation_is_rejected():
    for end in range(len(_GOLDEN)):
        with pytest.raises(ContainerError):
            decode_container(_GOLDEN[:end])


def test_trailing_garbage_fails_the_batch():
    with pytest.raises(ContainerError):
        decode_containers(_GOLDEN + b"\x00")


def test_empty_batch_rejected():
    with pytest.raises(ContainerError):
        decode_containers(b"")


def test_unsupported_version_named_in_error():
    stale = _refit_crc(_GOLDEN[:4] + b"\x02" + _GOLDEN[5:])
    with pytest.raises(ContainerError, match="version 2"):
        decode_container(stale)


def test_reserved_byte_must_be_zero():
    # reserved sits right after the state filter, 3 bytes into the header
    head_at = 6 + _GOLDEN[5]
    poked = bytearray(_GOLDEN)
    poked[head_at + 3] = 0x01
    with pytest.raises(ContainerError, match="reserved"):
        decode_container(_refit_crc(bytes(poked)))


def test_non_utf8_id_rejected():
    raw = bytearray(_GOLDEN)
    raw[6:8] = b"\xff\xfe"
    with pytest.raises(ContainerError, match="UTF-8"):
        decode_container(_refit_crc(bytes(raw)))


def test_batch_with_one_bad_container_yields_nothing():
    good = encode_container(_prog(ident="good"))
    bad = bytearray(encode_container(_prog(ident="bad")))
    bad[-1] ^= 0xFF
    with pytest.raises(ContainerError):
        decode_containers(good + bytes(bad))


def test_verify_program_carries_analysis():
    verified = verify_program(_prog())
    assert verified.program_id == "kb"
    assert len(verified.instructions) == 2
    assert verified.worst_case_instructions == 2


def test_match_honours_wildcards():
    anywhere = _prog()
    assert anywhere.matches(int(Hook.SMP_RX), 3, 4)
    assert not anywhere.matches(int(Hook.SMP_TX), 3, 4)
    pinned = _prog(event=3, state=4)
    assert pinned.matches(int(Hook.SMP_RX), 3, 4)
    assert not pinned.matches(int(Hook.SMP_RX), 2, 4)
    assert not pinned.matches(int(Hook.SMP_RX), 3, 5)


_IDENT = st.text(
    st.characters(min_codepoint=0x21, max_codepoint=0x7E), min_size=1, max_size=16)


@given(_IDENT, st.integers(0, 0xFF), st.integers(0, 0xFF), st.integers(0, 0xFF),
       st.binary(min_size=0, max_size=64))
@settings(max_examples=200)
def test_round_trip_identity(ident, hook, event, state, code):
    program = PolicyProgram(ident, hook, code, event, state)
    decoded, offset = decode_container(encode_container(program))
    assert decoded == program
    assert offset == len(encode_container(program))


@given(st.binary(min_size=0, max_size=80))
@settings(max_examples=300)
def test_decode_totality(blob):
    """Arbitrary bytes either decode or raise ContainerError, nothing else."""
    try:
        decode_containers(blob)
    except ContainerError:
        pass
