"""Policy container format.

A policy travels as a self-describing binary container:

    offset  size  field
    0       4     magic "IFW1"
    4       1     format version (1)
    5       1     id_len (1..16)
    6       n     program id, UTF-8
    +0      1     hook (Hook value)
    +1      1     event filter (EventKind value, 0xFF = any)
    +2      1     state filter (SessionState value, 0xFF = any)
    +3      1     reserved, must be zero
    +4      4     bytecode length, u32 LE
    +8      m     bytecode
    +8+m    4     CRC-32 (IEEE) over every preceding byte, u32 LE

Containers concatenate; decode_container returns the offset of the next
one so a patch body can carry a batch.  The id doubles as the key in
the specifications map, hence the 16-byte cap.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

from . import verifier
from .ctx import EVENT_ANY, STATE_ANY

__all__ = [
    "MAGIC", "FORMAT_VERSION", "ContainerError", "PolicyProgram",
    "VerifiedProgram", "encode_container", "decode_container",
    "decode_containers", "verify_program",
]

MAGIC = b"IFW1"
FORMAT_VERSION = 1
MAX_ID_BYTES = 16
_HEAD = struct.Struct("<BBBBI")  # hook, event, state, reserved, bytecode_len


class ContainerError(Exception):
    """Container rejected before any of it took effect."""


@dataclass(frozen=True)
class PolicyProgram:
    """One deployable rule: bytecode plus its attachment filters."""

    program_id: str
    hook: int
    bytecode: bytes
    event: int = EVENT_ANY
    state: int = STATE_ANY

    def __post_init__(self):
        encoded = self.program_id.encode("utf-8")
        if not 1 <= len(encoded) <= MAX_ID_BYTES:
            raise ContainerError(
                f"program id must encode to 1..{MAX_ID_BYTES} bytes, got {len(encoded)}")
        for name in ("hook", "event", "state"):
            value = getattr(self, name)
            if not 0 <= value <= 0xFF:
                raise ContainerError(f"{name} {value} outside one byte")

    def matches(self, hook: int, event: int, state: int) -> bool:
        return (self.hook == hook
                and self.event in (EVENT_ANY, event)
                and self.state in (STATE_ANY, state))


@dataclass(frozen=True)
class VerifiedProgram:
    """A PolicyProgram that passed the static verifier."""

    program: PolicyProgram
    instructions: tuple = field(compare=False)
    worst_case_instructions: int = field(compare=False, default=0)

    @property
    def program_id(self) -> str:
        return self.program.program_id


def verify_program(program: PolicyProgram) -> VerifiedProgram:
    analysis = verifier.verify_bytecode(program.bytecode)
    return VerifiedProgram(program, analysis.instructions,
                           analysis.worst_case_instructions)


def encode_container(program: PolicyProgram) -> bytes:
    ident = program.program_id.encode("utf-8")
    body = bytearray()
    body += MAGIC
    body.append(FORMAT_VERSION)
    body.append(len(ident))
    body += ident
    body += _HEAD.pack(program.hook, program.event, program.state, 0,
                       len(program.bytecode))
    body += program.bytecode
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    return bytes(body)


def decode_container(buf: bytes, offset: int = 0) -> tuple[PolicyProgram, int]:
    """Decode one container at `offset`; returns (program, next_offset)."""
    if len(buf) - offset < 6:
        raise ContainerError("container truncated before header")
    if buf[offset:offset + 4] != MAGIC:
        raise ContainerError("bad container magic")
    version = buf[offset + 4]
    if version != FORMAT_VERSION:
        raise ContainerError(f"unsupported container version {version}")
    id_len = buf[offset + 5]
    if not 1 <= id_len <= MAX_ID_BYTES:
        raise ContainerError(f"program id length {id_len} outside 1..{MAX_ID_BYTES}")
    head_at = offset + 6 + id_len
    if len(buf) < head_at + _HEAD.size:
        raise ContainerError("container truncated inside header")
    try:
        ident = buf[offset + 6:head_at].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ContainerError(f"program id is not UTF-8: {exc}") from None
    hook, event, state, reserved, code_len = _HEAD.unpack_from(buf, head_at)
    if reserved:
        raise ContainerError(f"reserved byte {reserved:#04x} must be zero")
    code_at = head_at + _HEAD.size
    crc_at = code_at + code_len
    if len(buf) < crc_at + 4:
        raise ContainerError("container truncated inside bytecode")
    stored = struct.unpack_from("<I", buf, crc_at)[0]
    actual = zlib.crc32(buf[offset:crc_at])
    if stored != actual:
        raise ContainerError(f"container CRC mismatch: stored {stored:#010x}, "
                             f"computed {actual:#010x}")
    program = PolicyProgram(ident, hook, bytes(buf[code_at:crc_at]), event, state)
    return program, crc_at + 4


def decode_containers(buf: bytes) -> list[PolicyProgram]:
    """Decode a concatenated batch; all-or-nothing."""
    programs = []
    offset = 0
    while offset < len(buf):
        program, offset = decode_container(buf, offset)
        programs.append(program)
    if not programs:
        raise ContainerError("empty container batch")
    return programs
