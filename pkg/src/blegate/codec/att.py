"""Minimal ATT shapes (L2CAP CID 0x0004).

Only the pieces the downgrade-attack patterns need: the fixed 5-byte
error response and the handle-bearing read/write requests.  Everything
else is surfaced as an opaque AttPdu so inspection still sees it.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .errors import TruncatedPdu

ATT_ERROR_PIN_OR_KEY_MISSING = 0x06


class AttOpcode(enum.IntEnum):
    UNKNOWN = 0x00
    ERROR_RESPONSE = 0x01
    READ_REQUEST = 0x0A
    READ_RESPONSE = 0x0B
    WRITE_REQUEST = 0x12
    WRITE_RESPONSE = 0x13


@dataclass(frozen=True)
class AttPdu:
    opcode: AttOpcode
    handle: int = 0
    error_code: int = 0
    request_opcode: int = 0
    value: bytes = b""


def decode_att(raw: bytes) -> AttPdu:
    if not raw:
        raise TruncatedPdu("empty ATT PDU")
    try:
        opcode = AttOpcode(raw[0])
    except ValueError:
        return AttPdu(AttOpcode.UNKNOWN, value=raw[1:])
    body = raw[1:]
    if opcode is AttOpcode.ERROR_RESPONSE:
        if len(body) != 4:
            raise TruncatedPdu(f"error response wants 4 body bytes, got {len(body)}")
        req, handle, code = struct.unpack("<BHB", body)
        return AttPdu(opcode, handle=handle, error_code=code, request_opcode=req)
    if opcode in (AttOpcode.READ_REQUEST, AttOpcode.WRITE_REQUEST):
        if len(body) < 2:
            raise TruncatedPdu(f"{opcode.name} needs a 2-byte handle")
        handle = struct.unpack_from("<H", body)[0]
        return AttPdu(opcode, handle=handle, value=body[2:])
    return AttPdu(opcode, value=body)


def encode_att(pdu: AttPdu) -> bytes:
    if pdu.opcode is AttOpcode.ERROR_RESPONSE:
        return struct.pack("<BBHB", pdu.opcode, pdu.request_opcode, pdu.handle, pdu.error_code)
    if pdu.opcode in (AttOpcode.READ_REQUEST, AttOpcode.WRITE_REQUEST):
        return bytes([pdu.opcode]) + struct.pack("<H", pdu.handle) + pdu.value
    return bytes([pdu.opcode]) + pdu.value
