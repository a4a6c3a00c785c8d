"""Security Manager Protocol codec (L2CAP CID 0x0006).

One PDU per frame: code byte followed by a fixed-size parameter block.
Codes outside the classified set decode as UNKNOWN and stay raw.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import IllegalFieldValue, InvariantViolation, TruncatedPdu


class SmpOpcode(enum.IntEnum):
    UNKNOWN = 0x00
    PAIRING_REQUEST = 0x01
    PAIRING_RESPONSE = 0x02
    PAIRING_CONFIRM = 0x03
    PAIRING_RANDOM = 0x04
    PAIRING_FAILED = 0x05
    ENCRYPTION_INFORMATION = 0x06
    IDENTITY_INFORMATION = 0x08
    PUBLIC_KEY = 0x0C
    DHKEY_CHECK = 0x0D


class IoCapability(enum.IntEnum):
    DISPLAY_ONLY = 0x00
    DISPLAY_YES_NO = 0x01
    KEYBOARD_ONLY = 0x02
    NO_INPUT_NO_OUTPUT = 0x03
    KEYBOARD_DISPLAY = 0x04


class AuthReq(enum.IntFlag):
    BONDING = 0x01
    MITM = 0x04
    SECURE_CONNECTIONS = 0x08
    KEYPRESS = 0x10


class AssociationMethod(enum.IntEnum):
    JUST_WORKS = 0
    PASSKEY_ENTRY = 1
    NUMERIC_COMPARISON = 2
    OOB = 3


#: parameter-block sizes for classified opcodes
_BODY_SIZES = {
    SmpOpcode.PAIRING_REQUEST: 6,
    SmpOpcode.PAIRING_RESPONSE: 6,
    SmpOpcode.PAIRING_CONFIRM: 16,
    SmpOpcode.PAIRING_RANDOM: 16,
    SmpOpcode.PAIRING_FAILED: 1,
    SmpOpcode.ENCRYPTION_INFORMATION: 16,
    SmpOpcode.IDENTITY_INFORMATION: 16,
    SmpOpcode.PUBLIC_KEY: 64,
    SmpOpcode.DHKEY_CHECK: 16,
}

MIN_ENC_KEY_SIZE = 7
MAX_ENC_KEY_SIZE = 16


@dataclass(frozen=True)
class SmpPdu:
    opcode: SmpOpcode
    body: bytes = field(compare=True, default=b"")
    raw: bytes = field(compare=False, default=b"")


@dataclass(frozen=True, eq=False)
class PairingFeatures(SmpPdu):
    """Pairing Request / Pairing Response feature exchange."""

    io_capability: IoCapability = IoCapability.NO_INPUT_NO_OUTPUT
    oob: int = 0
    auth_req: AuthReq = AuthReq(0)
    max_enc_key_size: int = MAX_ENC_KEY_SIZE
    initiator_key_dist: int = 0
    responder_key_dist: int = 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PairingFeatures):
            return NotImplemented
        return self._key() == other._key()

    def _key(self):
        return (self.opcode, self.io_capability, self.oob, self.auth_req,
                self.max_enc_key_size, self.initiator_key_dist, self.responder_key_dist)

    def secure_connections(self) -> bool:
        return bool(self.auth_req & AuthReq.SECURE_CONNECTIONS)


def association_method(initiator: PairingFeatures, responder: PairingFeatures) -> AssociationMethod:
    """Association model from both sides' features (desk-scale mapping)."""
    if initiator.oob and responder.oob:
        return AssociationMethod.OOB
    if not ((initiator.auth_req | responder.auth_req) & AuthReq.MITM):
        return AssociationMethod.JUST_WORKS
    caps = {initiator.io_capability, responder.io_capability}
    if IoCapability.NO_INPUT_NO_OUTPUT in caps:
        return AssociationMethod.JUST_WORKS
    sc = initiator.secure_connections() and responder.secure_connections()
    if sc and caps <= {IoCapability.DISPLAY_YES_NO, IoCapability.KEYBOARD_DISPLAY}:
        return AssociationMethod.NUMERIC_COMPARISON
    return AssociationMethod.PASSKEY_ENTRY


def decode_smp(raw: bytes) -> SmpPdu:
    if not raw:
        raise TruncatedPdu("empty SMP PDU")
    try:
        opcode = SmpOpcode(raw[0])
    except ValueError:
        opcode = SmpOpcode.UNKNOWN
    if opcode is SmpOpcode.UNKNOWN:    # includes the reserved code 0x00
        return SmpPdu(SmpOpcode.UNKNOWN, raw[1:], raw)
    body = raw[1:]
    if len(body) != _BODY_SIZES[opcode]:
        raise TruncatedPdu(
            f"{opcode.name} wants {_BODY_SIZES[opcode]} parameter bytes, got {len(body)}")
    if opcode in (SmpOpcode.PAIRING_REQUEST, SmpOpcode.PAIRING_RESPONSE):
        return _decode_features(opcode, body, raw)
    return SmpPdu(opcode, body, raw)


def _decode_features(opcode: SmpOpcode, body: bytes, raw: bytes) -> PairingFeatures:
    io_cap, oob, auth, key_size, ikd, rkd = body
    if io_cap > IoCapability.KEYBOARD_DISPLAY:
        raise IllegalFieldValue(f"IO capability {io_cap:#04x} reserved")
    if oob > 1:
        raise IllegalFieldValue(f"OOB flag {oob:#04x} reserved")
    if not MIN_ENC_KEY_SIZE <= key_size <= MAX_ENC_KEY_SIZE:
        raise IllegalFieldValue(
            f"maximum encryption key size {key_size} outside "
            f"{MIN_ENC_KEY_SIZE}..{MAX_ENC_KEY_SIZE}")
    return PairingFeatures(
        opcode, body, raw,
        io_capability=IoCapability(io_cap), oob=oob, auth_req=AuthReq(auth),
        max_enc_key_size=key_size, initiator_key_dist=ikd, responder_key_dist=rkd)


def encode_smp(pdu: SmpPdu) -> bytes:
    if isinstance(pdu, PairingFeatures):
        if not MIN_ENC_KEY_SIZE <= pdu.max_enc_key_size <= MAX_ENC_KEY_SIZE:
            raise InvariantViolation(
                f"maximum encryption key size {pdu.max_enc_key_size} outside "
                f"{MIN_ENC_KEY_SIZE}..{MAX_ENC_KEY_SIZE}")
        body = bytes([pdu.io_capability, pdu.oob, int(pdu.auth_req),
                      pdu.max_enc_key_size, pdu.initiator_key_dist, pdu.responder_key_dist])
        return bytes([pdu.opcode]) + body
    if pdu.opcode is SmpOpcode.UNKNOWN:
        if pdu.raw:
            return pdu.raw
        raise InvariantViolation("cannot encode UNKNOWN SMP PDU without raw bytes")
    if len(pdu.body) != _BODY_SIZES[pdu.opcode]:
        raise InvariantViolation(
            f"{pdu.opcode.name} wants {_BODY_SIZES[pdu.opcode]} parameter bytes")
    return bytes([pdu.opcode]) + pdu.body
