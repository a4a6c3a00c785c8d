"""Link-layer PDU codec.

Two over-the-air header forms exist and their first bytes collide
bitwise, so the caller states which channel the bytes came from:

* advertising channel: ``type(4) | flags(4)`` then ``length``;
* data channel: ``LLID(2) | NESN | SN | MD`` then ``length``,
  where LLID 3 is an LL control PDU and LLID 1/2 carry L2CAP.

Addresses are exposed in display order (MSB first); the wire carries
them LSB first.  Multi-byte integers are little-endian throughout.
L2CAP is unwrapped only far enough to route CID 0x0006 to the SMP
decoder and CID 0x0004 to the minimal ATT shapes; every other CID's
payload stays raw.  Unrecognized kinds decode as UNKNOWN, never as an
error: policies must be able to see unclassified traffic.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from .errors import IllegalFieldValue, InvariantViolation, OversizedPdu, TruncatedPdu

MAX_PAYLOAD = 251

ADV_HEADER = struct.Struct("<BB")
L2CAP_HEADER = struct.Struct("<HH")
_LLDATA = struct.Struct("<I3sBHHHH5sB")

L2CAP_CID_ATT = 0x0004
L2CAP_CID_SMP = 0x0006


class Channel(enum.Enum):
    ADVERTISING = "advertising"
    DATA = "data"


class LlKind(enum.IntEnum):
    """Stable kind codes; policy programs read these from the context block."""

    UNKNOWN = 0
    ADV_IND = 1
    SCAN_REQ = 2
    SCAN_RSP = 3
    CONNECT_IND = 4
    LL_CONNECTION_PARAM_REQ = 5
    LL_FEATURE_REQ = 6
    LL_LENGTH_REQ = 7
    LL_ENC_REQ = 8
    LL_ENC_RSP = 9
    LL_TERMINATE_IND = 10
    DATA_L2CAP = 11


_ADV_TYPE_TO_KIND = {
    0x0: LlKind.ADV_IND,
    0x3: LlKind.SCAN_REQ,
    0x4: LlKind.SCAN_RSP,
    0x5: LlKind.CONNECT_IND,
}
_ADV_KIND_TO_TYPE = {v: k for k, v in _ADV_TYPE_TO_KIND.items()}

_CTRL_OPCODE_TO_KIND = {
    0x02: LlKind.LL_TERMINATE_IND,
    0x03: LlKind.LL_ENC_REQ,
    0x04: LlKind.LL_ENC_RSP,
    0x08: LlKind.LL_FEATURE_REQ,
    0x0F: LlKind.LL_CONNECTION_PARAM_REQ,
    0x14: LlKind.LL_LENGTH_REQ,
}
_CTRL_KIND_TO_OPCODE = {v: k for k, v in _CTRL_OPCODE_TO_KIND.items()}

#: exact CtrData sizes for the control opcodes we classify
_CTRL_SIZES = {0x02: 1, 0x03: 22, 0x04: 12, 0x08: 8, 0x0F: 23, 0x14: 8}


def _addr_from_air(raw: bytes) -> bytes:
    return raw[::-1]


def _addr_to_air(addr: bytes) -> bytes:
    if len(addr) != 6:
        raise InvariantViolation(f"address must be 6 bytes, got {len(addr)}")
    return addr[::-1]


@dataclass(frozen=True)
class LinkLayerPdu:
    kind: LlKind
    raw: bytes = field(compare=False, default=b"")

    @property
    def header_flags(self) -> int:
        return self.raw[0] & 0xF0 if self.raw else 0


@dataclass(frozen=True, eq=False)
class ConnectInd(LinkLayerPdu):
    """CONNECT_IND with its full LLData so encoding is bit-exact."""

    initiator_address: bytes = b"\x00" * 6
    advertiser_address: bytes = b"\x00" * 6
    access_address: int = 0x50656030
    crc_init: int = 0x555555
    win_size: int = 1
    win_offset: int = 0
    interval: int = 24          # 1.25 ms units; zero is legal here, policy rejects it
    latency: int = 0
    timeout: int = 72
    channel_map: bytes = b"\xff\xff\xff\xff\x1f"
    hop: int = 9
    sca: int = 0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ConnectInd):
            return NotImplemented
        return self._key() == other._key()

    def _key(self):
        return (
            self.initiator_address, self.advertiser_address, self.access_address,
            self.crc_init, self.win_size, self.win_offset, self.interval,
            self.latency, self.timeout, self.channel_map, self.hop, self.sca,
        )

    def channel_map_popcount(self) -> int:
        return sum(bin(b).count("1") for b in self.channel_map)


@dataclass(frozen=True, eq=False)
class AdvPdu(LinkLayerPdu):
    """ADV_IND / SCAN_RSP: advertiser address plus opaque AD payload."""

    advertiser_address: bytes = b"\x00" * 6
    data: bytes = b""

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AdvPdu):
            return NotImplemented
        return (self.kind, self.advertiser_address, self.data) == (
            other.kind, other.advertiser_address, other.data)


@dataclass(frozen=True, eq=False)
class ScanReq(LinkLayerPdu):
    scanner_address: bytes = b"\x00" * 6
    advertiser_address: bytes = b"\x00" * 6

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScanReq):
            return NotImplemented
        return (self.scanner_address, self.advertiser_address) == (
            other.scanner_address, other.advertiser_address)


@dataclass(frozen=True, eq=False)
class LlCtrlPdu(LinkLayerPdu):
    """Classified LL control PDU; ctr_data is the opcode's parameter bytes."""

    opcode: int = 0
    ctr_data: bytes = b""

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LlCtrlPdu):
            return NotImplemented
        return (self.kind, self.opcode, self.ctr_data) == (
            other.kind, other.opcode, other.ctr_data)


@dataclass(frozen=True, eq=False)
class L2capFrame(LinkLayerPdu):
    cid: int = 0
    payload: bytes = b""

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, L2capFrame):
            return NotImplemented
        return (self.cid, self.payload) == (other.cid, other.payload)


def decode_ll(raw: bytes, channel: Channel = Channel.DATA) -> LinkLayerPdu:
    """Decode one link-layer PDU (header + payload, after deframing)."""
    if len(raw) < 2:
        raise TruncatedPdu(f"need 2 header bytes, got {len(raw)}")
    declared = raw[1]
    if declared > MAX_PAYLOAD:
        raise OversizedPdu(f"declared payload {declared} exceeds {MAX_PAYLOAD}")
    payload = raw[2:]
    if len(payload) != declared:
        raise TruncatedPdu(f"declared payload {declared}, got {len(payload)}")
    if channel is Channel.ADVERTISING:
        return _decode_adv(raw[0], payload, raw)
    return _decode_data(raw[0], payload, raw)


def _decode_adv(header: int, payload: bytes, raw: bytes) -> LinkLayerPdu:
    kind = _ADV_TYPE_TO_KIND.get(header & 0x0F)
    if kind is None:
        return LinkLayerPdu(LlKind.UNKNOWN, raw)
    if kind is LlKind.CONNECT_IND:
        return _decode_connect_ind(payload, raw)
    if kind is LlKind.SCAN_REQ:
        if len(payload) != 12:
            raise IllegalFieldValue(f"SCAN_REQ payload must be 12 bytes, got {len(payload)}")
        return ScanReq(kind, raw,
                       scanner_address=_addr_from_air(payload[:6]),
                       advertiser_address=_addr_from_air(payload[6:12]))
    # ADV_IND / SCAN_RSP: address + 0..31 bytes of AD data
    if len(payload) < 6 or len(payload) > 37:
        raise IllegalFieldValue(f"advertising payload length {len(payload)} out of range")
    return AdvPdu(kind, raw, advertiser_address=_addr_from_air(payload[:6]), data=payload[6:])


def _decode_connect_ind(payload: bytes, raw: bytes) -> ConnectInd:
    if len(payload) != 34:
        raise IllegalFieldValue(f"CONNECT_IND payload must be 34 bytes, got {len(payload)}")
    init_a, adv_a = payload[:6], payload[6:12]
    aa, crc, win_size, win_offset, interval, latency, timeout, chm, hop_sca = \
        _LLDATA.unpack(payload[12:])
    channel_map = chm
    if channel_map[4] & 0xE0:
        raise IllegalFieldValue("channel map reserved bits set")
    if not any(channel_map):
        raise IllegalFieldValue("channel map selects no data channels")
    hop = hop_sca & 0x1F
    if not 5 <= hop <= 16:
        raise IllegalFieldValue(f"hop increment {hop} outside 5..16")
    return ConnectInd(
        LlKind.CONNECT_IND, raw,
        initiator_address=_addr_from_air(init_a),
        advertiser_address=_addr_from_air(adv_a),
        access_address=aa,
        crc_init=int.from_bytes(crc, "little"),
        win_size=win_size, win_offset=win_offset, interval=interval,
        latency=latency, timeout=timeout,
        channel_map=channel_map, hop=hop, sca=hop_sca >> 5,
    )


def _decode_data(header: int, payload: bytes, raw: bytes) -> LinkLayerPdu:
    llid = header & 0x03
    if llid == 0x03:
        if not payload:
            raise TruncatedPdu("control PDU without opcode")
        opcode = payload[0]
        kind = _CTRL_OPCODE_TO_KIND.get(opcode)
        if kind is None:
            return LinkLayerPdu(LlKind.UNKNOWN, raw)
        if len(payload) - 1 != _CTRL_SIZES[opcode]:
            raise IllegalFieldValue(
                f"control opcode {opcode:#04x} wants {_CTRL_SIZES[opcode]} CtrData bytes, "
                f"got {len(payload) - 1}")
        return LlCtrlPdu(kind, raw, opcode=opcode, ctr_data=payload[1:])
    if llid in (0x01, 0x02):
        if len(payload) < 4:
            raise TruncatedPdu("L2CAP basic header needs 4 bytes")
        l2len, cid = L2CAP_HEADER.unpack_from(payload)
        body = payload[4:]
        if len(body) != l2len:
            raise IllegalFieldValue(f"L2CAP declares {l2len} bytes, frame carries {len(body)}")
        return L2capFrame(LlKind.DATA_L2CAP, raw, cid=cid, payload=body)
    return LinkLayerPdu(LlKind.UNKNOWN, raw)


def header_kind(raw: bytes, channel: Channel) -> LlKind:
    """Best-effort kind from the raw header alone; never raises.

    Used to keep a kind hint for malformed packets so policies can
    still pattern-match what the attacker claimed to send.
    """
    if not raw:
        return LlKind.UNKNOWN
    if channel is Channel.ADVERTISING:
        return _ADV_TYPE_TO_KIND.get(raw[0] & 0x0F, LlKind.UNKNOWN)
    llid = raw[0] & 0x03
    if llid == 0x03:
        if len(raw) < 3:
            return LlKind.UNKNOWN
        return _CTRL_OPCODE_TO_KIND.get(raw[2], LlKind.UNKNOWN)
    if llid in (0x01, 0x02):
        return LlKind.DATA_L2CAP
    return LlKind.UNKNOWN


def encode_ll(pdu: LinkLayerPdu) -> bytes:
    """Encode a link-layer PDU; refuses to produce illegal packets."""
    if isinstance(pdu, ConnectInd):
        payload = _encode_connect_ind(pdu)
        return _finish_adv(_ADV_KIND_TO_TYPE[LlKind.CONNECT_IND], payload)
    if isinstance(pdu, ScanReq):
        payload = _addr_to_air(pdu.scanner_address) + _addr_to_air(pdu.advertiser_address)
        return _finish_adv(_ADV_KIND_TO_TYPE[LlKind.SCAN_REQ], payload)
    if isinstance(pdu, AdvPdu):
        if len(pdu.data) > 31:
            raise InvariantViolation(f"advertising data {len(pdu.data)} exceeds 31 bytes")
        payload = _addr_to_air(pdu.advertiser_address) + pdu.data
        return _finish_adv(_ADV_KIND_TO_TYPE[pdu.kind], payload)
    if isinstance(pdu, LlCtrlPdu):
        opcode = _CTRL_KIND_TO_OPCODE.get(pdu.kind, pdu.opcode)
        if opcode in _CTRL_SIZES and len(pdu.ctr_data) != _CTRL_SIZES[opcode]:
            raise InvariantViolation(
                f"control opcode {opcode:#04x} wants {_CTRL_SIZES[opcode]} CtrData bytes")
        return _finish_data(0x03, bytes([opcode]) + pdu.ctr_data)
    if isinstance(pdu, L2capFrame):
        body = L2CAP_HEADER.pack(len(pdu.payload), pdu.cid) + pdu.payload
        return _finish_data(0x02, body)
    if pdu.kind is LlKind.UNKNOWN and pdu.raw:
        return pdu.raw
    raise InvariantViolation(f"cannot encode {pdu!r}")


def _encode_connect_ind(pdu: ConnectInd) -> bytes:
    if len(pdu.channel_map) != 5:
        raise InvariantViolation("channel map must be 5 bytes")
    if pdu.channel_map[4] & 0xE0:
        raise InvariantViolation("channel map reserved bits set")
    if not any(pdu.channel_map):
        raise InvariantViolation("channel map selects no data channels")
    if not 5 <= pdu.hop <= 16:
        raise InvariantViolation(f"hop increment {pdu.hop} outside 5..16")
    lldata = _LLDATA.pack(
        pdu.access_address, pdu.crc_init.to_bytes(3, "little"),
        pdu.win_size, pdu.win_offset, pdu.interval, pdu.latency, pdu.timeout,
        pdu.channel_map, (pdu.sca << 5) | pdu.hop,
    )
    return _addr_to_air(pdu.initiator_address) + _addr_to_air(pdu.advertiser_address) + lldata


def _finish_adv(pdu_type: int, payload: bytes) -> bytes:
    return _finish(bytes([pdu_type]), payload)


def _finish_data(llid: int, payload: bytes) -> bytes:
    return _finish(bytes([llid]), payload)


def _finish(first: bytes, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise InvariantViolation(f"payload {len(payload)} exceeds {MAX_PAYLOAD}")
    return first + bytes([len(payload)]) + payload
