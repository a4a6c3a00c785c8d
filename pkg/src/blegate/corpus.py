"""Reference traffic corpus: benign sessions and attack reproductions.

Every trace is a deterministic packet sequence for one peer, built from
the same codecs the engine decodes with, so the bytes stay honest.  The
attack traces end at the offending packet; the benign traces run whole
sessions to completion.  Each trace declares the expected outcome so a
replay harness can score detection and false positives mechanically.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

from .codec import (AdvPdu, AttOpcode, AttPdu, AuthReq, ConnectInd, IoCapability,
                    L2capFrame, LlCtrlPdu, LlKind, PairingFeatures, ScanReq, SmpOpcode,
                    SmpPdu, encode_att, encode_ll, encode_smp)
from .engine import Direction, PacketRecord
from .fsm import SessionState
from .vm.ctx import Hook

LOCAL_ADDR = "0a1b2c3d4e5f"
PEER_ADDR = "f00dcafe0001"

_LOCAL = bytes.fromhex(LOCAL_ADDR)
_PEER = bytes.fromhex(PEER_ADDR)

L2CAP_CID_ATT = 0x0004


def _fill(tag: str, size: int) -> bytes:
    """Deterministic pseudo-random bytes; distinct tags give distinct bytes."""
    out = b""
    counter = 0
    while len(out) < size:
        out += hashlib.sha256(f"{tag}/{counter}".encode()).digest()
        counter += 1
    return out[:size]


# -- payload builders ------------------------------------------------------------

def _adv() -> bytes:
    return encode_ll(AdvPdu(LlKind.ADV_IND, advertiser_address=_LOCAL,
                            data=b"\x02\x01\x06"))


def _scan_rsp() -> bytes:
    return encode_ll(AdvPdu(LlKind.SCAN_RSP, advertiser_address=_LOCAL,
                            data=b"\x03\x19\x00\x00"))


def _scan_req() -> bytes:
    return encode_ll(ScanReq(LlKind.SCAN_REQ, scanner_address=_PEER,
                             advertiser_address=_LOCAL))


def _connect_ind(**overrides) -> bytes:
    return encode_ll(ConnectInd(LlKind.CONNECT_IND, initiator_address=_PEER,
                                advertiser_address=_LOCAL, **overrides))


def _ctrl(kind: LlKind, data: bytes) -> bytes:
    return encode_ll(LlCtrlPdu(kind, ctr_data=data))


def _enc_req(tag: str) -> bytes:
    return _ctrl(LlKind.LL_ENC_REQ, _fill(tag, 22))


def _enc_rsp(tag: str) -> bytes:
    return _ctrl(LlKind.LL_ENC_RSP, _fill(tag, 12))


def _terminate() -> bytes:
    return _ctrl(LlKind.LL_TERMINATE_IND, b"\x13")


def _l2cap(cid: int, payload: bytes) -> bytes:
    return encode_ll(L2capFrame(LlKind.DATA_L2CAP, cid=cid, payload=payload))


def _att_read(handle: int) -> bytes:
    return _l2cap(L2CAP_CID_ATT, encode_att(AttPdu(AttOpcode.READ_REQUEST, handle=handle)))


def _att_write(handle: int, value: bytes) -> bytes:
    return _l2cap(L2CAP_CID_ATT,
                  encode_att(AttPdu(AttOpcode.WRITE_REQUEST, handle=handle, value=value)))


def _att_read_rsp(value: bytes) -> bytes:
    return _l2cap(L2CAP_CID_ATT, encode_att(AttPdu(AttOpcode.READ_RESPONSE, value=value)))


def _att_write_rsp() -> bytes:
    return _l2cap(L2CAP_CID_ATT, encode_att(AttPdu(AttOpcode.WRITE_RESPONSE)))


def _att_error(request_opcode: int, handle: int, code: int) -> bytes:
    return _l2cap(L2CAP_CID_ATT, encode_att(AttPdu(
        AttOpcode.ERROR_RESPONSE, handle=handle,
        request_opcode=request_opcode, error_code=code)))


def _pairing(opcode: SmpOpcode, io: IoCapability, auth: AuthReq, keysize: int) -> bytes:
    return encode_smp(PairingFeatures(
        opcode, io_capability=io, auth_req=auth, max_enc_key_size=keysize,
        initiator_key_dist=0x01, responder_key_dist=0x01))


def _smp(opcode: SmpOpcode, body: bytes) -> bytes:
    return encode_smp(SmpPdu(opcode, body=body))


#: what this stack answers pairing requests with
_RSP_IO = IoCapability.KEYBOARD_DISPLAY
_RSP_AUTH = AuthReq.BONDING | AuthReq.MITM | AuthReq.SECURE_CONNECTIONS

_LEGACY_AUTH = AuthReq.BONDING | AuthReq.MITM
_SC_AUTH = AuthReq.BONDING | AuthReq.MITM | AuthReq.SECURE_CONNECTIONS


# -- trace assembly --------------------------------------------------------------

@dataclass
class TraceSpec:
    """One replayable packet sequence plus its expected verdict."""

    name: str
    expect_sink: Optional[SessionState]
    records: list = field(default_factory=list)

    @property
    def is_benign(self) -> bool:
        return self.expect_sink is None


class _Builder:
    def __init__(self) -> None:
        self.records: list = []

    def rx(self, hook: Hook, payload: bytes, note: str = "") -> "_Builder":
        self.records.append(PacketRecord(len(self.records), Direction.RX, hook,
                                         PEER_ADDR, payload, note))
        return self

    def tx(self, hook: Hook, payload: bytes, note: str = "") -> "_Builder":
        self.records.append(PacketRecord(len(self.records), Direction.TX, hook,
                                         PEER_ADDR, payload, note))
        return self

    # session fragments

    def advertise(self) -> "_Builder":
        return self.tx(Hook.LL_TX, _adv(), "advertising")

    def connect(self, **overrides) -> "_Builder":
        self.rx(Hook.LL_RX_CTRL, _connect_ind(**overrides), "connection request")
        return self.tx(Hook.LL_TX, _ctrl(LlKind.LL_LENGTH_REQ, _fill("dle", 8)),
                       "first packet on the data channel")

    def legacy_pairing(self, tag: str, io: IoCapability = IoCapability.KEYBOARD_ONLY,
                       auth: AuthReq = _LEGACY_AUTH, keysize: int = 16) -> "_Builder":
        self.rx(Hook.SMP_RX, _pairing(SmpOpcode.PAIRING_REQUEST, io, auth, keysize))
        self.tx(Hook.SMP_TX, _pairing(SmpOpcode.PAIRING_RESPONSE, _RSP_IO, _RSP_AUTH, 16))
        self.rx(Hook.SMP_RX, _smp(SmpOpcode.PAIRING_CONFIRM, _fill(tag + "/mconf", 16)))
        self.tx(Hook.SMP_TX, _smp(SmpOpcode.PAIRING_CONFIRM, _fill(tag + "/sconf", 16)))
        self.rx(Hook.SMP_RX, _smp(SmpOpcode.PAIRING_RANDOM, _fill(tag + "/mrand", 16)))
        self.tx(Hook.SMP_TX, _smp(SmpOpcode.PAIRING_RANDOM, _fill(tag + "/srand", 16)))
        return self

    def sc_pairing_start(self, tag: str, io: IoCapability = IoCapability.DISPLAY_YES_NO,
                         keysize: int = 16) -> "_Builder":
        self.rx(Hook.SMP_RX, _pairing(SmpOpcode.PAIRING_REQUEST, io, _SC_AUTH, keysize))
        self.tx(Hook.SMP_TX, _pairing(SmpOpcode.PAIRING_RESPONSE, _RSP_IO, _RSP_AUTH, 16))
        self.rx(Hook.SMP_RX, _smp(SmpOpcode.PUBLIC_KEY, _fill(tag + "/mpk", 64)))
        self.tx(Hook.SMP_TX, _smp(SmpOpcode.PUBLIC_KEY, _fill(tag + "/spk", 64)))
        return self

    def sc_pairing_finish(self, tag: str) -> "_Builder":
        self.tx(Hook.SMP_TX, _smp(SmpOpcode.PAIRING_CONFIRM, _fill(tag + "/sconf", 16)))
        self.rx(Hook.SMP_RX, _smp(SmpOpcode.PAIRING_RANDOM, _fill(tag + "/mrand", 16)))
        self.tx(Hook.SMP_TX, _smp(SmpOpcode.PAIRING_RANDOM, _fill(tag + "/srand", 16)))
        self.rx(Hook.SMP_RX, _smp(SmpOpcode.DHKEY_CHECK, _fill(tag + "/mdh", 16)))
        self.tx(Hook.SMP_TX, _smp(SmpOpcode.DHKEY_CHECK, _fill(tag + "/sdh", 16)))
        return self

    def encrypt(self, tag: str) -> "_Builder":
        self.rx(Hook.LL_RX_CTRL, _enc_req(tag + "/ereq"), "session key setup")
        return self.tx(Hook.LL_TX, _enc_rsp(tag + "/ersp"))

    def att_read(self, handle: int, tag: str) -> "_Builder":
        self.rx(Hook.LL_RX_DATA, _att_read(handle))
        return self.tx(Hook.LL_TX, _att_read_rsp(_fill(tag, 4)))

    def terminate(self) -> "_Builder":
        return self.rx(Hook.LL_RX_CTRL, _terminate(), "session teardown")


def _baseline_bonding(b: _Builder, tag: str, keysize: int = 16,
                      handle: int = 5) -> _Builder:
    """Full benign session that leaves an authenticated legacy bond behind."""
    b.advertise()
    b.rx(Hook.LL_RX_CTRL, _scan_req())
    b.tx(Hook.LL_TX, _scan_rsp())
    b.connect()
    b.legacy_pairing(tag, keysize=keysize)
    b.encrypt(tag)
    b.att_read(handle, tag + "/val")
    b.terminate()
    return b


# -- benign traces ---------------------------------------------------------------

def benign_first_pairing_weak_keysize() -> TraceSpec:
    """A fresh peer negotiating entropy 7 is policy-clean: no history exists."""
    b = _Builder()
    b.advertise()
    b.connect()
    b.legacy_pairing("b1", io=IoCapability.NO_INPUT_NO_OUTPUT,
                     auth=AuthReq.BONDING, keysize=7)
    b.encrypt("b1")
    b.att_read(3, "b1/val")
    b.terminate()
    return TraceSpec("benign-first-pairing-weak-keysize", None, b.records)


def benign_pair_then_reconnect() -> TraceSpec:
    b = _Builder()
    _baseline_bonding(b, "b2s1")
    b.advertise()
    b.connect()
    b.encrypt("b2s2")
    b.att_read(5, "b2s2/val")
    b.terminate()
    return TraceSpec("benign-pair-then-reconnect", None, b.records)


def benign_renegotiation_retry() -> TraceSpec:
    """First pairing attempt rejected by the stack, second offer accepted."""
    b = _Builder()
    b.advertise()
    b.connect()
    b.rx(Hook.SMP_RX, _pairing(SmpOpcode.PAIRING_REQUEST, IoCapability.KEYBOARD_ONLY,
                               _LEGACY_AUTH | AuthReq.KEYPRESS, 16))
    b.tx(Hook.SMP_TX, _smp(SmpOpcode.PAIRING_FAILED, b"\x05"),
         "pairing not supported in this configuration")
    b.legacy_pairing("b3", io=IoCapability.KEYBOARD_ONLY, keysize=16)
    b.encrypt("b3")
    b.att_read(7, "b3/val")
    b.terminate()
    return TraceSpec("benign-renegotiation-retry", None, b.records)


def benign_plaintext_session() -> TraceSpec:
    """Unpaired peer reading open characteristics; no security expectation."""
    b = _Builder()
    b.advertise()
    b.rx(Hook.LL_RX_CTRL, _scan_req())
    b.tx(Hook.LL_TX, _scan_rsp())
    b.connect()
    b.att_read(9, "b4/v1")
    b.rx(Hook.LL_RX_DATA, _att_write(9, b"\x01\x00"))
    b.tx(Hook.LL_TX, _att_write_rsp())
    b.terminate()
    return TraceSpec("benign-plaintext-session", None, b.records)


def benign_sc_pairing() -> TraceSpec:
    b = _Builder()
    b.advertise()
    b.connect()
    b.sc_pairing_start("b5")
    b.sc_pairing_finish("b5")
    b.encrypt("b5")
    b.att_read(11, "b5/val")
    b.terminate()
    return TraceSpec("benign-sc-pairing", None, b.records)


# -- pairing and key-negotiation attacks ------------------------------------------

def attack_knob() -> TraceSpec:
    """Entropy renegotiation: bond at 16 bytes, then re-pair demanding 7."""
    b = _Builder()
    _baseline_bonding(b, "a1s1", keysize=16)
    b.advertise()
    b.connect()
    b.rx(Hook.SMP_RX, _pairing(SmpOpcode.PAIRING_REQUEST, IoCapability.KEYBOARD_ONLY,
                               _LEGACY_AUTH, 7), "entropy reduced below bond")
    b.tx(Hook.SMP_TX, _pairing(SmpOpcode.PAIRING_RESPONSE, _RSP_IO, _RSP_AUTH, 16))
    return TraceSpec("attack-knob-entropy-downgrade",
                     SessionState.PAIRING_EXPLOITATION, b.records)


def attack_keysize_confusion() -> TraceSpec:
    """Re-pairing with a quietly smaller key size than the stored bond."""
    b = _Builder()
    _baseline_bonding(b, "a2s1", keysize=16)
    b.advertise()
    b.connect()
    b.rx(Hook.SMP_RX, _pairing(SmpOpcode.PAIRING_REQUEST, IoCapability.KEYBOARD_ONLY,
                               _LEGACY_AUTH, 12), "key size below bonded value")
    b.tx(Hook.SMP_TX, _pairing(SmpOpcode.PAIRING_RESPONSE, _RSP_IO, _RSP_AUTH, 16))
    return TraceSpec("attack-keysize-confusion",
                     SessionState.PAIRING_EXPLOITATION, b.records)


def attack_method_downgrade() -> TraceSpec:
    """Key-missing error then an unauthenticated re-pair of an MITM bond."""
    b = _Builder()
    _baseline_bonding(b, "a3s1", keysize=16)
    b.advertise()
    b.connect()
    b.rx(Hook.LL_RX_DATA, _att_error(AttOpcode.READ_REQUEST, 5, 0x06),
         "peer claims the key is missing")
    b.rx(Hook.SMP_RX, _pairing(SmpOpcode.PAIRING_REQUEST,
                               IoCapability.NO_INPUT_NO_OUTPUT, AuthReq.BONDING, 16),
         "downgrade to an unauthenticated method")
    b.tx(Hook.SMP_TX, _pairing(SmpOpcode.PAIRING_RESPONSE, _RSP_IO, _RSP_AUTH, 16))
    return TraceSpec("attack-method-downgrade",
                     SessionState.PAIRING_EXPLOITATION, b.records)


def attack_pairing_replay() -> TraceSpec:
    """Confirm value replayed verbatim from an earlier observed pairing."""
    b = _Builder()
    b.advertise()
    b.connect()
    b.legacy_pairing("a4s1", io=IoCapability.NO_INPUT_NO_OUTPUT,
                     auth=AuthReq.BONDING, keysize=16)
    b.encrypt("a4s1")
    b.terminate()
    b.advertise()
    b.connect()
    b.rx(Hook.SMP_RX, _pairing(SmpOpcode.PAIRING_REQUEST,
                               IoCapability.NO_INPUT_NO_OUTPUT, AuthReq.BONDING, 16))
    b.tx(Hook.SMP_TX, _pairing(SmpOpcode.PAIRING_RESPONSE, _RSP_IO, _RSP_AUTH, 16))
    b.rx(Hook.SMP_RX, _smp(SmpOpcode.PAIRING_CONFIRM, _fill("a4s1/mconf", 16)),
         "confirm replayed from the first session")
    return TraceSpec("attack-pairing-replay",
                     SessionState.PAIRING_EXPLOITATION, b.records)


def attack_sequential_public_keys() -> TraceSpec:
    """Second public key injected mid-exchange to desynchronize the DH run."""
    b = _Builder()
    b.advertise()
    b.connect()
    b.sc_pairing_start("a5")
    b.rx(Hook.SMP_RX, _smp(SmpOpcode.PUBLIC_KEY, _fill("a5/mpk2", 64)),
         "unexpected second public key")
    return TraceSpec("attack-sequential-public-keys",
                     SessionState.PAIRING_EXPLOITATION, b.records)


def attack_encryption_before_dhkey() -> TraceSpec:
    """Link-key setup requested before the DH check ever ran."""
    b = _Builder()
    b.advertise()
    b.connect()
    b.sc_pairing_start("a6")
    b.encrypt("a6")
    return TraceSpec("attack-encryption-before-dhkey",
                     SessionState.PAIRING_EXPLOITATION, b.records)


def attack_reflection() -> TraceSpec:
    """Peer mirrors our own pairing commitment back at us."""
    b = _Builder()
    b.advertise()
    b.connect()
    b.sc_pairing_start("a7")
    b.tx(Hook.SMP_TX, _smp(SmpOpcode.PAIRING_CONFIRM, _fill("a7/sconf", 16)))
    b.rx(Hook.SMP_RX, _smp(SmpOpcode.PAIRING_CONFIRM, _fill("a7/sconf", 16)),
         "our own commitment reflected")
    return TraceSpec("attack-reflection", SessionState.PAIRING_EXPLOITATION, b.records)


def attack_plaintext_read_of_protected_handle() -> TraceSpec:
    """Reconnect without encryption and read a handle that used to need auth."""
    b = _Builder()
    _baseline_bonding(b, "a8s1", keysize=16, handle=3)
    b.advertise()
    b.connect()
    b.rx(Hook.LL_RX_DATA, _att_read(3), "plaintext read of a protected handle")
    return TraceSpec("attack-plaintext-read-downgrade",
                     SessionState.ENCRYPTION_FAILURE, b.records)


def attack_out_of_order_encryption() -> TraceSpec:
    """Key setup demanded on a link that has no key material at all."""
    b = _Builder()
    b.advertise()
    b.connect()
    b.rx(Hook.LL_RX_CTRL, _enc_req("a9"), "no bond, no pairing, still asks")
    return TraceSpec("attack-out-of-order-encryption",
                     SessionState.CONNECTION_BREAK, b.records)


# -- link-layer state machine attacks ---------------------------------------------

def _dup_ctrl_trace(name: str, kind: LlKind, size: int) -> TraceSpec:
    b = _Builder()
    b.advertise()
    b.connect()
    payload = _ctrl(kind, _fill(name, size))
    b.rx(Hook.LL_RX_CTRL, payload)
    b.rx(Hook.LL_RX_CTRL, payload, "identical control request repeated")
    return TraceSpec(name, SessionState.CONNECTION_BREAK, b.records)


def attack_duplicated_feature_req() -> TraceSpec:
    return _dup_ctrl_trace("attack-duplicated-feature-req", LlKind.LL_FEATURE_REQ, 8)


def attack_duplicated_conn_param_req() -> TraceSpec:
    return _dup_ctrl_trace("attack-duplicated-conn-param-req",
                           LlKind.LL_CONNECTION_PARAM_REQ, 23)


def attack_duplicated_length_req() -> TraceSpec:
    return _dup_ctrl_trace("attack-duplicated-length-req", LlKind.LL_LENGTH_REQ, 8)


# -- malformed-packet attacks ------------------------------------------------------

def attack_connection_interval_zero() -> TraceSpec:
    b = _Builder()
    b.advertise()
    b.rx(Hook.LL_RX_CTRL, _connect_ind(interval=0), "zero connection interval")
    return TraceSpec("attack-connection-interval-zero",
                     SessionState.CONNECTION_BREAK, b.records)


def attack_invalid_channel_map() -> TraceSpec:
    raw = bytearray(_connect_ind())
    raw[30:35] = b"\x00" * 5        # channel map lives at LLData offset 16
    b = _Builder()
    b.advertise()
    b.rx(Hook.LL_RX_CTRL, bytes(raw), "channel map selects nothing")
    return TraceSpec("attack-invalid-channel-map",
                     SessionState.CONNECTION_BREAK, b.records)


def attack_invalid_hop_interval() -> TraceSpec:
    raw = bytearray(_connect_ind())
    raw[35] = 0x04                  # hop increment below the legal floor of 5
    b = _Builder()
    b.advertise()
    b.rx(Hook.LL_RX_CTRL, bytes(raw), "hop increment out of range")
    return TraceSpec("attack-invalid-hop-interval",
                     SessionState.CONNECTION_BREAK, b.records)


def attack_oversized_l2cap_length() -> TraceSpec:
    raw = bytearray(_att_read(3))
    raw[2] = raw[2] + 0x20          # L2CAP length field inflated past the payload
    b = _Builder()
    b.advertise()
    b.connect()
    b.rx(Hook.LL_RX_DATA, bytes(raw), "L2CAP length exceeds the carried bytes")
    return TraceSpec("attack-oversized-l2cap-length",
                     SessionState.CONNECTION_BREAK, b.records)


def attack_invalid_l2cap_cid() -> TraceSpec:
    b = _Builder()
    b.advertise()
    b.connect()
    b.rx(Hook.LL_RX_DATA, _l2cap(0x0000, b"\x00\x01"), "null CID is never valid")
    return TraceSpec("attack-invalid-l2cap-cid",
                     SessionState.CONNECTION_BREAK, b.records)


def attack_scan_req_overflow() -> TraceSpec:
    good = _scan_req()
    payload = good[2:] + _fill("a16/junk", 8)
    raw = bytes([good[0], len(payload)]) + payload
    b = _Builder()
    b.advertise()
    b.rx(Hook.LL_RX_CTRL, raw, "scan request with trailing payload")
    return TraceSpec("attack-scan-req-overflow",
                     SessionState.DISCOVERY_ERROR, b.records)


def attack_repeated_scan_req() -> TraceSpec:
    b = _Builder()
    b.advertise()
    payload = _scan_req()
    b.rx(Hook.LL_RX_CTRL, payload)
    b.tx(Hook.LL_TX, _scan_rsp())
    for _ in range(7):
        b.rx(Hook.LL_RX_CTRL, payload, "scan request flood")
    return TraceSpec("attack-repeated-scan-req",
                     SessionState.DISCOVERY_ERROR, b.records)


_BENIGN: tuple = (
    benign_first_pairing_weak_keysize,
    benign_pair_then_reconnect,
    benign_renegotiation_retry,
    benign_plaintext_session,
    benign_sc_pairing,
)

_ATTACKS: tuple = (
    attack_knob,
    attack_keysize_confusion,
    attack_method_downgrade,
    attack_pairing_replay,
    attack_sequential_public_keys,
    attack_encryption_before_dhkey,
    attack_reflection,
    attack_plaintext_read_of_protected_handle,
    attack_out_of_order_encryption,
    attack_duplicated_feature_req,
    attack_duplicated_conn_param_req,
    attack_duplicated_length_req,
    attack_connection_interval_zero,
    attack_invalid_channel_map,
    attack_invalid_hop_interval,
    attack_oversized_l2cap_length,
    attack_invalid_l2cap_cid,
    attack_scan_req_overflow,
    attack_repeated_scan_req,
)


def all_traces() -> list:
    """The full corpus, benign first, in a stable order."""
    return [build() for build in _BENIGN + _ATTACKS]


def bench_stream(packets: int = 1000) -> list:
    """Alert-free data-heavy session used for throughput measurements."""
    b = _Builder()
    b.advertise()
    b.connect()
    b.att_read(9, "bench/first")
    i = 0
    while len(b.records) < packets:
        handle = 9 + (i % 32)
        if i % 2 == 0:
            b.rx(Hook.LL_RX_DATA, _att_read(handle))
            b.tx(Hook.LL_TX, _att_read_rsp(_fill(f"bench/r{i}", 4)))
        else:
            b.rx(Hook.LL_RX_DATA, _att_write(handle, _fill(f"bench/w{i}", 6)))
            b.tx(Hook.LL_TX, _att_write_rsp())
        i += 1
    return b.records[:packets]
