"""Inspection engine behavior: gating, commits, alerts, audit trail."""

import pytest

from blegate import corpus
from blegate.bonds import BondRecord, BondStore
from blegate.codec import AuthReq, IoCapability, SmpOpcode
from blegate.corpus import PEER_ADDR, _Builder
from blegate.engine import Direction, InspectionEngine, PacketRecord
from blegate.fsm import SessionState
from blegate.policies import default_paths, default_rules
from blegate.vm import Hook, PolicyStore
from blegate.vm.ctx import KEY_FLAG_AUTHENTICATED, KEY_TYPE_LTK, KEY_TYPE_LTK_P256


def _engine(rules=False, paths=False, bonds=None):
    store = PolicyStore()
    if rules:
        store.install(default_rules())
    return InspectionEngine(store, default_paths() if paths else (),
                            bonds if bonds is not None else BondStore())


def _bonded(enc_key_size=16, flags=KEY_TYPE_LTK | KEY_FLAG_AUTHENTICATED):
    return BondStore([BondRecord(PEER_ADDR, enc_key_size=enc_key_size,
                                 method=4, flags=flags)])


def _feed(engine, records):
    alerts = []
    for record in records:
        alerts.extend(engine.process(record))
    return alerts


# -- transition gating ---------------------------------------------------------------


def test_connection_commits_only_on_tx():
    engine = _engine()
    b = _Builder().advertise()
    b.rx(Hook.LL_RX_CTRL, corpus._connect_ind(), "connection request")
    _feed(engine, b.records)
    # request observed, nothing sent back yet: the machine must hold
    assert engine.peer_state(PEER_ADDR) is SessionState.DISCOVERY
    reply = _Builder().tx(Hook.LL_TX, corpus._ctrl(corpus.LlKind.LL_LENGTH_REQ,
                                                   corpus._fill("dle", 8)))
    _feed(engine, reply.records)
    assert engine.peer_state(PEER_ADDR) is SessionState.LL_CONNECTION


def test_spoofed_pairing_request_never_advances():
    engine = _engine()
    b = _Builder().advertise().connect()
    b.rx(Hook.SMP_RX, corpus._pairing(SmpOpcode.PAIRING_REQUEST,
                                      IoCapability.KEYBOARD_ONLY,
                                      corpus._LEGACY_AUTH, 16))
    b.rx(Hook.LL_RX_DATA, corpus._att_read_rsp(corpus._fill("noise", 4)))
    alerts = _feed(engine, b.records)
    assert alerts == []
    assert engine.peer_state(PEER_ADDR) is SessionState.LL_CONNECTION


def test_pairing_commits_on_tx_response():
    engine = _engine()
    b = _Builder().advertise().connect()
    b.rx(Hook.SMP_RX, corpus._pairing(SmpOpcode.PAIRING_REQUEST,
                                      IoCapability.KEYBOARD_ONLY,
                                      corpus._LEGACY_AUTH, 16))
    b.tx(Hook.SMP_TX, corpus._pairing(SmpOpcode.PAIRING_RESPONSE,
                                      corpus._RSP_IO, corpus._RSP_AUTH, 16))
    _feed(engine, b.records)
    assert engine.peer_state(PEER_ADDR) is SessionState.KEY_SHARING


def test_pairing_failed_discards_pending():
    engine = _engine()
    b = _Builder().advertise().connect()
    b.rx(Hook.SMP_RX, corpus._pairing(SmpOpcode.PAIRING_REQUEST,
                                      IoCapability.KEYBOARD_ONLY,
                                      corpus._LEGACY_AUTH, 16))
    b.tx(Hook.SMP_TX, corpus._smp(SmpOpcode.PAIRING_FAILED, b"\x05"))
    # a late response must not resurrect the discarded request
    b.tx(Hook.SMP_TX, corpus._pairing(SmpOpcode.PAIRING_RESPONSE,
                                      corpus._RSP_IO, corpus._RSP_AUTH, 16))
    alerts = _feed(engine, b.records)
    assert alerts == []
    assert engine.peer_state(PEER_ADDR) is SessionState.LL_CONNECTION


def test_terminate_returns_to_standby():
    engine = _engine()
    spec = corpus.benign_pair_then_reconnect()
    assert _feed(engine, spec.records) == []
    assert engine.peer_state(PEER_ADDR) is SessionState.STANDBY


# -- detection layers ----------------------------------------------------------------


def test_entropy_downgrade_rule_fires_for_bonded_peer():
    engine = _engine(rules=True, paths=True, bonds=_bonded(16))
    b = _Builder().advertise().connect()
    b.rx(Hook.SMP_RX, corpus._pairing(SmpOpcode.PAIRING_REQUEST,
                                      IoCapability.KEYBOARD_ONLY,
                                      corpus._LEGACY_AUTH, 7))
    (alert,) = _feed(engine, b.records)
    assert alert.source == "rule"
    assert alert.ident == "keysize-history"
    assert alert.sink is SessionState.PAIRING_EXPLOITATION
    assert engine.peer_state(PEER_ADDR) is SessionState.STANDBY


def test_entropy_downgrade_path_fires_without_any_rules():
    engine = _engine(rules=False, paths=True, bonds=_bonded(16))
    b = _Builder().advertise().connect()
    b.rx(Hook.SMP_RX, corpus._pairing(SmpOpcode.PAIRING_REQUEST,
                                      IoCapability.KEYBOARD_ONLY,
                                      corpus._LEGACY_AUTH, 7))
    b.tx(Hook.SMP_TX, corpus._pairing(SmpOpcode.PAIRING_RESPONSE,
                                      corpus._RSP_IO, corpus._RSP_AUTH, 16))
    (alert,) = _feed(engine, b.records)
    assert alert.source == "path"
    assert alert.ident == "knob-weak-key"
    assert alert.sink is SessionState.PAIRING_EXPLOITATION


def test_fresh_peer_weak_keysize_is_clean():
    engine = _engine(rules=True, paths=True)
    assert _feed(engine, corpus.benign_first_pairing_weak_keysize().records) == []


def test_encryption_without_key_is_structural():
    engine = _engine()
    b = _Builder().advertise().connect()
    b.rx(Hook.LL_RX_CTRL, corpus._enc_req("oo"))
    (alert,) = _feed(engine, b.records)
    assert alert.source == "fsm"
    assert alert.ident == "enc_without_ltk"
    assert alert.sink is SessionState.CONNECTION_BREAK


def test_rule_hit_sinks_at_effective_state():
    # CONNECT_IND arrives during DISCOVERY but is judged as connection
    # traffic, so the alert lands in the connection sink
    engine = _engine(rules=True)
    b = _Builder().advertise()
    b.rx(Hook.LL_RX_CTRL, corpus._connect_ind(interval=0))
    (alert,) = _feed(engine, b.records)
    assert alert.ident == "interval-zero"
    assert alert.sink is SessionState.CONNECTION_BREAK


def test_reflected_confirm_rejected():
    engine = _engine(rules=True)
    b = _Builder().advertise().connect()
    b.rx(Hook.SMP_RX, corpus._pairing(SmpOpcode.PAIRING_REQUEST,
                                      IoCapability.KEYBOARD_ONLY,
                                      corpus._LEGACY_AUTH, 16))
    b.tx(Hook.SMP_TX, corpus._pairing(SmpOpcode.PAIRING_RESPONSE,
                                      corpus._RSP_IO, corpus._RSP_AUTH, 16))
    b.rx(Hook.SMP_RX, corpus._smp(SmpOpcode.PAIRING_CONFIRM, corpus._fill("rc", 16)))
    b.tx(Hook.SMP_TX, corpus._smp(SmpOpcode.PAIRING_CONFIRM, corpus._fill("own", 16)))
    # same bytes under a different opcode are not an echo
    b.rx(Hook.SMP_RX, corpus._smp(SmpOpcode.PAIRING_RANDOM, corpus._fill("own", 16)))
    alerts = _feed(engine, b.records)
    assert alerts == []
    b2 = _Builder()
    b2.rx(Hook.SMP_RX, corpus._smp(SmpOpcode.PAIRING_CONFIRM, corpus._fill("own", 16)))
    (alert,) = _feed(engine, b2.records)
    assert alert.ident == "reflection-guard"
    assert alert.sink is SessionState.PAIRING_EXPLOITATION


# -- bonding side effects --------------------------------------------------------------


def test_legacy_session_creates_authenticated_bond():
    bonds = BondStore()
    engine = _engine(bonds=bonds)
    _feed(engine, corpus.benign_pair_then_reconnect().records)
    bond = bonds.get(PEER_ADDR)
    assert bond is not None
    assert bond.enc_key_size == 16
    assert bond.flags & KEY_TYPE_LTK
    assert not bond.flags & KEY_TYPE_LTK_P256   # legacy pairing, no P-256 key
    assert bond.authenticated


def test_sc_session_marks_p256_key():
    bonds = BondStore()
    engine = _engine(bonds=bonds)
    _feed(engine, corpus.benign_sc_pairing().records)
    bond = bonds.get(PEER_ADDR)
    assert bond is not None and bond.flags & KEY_TYPE_LTK_P256


def test_just_works_bond_is_unauthenticated():
    bonds = BondStore()
    engine = _engine(bonds=bonds)
    _feed(engine, corpus.benign_first_pairing_weak_keysize().records)
    bond = bonds.get(PEER_ADDR)
    assert bond is not None
    assert bond.enc_key_size == 7
    assert not bond.authenticated


# -- audit trail -----------------------------------------------------------------------


def test_one_decision_per_packet():
    engine = _engine(rules=True, paths=True)
    spec = corpus.benign_sc_pairing()
    _feed(engine, spec.records)
    assert len(engine.decisions) == len(spec.records)
    assert [d.seq for d in engine.decisions] == [r.seq for r in spec.records]
    assert not any(d.dropped for d in engine.decisions)
    assert all(d.rule is None for d in engine.decisions)


def test_dropped_decision_names_the_rule():
    engine = _engine(rules=True)
    b = _Builder().advertise()
    b.rx(Hook.LL_RX_CTRL, corpus._connect_ind(interval=0))
    _feed(engine, b.records)
    last = engine.decisions[-1]
    assert last.dropped and last.rule == "interval-zero"
    assert last.state_before is SessionState.DISCOVERY
    assert last.effective_state is SessionState.LL_CONNECTION
    assert last.programs_run >= 1 and last.instructions >= 1


def test_peers_are_isolated():
    engine = _engine(rules=True)
    other = "aaaaaaaaaaaa"
    engine.process(PacketRecord(0, Direction.TX, Hook.LL_TX, PEER_ADDR, corpus._adv()))
    engine.process(PacketRecord(1, Direction.RX, Hook.LL_RX_CTRL, PEER_ADDR,
                                corpus._connect_ind()))
    assert engine.peer_state(PEER_ADDR) is SessionState.DISCOVERY
    assert engine.peer_state(other) is SessionState.STANDBY
    assert engine.event_log(other) == []


def test_alert_resets_only_the_offender():
    engine = _engine(rules=True)
    clean, noisy = PEER_ADDR, "aaaaaaaaaaaa"
    engine.process(PacketRecord(0, Direction.TX, Hook.LL_TX, clean, corpus._adv()))
    engine.process(PacketRecord(1, Direction.TX, Hook.LL_TX, noisy, corpus._adv()))
    alerts = engine.process(PacketRecord(
        2, Direction.RX, Hook.LL_RX_CTRL, noisy, corpus._connect_ind(interval=0)))
    assert len(alerts) == 1 and alerts[0].peer == noisy
    assert engine.peer_state(noisy) is SessionState.STANDBY
    assert engine.peer_state(clean) is SessionState.DISCOVERY
