"""Session inspection engine.

Every packet crossing a hook is mediated exactly once:

    decode -> observe -> derive transition proposal -> policy dispatch
    at the effective state -> log -> path check -> transition handling

The effective state is where the packet is *taking* the session, not
where the session currently idles: a pairing request observed during
LL_CONNECTION is judged, and on rejection sunk, as KEY_SHARING traffic.
RX packets can only propose the gated transitions; the stack's own TX
response commits or discards them, so a spoofed request the stack
ignores never advances the machine.

A policy REJECT, a malicious-path completion, or an out-of-order
procedure raises an alert whose sink is the exploiting state hanging
off the effective state, then resets the session to STANDBY.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field, replace

from .bonds import BondRecord, BondStore, normalize_address
from .codec import (ATT_ERROR_PIN_OR_KEY_MISSING, AssociationMethod, AttOpcode,
                    AttPdu, AuthReq, Channel, ConnectInd, DecodeError,
                    IoCapability, L2capFrame, LinkLayerPdu, LlKind,
                    PairingFeatures, SmpOpcode, SmpPdu, association_method,
                    decode_att, decode_ll, decode_smp, header_kind)
from .fsm import (EXPLOIT_SINKS, BENIGN_TRANSITIONS, GATED_EVENTS, EventKind,
                  FsmEvent, MaliciousPath, PendingTransition, SessionContext,
                  SessionState, fsm_step, path_covered, sink_for)
from .vm import Hook, PolicyStore, Slot
from .vm.ctx import (KEY_FLAG_AUTHENTICATED, KEY_TYPE_LTK, KEY_TYPE_LTK_P256,
                     build_context)

__all__ = ["Direction", "PacketRecord", "Alert", "Decision", "EngineConfig",
           "InspectionEngine", "L2CAP_CID_ATT", "L2CAP_CID_SMP"]

L2CAP_CID_ATT = 0x0004
L2CAP_CID_SMP = 0x0006

_RX_HOOKS = frozenset({Hook.LL_RX_CTRL, Hook.LL_RX_DATA, Hook.SMP_RX})
_ADV_KINDS = frozenset({LlKind.ADV_IND, LlKind.SCAN_REQ, LlKind.SCAN_RSP,
                        LlKind.CONNECT_IND})


class Direction(enum.Enum):
    RX = "RX"
    TX = "TX"


@dataclass(frozen=True)
class PacketRecord:
    seq: int
    direction: Direction
    hook: Hook
    peer: str
    payload: bytes
    note: str = ""


@dataclass(frozen=True)
class Alert:
    seq: int
    peer: str
    source: str          # "rule" | "path" | "fsm"
    ident: str           # program id, path id, or procedure label
    sink: SessionState
    detail: str = ""


@dataclass(frozen=True)
class Decision:
    """Audit record: one per mediated packet, pass or drop."""

    seq: int
    peer: str
    direction: Direction
    hook: Hook
    state_before: SessionState
    effective_state: SessionState
    programs_run: int
    instructions: int
    dropped: bool
    rule: str | None = None


def _default_local_features() -> PairingFeatures:
    return PairingFeatures(
        SmpOpcode.PAIRING_RESPONSE,
        io_capability=IoCapability.KEYBOARD_DISPLAY,
        auth_req=AuthReq.BONDING | AuthReq.MITM | AuthReq.SECURE_CONNECTIONS,
        max_enc_key_size=16,
    )


@dataclass
class EngineConfig:
    repeat_threshold: int = 2
    strict_keysize: bool = False
    local_features: PairingFeatures = field(default_factory=_default_local_features)


@dataclass
class _Observation:
    kind: LlKind = LlKind.UNKNOWN
    error: int = 0
    ll: LinkLayerPdu | None = None
    smp: SmpPdu | None = None
    att: AttPdu | None = None
    tags: set = field(default_factory=set)


class _PeerState:
    __slots__ = ("ctx", "seen", "pubkey_rx", "dhkey_rx", "pin_key_missing",
                 "last_tx_smp", "pairing_req", "pairing_rsp", "security_level")

    def __init__(self, peer: str):
        self.ctx = SessionContext(peer)
        self.seen: Counter = Counter()  # engine lifetime, survives resets
        self.reset_window()

    def reset_window(self) -> None:
        self.pubkey_rx = 0
        self.dhkey_rx = 0
        self.pin_key_missing = False
        self.last_tx_smp: dict = {}
        self.pairing_req = None
        self.pairing_rsp = None
        self.security_level = 0


class InspectionEngine:
    def __init__(self, store: PolicyStore | None = None, paths=(),
                 bonds: BondStore | None = None, config: EngineConfig | None = None):
        self.store = store if store is not None else PolicyStore()
        self.paths = list(paths)
        self.bonds = bonds if bonds is not None else BondStore()
        self.config = config if config is not None else EngineConfig()
        self.alerts: list = []
        self.decisions: list = []
        self._peers: dict = {}

    # -- public entry ---------------------------------------------------------

    def process(self, record: PacketRecord) -> list:
        """Mediate one packet; returns the alerts it raised."""
        peer = normalize_address(record.peer)
        ps = self._peers.get(peer)
        if ps is None:
            ps = self._peers[peer] = _PeerState(peer)
        before = len(self.alerts)
        if record.direction is Direction.RX:
            self._on_rx(ps, record)
        else:
            self._on_tx(ps, record)
        return self.alerts[before:]

    def peer_state(self, peer: str) -> SessionState:
        ps = self._peers.get(normalize_address(peer))
        return ps.ctx.state if ps else SessionState.STANDBY

    def event_log(self, peer: str):
        ps = self._peers.get(normalize_address(peer))
        return list(ps.ctx.event_log) if ps else []

    # -- decode / observe -------------------------------------------------------

    def _channel(self, state: SessionState) -> Channel:
        if state in (SessionState.STANDBY, SessionState.DISCOVERY):
            return Channel.ADVERTISING
        return Channel.DATA

    def _decode(self, hook: Hook, payload: bytes, state: SessionState) -> _Observation:
        obs = _Observation()
        if hook in (Hook.SMP_RX, Hook.SMP_TX):
            try:
                obs.smp = decode_smp(payload)
            except DecodeError as exc:
                obs.error = exc.code
                obs.tags.add("decode_error")
            return obs
        channel = self._channel(state)
        try:
            obs.ll = decode_ll(payload, channel)
            obs.kind = obs.ll.kind
        except DecodeError as exc:
            obs.error = exc.code
            obs.kind = header_kind(payload, channel)
            obs.tags.add("decode_error")
            return obs
        if isinstance(obs.ll, L2capFrame) and obs.ll.cid == L2CAP_CID_ATT:
            try:
                obs.att = decode_att(obs.ll.payload)
            except DecodeError as exc:
                obs.error = exc.code
                obs.tags.add("decode_error")
        return obs

    def _observe(self, ps: _PeerState, record: PacketRecord, obs: _Observation) -> int:
        """Update window counters; returns prior identical sightings."""
        key = (record.hook, record.direction.value, bytes(record.payload))
        prior = ps.seen[key]
        ps.seen[key] += 1
        smp = obs.smp
        if smp is not None and record.direction is Direction.RX:
            if smp.opcode is SmpOpcode.PUBLIC_KEY:
                ps.pubkey_rx += 1
                obs.tags.add("smp_public_key")
            elif smp.opcode is SmpOpcode.DHKEY_CHECK:
                ps.dhkey_rx += 1
                obs.tags.add("smp_dhkey_check")
            if smp.body and ps.last_tx_smp.get(smp.opcode) == smp.body:
                obs.tags.add("reflection")
        if smp is not None and record.direction is Direction.TX:
            ps.last_tx_smp[smp.opcode] = smp.body
            if isinstance(smp, PairingFeatures) and smp.opcode is SmpOpcode.PAIRING_RESPONSE:
                ps.pairing_rsp = smp
        att = obs.att
        if att is not None and record.direction is Direction.RX:
            if att.opcode is AttOpcode.ERROR_RESPONSE \
                    and att.error_code == ATT_ERROR_PIN_OR_KEY_MISSING:
                ps.pin_key_missing = True
                obs.tags.add("pin_key_missing")
            elif att.opcode is AttOpcode.READ_REQUEST:
                obs.tags.add("att_read")
            elif att.opcode is AttOpcode.WRITE_REQUEST:
                obs.tags.add("att_write")
        return prior

    # -- proposal derivation ------------------------------------------------------

    def _derive(self, ps: _PeerState, record: PacketRecord,
                obs: _Observation) -> tuple[FsmEvent | None, str | None]:
        """(proposal, structural-violation label) for one RX packet."""
        state = ps.ctx.state
        bond = self.bonds.get(ps.ctx.peer_address)
        tags = set(obs.tags)

        if obs.kind is LlKind.CONNECT_IND and state in (SessionState.STANDBY,
                                                        SessionState.DISCOVERY):
            tags.add("connect_request")
            if bond is not None:
                tags.add("bonded_peer")
            return FsmEvent(EventKind.CONNECTION_ESTABLISHED, frozenset(tags)), None

        smp = obs.smp
        if smp is not None and smp.opcode is SmpOpcode.PAIRING_REQUEST \
                and isinstance(smp, PairingFeatures):
            ps.pairing_req = smp
            ps.pairing_rsp = None
            tags.add("pairing_request")
            if bond is not None:
                tags.add("bonded_peer")
                if smp.max_enc_key_size < bond.enc_key_size:
                    tags.add("keysize_reduction")
                if smp.max_enc_key_size != bond.enc_key_size:
                    tags.add("keysize_change")
                method = association_method(smp, self.config.local_features)
                if bond.authenticated and method is AssociationMethod.JUST_WORKS:
                    tags.add("method_downgrade")
            return FsmEvent(EventKind.PAIRING_STARTED, frozenset(tags)), None

        if obs.kind is LlKind.LL_ENC_REQ:
            tags.add("enc_request")
            if state is SessionState.LL_CONNECTION and bond is None:
                # encryption claimed with no key ever shared: no TX gate
                # will ever confirm this, flag it at once
                return None, "enc_without_ltk"
            return FsmEvent(EventKind.ENCRYPTION_STARTED, frozenset(tags)), None

        if obs.att is not None and state is SessionState.LL_CONNECTION \
                and ps.security_level == 0 \
                and obs.att.opcode in (AttOpcode.READ_REQUEST, AttOpcode.WRITE_REQUEST):
            tags.add("plaintext_data")
            return FsmEvent(EventKind.PLAINTEXT_DATA_STARTED, frozenset(tags)), None

        return None, None

    # -- context block -----------------------------------------------------------

    def _slots(self, ps: _PeerState, record: PacketRecord, obs: _Observation,
               repeat_prior: int) -> dict:
        bond = self.bonds.get(ps.ctx.peer_address)
        dc = {
            Slot.REPEAT_COUNT: repeat_prior,
            Slot.REPEAT_THRESHOLD: self.config.repeat_threshold,
            Slot.STRICT_KEYSIZE: 1 if self.config.strict_keysize else 0,
            Slot.PKT_KIND: int(obs.kind),
            Slot.DECODE_ERROR: obs.error,
            Slot.PUBKEY_COUNT: ps.pubkey_rx,
            Slot.DHKEY_COUNT: ps.dhkey_rx,
            Slot.PIN_KEY_MISSING: 1 if ps.pin_key_missing else 0,
            Slot.HOOK: int(record.hook),
            Slot.ATTR_SEC_LEVEL: ps.security_level,
            Slot.REFLECTED: 1 if "reflection" in obs.tags else 0,
        }
        if bond is not None:
            dc[Slot.PEER_BONDED] = 1
            dc[Slot.SMP_KEYS] = bond.flags & (KEY_TYPE_LTK | KEY_TYPE_LTK_P256)
            dc[Slot.SMP_KEYS_FLAGS] = bond.flags & KEY_FLAG_AUTHENTICATED
            dc[Slot.SMP_ENC_SIZE_PREV] = bond.enc_key_size
            dc[Slot.SMP_METHOD_PREV] = bond.method
        if ps.pairing_req is not None:
            responder = ps.pairing_rsp or self.config.local_features
            claimed = ps.pairing_req.max_enc_key_size
            if ps.pairing_rsp is not None:
                claimed = min(claimed, ps.pairing_rsp.max_enc_key_size)
            dc[Slot.SMP_ENC_SIZE] = claimed
            dc[Slot.SMP_METHOD] = int(association_method(ps.pairing_req, responder))
        if obs.smp is not None:
            dc[Slot.SMP_OPCODE] = int(obs.smp.opcode)
        if isinstance(obs.ll, ConnectInd):
            dc[Slot.INTERVAL] = obs.ll.interval
            dc[Slot.CHANNEL_MAP_POPCOUNT] = obs.ll.channel_map_popcount()
            dc[Slot.HOP] = obs.ll.hop
        if isinstance(obs.ll, L2capFrame):
            dc[Slot.L2CAP_CID] = obs.ll.cid
        if obs.att is not None:
            dc[Slot.ATT_OPCODE] = int(obs.att.opcode)
            dc[Slot.ATT_HANDLE] = obs.att.handle
            dc[Slot.ATTR_SEC_LEVEL_PREV] = bond.level_for(obs.att.handle) if bond else 0
        return dc

    # -- alerts / paths -------------------------------------------------------------

    def _alert(self, ps: _PeerState, seq: int, source: str, ident: str,
               sink: SessionState, detail: str = "") -> None:
        self.alerts.append(Alert(seq, ps.ctx.peer_address, source, ident, sink, detail))
        fsm_step(ps.ctx, FsmEvent(EventKind.ALERT, detail=sink))
        ps.reset_window()

    def _check_paths(self, ps: _PeerState, seq: int) -> bool:
        for path in self.paths:
            if path_covered(ps.ctx.event_log, path):
                self._alert(ps, seq, "path", path.path_id, path.sink,
                            "attack sequence completed")
                return True
        return False

    # -- RX ----------------------------------------------------------------------

    def _on_rx(self, ps: _PeerState, record: PacketRecord) -> None:
        # scanning/advertising visibility opens the discovery window
        if ps.ctx.state is SessionState.STANDBY and record.hook is Hook.LL_RX_CTRL:
            fsm_step(ps.ctx, FsmEvent(EventKind.ADVERTISING_STARTED,
                                      frozenset({"advertising"})))

        obs = self._decode(record.hook, record.payload, ps.ctx.state)
        repeat_prior = self._observe(ps, record, obs)
        proposal, violation = self._derive(ps, record, obs)

        effective = ps.ctx.state
        target = None
        if proposal is not None:
            target = BENIGN_TRANSITIONS.get((ps.ctx.state, proposal.kind))
            if target is not None:
                effective = target

        dc = self._slots(ps, record, obs, repeat_prior)
        ctx_block = build_context(int(effective), int(EventKind.PACKET_OBSERVED),
                                  bytes(record.payload), dc)
        results, hit = self.store.evaluate(int(record.hook),
                                           int(EventKind.PACKET_OBSERVED),
                                           int(effective), ctx_block)
        self.decisions.append(Decision(
            record.seq, ps.ctx.peer_address, record.direction, record.hook,
            ps.ctx.state, effective, len(results),
            sum(o.executed for _, o in results), hit is not None, hit))
        if hit is not None:
            self._alert(ps, record.seq, "rule", hit,
                        EXPLOIT_SINKS[effective] if not effective.is_exploiting()
                        else effective,
                        "policy rejected packet")
            return

        all_tags = obs.tags | (set(proposal.tags) if proposal else set())
        fsm_step(ps.ctx, FsmEvent(EventKind.PACKET_OBSERVED, frozenset(all_tags)),
                 observed_state=effective)
        if self._check_paths(ps, record.seq):
            return

        if violation is not None:
            self._alert(ps, record.seq, "fsm", violation, sink_for(ps.ctx.state),
                        "structural protocol violation")
            return

        if obs.kind is LlKind.LL_TERMINATE_IND:
            fsm_step(ps.ctx, FsmEvent(EventKind.SESSION_FINISHED))
            ps.reset_window()
            return

        if proposal is None:
            self._record_access(ps, obs)
            return

        if target is None:
            self._alert(ps, record.seq, "fsm", f"illegal-event:{proposal.kind.name}",
                        sink_for(ps.ctx.state), "event out of order")
            return

        if proposal.kind in GATED_EVENTS:
            ps.ctx.pending = PendingTransition(proposal, target, record.seq)
            return

        # ungated: plaintext data flow starts the moment it is served
        fsm_step(ps.ctx, proposal)
        self._record_access(ps, obs)
        self._check_paths(ps, record.seq)

    def _record_access(self, ps: _PeerState, obs: _Observation) -> None:
        att = obs.att
        if att is None or att.opcode not in (AttOpcode.READ_REQUEST,
                                             AttOpcode.WRITE_REQUEST):
            return
        bond = self.bonds.get(ps.ctx.peer_address)
        if bond is not None:
            bond.record_access(att.handle, ps.security_level)

    # -- TX -----------------------------------------------------------------------

    def _on_tx(self, ps: _PeerState, record: PacketRecord) -> None:
        # a pending transition means the link already moved to the data channel;
        # the committing TX must be decoded in that light, not the old state's
        decode_state = ps.ctx.pending.target if ps.ctx.pending else ps.ctx.state
        obs = self._decode(record.hook, record.payload, decode_state)
        repeat_prior = self._observe(ps, record, obs)

        dc = self._slots(ps, record, obs, repeat_prior)
        ctx_block = build_context(int(ps.ctx.state), int(EventKind.PACKET_OBSERVED),
                                  bytes(record.payload), dc)
        results, hit = self.store.evaluate(int(record.hook),
                                           int(EventKind.PACKET_OBSERVED),
                                           int(ps.ctx.state), ctx_block)
        self.decisions.append(Decision(
            record.seq, ps.ctx.peer_address, record.direction, record.hook,
            ps.ctx.state, ps.ctx.state, len(results),
            sum(o.executed for _, o in results), hit is not None, hit))
        if hit is not None:
            self._alert(ps, record.seq, "rule", hit, sink_for(ps.ctx.state),
                        "policy rejected outbound packet")
            return

        if ps.ctx.state is SessionState.STANDBY and obs.kind in _ADV_KINDS:
            fsm_step(ps.ctx, FsmEvent(EventKind.ADVERTISING_STARTED,
                                      frozenset({"advertising"})))
            self._check_paths(ps, record.seq)

        if obs.kind is LlKind.LL_TERMINATE_IND:
            ps.ctx.pending = None
            fsm_step(ps.ctx, FsmEvent(EventKind.SESSION_FINISHED))
            ps.reset_window()
            return
        if obs.smp is not None and obs.smp.opcode is SmpOpcode.PAIRING_FAILED:
            if ps.ctx.pending is not None \
                    and ps.ctx.pending.event.kind is EventKind.PAIRING_STARTED:
                ps.ctx.pending = None
            ps.pairing_req = None
            ps.pairing_rsp = None
            return

        pending = ps.ctx.pending
        if pending is None or obs.error:
            return
        kind = pending.event.kind
        commit = (
            (kind is EventKind.CONNECTION_ESTABLISHED)
            or (kind is EventKind.PAIRING_STARTED and obs.smp is not None
                and obs.smp.opcode is SmpOpcode.PAIRING_RESPONSE)
            or (kind is EventKind.ENCRYPTION_STARTED and obs.kind is LlKind.LL_ENC_RSP)
        )
        if commit:
            ps.ctx.pending = None
            self._commit(ps, pending, record.seq)

    def _commit(self, ps: _PeerState, pending: PendingTransition, seq: int) -> None:
        event = pending.event
        if event.kind is EventKind.ENCRYPTION_STARTED:
            extra = set()
            if ps.pubkey_rx and not ps.dhkey_rx:
                extra.add("enc_before_dhkey")
            event = replace(event, tags=event.tags | frozenset(extra))
        fsm_step(ps.ctx, event)
        if event.kind is EventKind.ENCRYPTION_STARTED:
            self._finish_encryption(ps)
        self._check_paths(ps, seq)

    def _finish_encryption(self, ps: _PeerState) -> None:
        peer = ps.ctx.peer_address
        req, rsp = ps.pairing_req, ps.pairing_rsp
        if req is not None and rsp is not None:
            method = association_method(req, rsp)
            flags = KEY_TYPE_LTK
            if req.secure_connections() and rsp.secure_connections():
                flags |= KEY_TYPE_LTK_P256
            if method is not AssociationMethod.JUST_WORKS:
                flags |= KEY_FLAG_AUTHENTICATED
            bond = BondRecord(
                peer,
                enc_key_size=min(req.max_enc_key_size, rsp.max_enc_key_size),
                method=int(method),
                flags=flags,
            )
            existing = self.bonds.get(peer)
            if existing is not None:
                bond.attr_levels.update(existing.attr_levels)
            self.bonds.put(bond)
            ps.security_level = 2 if bond.authenticated else 1
            ps.pairing_req = None
            ps.pairing_rsp = None
            return
        bond = self.bonds.get(peer)
        if bond is not None:
            ps.security_level = 2 if bond.authenticated else 1
        else:
            ps.security_level = 1

