"""Session state machine: benign walks, resets, and path coverage."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blegate.fsm import (BENIGN_TRANSITIONS, EXPLOIT_SINKS, EventKind, FsmEvent,
                         IllegalEvent, LogEntry, MaliciousPath, SessionContext,
                         SessionState, format_path, fsm_step, parse_path,
                         path_covered, reset, sink_for)


def _ctx() -> SessionContext:
    return SessionContext(peer_address="f00dcafe0001")


def _ev(kind: EventKind, *tags: str) -> FsmEvent:
    return FsmEvent(kind, frozenset(tags))


def test_full_benign_walk():
    ctx = _ctx()
    assert ctx.state is SessionState.STANDBY
    assert fsm_step(ctx, _ev(EventKind.ADVERTISING_STARTED)) is SessionState.DISCOVERY
    assert fsm_step(ctx, _ev(EventKind.CONNECTION_ESTABLISHED)) is SessionState.LL_CONNECTION
    assert fsm_step(ctx, _ev(EventKind.PAIRING_STARTED)) is SessionState.KEY_SHARING
    assert fsm_step(ctx, _ev(EventKind.ENCRYPTION_STARTED)) is SessionState.DATA_EXCHANGE
    assert fsm_step(ctx, _ev(EventKind.SESSION_FINISHED)) is SessionState.STANDBY


def test_bonded_reconnect_skips_pairing():
    ctx = _ctx()
    fsm_step(ctx, _ev(EventKind.ADVERTISING_STARTED))
    fsm_step(ctx, _ev(EventKind.CONNECTION_ESTABLISHED))
    assert fsm_step(ctx, _ev(EventKind.ENCRYPTION_STARTED)) is SessionState.DATA_EXCHANGE


def test_plaintext_data_is_benign():
    ctx = _ctx()
    fsm_step(ctx, _ev(EventKind.ADVERTISING_STARTED))
    fsm_step(ctx, _ev(EventKind.CONNECTION_ESTABLISHED))
    assert fsm_step(ctx, _ev(EventKind.PLAINTEXT_DATA_STARTED)) is SessionState.DATA_EXCHANGE


def test_re_pairing_from_data_exchange():
    ctx = _ctx()
    for kind in (EventKind.ADVERTISING_STARTED, EventKind.CONNECTION_ESTABLISHED,
                 EventKind.PAIRING_STARTED, EventKind.ENCRYPTION_STARTED):
        fsm_step(ctx, _ev(kind))
    assert fsm_step(ctx, _ev(EventKind.PAIRING_STARTED)) is SessionState.KEY_SHARING


def test_illegal_event_raises():
    ctx = _ctx()
    with pytest.raises(IllegalEvent):
        fsm_step(ctx, _ev(EventKind.ENCRYPTION_STARTED))  # straight from STANDBY


def test_alert_enters_sink_then_resets():
    ctx = _ctx()
    fsm_step(ctx, _ev(EventKind.ADVERTISING_STARTED))
    fsm_step(ctx, _ev(EventKind.CONNECTION_ESTABLISHED))
    state = fsm_step(ctx, FsmEvent(EventKind.ALERT, frozenset(),
                                   SessionState.PAIRING_EXPLOITATION))
    assert state is SessionState.STANDBY
    # the sink visit is on record in the PREVIOUS window; new window is fresh
    assert ctx.event_log[0].kind == "INIT"
    assert ctx.windows_opened == 2


def test_session_finished_opens_fresh_window():
    ctx = _ctx()
    fsm_step(ctx, _ev(EventKind.ADVERTISING_STARTED))
    fsm_step(ctx, _ev(EventKind.SESSION_FINISHED))
    assert ctx.state is SessionState.STANDBY
    assert len(ctx.event_log) == 1
    assert "session_init" in ctx.event_log[0].tags


def test_packet_observed_is_log_only():
    ctx = _ctx()
    fsm_step(ctx, _ev(EventKind.ADVERTISING_STARTED))
    state = fsm_step(ctx, _ev(EventKind.PACKET_OBSERVED, "connect_request"),
                     observed_state=SessionState.LL_CONNECTION)
    assert state is SessionState.DISCOVERY          # benign state did not move
    assert ctx.event_log[-1].state is SessionState.LL_CONNECTION
    assert "connect_request" in ctx.event_log[-1].tags


def test_every_sink_is_exploiting():
    for state, sink in EXPLOIT_SINKS.items():
        assert sink.is_exploiting(), (state, sink)
    assert sink_for(SessionState.KEY_SHARING) is SessionState.PAIRING_EXPLOITATION


# -- path coverage ---------------------------------------------------------------

_KNOB_STEPS = (
    (SessionState.STANDBY, "session_init"),
    (SessionState.DISCOVERY, "ADVERTISING_STARTED"),
    (SessionState.LL_CONNECTION, "bonded_peer"),
    (SessionState.KEY_SHARING, "keysize_reduction"),
    (SessionState.KEY_SHARING, "PAIRING_STARTED"),
)


def _knob_path() -> MaliciousPath:
    return MaliciousPath("knob", SessionState.PAIRING_EXPLOITATION, _KNOB_STEPS)


def _walk_knob(ctx: SessionContext, include_reduction: bool) -> None:
    fsm_step(ctx, _ev(EventKind.ADVERTISING_STARTED))
    fsm_step(ctx, _ev(EventKind.PACKET_OBSERVED, "connect_request", "bonded_peer"),
             observed_state=SessionState.LL_CONNECTION)
    fsm_step(ctx, _ev(EventKind.CONNECTION_ESTABLISHED))
    tags = ("pairing_request", "keysize_reduction") if include_reduction \
        else ("pairing_request",)
    fsm_step(ctx, _ev(EventKind.PACKET_OBSERVED, *tags),
             observed_state=SessionState.KEY_SHARING)
    fsm_step(ctx, _ev(EventKind.PAIRING_STARTED))


def test_knob_path_covered_by_downgrade_walk():
    ctx = _ctx()
    _walk_knob(ctx, include_reduction=True)
    assert path_covered(ctx.event_log, _knob_path())


def test_knob_path_not_covered_without_reduction():
    ctx = _ctx()
    _walk_knob(ctx, include_reduction=False)
    assert not path_covered(ctx.event_log, _knob_path())


def test_strict_prefix_is_not_coverage():
    ctx = _ctx()
    _walk_knob(ctx, include_reduction=True)
    for cut in range(len(ctx.event_log)):
        assert not path_covered(ctx.event_log[:cut], _knob_path())


def test_coverage_is_monotone_in_the_log():
    """Appending entries can only turn coverage on, never off."""
    ctx = _ctx()
    _walk_knob(ctx, include_reduction=True)
    log = list(ctx.event_log)
    assert path_covered(log, _knob_path())
    log.append(LogEntry(SessionState.DATA_EXCHANGE, "PACKET_OBSERVED"))
    assert path_covered(log, _knob_path())


def test_path_text_round_trip():
    path = _knob_path()
    again = parse_path(format_path(path))
    assert again == path


def test_parse_path_rejects_non_exploiting_sink():
    text = "id x\nsink DATA_EXCHANGE\nstep STANDBY session_init\n"
    with pytest.raises(ValueError):
        parse_path(text)


# -- properties -------------------------------------------------------------------

_event_kinds = st.sampled_from([k for k in EventKind if k is not EventKind.ALERT])


@given(kinds=st.lists(_event_kinds, max_size=40))
@settings(max_examples=300)
def test_random_walks_never_crash_and_stay_typed(kinds):
    ctx = _ctx()
    for kind in kinds:
        try:
            fsm_step(ctx, _ev(kind))
        except IllegalEvent:
            pass
        assert isinstance(ctx.state, SessionState)
        assert not ctx.state.is_exploiting()   # exploits need an explicit ALERT


@given(kinds=st.lists(_event_kinds, max_size=30))
@settings(max_examples=200)
def test_benign_transitions_never_reach_a_sink(kinds):
    ctx = _ctx()
    for kind in kinds:
        try:
            fsm_step(ctx, _ev(kind))
        except IllegalEvent:
            continue
    for (state, _), target in BENIGN_TRANSITIONS.items():
        assert not state.is_exploiting() and not target.is_exploiting()


def test_reset_clears_pending():
    ctx = _ctx()
    fsm_step(ctx, _ev(EventKind.ADVERTISING_STARTED))
    reset(ctx)
    assert ctx.state is SessionState.STANDBY and ctx.pending is None
