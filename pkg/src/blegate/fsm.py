"""Session finite-state machine.

A session walks the benign chain STANDBY -> DISCOVERY -> LL_CONNECTION ->
KEY_SHARING -> DATA_EXCHANGE.  Four exploiting sinks hang off the benign
states; they are terminal except for the alert-reset back to STANDBY.
State only advances through `fsm_step`; the engine proposes transitions
from RX traffic and commits them when the stack's own TX confirms
(request/response gating), so spoofed requests the stack rejects never
move the machine.

Attack sequences (malicious paths) are data, not code: ordered
(state, predicate) steps matched as a non-contiguous subsequence of the
current window's event log.  A strict prefix is benign by design —
first-time weak pairing must not alert.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

__all__ = [
    "SessionState", "EventKind", "FsmEvent", "LogEntry", "SessionContext",
    "PendingTransition", "MaliciousPath", "IllegalEvent", "PathFormatError",
    "BENIGN_TRANSITIONS", "EXPLOIT_SINKS", "fsm_step", "reset", "sink_for",
    "path_covered", "parse_path", "format_path", "INIT_KIND",
]

#: pseudo kind for the window-opening log entry
INIT_KIND = "INIT"


class SessionState(enum.IntEnum):
    STANDBY = 0
    DISCOVERY = 1
    LL_CONNECTION = 2
    KEY_SHARING = 3
    DATA_EXCHANGE = 4
    DISCOVERY_ERROR = 5
    CONNECTION_BREAK = 6
    PAIRING_EXPLOITATION = 7
    ENCRYPTION_FAILURE = 8

    def is_exploiting(self) -> bool:
        return self >= SessionState.DISCOVERY_ERROR


class EventKind(enum.IntEnum):
    ADVERTISING_STARTED = 0
    CONNECTION_ESTABLISHED = 1
    PAIRING_STARTED = 2
    ENCRYPTION_STARTED = 3
    PLAINTEXT_DATA_STARTED = 4
    SESSION_FINISHED = 5
    ALERT = 6
    PACKET_OBSERVED = 7


#: benign states mapped to the exploiting sink their attacks land in
EXPLOIT_SINKS = {
    SessionState.STANDBY: SessionState.DISCOVERY_ERROR,
    SessionState.DISCOVERY: SessionState.DISCOVERY_ERROR,
    SessionState.LL_CONNECTION: SessionState.CONNECTION_BREAK,
    SessionState.KEY_SHARING: SessionState.PAIRING_EXPLOITATION,
    SessionState.DATA_EXCHANGE: SessionState.ENCRYPTION_FAILURE,
}

#: (state, event) -> next state.  Missing pairs are illegal; pairs mapping a
#: state onto itself absorb benign repetition (advertising retries, duplicate
#: confirmations) without advancing anything.
BENIGN_TRANSITIONS = {
    (SessionState.STANDBY, EventKind.ADVERTISING_STARTED): SessionState.DISCOVERY,
    (SessionState.DISCOVERY, EventKind.ADVERTISING_STARTED): SessionState.DISCOVERY,
    (SessionState.DISCOVERY, EventKind.CONNECTION_ESTABLISHED): SessionState.LL_CONNECTION,
    (SessionState.LL_CONNECTION, EventKind.ADVERTISING_STARTED): SessionState.LL_CONNECTION,
    (SessionState.LL_CONNECTION, EventKind.CONNECTION_ESTABLISHED): SessionState.LL_CONNECTION,
    (SessionState.LL_CONNECTION, EventKind.PAIRING_STARTED): SessionState.KEY_SHARING,
    # reconnection encryption with a stored key; the engine only proposes
    # this when a bond actually exists
    (SessionState.LL_CONNECTION, EventKind.ENCRYPTION_STARTED): SessionState.DATA_EXCHANGE,
    (SessionState.LL_CONNECTION, EventKind.PLAINTEXT_DATA_STARTED): SessionState.DATA_EXCHANGE,
    (SessionState.KEY_SHARING, EventKind.ADVERTISING_STARTED): SessionState.KEY_SHARING,
    (SessionState.KEY_SHARING, EventKind.CONNECTION_ESTABLISHED): SessionState.KEY_SHARING,
    (SessionState.KEY_SHARING, EventKind.PAIRING_STARTED): SessionState.KEY_SHARING,
    (SessionState.KEY_SHARING, EventKind.ENCRYPTION_STARTED): SessionState.DATA_EXCHANGE,
    (SessionState.DATA_EXCHANGE, EventKind.ADVERTISING_STARTED): SessionState.DATA_EXCHANGE,
    (SessionState.DATA_EXCHANGE, EventKind.CONNECTION_ESTABLISHED): SessionState.DATA_EXCHANGE,
    # re-keying / re-pairing of a live session is allowed
    (SessionState.DATA_EXCHANGE, EventKind.PAIRING_STARTED): SessionState.KEY_SHARING,
    (SessionState.DATA_EXCHANGE, EventKind.ENCRYPTION_STARTED): SessionState.DATA_EXCHANGE,
    (SessionState.DATA_EXCHANGE, EventKind.PLAINTEXT_DATA_STARTED): SessionState.DATA_EXCHANGE,
}

#: events the engine may only commit after seeing the stack's positive TX
GATED_EVENTS = frozenset({
    EventKind.CONNECTION_ESTABLISHED,
    EventKind.PAIRING_STARTED,
    EventKind.ENCRYPTION_STARTED,
})


class IllegalEvent(Exception):
    """Event impossible in the current benign state (out-of-order procedure)."""

    def __init__(self, state: SessionState, kind: EventKind):
        super().__init__(f"{kind.name} is illegal in {state.name}")
        self.state = state
        self.kind = kind


@dataclass(frozen=True)
class FsmEvent:
    kind: EventKind
    tags: frozenset = frozenset()
    detail: object = None


@dataclass(frozen=True)
class LogEntry:
    state: SessionState
    kind: str                      # EventKind name, or INIT_KIND
    tags: frozenset = frozenset()

    def matches(self, state: SessionState, predicate: str) -> bool:
        return self.state is state and (self.kind == predicate or predicate in self.tags)


@dataclass(frozen=True)
class PendingTransition:
    """RX-proposed transition awaiting the stack's TX verdict."""

    event: FsmEvent
    target: SessionState
    created_seq: int


@dataclass
class SessionContext:
    peer_address: bytes
    state: SessionState = SessionState.STANDBY
    event_log: list = field(default_factory=list)
    pending: PendingTransition | None = None
    windows_opened: int = 0

    def __post_init__(self):
        if not self.event_log:
            self._open_window()

    def _open_window(self):
        self.event_log = [LogEntry(SessionState.STANDBY, INIT_KIND, frozenset({"session_init"}))]
        self.windows_opened += 1


def reset(ctx: SessionContext) -> None:
    """Return to STANDBY and open a fresh observation window."""
    ctx.state = SessionState.STANDBY
    ctx.pending = None
    ctx._open_window()


def sink_for(state: SessionState) -> SessionState:
    return EXPLOIT_SINKS.get(state, SessionState.CONNECTION_BREAK)


def fsm_step(ctx: SessionContext, event: FsmEvent,
             observed_state: SessionState | None = None) -> SessionState:
    """Apply one event; returns the new state.

    PACKET_OBSERVED is log-only: it never moves the benign state, but is
    recorded (against `observed_state` when the packet is driving a
    transition) so paths can match on packet-level predicates.  ALERT and
    SESSION_FINISHED reset from anywhere.  Any other (state, event) pair
    missing from the benign table raises IllegalEvent.
    """
    if event.kind is EventKind.PACKET_OBSERVED:
        state = observed_state if observed_state is not None else ctx.state
        ctx.event_log.append(LogEntry(state, event.kind.name, event.tags))
        return ctx.state
    if event.kind in (EventKind.ALERT, EventKind.SESSION_FINISHED):
        if event.kind is EventKind.ALERT:
            sink = event.detail if isinstance(event.detail, SessionState) else sink_for(ctx.state)
            ctx.event_log.append(LogEntry(sink, event.kind.name, event.tags))
        reset(ctx)
        return ctx.state
    if ctx.state.is_exploiting():
        # terminal: only the resets above leave an exploiting state
        return ctx.state
    nxt = BENIGN_TRANSITIONS.get((ctx.state, event.kind))
    if nxt is None:
        raise IllegalEvent(ctx.state, event.kind)
    if nxt is not ctx.state:
        ctx.event_log.append(LogEntry(nxt, event.kind.name, event.tags))
    ctx.state = nxt
    return nxt


# --------------------------------------------------------------------------
# malicious paths
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MaliciousPath:
    """Ordered (state, predicate) milestones ending in an exploiting sink."""

    path_id: str
    sink: SessionState
    steps: tuple

    def __post_init__(self):
        if not self.steps:
            raise ValueError("malicious path needs at least one step")
        if not self.sink.is_exploiting():
            raise ValueError(f"{self.sink.name} is not an exploiting state")


def path_covered(event_log, path: MaliciousPath) -> bool:
    """True iff every step occurs in order as a (non-contiguous) subsequence.

    A strict prefix is NOT coverage; benign sessions share prefixes with
    attacks (first-time weak pairing walks most of the downgrade path).
    Appending entries can only turn this true, never false.
    """
    it = iter(event_log)
    for state, predicate in path.steps:
        for entry in it:
            if entry.matches(state, predicate):
                break
        else:
            return False
    return True


class PathFormatError(ValueError):
    """Malformed malicious-path text."""


def parse_path(text: str, *, name: str = "<path>") -> MaliciousPath:
    """Parse the on-disk path format::

        id <path-id>
        sink <EXPLOITING_STATE>
        step <STATE> <predicate>
        ...
    """
    path_id = sink = None
    steps = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            if fields[0] == "id" and len(fields) == 2:
                path_id = fields[1]
            elif fields[0] == "sink" and len(fields) == 2:
                sink = SessionState[fields[1]]
            elif fields[0] == "step" and len(fields) == 3:
                steps.append((SessionState[fields[1]], fields[2]))
            else:
                raise KeyError(fields[0])
        except KeyError as exc:
            raise PathFormatError(f"{name}:{lineno}: bad path line {line!r}") from exc
    if path_id is None or sink is None or not steps:
        raise PathFormatError(f"{name}: path needs id, sink and at least one step")
    return MaliciousPath(path_id, sink, tuple(steps))


def format_path(path: MaliciousPath) -> str:
    lines = [f"id {path.path_id}", f"sink {path.sink.name}"]
    lines += [f"step {state.name} {predicate}" for state, predicate in path.steps]
    return "\n".join(lines) + "\n"
