"""Execution-time types shared by the pure and compiled interpreters."""

from __future__ import annotations

from typing import NamedTuple

from . import isa
from .maps import MapError, MapSet

__all__ = [
    "RuntimeFault", "HelperFault", "VmHelpers", "Outcome",
    "CTX_VADDR", "STACK_VADDR_TOP",
]

# virtual base addresses handed to programs; chosen so the two regions
# can never alias and so off-by-small-offset bugs land in unmapped space
CTX_VADDR = 0x1_0000_0000
STACK_VADDR_TOP = 0x2_0000_0000

_U64 = (1 << 64) - 1


class RuntimeFault(Exception):
    """Program aborted mid-flight; the caller must treat this as REJECT."""

    def __init__(self, reason: str, pc: int = -1):
        super().__init__(f"{reason} (pc={pc})" if pc >= 0 else reason)
        self.reason = reason
        self.pc = pc


class HelperFault(Exception):
    """Raised by a helper; converted to a RuntimeFault at the call site."""


class VmHelpers:
    """Helper-call table: u64-register calling convention, r0 result.

    map_get(id, key)         -> stored value, or 0 when the key is absent
    map_put(id, key, value)  -> 0
    map_delete(id, key)      -> 0 when deleted, 1 when the key was absent
    session_tick()           -> monotonically increasing counter
    """

    __slots__ = ("maps", "_tick")

    def __init__(self, maps: MapSet | None = None):
        self.maps = maps if maps is not None else MapSet()
        self._tick = 0

    def _vm_map(self, map_id: int):
        try:
            m = self.maps.by_id(map_id)
        except MapError as exc:
            raise HelperFault(str(exc)) from None
        if not m.vm_accessible():
            raise HelperFault(f"map {m.name!r} is not program-accessible")
        return m

    def call(self, helper_id: int, r1: int, r2: int, r3: int, r4: int, r5: int) -> int:
        if helper_id == isa.HELPER_MAP_GET:
            value = self._vm_map(r1).get((r2 & _U64).to_bytes(8, "little"))
            return 0 if value is None else int.from_bytes(value, "little")
        if helper_id == isa.HELPER_MAP_PUT:
            try:
                self._vm_map(r1).put((r2 & _U64).to_bytes(8, "little"),
                                     (r3 & _U64).to_bytes(8, "little"))
            except MapError as exc:
                raise HelperFault(str(exc)) from None
            return 0
        if helper_id == isa.HELPER_MAP_DELETE:
            return 0 if self._vm_map(r1).delete((r2 & _U64).to_bytes(8, "little")) else 1
        if helper_id == isa.HELPER_SESSION_TICK:
            self._tick += 1
            return self._tick
        raise HelperFault(f"unknown helper {helper_id}")


class Outcome(NamedTuple):
    """Result of running one program over one context."""

    verdict: int        # VERDICT_PASS or VERDICT_REJECT, after fail-closed mapping
    raw: int | None     # r0 as returned, None when the program faulted
    executed: int       # instructions retired
    fault: str | None   # fault reason, None on a clean exit

    @property
    def rejected(self) -> bool:
        return self.verdict == isa.VERDICT_REJECT
