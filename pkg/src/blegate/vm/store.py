"""In-memory policy store: verified programs plus their shared maps.

All mutation happens under one lock and is all-or-nothing: a batch
install verifies every container before any of them becomes visible,
so a failed verify leaves the store byte-identical (`digest()` proves
it).  Dispatch reads go through an immutable snapshot rebuilt on every
successful mutation, so the packet path never observes a half-applied
patch.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

from . import isa
from .maps import MapSet
from .program import (ContainerError, PolicyProgram, VerifiedProgram,
                      decode_container, encode_container, verify_program)
from .runtime import Outcome, RuntimeFault, VmHelpers
from .verifier import VerifierError

__all__ = ["PolicyStore", "DispatchSnapshot", "StoreError",
           "SPECIFICATIONS_MAP_ID", "SCRATCH_MAP_ID", "CONTAINER_SUFFIX"]

SPECIFICATIONS_MAP_ID = 1
SCRATCH_MAP_ID = 2
CONTAINER_SUFFIX = ".ifw1"

_SPEC_KEY = struct.Struct("<BBBB4x16s")


class StoreError(Exception):
    pass


def specification_key(program: PolicyProgram) -> bytes:
    """24-byte specifications-map key: filters plus NUL-padded id."""
    return _SPEC_KEY.pack(program.hook, program.event, program.state, 0,
                          program.program_id.encode("utf-8"))


@dataclass(frozen=True)
class DispatchSnapshot:
    """Immutable view the packet path iterates; never mutated in place."""

    programs: tuple
    by_hook: dict

    def select(self, hook: int, event: int, state: int) -> tuple:
        return tuple(vp for vp in self.by_hook.get(hook, ())
                     if vp.program.matches(hook, event, state))


def _build_snapshot(programs: dict) -> DispatchSnapshot:
    ordered = tuple(sorted(programs.values(), key=lambda vp: vp.program_id))
    by_hook: dict = {}
    for vp in ordered:
        by_hook.setdefault(vp.program.hook, []).append(vp)
    return DispatchSnapshot(ordered, {h: tuple(v) for h, v in by_hook.items()})


class PolicyStore:
    def __init__(self, execution_budget: int = isa.EXECUTION_BUDGET,
                 backend: str = None):
        self._lock = threading.Lock()
        self._programs: dict = {}
        self._seq = 0
        self._budget = execution_budget
        self._backend = backend      # None picks the package default
        self.maps = MapSet()
        self.maps.create("specifications", SPECIFICATIONS_MAP_ID,
                         key_size=_SPEC_KEY.size, value_size=8, max_entries=256)
        self.maps.create("scratch", SCRATCH_MAP_ID, max_entries=256)
        self.helpers = VmHelpers(self.maps)
        self._snapshot = _build_snapshot({})

    # -- mutation ------------------------------------------------------------

    def install(self, programs) -> list:
        """Install a batch atomically; returns the verified programs.

        Every program must verify before any becomes visible.  A
        duplicate id inside the batch is rejected; an id matching an
        installed program replaces it.
        """
        batch = list(programs)
        if not batch:
            raise StoreError("empty install batch")
        ids = [p.program_id for p in batch]
        if len(set(ids)) != len(ids):
            raise StoreError(f"duplicate program id in batch: {sorted(ids)}")
        verified = []
        for program in batch:
            try:
                verified.append(verify_program(program))
            except VerifierError as exc:
                raise StoreError(f"{program.program_id}: {exc}") from exc
        with self._lock:
            spec_map = self.maps.by_name("specifications")
            for vp in verified:
                previous = self._programs.get(vp.program_id)
                if previous is not None:
                    spec_map.delete(specification_key(previous.program))
                self._seq += 1
                self._programs[vp.program_id] = vp
                spec_map.put(specification_key(vp.program),
                             self._seq.to_bytes(8, "little"))
            self._snapshot = _build_snapshot(self._programs)
        return verified

    def remove(self, program_id: str) -> bool:
        with self._lock:
            vp = self._programs.pop(program_id, None)
            if vp is None:
                return False
            self.maps.by_name("specifications").delete(specification_key(vp.program))
            self._snapshot = _build_snapshot(self._programs)
            return True

    def load_directory(self, path) -> int:
        """Install every container file under `path`; returns the count."""
        directory = Path(path)
        programs = []
        for entry in sorted(directory.glob(f"*{CONTAINER_SUFFIX}")):
            data = entry.read_bytes()
            try:
                program, end = decode_container(data)
            except ContainerError as exc:
                raise StoreError(f"{entry.name}: {exc}") from exc
            if end != len(data):
                raise StoreError(f"{entry.name}: trailing bytes after container")
            programs.append(program)
        if programs:
            self.install(programs)
        return len(programs)

    # -- reads -----------------------------------------------------------------

    def dispatch(self) -> DispatchSnapshot:
        return self._snapshot

    def program_ids(self) -> list:
        return sorted(self._programs)

    def get(self, program_id: str):
        return self._programs.get(program_id)

    def digest(self) -> str:
        """Canonical hash of programs plus map state; proves atomicity."""
        h = hashlib.sha256()
        with self._lock:
            for pid in sorted(self._programs):
                h.update(encode_container(self._programs[pid].program))
            for name in self.maps.names():
                m = self.maps.by_name(name)
                h.update(name.encode())
                for key, value in sorted(m.items()):
                    h.update(key)
                    h.update(value)
        return h.hexdigest()

    # -- execution ---------------------------------------------------------------

    def execute(self, vp: VerifiedProgram, ctx: bytes) -> Outcome:
        """Run one verified program over one context, fail-closed."""
        from . import run_backend, run_with_backend  # deferred: vm init imports this module
        with self._lock:
            try:
                if self._backend is None:
                    raw, executed = run_backend(vp, ctx, self.helpers, self._budget)
                else:
                    raw, executed = run_with_backend(self._backend, vp, ctx,
                                                     self.helpers, self._budget)
            except RuntimeFault as exc:
                return Outcome(isa.VERDICT_REJECT, None, 0, exc.reason)
        if raw == isa.VERDICT_PASS:
            return Outcome(isa.VERDICT_PASS, raw, executed, None)
        if raw == isa.VERDICT_REJECT:
            return Outcome(isa.VERDICT_REJECT, raw, executed, None)
        return Outcome(isa.VERDICT_REJECT, raw, executed,
                       f"invalid verdict {raw}")

    def evaluate(self, hook: int, event: int, state: int, ctx: bytes):
        """Run every matching program; returns (verdicts, first_reject).

        verdicts is a list of (program_id, Outcome) in id order; the
        scan stops at the first REJECT since the packet is already
        doomed (fail-fast keeps the mediation path cheap).
        """
        results = []
        hit = None
        for vp in self._snapshot.select(hook, event, state):
            outcome = self.execute(vp, ctx)
            results.append((vp.program_id, outcome))
            if outcome.rejected:
                hit = vp.program_id
                break
        return results, hit
