"""Sandboxed policy VM: ISA, verifier, interpreter, containers, store.

Two interchangeable interpreter backends exist: a compiled extension
(`blegate._vmcore`, built from Cython at install time) and the pure
Python reference in `interp`.  Selection happens once at import; set
``BLEGATE_FORCE_PURE=1`` to pin the reference implementation, e.g. for
differential testing or when the extension did not build.  Semantics
are identical; `bench` measures the difference.
"""

from __future__ import annotations

import os

from . import interp, isa
from .ctx import (EVENT_ANY, HOOK_ANY, STATE_ANY, Hook, Slot, build_context,
                  read_slot)
from .maps import MapError, MapSet, VmMap
from .program import (ContainerError, PolicyProgram, VerifiedProgram,
                      decode_container, decode_containers, encode_container,
                      verify_program)
from .runtime import HelperFault, Outcome, RuntimeFault, VmHelpers
from .store import DispatchSnapshot, PolicyStore, StoreError
from .verifier import VerifierError, verify_bytecode

__all__ = [
    "isa", "Hook", "Slot", "HOOK_ANY", "EVENT_ANY", "STATE_ANY",
    "build_context", "read_slot", "MapError", "MapSet", "VmMap",
    "ContainerError", "PolicyProgram", "VerifiedProgram",
    "decode_container", "decode_containers", "encode_container",
    "verify_program", "HelperFault", "Outcome", "RuntimeFault", "VmHelpers",
    "DispatchSnapshot", "PolicyStore", "StoreError",
    "VerifierError", "verify_bytecode",
    "BACKEND", "available_backends", "run_backend", "run_with_backend",
]

_native = None
if not os.environ.get("BLEGATE_FORCE_PURE"):
    try:
        from .. import _vmcore as _native  # type: ignore[attr-defined]
    except ImportError:
        _native = None

BACKEND = "native" if _native is not None else "pure"


def available_backends() -> tuple:
    return ("pure", "native") if _native is not None else ("pure",)


def run_with_backend(backend: str, program, ctx: bytes, helpers, budget: int):
    """Run bytecode or a VerifiedProgram on an explicit backend."""
    if backend == "native":
        if _native is None:
            raise RuntimeError("native backend not built")
        code = program.program.bytecode if isinstance(program, VerifiedProgram) else bytes(program)
        return _native.run(code, ctx, helpers, budget)
    if backend == "pure":
        decoded = program.instructions if isinstance(program, VerifiedProgram) else program
        return interp.run(decoded, ctx, helpers, budget)
    raise ValueError(f"unknown backend {backend!r}")


def run_backend(program, ctx: bytes, helpers, budget: int = isa.EXECUTION_BUDGET):
    """Run on the selected backend; returns (r0, executed) or raises RuntimeFault."""
    return run_with_backend(BACKEND, program, ctx, helpers, budget)
