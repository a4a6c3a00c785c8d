"""Static verifier for policy bytecode.

Every program is proven safe before it can ever run:

* structural: 8-byte alignment, at most 4096 instructions, opcodes from
  the supported subset, jump targets inside the program, no falling off
  the end, calls only to allowlisted helpers;
* memory: abstract interpretation over register kinds (scalar / context
  pointer / stack pointer) rejects reads of uninitialized registers,
  any store outside the 512-byte stack, and any access whose offset is
  not statically provable;
* termination: back-edges are rejected unless a counted-loop proof
  bounds them, and the worst-case executed-instruction estimate must
  stay within the runtime budget.

This intentionally verifies only the subset the shipped policies need;
the runtime re-checks every access anyway (fail-closed, defense in
depth), so a verifier gap degrades to a rejected packet, not a breach.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import isa
from .ctx import CTX_MAX_SIZE

__all__ = ["VerifierError", "Analysis", "verify_bytecode"]


class VerifierError(Exception):
    """Program rejected; message says which guarantee failed."""


@dataclass(frozen=True)
class Analysis:
    instructions: tuple
    worst_case_instructions: int
    loop_bounds: dict


# abstract register values: (kind, payload)
_UNINIT = ("uninit", None)
_BAD = ("bad", None)


def _scalar(value=None):
    return ("scalar", value)


def _join(a, b):
    if a == b:
        return a
    if a[0] == b[0]:
        return (a[0], None)
    return _BAD


def _is_ptr(v):
    return v[0] in ("ctx", "stack")


def verify_bytecode(code: bytes,
                    max_instructions: int = isa.MAX_INSTRUCTIONS,
                    budget: int = isa.EXECUTION_BUDGET,
                    helper_ids: frozenset = isa.HELPER_IDS) -> Analysis:
    """Verify `code`; returns the analysis or raises VerifierError."""
    if not code:
        raise VerifierError("empty program")
    if len(code) % isa.INSTRUCTION_SIZE:
        raise VerifierError(
            f"bytecode length {len(code)} not a multiple of {isa.INSTRUCTION_SIZE}")
    instructions = tuple(
        isa.decode_instruction(code, i) for i in range(len(code) // isa.INSTRUCTION_SIZE))
    n = len(instructions)
    if n > max_instructions:
        raise VerifierError(f"{n} instructions exceed the {max_instructions} limit")

    for idx, ins in enumerate(instructions):
        _check_shape(idx, ins, n, helper_ids)

    loop_bounds = _prove_loops(instructions)
    worst = n
    for (tgt, src), iters in loop_bounds.items():
        # the straight-line count already holds one pass over the span
        worst += (iters - 1) * (src - tgt + 1)
    if worst > budget:
        raise VerifierError(
            f"worst-case {worst} executed instructions exceeds budget {budget}")

    _check_flow_and_memory(instructions)
    return Analysis(instructions, worst, loop_bounds)


# --------------------------------------------------------------------------
# structural checks
# --------------------------------------------------------------------------

def _check_shape(idx: int, ins, n: int, helper_ids) -> None:
    cls = ins.opcode & 0x07
    if ins.dst >= isa.NUM_REGS or ins.src >= isa.NUM_REGS:
        raise VerifierError(f"instruction {idx}: register out of range")
    if cls in (isa.CLS_ALU, isa.CLS_ALU64):
        op = ins.opcode & 0xF0
        if op not in isa.ALU_OPS:
            raise VerifierError(f"instruction {idx}: unknown ALU op {ins.opcode:#04x}")
        if ins.off:
            raise VerifierError(f"instruction {idx}: ALU with nonzero offset")
        if ins.opcode & 0x08 and ins.imm:
            raise VerifierError(f"instruction {idx}: register-source ALU with immediate")
        if not ins.opcode & 0x08 and ins.src:
            raise VerifierError(f"instruction {idx}: immediate ALU names a source register")
        return
    if cls == isa.CLS_JMP:
        op = ins.opcode & 0xF0
        if op == isa.JMP_EXIT:
            if ins.opcode != isa.CLS_JMP | isa.JMP_EXIT or ins.dst or ins.src or ins.off or ins.imm:
                raise VerifierError(f"instruction {idx}: malformed exit")
            return
        if op == isa.JMP_CALL:
            if ins.opcode != isa.CLS_JMP | isa.JMP_CALL or ins.dst or ins.src or ins.off:
                raise VerifierError(f"instruction {idx}: malformed call")
            if ins.imm not in helper_ids:
                raise VerifierError(f"instruction {idx}: helper {ins.imm} not allowlisted")
            return
        if op == isa.JMP_JA:
            if ins.opcode != isa.CLS_JMP | isa.JMP_JA or ins.dst or ins.src or ins.imm:
                raise VerifierError(f"instruction {idx}: malformed unconditional jump")
        elif op in isa.COND_JMP_OPS:
            if ins.opcode & 0x08 and ins.imm:
                raise VerifierError(f"instruction {idx}: register-compare jump with immediate")
            if not ins.opcode & 0x08 and ins.src:
                raise VerifierError(f"instruction {idx}: immediate-compare jump names a register")
        else:
            raise VerifierError(f"instruction {idx}: unknown jump op {ins.opcode:#04x}")
        target = idx + 1 + ins.off
        if not 0 <= target < n:
            raise VerifierError(f"instruction {idx}: jump target {target} outside program")
        return
    if cls == isa.CLS_LDX:
        if ins.opcode != isa.CLS_LDX | isa.MODE_MEM | (ins.opcode & 0x18):
            raise VerifierError(f"instruction {idx}: unsupported load form {ins.opcode:#04x}")
        if ins.imm:
            raise VerifierError(f"instruction {idx}: load with immediate")
        return
    if cls in (isa.CLS_ST, isa.CLS_STX):
        if ins.opcode != cls | isa.MODE_MEM | (ins.opcode & 0x18):
            raise VerifierError(f"instruction {idx}: unsupported store form {ins.opcode:#04x}")
        if cls == isa.CLS_STX and ins.imm:
            raise VerifierError(f"instruction {idx}: register store with immediate")
        if cls == isa.CLS_ST and ins.src:
            raise VerifierError(f"instruction {idx}: immediate store names a source register")
        return
    raise VerifierError(f"instruction {idx}: opcode {ins.opcode:#04x} outside supported subset")


# --------------------------------------------------------------------------
# termination
# --------------------------------------------------------------------------

def _writes_reg(ins, reg: int) -> bool:
    cls = ins.opcode & 0x07
    if cls in (isa.CLS_ALU, isa.CLS_ALU64, isa.CLS_LDX):
        return ins.dst == reg
    if cls == isa.CLS_JMP and ins.opcode & 0xF0 == isa.JMP_CALL:
        return reg <= 5
    return False


_UP_CONDS = {isa.JMP_JLT, isa.JMP_JLE, isa.JMP_JSLT, isa.JMP_JSLE, isa.JMP_JNE}
_DOWN_CONDS = {isa.JMP_JGT, isa.JMP_JGE, isa.JMP_JSGT, isa.JMP_JSGE, isa.JMP_JNE}


def _prove_loops(instructions) -> dict:
    """Bound every back-edge or reject.

    Accepted shape: a conditional jump back over a body that steps a
    counter register by a constant exactly once, with the counter set
    from a constant before the loop and compared against a constant
    bound in the right direction.  Anything fancier is rejected; the
    runtime budget would still stop it, but unbounded programs must
    never load.
    """
    bounds: dict = {}
    spans: list = []
    for idx, ins in enumerate(instructions):
        if ins.opcode & 0x07 != isa.CLS_JMP:
            continue
        op = ins.opcode & 0xF0
        if op in (isa.JMP_CALL, isa.JMP_EXIT):
            continue
        target = idx + 1 + ins.off
        if target > idx:
            continue
        if op == isa.JMP_JA or op not in isa.COND_JMP_OPS or ins.opcode & 0x08:
            raise VerifierError(f"instruction {idx}: unbounded loop (unprovable back-edge)")
        reg, bound = ins.dst, ins.imm
        step = None
        for j in range(target, idx):
            body = instructions[j]
            if not _writes_reg(body, reg):
                continue
            if step is not None:
                raise VerifierError(f"instruction {idx}: unbounded loop (counter written twice)")
            bcls = body.opcode & 0x07
            bop = body.opcode & 0xF0
            if bcls == isa.CLS_ALU64 and bop in (isa.ALU_ADD, isa.ALU_SUB) \
                    and not body.opcode & 0x08 and body.imm > 0:
                step = body.imm if bop == isa.ALU_ADD else -body.imm
            else:
                raise VerifierError(f"instruction {idx}: unbounded loop (counter not stepped)")
        if step is None:
            raise VerifierError(f"instruction {idx}: unbounded loop (no counter step)")
        init = _loop_counter_init(instructions, target, reg)
        if init is None:
            raise VerifierError(f"instruction {idx}: unbounded loop (counter init unknown)")
        if step > 0 and op in _UP_CONDS and bound >= init:
            distance = bound - init
        elif step < 0 and op in _DOWN_CONDS and bound <= init:
            distance = init - bound
        else:
            raise VerifierError(f"instruction {idx}: unbounded loop (condition direction)")
        stride = abs(step)
        # the body runs before each test, so every accepted loop runs at least once;
        # JNE starting on the bound would wrap the whole 64-bit space first
        if op == isa.JMP_JNE:
            if distance == 0 or distance % stride:
                raise VerifierError(
                    f"instruction {idx}: unbounded loop (counter skips bound)")
            iters = distance // stride
        elif op in (isa.JMP_JLT, isa.JMP_JSLT, isa.JMP_JGT, isa.JMP_JSGT):
            iters = max(1, -(-distance // stride))
        else:
            iters = distance // stride + 1
        for t0, s0 in spans:
            if not (idx < t0 or target > s0):
                raise VerifierError(f"instruction {idx}: unbounded loop (overlapping loops)")
        spans.append((target, idx))
        bounds[(target, idx)] = iters
    return bounds


def _loop_counter_init(instructions, loop_start: int, reg: int):
    for j in range(loop_start - 1, -1, -1):
        ins = instructions[j]
        if _writes_reg(ins, reg):
            if ins.opcode == isa.CLS_ALU64 | isa.ALU_MOV and ins.dst == reg:
                return ins.imm
            return None
        if ins.opcode & 0x07 == isa.CLS_JMP:
            return None
    return None


# --------------------------------------------------------------------------
# flow and memory safety
# --------------------------------------------------------------------------

def _check_flow_and_memory(instructions) -> None:
    n = len(instructions)
    states: dict = {}
    entry = [_UNINIT] * isa.NUM_REGS
    entry[1] = ("ctx", 0)
    entry[10] = ("stack", 0)
    worklist = [(0, tuple(entry))]
    seen_exit = False
    while worklist:
        idx, regs = worklist.pop()
        if idx >= n:
            raise VerifierError(f"instruction {n - 1}: program can fall off the end")
        prev = states.get(idx)
        if prev is not None:
            joined = tuple(_join(a, b) for a, b in zip(prev, regs))
            if joined == prev:
                continue
            regs = joined
        states[idx] = regs
        ins = instructions[idx]
        cls = ins.opcode & 0x07
        op = ins.opcode & 0xF0
        regs = list(regs)
        if cls == isa.CLS_JMP and op == isa.JMP_EXIT:
            if regs[0][0] in ("uninit", "bad"):
                raise VerifierError(f"instruction {idx}: exit with r0 uninitialized")
            seen_exit = True
            continue
        if cls == isa.CLS_JMP and op == isa.JMP_CALL:
            regs[0] = _scalar()
            for r in range(1, 6):
                regs[r] = _UNINIT
            worklist.append((idx + 1, tuple(regs)))
            continue
        if cls == isa.CLS_JMP and op == isa.JMP_JA:
            worklist.append((idx + 1 + ins.off, tuple(regs)))
            continue
        if cls == isa.CLS_JMP:
            _require_read(idx, regs, ins.dst)
            if ins.opcode & 0x08:
                _require_read(idx, regs, ins.src)
            state = tuple(regs)
            worklist.append((idx + 1 + ins.off, state))
            worklist.append((idx + 1, state))
            continue
        if cls in (isa.CLS_ALU, isa.CLS_ALU64):
            regs[ins.dst] = _alu_result(idx, regs, ins, cls)
            _require_writable(idx, ins.dst)
            worklist.append((idx + 1, tuple(regs)))
            continue
        if cls == isa.CLS_LDX:
            size = isa.MEM_SIZES[ins.opcode & 0x18]
            _check_access(idx, regs, ins.src, ins.off, size, store=False)
            _require_writable(idx, ins.dst)
            regs[ins.dst] = _scalar()
            worklist.append((idx + 1, tuple(regs)))
            continue
        # ST / STX
        size = isa.MEM_SIZES[ins.opcode & 0x18]
        if cls == isa.CLS_STX:
            _require_read(idx, regs, ins.src)
        _check_access(idx, regs, ins.dst, ins.off, size, store=True)
        worklist.append((idx + 1, tuple(regs)))
    if not seen_exit:
        raise VerifierError("no reachable exit")


def _require_read(idx: int, regs, reg: int) -> None:
    if regs[reg][0] in ("uninit", "bad"):
        raise VerifierError(f"instruction {idx}: r{reg} read before initialization")


def _require_writable(idx: int, reg: int) -> None:
    if reg == isa.STACK_REG:
        raise VerifierError(f"instruction {idx}: r10 is read-only")


def _check_access(idx: int, regs, base: int, off: int, size: int, store: bool) -> None:
    kind, ptr_off = regs[base]
    if kind == "ctx":
        if store:
            raise VerifierError(f"instruction {idx}: store into read-only context")
        if ptr_off is None:
            raise VerifierError(f"instruction {idx}: context offset not statically provable")
        lo = ptr_off + off
        if lo < 0 or lo + size > CTX_MAX_SIZE:
            raise VerifierError(f"instruction {idx}: context access [{lo}, {lo + size}) out of bounds")
        return
    if kind == "stack":
        if ptr_off is None:
            raise VerifierError(f"instruction {idx}: stack offset not statically provable")
        lo = ptr_off + off
        if lo < -isa.STACK_SIZE or lo + size > 0:
            raise VerifierError(
                f"instruction {idx}: stack access [{lo}, {lo + size}) outside the "
                f"{isa.STACK_SIZE}-byte frame")
        return
    raise VerifierError(f"instruction {idx}: r{base} is not a provable pointer")


def _alu_result(idx: int, regs, ins, cls):
    op = ins.opcode & 0xF0
    is64 = cls == isa.CLS_ALU64
    if op == isa.ALU_MOV:
        if ins.opcode & 0x08:
            _require_read(idx, regs, ins.src)
            src = regs[ins.src]
            return src if is64 else _scalar()
        return _scalar(ins.imm & (2**64 - 1) if is64 else ins.imm & 0xFFFFFFFF)
    if op == isa.ALU_NEG:
        _require_read(idx, regs, ins.dst)
        return _scalar()
    _require_read(idx, regs, ins.dst)
    dst = regs[ins.dst]
    if ins.opcode & 0x08:
        _require_read(idx, regs, ins.src)
        src = regs[ins.src]
    else:
        src = _scalar(ins.imm)
    if _is_ptr(dst) and is64 and op in (isa.ALU_ADD, isa.ALU_SUB):
        if src[0] == "scalar" and src[1] is not None and dst[1] is not None:
            delta = src[1] if op == isa.ALU_ADD else -src[1]
            return (dst[0], dst[1] + delta)
        return (dst[0], None)
    if dst[0] == "scalar" and src[0] == "scalar" and dst[1] is not None and src[1] is not None:
        value = _const_fold(op, dst[1], src[1], is64)
        if value is not None:
            return _scalar(value)
    return _scalar()


def _const_fold(op, a: int, b: int, is64: bool):
    mask = 2**64 - 1 if is64 else 0xFFFFFFFF
    shift_mask = 63 if is64 else 31
    a &= mask
    b &= mask
    if op == isa.ALU_ADD:
        return (a + b) & mask
    if op == isa.ALU_SUB:
        return (a - b) & mask
    if op == isa.ALU_MUL:
        return (a * b) & mask
    if op == isa.ALU_AND:
        return a & b
    if op == isa.ALU_OR:
        return a | b
    if op == isa.ALU_XOR:
        return a ^ b
    if op == isa.ALU_LSH:
        return (a << (b & shift_mask)) & mask
    if op == isa.ALU_RSH:
        return a >> (b & shift_mask)
    return None
