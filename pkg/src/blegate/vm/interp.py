"""Reference interpreter, pure Python.

Register machine semantics: eleven u64 registers, a 512-byte
zero-initialized stack addressed downward from r10, and the read-only
context block addressed upward from r1.  Every memory access is bounds
checked at runtime even though verified programs cannot construct a bad
one; the interpreter must stay safe when fed unverified bytecode.

On any fault (bounds, budget, helper error, illegal instruction) a
RuntimeFault is raised and the caller maps it to REJECT.
"""

from __future__ import annotations

from . import isa
from .runtime import CTX_VADDR, STACK_VADDR_TOP, HelperFault, RuntimeFault, VmHelpers

__all__ = ["run"]

_U64 = (1 << 64) - 1
_U32 = (1 << 32) - 1
_SIGN64 = 1 << 63
_SIGN32 = 1 << 31


def _s64(v: int) -> int:
    return v - (1 << 64) if v & _SIGN64 else v


def _s32(v: int) -> int:
    return v - (1 << 32) if v & _SIGN32 else v


def run(program, ctx: bytes, helpers: VmHelpers | None = None,
        budget: int = isa.EXECUTION_BUDGET) -> tuple[int, int]:
    """Execute `program` over `ctx`; returns (r0, instructions_executed).

    `program` is either raw bytecode or a pre-decoded instruction tuple.
    """
    if isinstance(program, (bytes, bytearray)):
        program = isa.decode_program(bytes(program))
    if helpers is None:
        helpers = VmHelpers()
    n = len(program)
    # 16 slots so unverified bytecode naming r11..r15 stays inside the
    # list; the extra slots are inert scratch, not part of the ABI
    regs = [0] * 16
    regs[1] = CTX_VADDR
    regs[10] = STACK_VADDR_TOP
    stack = bytearray(isa.STACK_SIZE)
    stack_base = STACK_VADDR_TOP - isa.STACK_SIZE
    ctx_len = len(ctx)
    pc = 0
    executed = 0

    while True:
        if not 0 <= pc < n:
            raise RuntimeFault("program counter out of bounds", pc)
        executed += 1
        if executed > budget:
            raise RuntimeFault("execution budget exhausted", pc)
        op, dst, src, off, imm = program[pc]
        cls = op & 0x07

        if cls == isa.CLS_ALU64:
            b = regs[src] if op & 0x08 else imm & _U64
            code = op & 0xF0
            if code == isa.ALU_MOV:
                regs[dst] = b
            elif code == isa.ALU_ADD:
                regs[dst] = (regs[dst] + b) & _U64
            elif code == isa.ALU_SUB:
                regs[dst] = (regs[dst] - b) & _U64
            elif code == isa.ALU_AND:
                regs[dst] &= b
            elif code == isa.ALU_OR:
                regs[dst] |= b
            elif code == isa.ALU_XOR:
                regs[dst] ^= b
            elif code == isa.ALU_MUL:
                regs[dst] = (regs[dst] * b) & _U64
            elif code == isa.ALU_DIV:
                regs[dst] = regs[dst] // b if b else 0
            elif code == isa.ALU_MOD:
                if b:
                    regs[dst] %= b
            elif code == isa.ALU_LSH:
                regs[dst] = (regs[dst] << (b & 63)) & _U64
            elif code == isa.ALU_RSH:
                regs[dst] >>= b & 63
            elif code == isa.ALU_ARSH:
                regs[dst] = (_s64(regs[dst]) >> (b & 63)) & _U64
            elif code == isa.ALU_NEG:
                regs[dst] = (-regs[dst]) & _U64
            else:
                raise RuntimeFault("illegal instruction", pc)
            pc += 1
        elif cls == isa.CLS_JMP:
            code = op & 0xF0
            if code == isa.JMP_EXIT:
                return regs[0], executed
            if code == isa.JMP_CALL:
                try:
                    regs[0] = helpers.call(imm, regs[1], regs[2], regs[3],
                                           regs[4], regs[5]) & _U64
                except HelperFault as exc:
                    raise RuntimeFault(f"helper {imm}: {exc}", pc) from None
                regs[1] = regs[2] = regs[3] = regs[4] = regs[5] = 0
                pc += 1
            elif code == isa.JMP_JA:
                pc += 1 + off
            else:
                a = regs[dst]
                b = regs[src] if op & 0x08 else imm & _U64
                if code == isa.JMP_JEQ:
                    taken = a == b
                elif code == isa.JMP_JNE:
                    taken = a != b
                elif code == isa.JMP_JGT:
                    taken = a > b
                elif code == isa.JMP_JGE:
                    taken = a >= b
                elif code == isa.JMP_JLT:
                    taken = a < b
                elif code == isa.JMP_JLE:
                    taken = a <= b
                elif code == isa.JMP_JSET:
                    taken = bool(a & b)
                elif code == isa.JMP_JSGT:
                    taken = _s64(a) > _s64(b)
                elif code == isa.JMP_JSGE:
                    taken = _s64(a) >= _s64(b)
                elif code == isa.JMP_JSLT:
                    taken = _s64(a) < _s64(b)
                elif code == isa.JMP_JSLE:
                    taken = _s64(a) <= _s64(b)
                else:
                    raise RuntimeFault("illegal instruction", pc)
                pc += 1 + off if taken else 1
        elif cls == isa.CLS_LDX:
            addr = (regs[src] + off) & _U64
            size = isa.MEM_SIZES.get(op & 0x18)
            if size is None or op & 0xE0 != isa.MODE_MEM:
                raise RuntimeFault("illegal instruction", pc)
            if CTX_VADDR <= addr and addr + size <= CTX_VADDR + ctx_len:
                lo = addr - CTX_VADDR
                regs[dst] = int.from_bytes(ctx[lo:lo + size], "little")
            elif stack_base <= addr and addr + size <= STACK_VADDR_TOP:
                lo = addr - stack_base
                regs[dst] = int.from_bytes(stack[lo:lo + size], "little")
            else:
                raise RuntimeFault(f"out-of-bounds read of {size} at {addr:#x}", pc)
            pc += 1
        elif cls in (isa.CLS_ST, isa.CLS_STX):
            addr = (regs[dst] + off) & _U64
            size = isa.MEM_SIZES.get(op & 0x18)
            if size is None or op & 0xE0 != isa.MODE_MEM:
                raise RuntimeFault("illegal instruction", pc)
            if not (stack_base <= addr and addr + size <= STACK_VADDR_TOP):
                raise RuntimeFault(f"out-of-bounds write of {size} at {addr:#x}", pc)
            value = regs[src] if cls == isa.CLS_STX else imm & _U64
            lo = addr - stack_base
            stack[lo:lo + size] = (value & ((1 << (size * 8)) - 1)).to_bytes(size, "little")
            pc += 1
        elif cls == isa.CLS_ALU:
            a = regs[dst] & _U32
            b = (regs[src] if op & 0x08 else imm) & _U32
            code = op & 0xF0
            if code == isa.ALU_MOV:
                r = b
            elif code == isa.ALU_ADD:
                r = (a + b) & _U32
            elif code == isa.ALU_SUB:
                r = (a - b) & _U32
            elif code == isa.ALU_AND:
                r = a & b
            elif code == isa.ALU_OR:
                r = a | b
            elif code == isa.ALU_XOR:
                r = a ^ b
            elif code == isa.ALU_MUL:
                r = (a * b) & _U32
            elif code == isa.ALU_DIV:
                r = a // b if b else 0
            elif code == isa.ALU_MOD:
                r = a % b if b else a
            elif code == isa.ALU_LSH:
                r = (a << (b & 31)) & _U32
            elif code == isa.ALU_RSH:
                r = a >> (b & 31)
            elif code == isa.ALU_ARSH:
                r = (_s32(a) >> (b & 31)) & _U32
            elif code == isa.ALU_NEG:
                r = (-a) & _U32
            else:
                raise RuntimeFault("illegal instruction", pc)
            regs[dst] = r
            pc += 1
        else:
            raise RuntimeFault("illegal instruction", pc)
