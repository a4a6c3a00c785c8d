# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled interpreter backend.

Semantics must match blegate.vm.interp.run exactly; the differential
tests execute both over the same programs and contexts.  Bounds checks
use subtraction instead of addition so a register near 2**64 cannot
wrap past a limit check.
"""

from libc.stdint cimport (int16_t, int32_t, int64_t, uint8_t, uint32_t,
                          uint64_t)
from libc.stdlib cimport free, malloc
from libc.string cimport memset

from blegate.vm.runtime import HelperFault, RuntimeFault

cdef uint64_t CTX_VADDR = 0x100000000ULL
cdef uint64_t STACK_TOP = 0x200000000ULL
cdef int STACK_SIZE = 512

cdef int CLS_LDX = 0x01
cdef int CLS_ST = 0x02
cdef int CLS_STX = 0x03
cdef int CLS_ALU = 0x04
cdef int CLS_JMP = 0x05
cdef int CLS_ALU64 = 0x07
cdef int MODE_MEM = 0x60

cdef int ALU_ADD = 0x00
cdef int ALU_SUB = 0x10
cdef int ALU_MUL = 0x20
cdef int ALU_DIV = 0x30
cdef int ALU_OR = 0x40
cdef int ALU_AND = 0x50
cdef int ALU_LSH = 0x60
cdef int ALU_RSH = 0x70
cdef int ALU_NEG = 0x80
cdef int ALU_MOD = 0x90
cdef int ALU_XOR = 0xA0
cdef int ALU_MOV = 0xB0
cdef int ALU_ARSH = 0xC0

cdef int JMP_JA = 0x00
cdef int JMP_JEQ = 0x10
cdef int JMP_JGT = 0x20
cdef int JMP_JGE = 0x30
cdef int JMP_JSET = 0x40
cdef int JMP_JNE = 0x50
cdef int JMP_JSGT = 0x60
cdef int JMP_JSGE = 0x70
cdef int JMP_CALL = 0x80
cdef int JMP_EXIT = 0x90
cdef int JMP_JLT = 0xA0
cdef int JMP_JLE = 0xB0
cdef int JMP_JSLT = 0xC0
cdef int JMP_JSLE = 0xD0


cdef inline uint64_t _load_le(const unsigned char *buf, Py_ssize_t at, int size) noexcept:
    cdef uint64_t value = 0
    cdef int i
    for i in range(size):
        value |= (<uint64_t>buf[at + i]) << (8 * i)
    return value


cdef inline void _store_le(unsigned char *buf, Py_ssize_t at, int size, uint64_t value) noexcept:
    cdef int i
    for i in range(size):
        buf[at + i] = <unsigned char>((value >> (8 * i)) & 0xFF)


BACKEND_NAME = "native"


def run(code, ctx, object helpers, object budget_arg=65536):
    """Execute bytecode over a context; returns (r0, instructions_executed)."""
    cdef bytes code_b = bytes(code)
    cdef bytes ctx_b = bytes(ctx)
    cdef Py_ssize_t code_len = len(code_b)
    if code_len % 8:
        raise ValueError(f"bytecode length {code_len} not a multiple of 8")
    cdef Py_ssize_t n = code_len // 8
    cdef uint64_t budget = <uint64_t>int(budget_arg)

    cdef const unsigned char *raw = code_b
    cdef const unsigned char *ctx_buf = ctx_b
    cdef Py_ssize_t ctx_len = len(ctx_b)

    cdef uint8_t *ops = NULL
    cdef uint8_t *dsts = NULL
    cdef uint8_t *srcs = NULL
    cdef int16_t *offs = NULL
    cdef int32_t *imms = NULL
    cdef unsigned char stack[512]
    cdef uint64_t regs[16]
    cdef Py_ssize_t i, pc
    cdef uint64_t executed = 0
    cdef int op, cls, codebits, size, dst, src
    cdef int16_t off
    cdef int32_t imm
    cdef uint64_t a, b, r, addr, mask
    cdef uint32_t a32, b32, r32
    cdef uint64_t stack_base = STACK_TOP - STACK_SIZE
    cdef object result

    if n:
        ops = <uint8_t *>malloc(n)
        dsts = <uint8_t *>malloc(n)
        srcs = <uint8_t *>malloc(n)
        offs = <int16_t *>malloc(n * sizeof(int16_t))
        imms = <int32_t *>malloc(n * sizeof(int32_t))
        if not (ops and dsts and srcs and offs and imms):
            free(ops); free(dsts); free(srcs); free(offs); free(imms)
            raise MemoryError()
        for i in range(n):
            ops[i] = raw[8 * i]
            dsts[i] = raw[8 * i + 1] & 0x0F
            srcs[i] = raw[8 * i + 1] >> 4
            offs[i] = <int16_t>(raw[8 * i + 2] | (raw[8 * i + 3] << 8))
            imms[i] = <int32_t>(raw[8 * i + 4] | (raw[8 * i + 5] << 8)
                                | (raw[8 * i + 6] << 16) | (raw[8 * i + 7] << 24))

    memset(stack, 0, STACK_SIZE)
    memset(regs, 0, sizeof(regs))
    regs[1] = CTX_VADDR
    regs[10] = STACK_TOP
    pc = 0

    try:
        while True:
            if pc < 0 or pc >= n:
                raise RuntimeFault("program counter out of bounds", pc)
            executed += 1
            if executed > budget:
                raise RuntimeFault("execution budget exhausted", pc)
            op = ops[pc]
            dst = dsts[pc]
            src = srcs[pc]
            off = offs[pc]
            imm = imms[pc]
            cls = op & 0x07
            codebits = op & 0xF0

            if cls == CLS_ALU64:
                if op & 0x08:
                    b = regs[src]
                else:
                    b = <uint64_t>(<int64_t>imm)
                a = regs[dst]
                if codebits == ALU_MOV:
                    r = b
                elif codebits == ALU_ADD:
                    r = a + b
                elif codebits == ALU_SUB:
                    r = a - b
                elif codebits == ALU_AND:
                    r = a & b
                elif codebits == ALU_OR:
                    r = a | b
                elif codebits == ALU_XOR:
                    r = a ^ b
                elif codebits == ALU_MUL:
                    r = a * b
                elif codebits == ALU_DIV:
                    r = a // b if b else 0
                elif codebits == ALU_MOD:
                    r = a % b if b else a
                elif codebits == ALU_LSH:
                    r = a << (b & 63)
                elif codebits == ALU_RSH:
                    r = a >> (b & 63)
                elif codebits == ALU_ARSH:
                    r = <uint64_t>((<int64_t>a) >> (b & 63))
                elif codebits == ALU_NEG:
                    r = <uint64_t>0 - a
                else:
                    raise RuntimeFault("illegal instruction", pc)
                regs[dst] = r
                pc += 1
            elif cls == CLS_JMP:
                if codebits == JMP_EXIT:
                    return int(regs[0]), int(executed)
                if codebits == JMP_CALL:
                    try:
                        result = helpers.call(imm, int(regs[1]), int(regs[2]),
                                              int(regs[3]), int(regs[4]), int(regs[5]))
                    except HelperFault as exc:
                        raise RuntimeFault(f"helper {imm}: {exc}", pc)
                    regs[0] = <uint64_t>(result & 0xFFFFFFFFFFFFFFFF)
                    regs[1] = regs[2] = regs[3] = regs[4] = regs[5] = 0
                    pc += 1
                elif codebits == JMP_JA:
                    pc += 1 + off
                else:
                    a = regs[dst]
                    if op & 0x08:
                        b = regs[src]
                    else:
                        b = <uint64_t>(<int64_t>imm)
                    if codebits == JMP_JEQ:
                        r = a == b
                    elif codebits == JMP_JNE:
                        r = a != b
                    elif codebits == JMP_JGT:
                        r = a > b
                    elif codebits == JMP_JGE:
                        r = a >= b
                    elif codebits == JMP_JLT:
                        r = a < b
                    elif codebits == JMP_JLE:
                        r = a <= b
                    elif codebits == JMP_JSET:
                        r = (a & b) != 0
                    elif codebits == JMP_JSGT:
                        r = (<int64_t>a) > (<int64_t>b)
                    elif codebits == JMP_JSGE:
                        r = (<int64_t>a) >= (<int64_t>b)
                    elif codebits == JMP_JSLT:
                        r = (<int64_t>a) < (<int64_t>b)
                    elif codebits == JMP_JSLE:
                        r = (<int64_t>a) <= (<int64_t>b)
                    else:
                        raise RuntimeFault("illegal instruction", pc)
                    pc += 1 + off if r else 1
            elif cls == CLS_LDX:
                if op & 0xE0 != MODE_MEM:
                    raise RuntimeFault("illegal instruction", pc)
                size = 4 if (op & 0x18) == 0x00 else 2 if (op & 0x18) == 0x08 \
                    else 1 if (op & 0x18) == 0x10 else 8
                addr = regs[src] + <uint64_t>(<int64_t>off)
                if addr >= CTX_VADDR and <Py_ssize_t>size <= ctx_len \
                        and addr - CTX_VADDR <= <uint64_t>(ctx_len - size):
                    regs[dst] = _load_le(ctx_buf, <Py_ssize_t>(addr - CTX_VADDR), size)
                elif addr >= stack_base and addr - stack_base <= <uint64_t>(STACK_SIZE - size):
                    regs[dst] = _load_le(stack, <Py_ssize_t>(addr - stack_base), size)
                else:
                    raise RuntimeFault(f"out-of-bounds read of {size} at {int(addr):#x}", pc)
                pc += 1
            elif cls == CLS_ST or cls == CLS_STX:
                if op & 0xE0 != MODE_MEM:
                    raise RuntimeFault("illegal instruction", pc)
                size = 4 if (op & 0x18) == 0x00 else 2 if (op & 0x18) == 0x08 \
                    else 1 if (op & 0x18) == 0x10 else 8
                addr = regs[dst] + <uint64_t>(<int64_t>off)
                if not (addr >= stack_base and addr - stack_base <= <uint64_t>(STACK_SIZE - size)):
                    raise RuntimeFault(f"out-of-bounds write of {size} at {int(addr):#x}", pc)
                if cls == CLS_STX:
                    r = regs[src]
                else:
                    r = <uint64_t>(<int64_t>imm)
                _store_le(stack, <Py_ssize_t>(addr - stack_base), size, r)
                pc += 1
            elif cls == CLS_ALU:
                a32 = <uint32_t>regs[dst]
                if op & 0x08:
                    b32 = <uint32_t>regs[src]
                else:
                    b32 = <uint32_t>imm
                if codebits == ALU_MOV:
                    r32 = b32
                elif codebits == ALU_ADD:
                    r32 = a32 + b32
                elif codebits == ALU_SUB:
                    r32 = a32 - b32
                elif codebits == ALU_AND:
                    r32 = a32 & b32
                elif codebits == ALU_OR:
                    r32 = a32 | b32
                elif codebits == ALU_XOR:
                    r32 = a32 ^ b32
                elif codebits == ALU_MUL:
                    r32 = a32 * b32
                elif codebits == ALU_DIV:
                    r32 = a32 // b32 if b32 else 0
                elif codebits == ALU_MOD:
                    r32 = a32 % b32 if b32 else a32
                elif codebits == ALU_LSH:
                    r32 = a32 << (b32 & 31)
                elif codebits == ALU_RSH:
                    r32 = a32 >> (b32 & 31)
                elif codebits == ALU_ARSH:
                    r32 = <uint32_t>((<int32_t>a32) >> (b32 & 31))
                elif codebits == ALU_NEG:
                    r32 = <uint32_t>0 - a32
                else:
                    raise RuntimeFault("illegal instruction", pc)
                regs[dst] = r32
                pc += 1
            else:
                raise RuntimeFault("illegal instruction", pc)
    finally:
        free(ops); free(dsts); free(srcs); free(offs); free(imms)
