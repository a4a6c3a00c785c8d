"""Instruction set for the policy VM.

Standard 64-bit register-machine encoding: every instruction is 8 bytes,
``opcode u8 | src:dst nibbles u8 | offset s16 LE | imm s32 LE``.  Eleven
registers r0..r10; r10 is the read-only stack-frame pointer.  The subset
excludes the 16-byte immediate-load, byte-swap and 32-bit-offset jump
forms; the verifier rejects anything outside the table below.

`Asm` is a tiny programmatic builder with labels, used for the shipped
policies and for test programs.  Text assembly lives in the separate
toolchain, not here.
"""

from __future__ import annotations

import struct
from typing import NamedTuple

INSTRUCTION_SIZE = 8
_FMT = struct.Struct("<BBhi")

# instruction classes (low 3 bits)
CLS_LD = 0x00
CLS_LDX = 0x01
CLS_ST = 0x02
CLS_STX = 0x03
CLS_ALU = 0x04
CLS_JMP = 0x05
CLS_ALU64 = 0x07

# size field for memory ops
SZ_W = 0x00   # 4 bytes
SZ_H = 0x08   # 2 bytes
SZ_B = 0x10   # 1 byte
SZ_DW = 0x18  # 8 bytes
MODE_MEM = 0x60

# source flag for ALU/JMP
SRC_K = 0x00  # immediate
SRC_X = 0x08  # register

# ALU operations (high nibble)
ALU_ADD = 0x00
ALU_SUB = 0x10
ALU_MUL = 0x20
ALU_DIV = 0x30
ALU_OR = 0x40
ALU_AND = 0x50
ALU_LSH = 0x60
ALU_RSH = 0x70
ALU_NEG = 0x80
ALU_MOD = 0x90
ALU_XOR = 0xA0
ALU_MOV = 0xB0
ALU_ARSH = 0xC0

# jump operations (high nibble)
JMP_JA = 0x00
JMP_JEQ = 0x10
JMP_JGT = 0x20
JMP_JGE = 0x30
JMP_JSET = 0x40
JMP_JNE = 0x50
JMP_JSGT = 0x60
JMP_JSGE = 0x70
JMP_CALL = 0x80
JMP_EXIT = 0x90
JMP_JLT = 0xA0
JMP_JLE = 0xB0
JMP_JSLT = 0xC0
JMP_JSLE = 0xD0

NUM_REGS = 11
STACK_REG = 10
STACK_SIZE = 512

# resource ceilings enforced by the verifier / runtime
MAX_INSTRUCTIONS = 4096
EXECUTION_BUDGET = 65536

# helper function ids
HELPER_MAP_GET = 1
HELPER_MAP_PUT = 2
HELPER_MAP_DELETE = 3
HELPER_SESSION_TICK = 4
HELPER_IDS = frozenset({HELPER_MAP_GET, HELPER_MAP_PUT, HELPER_MAP_DELETE, HELPER_SESSION_TICK})

# verdicts a program may return in r0
VERDICT_PASS = 0
VERDICT_REJECT = 1

MEM_SIZES = {SZ_W: 4, SZ_H: 2, SZ_B: 1, SZ_DW: 8}
ALU_OPS = frozenset({ALU_ADD, ALU_SUB, ALU_MUL, ALU_DIV, ALU_OR, ALU_AND, ALU_LSH,
                     ALU_RSH, ALU_NEG, ALU_MOD, ALU_XOR, ALU_MOV, ALU_ARSH})
COND_JMP_OPS = frozenset({JMP_JEQ, JMP_JGT, JMP_JGE, JMP_JSET, JMP_JNE, JMP_JSGT,
                          JMP_JSGE, JMP_JLT, JMP_JLE, JMP_JSLT, JMP_JSLE})


class Instruction(NamedTuple):
    opcode: int
    dst: int
    src: int
    off: int
    imm: int

    def encode(self) -> bytes:
        return _FMT.pack(self.opcode, (self.src << 4) | self.dst, self.off, self.imm)


def decode_instruction(raw: bytes, index: int = 0) -> Instruction:
    opcode, regs, off, imm = _FMT.unpack_from(raw, index * INSTRUCTION_SIZE)
    return Instruction(opcode, regs & 0x0F, regs >> 4, off, imm)


def decode_program(code: bytes) -> tuple[Instruction, ...]:
    if len(code) % INSTRUCTION_SIZE:
        raise ValueError(f"bytecode length {len(code)} not a multiple of {INSTRUCTION_SIZE}")
    return tuple(decode_instruction(code, i) for i in range(len(code) // INSTRUCTION_SIZE))


def encode_program(instructions) -> bytes:
    return b"".join(ins.encode() for ins in instructions)


class Label:
    """Forward-referencable jump target for Asm."""

    def __init__(self, name: str = ""):
        self.name = name
        self.index: int | None = None


class Asm:
    """Programmatic assembler.

    >>> a = Asm()
    >>> a.mov_imm(0, 0); a.exit_()
    >>> len(a.assemble())
    16
    """

    def __init__(self):
        self._instructions: list = []
        self._fixups: list = []

    # -- plumbing ----------------------------------------------------------
    def _emit(self, opcode, dst=0, src=0, off=0, imm=0):
        self._instructions.append(Instruction(opcode, dst, src, off, imm))

    def label(self, lbl: Label) -> Label:
        lbl.index = len(self._instructions)
        return lbl

    def _jump(self, opcode, dst, src, imm, target):
        if isinstance(target, Label):
            self._fixups.append((len(self._instructions), target))
            self._emit(opcode, dst, src, 0, imm)
        else:
            self._emit(opcode, dst, src, target, imm)

    def assemble(self) -> bytes:
        for index, lbl in self._fixups:
            if lbl.index is None:
                raise ValueError(f"unresolved label {lbl.name!r}")
            ins = self._instructions[index]
            self._instructions[index] = ins._replace(off=lbl.index - index - 1)
        self._fixups.clear()
        return encode_program(self._instructions)

    # -- ALU ----------------------------------------------------------------
    def mov_imm(self, dst, imm):
        self._emit(CLS_ALU64 | SRC_K | ALU_MOV, dst, imm=imm)

    def mov_reg(self, dst, src):
        self._emit(CLS_ALU64 | SRC_X | ALU_MOV, dst, src)

    def alu_imm(self, op, dst, imm):
        self._emit(CLS_ALU64 | SRC_K | op, dst, imm=imm)

    def alu_reg(self, op, dst, src):
        self._emit(CLS_ALU64 | SRC_X | op, dst, src)

    # -- memory ---------------------------------------------------------------
    def ldx(self, size, dst, src, off):
        self._emit(CLS_LDX | MODE_MEM | size, dst, src, off)

    def st_imm(self, size, dst, off, imm):
        self._emit(CLS_ST | MODE_MEM | size, dst, off=off, imm=imm)

    def stx(self, size, dst, off, src):
        self._emit(CLS_STX | MODE_MEM | size, dst, src, off)

    # -- control flow -----------------------------------------------------------
    def ja(self, target):
        self._jump(CLS_JMP | JMP_JA, 0, 0, 0, target)

    def jmp_imm(self, op, dst, imm, target):
        self._jump(CLS_JMP | SRC_K | op, dst, 0, imm, target)

    def jmp_reg(self, op, dst, src, target):
        self._jump(CLS_JMP | SRC_X | op, dst, src, 0, target)

    def call(self, helper_id):
        self._emit(CLS_JMP | JMP_CALL, imm=helper_id)

    def exit_(self):
        self._emit(CLS_JMP | JMP_EXIT)
