/**
 * Policy VM instruction set.
 *
 * Every instruction is 8 bytes: `opcode u8 | src:dst nibbles u8 |
 * offset s16 LE | imm s32 LE`.  Eleven registers r0..r10; r10 is the
 * read-only stack-frame pointer and r1 holds the context pointer at
 * program entry.  The tables here mirror the engine's verifier: it
 * rejects anything outside this subset, so the assembler never needs
 * to emit more and the disassembler never needs to name more.
 */

export const INSTRUCTION_SIZE = 8;

// instruction classes (low 3 bits)
export const CLS_LDX = 0x01;
export const CLS_ST = 0x02;
export const CLS_STX = 0x03;
export const CLS_ALU = 0x04;
export const CLS_JMP = 0x05;
export const CLS_ALU64 = 0x07;

// size field for memory ops
export const SZ_W = 0x00; // 4 bytes
export const SZ_H = 0x08; // 2 bytes
export const SZ_B = 0x10; // 1 byte
export const SZ_DW = 0x18; // 8 bytes
export const MODE_MEM = 0x60;

// source flag for ALU/JMP
export const SRC_K = 0x00; // immediate
export const SRC_X = 0x08; // register

// ALU operations (high nibble)
export const ALU_ADD = 0x00;
export const ALU_SUB = 0x10;
export const ALU_MUL = 0x20;
export const ALU_DIV = 0x30;
export const ALU_OR = 0x40;
export const ALU_AND = 0x50;
export const ALU_LSH = 0x60;
export const ALU_RSH = 0x70;
export const ALU_NEG = 0x80;
export const ALU_MOD = 0x90;
export const ALU_XOR = 0xa0;
export const ALU_MOV = 0xb0;
export const ALU_ARSH = 0xc0;

// jump operations (high nibble)
export const JMP_JA = 0x00;
export const JMP_JEQ = 0x10;
export const JMP_JGT = 0x20;
export const JMP_JGE = 0x30;
export const JMP_JSET = 0x40;
export const JMP_JNE = 0x50;
export const JMP_JSGT = 0x60;
export const JMP_JSGE = 0x70;
export const JMP_CALL = 0x80;
export const JMP_EXIT = 0x90;
export const JMP_JLT = 0xa0;
export const JMP_JLE = 0xb0;
export const JMP_JSLT = 0xc0;
export const JMP_JSLE = 0xd0;

export const NUM_REGS = 11;
export const STACK_REG = 10;

// verdicts a program may return in r0
export const VERDICT_PASS = 0;
export const VERDICT_REJECT = 1;

/** One decoded instruction; imm is the signed 32-bit value as stored. */
export interface Instruction {
  opcode: number;
  dst: number;
  src: number;
  off: number;
  imm: number;
}

export function encodeInstruction(ins: Instruction): Buffer {
  const buf = Buffer.alloc(INSTRUCTION_SIZE);
  buf.writeUInt8(ins.opcode & 0xff, 0);
  buf.writeUInt8(((ins.src & 0x0f) << 4) | (ins.dst & 0x0f), 1);
  buf.writeInt16LE(ins.off, 2);
  buf.writeInt32LE(ins.imm, 4);
  return buf;
}

export function decodeInstruction(code: Uint8Array, index: number): Instruction {
  const buf = Buffer.from(code.buffer, code.byteOffset + index * INSTRUCTION_SIZE, INSTRUCTION_SIZE);
  const regs = buf.readUInt8(1);
  return {
    opcode: buf.readUInt8(0),
    dst: regs & 0x0f,
    src: regs >> 4,
    off: buf.readInt16LE(2),
    imm: buf.readInt32LE(4),
  };
}

export function decodeProgram(code: Uint8Array): Instruction[] {
  if (code.length % INSTRUCTION_SIZE !== 0) {
    throw new Error(`bytecode length ${code.length} not a multiple of ${INSTRUCTION_SIZE}`);
  }
  const out: Instruction[] = [];
  for (let i = 0; i < code.length / INSTRUCTION_SIZE; i++) {
    out.push(decodeInstruction(code, i));
  }
  return out;
}

export function encodeProgram(instructions: Instruction[]): Buffer {
  return Buffer.concat(instructions.map(encodeInstruction));
}
