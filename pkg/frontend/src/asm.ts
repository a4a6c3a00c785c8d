/**
 * Text assembler for policy programs.
 *
 * Source grammar, one item per line; `;` or `#` starts a comment:
 *
 *     .id <program-id>              starts a new program section
 *     .attach <hook>:<event>:<state>
 *     .raw <16 hex digits>          one instruction, verbatim bytes
 *     <label>:
 *     <mnemonic> <operands>
 *
 * Mnemonics: `mov r2, 5` / `mov r2, r3` and the other ALU ops (add,
 * sub, mul, div, or, and, lsh, rsh, mod, xor, arsh; `32` suffix for the
 * 32-bit forms; `neg r2` unary); `ldxdw r2, [r1+136]` loads (w/h/b/dw);
 * `stdw [r10-8], 7` immediate stores; `stxdw [r10-8], r2` register
 * stores; `ja +2`, `jeq r2, 1, +3` / `jeq r2, r3, done` and the other
 * conditional jumps (jgt, jge, jset, jne, jsgt, jsge, jlt, jle, jslt,
 * jsle); `call 1`; `exit`.  Jump targets are relative (`+2`, `-3`) or
 * label names.  Immediates are decimal (signed 32-bit) or hex (up to
 * 32 bits, reinterpreted as the signed bit pattern).
 */

import {
  ALU_ADD, ALU_AND, ALU_ARSH, ALU_DIV, ALU_LSH, ALU_MOD, ALU_MOV, ALU_MUL,
  ALU_NEG, ALU_OR, ALU_RSH, ALU_SUB, ALU_XOR,
  CLS_ALU, CLS_ALU64, CLS_JMP, CLS_LDX, CLS_ST, CLS_STX,
  Instruction, JMP_CALL, JMP_EXIT, JMP_JA, JMP_JEQ, JMP_JGE, JMP_JGT,
  JMP_JLE, JMP_JLT, JMP_JNE, JMP_JSET, JMP_JSGE, JMP_JSGT, JMP_JSLE,
  JMP_JSLT, MODE_MEM, NUM_REGS, SRC_K, SRC_X, SZ_B, SZ_DW, SZ_H, SZ_W,
  decodeInstruction, encodeProgram,
} from "./isa";
import { Attach, parseAttach } from "./abi";

export class AsmError extends Error {
  constructor(message: string, public readonly line: number) {
    super(line > 0 ? `line ${line}: ${message}` : message);
  }
}

/** One assembled program: bytecode plus any directives seen. */
export interface AsmSection {
  id?: string;
  attach?: Attach;
  bytecode: Buffer;
}

export const ALU_NAMES: Record<string, number> = {
  add: ALU_ADD, sub: ALU_SUB, mul: ALU_MUL, div: ALU_DIV, or: ALU_OR,
  and: ALU_AND, lsh: ALU_LSH, rsh: ALU_RSH, mod: ALU_MOD, xor: ALU_XOR,
  mov: ALU_MOV, arsh: ALU_ARSH,
};

export const COND_NAMES: Record<string, number> = {
  jeq: JMP_JEQ, jgt: JMP_JGT, jge: JMP_JGE, jset: JMP_JSET, jne: JMP_JNE,
  jsgt: JMP_JSGT, jsge: JMP_JSGE, jlt: JMP_JLT, jle: JMP_JLE,
  jslt: JMP_JSLT, jsle: JMP_JSLE,
};

export const SIZE_NAMES: Record<string, number> = { w: SZ_W, h: SZ_H, b: SZ_B, dw: SZ_DW };

const LABEL_RE = /^([A-Za-z_][A-Za-z0-9_.]*):$/;
const REG_RE = /^r(\d+)$/;
const MEM_RE = /^\[\s*r(\d+)\s*(?:([+-])\s*(\d+|0x[0-9a-fA-F]+))?\s*\]$/;

function parseReg(text: string, line: number): number {
  const m = REG_RE.exec(text);
  if (!m) {
    throw new AsmError(`expected register, got '${text}'`, line);
  }
  const reg = Number(m[1]);
  if (reg >= NUM_REGS) {
    throw new AsmError(`register out of range '${text}'`, line);
  }
  return reg;
}

function parseImm(text: string, line: number): number {
  let value: bigint;
  if (/^-?\d+$/.test(text)) {
    value = BigInt(text);
    if (value < -(2n ** 31n) || value >= 2n ** 31n) {
      throw new AsmError(`immediate overflow: ${text}`, line);
    }
  } else if (/^-?0x[0-9a-fA-F]+$/.test(text)) {
    value = BigInt(text);
    if (value >= 2n ** 31n && value < 2n ** 32n) {
      value -= 2n ** 32n; // hex gives the bit pattern
    }
    if (value < -(2n ** 31n) || value >= 2n ** 31n) {
      throw new AsmError(`immediate overflow: ${text}`, line);
    }
  } else {
    throw new AsmError(`bad immediate '${text}'`, line);
  }
  return Number(value);
}

function parseOffset(text: string, line: number): number {
  const value = parseImm(text, line);
  if (value < -0x8000 || value > 0x7fff) {
    throw new AsmError(`offset overflow: ${text}`, line);
  }
  return value;
}

function parseMem(text: string, line: number): { reg: number; off: number } {
  const m = MEM_RE.exec(text);
  if (!m) {
    throw new AsmError(`expected memory operand [rN+off], got '${text}'`, line);
  }
  const reg = Number(m[1]);
  if (reg >= NUM_REGS) {
    throw new AsmError(`register out of range 'r${m[1]}'`, line);
  }
  const off = m[2] ? parseOffset((m[2] === "-" ? "-" : "") + m[3], line) : 0;
  return { reg, off };
}

interface Fixup {
  index: number;
  label: string;
  line: number;
}

class Section {
  id?: string;
  attach?: Attach;
  idLine = 0;
  instructions: Instruction[] = [];
  fixups: Fixup[] = [];
  labels = new Map<string, number>();

  emit(opcode: number, dst = 0, src = 0, off = 0, imm = 0): void {
    this.instructions.push({ opcode, dst, src, off, imm });
  }

  finish(): AsmSection {
    for (const fixup of this.fixups) {
      const target = this.labels.get(fixup.label);
      if (target === undefined) {
        throw new AsmError(`unresolved label '${fixup.label}'`, fixup.line);
      }
      const off = target - fixup.index - 1;
      if (off < -0x8000 || off > 0x7fff) {
        throw new AsmError(`offset overflow: jump to '${fixup.label}'`, fixup.line);
      }
      this.instructions[fixup.index] = { ...this.instructions[fixup.index], off };
    }
    return { id: this.id, attach: this.attach, bytecode: encodeProgram(this.instructions) };
  }
}

function parseJumpTarget(section: Section, text: string, line: number): number {
  if (/^[+-]?\d+$/.test(text)) {
    return parseOffset(text.replace(/^\+/, ""), line);
  }
  if (!/^[A-Za-z_][A-Za-z0-9_.]*$/.test(text)) {
    throw new AsmError(`bad jump target '${text}'`, line);
  }
  section.fixups.push({ index: section.instructions.length, label: text, line });
  return 0;
}

function parseRegOrImm(text: string, line: number): { reg?: number; imm?: number } {
  if (REG_RE.test(text)) {
    return { reg: parseReg(text, line) };
  }
  return { imm: parseImm(text, line) };
}

function assembleInstruction(section: Section, mnemonic: string, operandText: string, line: number): void {
  const operands = operandText === "" ? [] : operandText.split(",").map((o) => o.trim());
  const expect = (n: number) => {
    if (operands.length !== n) {
      throw new AsmError(`'${mnemonic}' takes ${n} operand(s), got ${operands.length}`, line);
    }
  };

  if (mnemonic === "exit") {
    expect(0);
    section.emit(CLS_JMP | JMP_EXIT);
    return;
  }
  if (mnemonic === "call") {
    expect(1);
    section.emit(CLS_JMP | JMP_CALL, 0, 0, 0, parseImm(operands[0], line));
    return;
  }
  if (mnemonic === "ja") {
    expect(1);
    const off = parseJumpTarget(section, operands[0], line);
    section.emit(CLS_JMP | JMP_JA, 0, 0, off);
    return;
  }
  if (mnemonic in COND_NAMES) {
    expect(3);
    const dst = parseReg(operands[0], line);
    const rhs = parseRegOrImm(operands[1], line);
    const off = parseJumpTarget(section, operands[2], line);
    if (rhs.reg !== undefined) {
      section.emit(CLS_JMP | SRC_X | COND_NAMES[mnemonic], dst, rhs.reg, off);
    } else {
      section.emit(CLS_JMP | SRC_K | COND_NAMES[mnemonic], dst, 0, off, rhs.imm);
    }
    return;
  }

  const is32 = mnemonic.endsWith("32");
  const aluName = is32 ? mnemonic.slice(0, -2) : mnemonic;
  const aluCls = is32 ? CLS_ALU : CLS_ALU64;
  if (aluName === "neg") {
    expect(1);
    section.emit(aluCls | SRC_K | ALU_NEG, parseReg(operands[0], line));
    return;
  }
  if (aluName in ALU_NAMES) {
    expect(2);
    const dst = parseReg(operands[0], line);
    const rhs = parseRegOrImm(operands[1], line);
    if (rhs.reg !== undefined) {
      section.emit(aluCls | SRC_X | ALU_NAMES[aluName], dst, rhs.reg);
    } else {
      section.emit(aluCls | SRC_K | ALU_NAMES[aluName], dst, 0, 0, rhs.imm);
    }
    return;
  }

  const mem = /^(ldx|stx|st)(w|h|b|dw)$/.exec(mnemonic);
  if (mem) {
    const size = SIZE_NAMES[mem[2]];
    if (mem[1] === "ldx") {
      expect(2);
      const dst = parseReg(operands[0], line);
      const src = parseMem(operands[1], line);
      section.emit(CLS_LDX | MODE_MEM | size, dst, src.reg, src.off);
    } else if (mem[1] === "stx") {
      expect(2);
      const dst = parseMem(operands[0], line);
      const src = parseReg(operands[1], line);
      section.emit(CLS_STX | MODE_MEM | size, dst.reg, src, dst.off);
    } else {
      expect(2);
      const dst = parseMem(operands[0], line);
      const imm = parseImm(operands[1], line);
      section.emit(CLS_ST | MODE_MEM | size, dst.reg, 0, dst.off, imm);
    }
    return;
  }

  throw new AsmError(`unknown mnemonic '${mnemonic}'`, line);
}

function stripComment(line: string): string {
  for (const marker of [";", "#"]) {
    const at = line.indexOf(marker);
    if (at >= 0) {
      line = line.slice(0, at);
    }
  }
  return line.trim();
}

/** Assemble a source file into its program sections, in order. */
export function assemble(source: string): AsmSection[] {
  const sections: AsmSection[] = [];
  let current = new Section();

  const finishCurrent = () => {
    if (current.instructions.length === 0) {
      if (current.id !== undefined) {
        throw new AsmError(`program '${current.id}' has no instructions`, current.idLine);
      }
      return; // leading empty section before the first .id
    }
    sections.push(current.finish());
  };

  const lines = source.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const lineNo = i + 1;
    const text = stripComment(lines[i]);
    if (text === "") {
      continue;
    }
    const label = LABEL_RE.exec(text);
    if (label) {
      if (current.labels.has(label[1])) {
        throw new AsmError(`duplicate label '${label[1]}'`, lineNo);
      }
      current.labels.set(label[1], current.instructions.length);
      continue;
    }
    const space = text.search(/\s/);
    const head = space < 0 ? text : text.slice(0, space);
    const rest = space < 0 ? "" : text.slice(space).trim();
    if (head === ".id") {
      finishCurrent();
      current = new Section();
      if (!/^\S+$/.test(rest)) {
        throw new AsmError(`.id takes one program id, got '${rest}'`, lineNo);
      }
      current.id = rest;
      current.idLine = lineNo;
      continue;
    }
    if (head === ".attach") {
      try {
        current.attach = parseAttach(rest);
      } catch (err) {
        throw new AsmError((err as Error).message, lineNo);
      }
      continue;
    }
    if (head === ".raw") {
      if (!/^[0-9a-fA-F]{16}$/.test(rest)) {
        throw new AsmError(`.raw takes exactly 16 hex digits, got '${rest}'`, lineNo);
      }
      current.instructions.push(decodeInstruction(Buffer.from(rest, "hex"), 0));
      continue;
    }
    if (head.startsWith(".")) {
      throw new AsmError(`unknown directive '${head}'`, lineNo);
    }
    assembleInstruction(current, head, rest, lineNo);
  }
  finishCurrent();

  if (sections.length === 0) {
    throw new AsmError("empty program", 0);
  }
  return sections;
}
