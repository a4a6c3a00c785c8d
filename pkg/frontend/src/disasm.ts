/**
 * Disassembler producing canonical assembler text.
 *
 * Output always reassembles to the input bytes: instructions whose
 * fields match the canonical layout print as mnemonics, anything else
 * prints as a `.raw` escape carrying the bytes verbatim.  Jump targets
 * print as relative offsets, not labels.
 */

import {
  ALU_NEG, CLS_ALU, CLS_ALU64, CLS_JMP, CLS_LDX, CLS_ST, CLS_STX,
  Instruction, JMP_CALL, JMP_EXIT, JMP_JA,
  MODE_MEM, NUM_REGS, SRC_X, decodeProgram, encodeInstruction,
} from "./isa";
import { ALU_NAMES, COND_NAMES, SIZE_NAMES } from "./asm";
import { formatAttach } from "./abi";
import { PolicyContainer, decodeContainers } from "./container";

const ALU_MNEMONICS = invert(ALU_NAMES);
const COND_MNEMONICS = invert(COND_NAMES);
const SIZE_MNEMONICS = invert(SIZE_NAMES);

function invert(table: Record<string, number>): Map<number, string> {
  return new Map(Object.entries(table).map(([name, value]) => [value, name]));
}

function mem(reg: number, off: number): string {
  return off < 0 ? `[r${reg}-${-off}]` : `[r${reg}+${off}]`;
}

function rel(off: number): string {
  return off < 0 ? String(off) : `+${off}`;
}

function renderInstruction(ins: Instruction): string | undefined {
  if (ins.dst >= NUM_REGS || ins.src >= NUM_REGS) {
    return undefined; // no canonical spelling names a register past r10
  }
  const cls = ins.opcode & 0x07;
  const op = ins.opcode & 0xf0;
  const size = ins.opcode & 0x18;
  const isX = (ins.opcode & SRC_X) !== 0;

  if (cls === CLS_ALU || cls === CLS_ALU64) {
    const suffix = cls === CLS_ALU ? "32" : "";
    if (ins.off !== 0) {
      return undefined;
    }
    if (op === ALU_NEG) {
      if (isX || ins.src !== 0 || ins.imm !== 0) {
        return undefined;
      }
      return `neg${suffix} r${ins.dst}`;
    }
    const name = ALU_MNEMONICS.get(op);
    if (name === undefined) {
      return undefined;
    }
    if (isX) {
      return ins.imm === 0 ? `${name}${suffix} r${ins.dst}, r${ins.src}` : undefined;
    }
    return ins.src === 0 ? `${name}${suffix} r${ins.dst}, ${ins.imm}` : undefined;
  }

  if (cls === CLS_JMP) {
    if (op === JMP_EXIT) {
      const clean = ins.opcode === (CLS_JMP | JMP_EXIT)
        && !ins.dst && !ins.src && !ins.off && !ins.imm;
      return clean ? "exit" : undefined;
    }
    if (op === JMP_CALL) {
      const clean = ins.opcode === (CLS_JMP | JMP_CALL) && !ins.dst && !ins.src && !ins.off;
      return clean ? `call ${ins.imm}` : undefined;
    }
    if (op === JMP_JA) {
      const clean = ins.opcode === (CLS_JMP | JMP_JA) && !ins.dst && !ins.src && !ins.imm;
      return clean ? `ja ${rel(ins.off)}` : undefined;
    }
    const name = COND_MNEMONICS.get(op);
    if (name === undefined) {
      return undefined;
    }
    if (isX) {
      return ins.imm === 0
        ? `${name} r${ins.dst}, r${ins.src}, ${rel(ins.off)}` : undefined;
    }
    return ins.src === 0
      ? `${name} r${ins.dst}, ${ins.imm}, ${rel(ins.off)}` : undefined;
  }

  const sizeName = SIZE_MNEMONICS.get(size);
  if (cls === CLS_LDX && ins.opcode === (CLS_LDX | MODE_MEM | size) && ins.imm === 0) {
    return `ldx${sizeName} r${ins.dst}, ${mem(ins.src, ins.off)}`;
  }
  if (cls === CLS_ST && ins.opcode === (CLS_ST | MODE_MEM | size) && ins.src === 0) {
    return `st${sizeName} ${mem(ins.dst, ins.off)}, ${ins.imm}`;
  }
  if (cls === CLS_STX && ins.opcode === (CLS_STX | MODE_MEM | size) && ins.imm === 0) {
    return `stx${sizeName} ${mem(ins.dst, ins.off)}, r${ins.src}`;
  }
  return undefined;
}

/** Disassemble bytecode into canonical text, one instruction per line. */
export function disassemble(bytecode: Uint8Array): string {
  const lines = decodeProgram(bytecode).map((ins) => {
    return renderInstruction(ins) ?? `.raw ${encodeInstruction(ins).toString("hex")}`;
  });
  return lines.join("\n") + (lines.length ? "\n" : "");
}

function sectionText(container: PolicyContainer): string {
  return `.id ${container.id}\n.attach ${formatAttach(container)}\n\n${disassemble(container.bytecode)}`;
}

/** Disassemble a container file (possibly a batch) with its directives. */
export function disassembleContainers(blob: Buffer): string {
  return decodeContainers(blob).map(sectionText).join("\n");
}
