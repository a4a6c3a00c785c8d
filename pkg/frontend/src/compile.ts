/**
 * Rule compiler: checked scripts to policy bytecode.
 *
 * Calling convention at program entry: r1 holds the context pointer
 * and is never clobbered; expression values live in r2..r9 (one
 * register per level of the expression tree); the verdict lands in r0.
 * Booleans are materialized as 0/1 so `and`/`or`/`not` compile to
 * plain bitwise ops without branches; comparisons compile to a
 * forward-jump select.  Everything the compiler emits is loop-free
 * with forward jumps only, registers written before read, and context
 * loads at fixed in-bounds offsets, so emitted programs satisfy the
 * engine verifier by construction.
 */

import { Attach, CTX_DC_BASE } from "./abi";
import { PolicyContainer, encodeContainer } from "./container";
import { BoolExpr, CmpOp, DslError, NumExpr, RuleScript, parseRule } from "./dsl";
import {
  ALU_ADD, ALU_AND, ALU_LSH, ALU_MOV, ALU_MUL, ALU_OR, ALU_SUB, ALU_XOR,
  CLS_ALU64, CLS_JMP, CLS_LDX, Instruction, JMP_EXIT, JMP_JA, JMP_JEQ,
  JMP_JGE, JMP_JGT, JMP_JLE, JMP_JLT, JMP_JNE, MODE_MEM, SRC_K, SRC_X,
  SZ_DW, VERDICT_PASS, VERDICT_REJECT, encodeProgram,
} from "./isa";

const MASK = (1n << 64n) - 1n;
const FIRST_VALUE_REG = 2; // r1 is the context pointer, r0 the verdict
const LAST_VALUE_REG = 9;

const ARITH_OPS: Record<string, number> = {
  "&": ALU_AND,
  "|": ALU_OR,
  "+": ALU_ADD,
  "-": ALU_SUB,
  "*": ALU_MUL,
};

const CMP_JUMPS: Record<CmpOp, number> = {
  "==": JMP_JEQ,
  "~=": JMP_JNE,
  "<": JMP_JLT,
  "<=": JMP_JLE,
  ">": JMP_JGT,
  ">=": JMP_JGE,
};

class Emitter {
  readonly instructions: Instruction[] = [];

  emit(opcode: number, dst = 0, src = 0, off = 0, imm = 0): void {
    this.instructions.push({ opcode, dst, src, off, imm });
  }

  movImm(dst: number, imm: number): void {
    this.emit(CLS_ALU64 | SRC_K | ALU_MOV, dst, 0, 0, imm);
  }

  aluImm(op: number, dst: number, imm: number): void {
    this.emit(CLS_ALU64 | SRC_K | op, dst, 0, 0, imm);
  }

  aluReg(op: number, dst: number, src: number): void {
    this.emit(CLS_ALU64 | SRC_X | op, dst, src);
  }
}

function nextReg(reg: number): number {
  if (reg + 1 > LAST_VALUE_REG) {
    throw new DslError(
      `expression too deep (needs more than ${LAST_VALUE_REG - FIRST_VALUE_REG + 1} registers)`, 0);
  }
  return reg + 1;
}

/** Load an arbitrary u64 constant in 16-bit chunks (mov/lsh/or). */
function emitConst(em: Emitter, dst: number, value: bigint): void {
  value &= MASK;
  if (value < 1n << 31n) {
    em.movImm(dst, Number(value));
    return;
  }
  const chunks = [3, 2, 1, 0].map((i) => Number((value >> BigInt(16 * i)) & 0xffffn));
  const top = chunks.findIndex((c) => c !== 0);
  em.movImm(dst, chunks[top]);
  for (let i = top + 1; i < 4; i++) {
    em.aluImm(ALU_LSH, dst, 16);
    if (chunks[i] !== 0) {
      em.aluImm(ALU_OR, dst, chunks[i]);
    }
  }
}

function compileNum(em: Emitter, expr: NumExpr, dst: number): void {
  switch (expr.kind) {
    case "const":
      emitConst(em, dst, expr.value);
      return;
    case "slot":
      em.emit(CLS_LDX | MODE_MEM | SZ_DW, dst, 1, CTX_DC_BASE + 8 * expr.slot);
      return;
    case "arith": {
      compileNum(em, expr.lhs, dst);
      const rhs = nextReg(dst);
      compileNum(em, expr.rhs, rhs);
      em.aluReg(ARITH_OPS[expr.op], dst, rhs);
      return;
    }
  }
}

function compileBool(em: Emitter, expr: BoolExpr, dst: number): void {
  switch (expr.kind) {
    case "const":
      em.movImm(dst, expr.value ? 1 : 0);
      return;
    case "cmp": {
      compileNum(em, expr.lhs, dst);
      const rhs = nextReg(dst);
      compileNum(em, expr.rhs, rhs);
      em.emit(CLS_JMP | SRC_X | CMP_JUMPS[expr.op], dst, rhs, 2);
      em.movImm(dst, 0);
      em.emit(CLS_JMP | JMP_JA, 0, 0, 1);
      em.movImm(dst, 1);
      return;
    }
    case "logic": {
      compileBool(em, expr.lhs, dst);
      const rhs = nextReg(dst);
      compileBool(em, expr.rhs, rhs);
      em.aluReg(expr.op === "and" ? ALU_AND : ALU_OR, dst, rhs);
      return;
    }
    case "not":
      compileBool(em, expr.operand, dst);
      em.aluImm(ALU_XOR, dst, 1);
      return;
  }
}

/** Statically evaluate a slot-free numeric expression, else null. */
function foldNum(expr: NumExpr): bigint | null {
  switch (expr.kind) {
    case "const":
      return expr.value & MASK;
    case "slot":
      return null;
    case "arith": {
      const lhs = foldNum(expr.lhs);
      const rhs = foldNum(expr.rhs);
      if (lhs === null || rhs === null) {
        return null;
      }
      switch (expr.op) {
        case "&": return lhs & rhs;
        case "|": return lhs | rhs;
        case "+": return (lhs + rhs) & MASK;
        case "-": return (lhs - rhs) & MASK;
        case "*": return (lhs * rhs) & MASK;
      }
    }
  }
}

/** Statically evaluate a slot-free boolean expression, else null. */
function foldBool(expr: BoolExpr): boolean | null {
  switch (expr.kind) {
    case "const":
      return expr.value;
    case "cmp": {
      const lhs = foldNum(expr.lhs);
      const rhs = foldNum(expr.rhs);
      if (lhs === null || rhs === null) {
        return null;
      }
      switch (expr.op) {
        case "==": return lhs === rhs;
        case "~=": return lhs !== rhs;
        case "<": return lhs < rhs;
        case "<=": return lhs <= rhs;
        case ">": return lhs > rhs;
        case ">=": return lhs >= rhs;
      }
    }
    case "logic": {
      const lhs = foldBool(expr.lhs);
      const rhs = foldBool(expr.rhs);
      if (lhs === null || rhs === null) {
        return null;
      }
      return expr.op === "and" ? lhs && rhs : lhs || rhs;
    }
    case "not": {
      const operand = foldBool(expr.operand);
      return operand === null ? null : !operand;
    }
  }
}

/** Compile a checked script to bytecode (PASS = 0 in r0). */
export function compileScript(script: RuleScript): Buffer {
  const em = new Emitter();
  if (script.final.t === "num") {
    // numbers are always truthy
    em.movImm(0, VERDICT_PASS);
  } else {
    const folded = foldBool(script.final);
    if (folded !== null) {
      em.movImm(0, folded ? VERDICT_PASS : VERDICT_REJECT);
    } else {
      compileBool(em, script.final, FIRST_VALUE_REG);
      em.aluReg(ALU_MOV, 0, FIRST_VALUE_REG);
      em.aluImm(ALU_XOR, 0, 1); // script true (1) -> PASS (0)
    }
  }
  em.emit(CLS_JMP | JMP_EXIT);
  return encodeProgram(em.instructions);
}

/** Compile rule source into a policy container. */
export function compileRule(source: string, attach: Attach, id: string): Buffer {
  const script = parseRule(source);
  const container: PolicyContainer = {
    id,
    hook: attach.hook,
    event: attach.event,
    state: attach.state,
    bytecode: compileScript(script),
  };
  return encodeContainer(container);
}
