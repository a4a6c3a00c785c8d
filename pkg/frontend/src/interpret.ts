/**
 * Reference evaluator for checked rule scripts.
 *
 * This is the semantic ground truth the compiler is tested against:
 * unsigned 64-bit arithmetic, unsigned comparisons, missing context
 * slots read as zero, and a numeric final expression is truthy.
 */

import { BoolExpr, NumExpr, RuleScript } from "./dsl";

const MASK = (1n << 64n) - 1n;

/** Context parameters a rule reads; `dc` entries default to zero. */
export interface RuleContext {
  dc: bigint[];
}

function evalNum(expr: NumExpr, ctx: RuleContext): bigint {
  switch (expr.kind) {
    case "const":
      return expr.value & MASK;
    case "slot":
      return (ctx.dc[expr.slot] ?? 0n) & MASK;
    case "arith": {
      const lhs = evalNum(expr.lhs, ctx);
      const rhs = evalNum(expr.rhs, ctx);
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

function evalBool(expr: BoolExpr, ctx: RuleContext): boolean {
  switch (expr.kind) {
    case "const":
      return expr.value;
    case "cmp": {
      const lhs = evalNum(expr.lhs, ctx);
      const rhs = evalNum(expr.rhs, ctx);
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
      const lhs = evalBool(expr.lhs, ctx);
      const rhs = evalBool(expr.rhs, ctx);
      return expr.op === "and" ? lhs && rhs : lhs || rhs;
    }
    case "not":
      return !evalBool(expr.operand, ctx);
  }
}

/** Evaluate a script's verdict: true = PASS, false = REJECT. */
export function evaluateRule(script: RuleScript, ctx: RuleContext): boolean {
  if (script.final.t === "num") {
    evalNum(script.final, ctx);
    return true; // numbers are always truthy
  }
  return evalBool(script.final, ctx);
}
