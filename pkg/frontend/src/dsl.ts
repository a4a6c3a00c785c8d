/**
 * Rule language front end: lexer, parser, and type checker.
 *
 * The language is a small Lua subset for writing policy predicates:
 *
 *     rule1 = (bit.band(DC[SMP_KEYS] or 0, KEYS_LTK_P256 | KEYS_LTK) == 0)
 *     rule2 = (DC[SMP_ENC_SIZE] <= DC[SMP_ENC_SIZE_PREV])
 *     return rule1 and rule2
 *
 * Expressions are statically typed as 64-bit unsigned numbers or
 * booleans.  `DC[slot]` reads a context parameter (missing slots read
 * as zero, so `DC[x] or 0` is the identity); comparisons are unsigned;
 * `bit.band`/`bit.bor` and the `&`/`|` operators are 64-bit bitwise
 * ops; string literals name association methods and are only
 * meaningful in `==`/`~=` against a numeric slot.  Lua truthiness is
 * kept: numbers are always truthy, so `and`/`or` over numbers select
 * an operand rather than producing a boolean, and a numeric final
 * expression means the rule always passes.  The language is loop-free
 * by construction, so compiled rules are trivially within the
 * verifier's termination rules.
 *
 * Errors are `DslError` with a line number; the two author-facing
 * classes are "undeclared parameter" (unknown `DC[...]` slot or bare
 * name) and "type error" (operator applied across types).
 */

import { CONSTANTS, METHODS, NUM_DC_SLOTS, SLOTS } from "./abi";

export class DslError extends Error {
  constructor(message: string, public readonly line: number) {
    super(line > 0 ? `line ${line}: ${message}` : message);
  }
}

// ---------------------------------------------------------------------------
// lexer
// ---------------------------------------------------------------------------

type TokenType = "name" | "number" | "string" | "op" | "keyword" | "eof";

interface Token {
  type: TokenType;
  text: string;
  value?: bigint;
  line: number;
}

const KEYWORDS = new Set(["and", "or", "not", "return", "true", "false"]);
const OPERATORS = ["==", "~=", "<=", ">=", "<", ">", "|", "&", "+", "-", "*", "(", ")", "[", "]", ",", "=", "."];

function lex(source: string): Token[] {
  const tokens: Token[] = [];
  let line = 1;
  let i = 0;
  outer: while (i < source.length) {
    const ch = source[i];
    if (ch === "\n") {
      line++;
      i++;
      continue;
    }
    if (ch === " " || ch === "\t" || ch === "\r") {
      i++;
      continue;
    }
    if (source.startsWith("--", i)) {
      while (i < source.length && source[i] !== "\n") {
        i++;
      }
      continue;
    }
    if (ch === '"' || ch === "'") {
      const end = source.indexOf(ch, i + 1);
      if (end < 0 || source.slice(i, end).includes("\n")) {
        throw new DslError("unterminated string literal", line);
      }
      tokens.push({ type: "string", text: source.slice(i + 1, end), line });
      i = end + 1;
      continue;
    }
    if (/[0-9]/.test(ch)) {
      const m = /^(0x[0-9a-fA-F]+|[0-9]+)/.exec(source.slice(i))!;
      tokens.push({ type: "number", text: m[1], value: BigInt(m[1]), line });
      i += m[1].length;
      continue;
    }
    if (/[A-Za-z_]/.test(ch)) {
      const m = /^[A-Za-z_][A-Za-z0-9_]*/.exec(source.slice(i))!;
      tokens.push({ type: KEYWORDS.has(m[0]) ? "keyword" : "name", text: m[0], line });
      i += m[0].length;
      continue;
    }
    for (const op of OPERATORS) {
      if (source.startsWith(op, i)) {
        tokens.push({ type: "op", text: op, line });
        i += op.length;
        continue outer;
      }
    }
    throw new DslError(`unexpected character '${ch}'`, line);
  }
  tokens.push({ type: "eof", text: "<eof>", line });
  return tokens;
}

// ---------------------------------------------------------------------------
// surface syntax
// ---------------------------------------------------------------------------

type SurfaceExpr =
  | { kind: "num"; value: bigint; line: number }
  | { kind: "bool"; value: boolean; line: number }
  | { kind: "str"; value: string; line: number }
  | { kind: "slot"; name: string; line: number }
  | { kind: "name"; name: string; line: number }
  | { kind: "call"; name: string; args: SurfaceExpr[]; line: number }
  | { kind: "not"; operand: SurfaceExpr; line: number }
  | { kind: "binop"; op: string; lhs: SurfaceExpr; rhs: SurfaceExpr; line: number };

interface SurfaceScript {
  statements: { name: string; expr: SurfaceExpr; line: number }[];
  final: SurfaceExpr;
}

class Parser {
  private at = 0;

  constructor(private readonly tokens: Token[]) {}

  private peek(ahead = 0): Token {
    return this.tokens[Math.min(this.at + ahead, this.tokens.length - 1)];
  }

  private next(): Token {
    return this.tokens[this.at === this.tokens.length - 1 ? this.at : this.at++];
  }

  private expectOp(text: string): Token {
    const tok = this.next();
    if (tok.type !== "op" || tok.text !== text) {
      throw new DslError(`expected '${text}', got '${tok.text}'`, tok.line);
    }
    return tok;
  }

  script(): SurfaceScript {
    const statements: SurfaceScript["statements"] = [];
    while (this.peek().type === "name" && this.peek(1).type === "op" && this.peek(1).text === "=") {
      const name = this.next();
      this.expectOp("=");
      statements.push({ name: name.text, expr: this.expr(), line: name.line });
    }
    const ret = this.next();
    if (ret.type !== "keyword" || ret.text !== "return") {
      throw new DslError(`expected 'return', got '${ret.text}'`, ret.line);
    }
    const final = this.expr();
    const tail = this.peek();
    if (tail.type !== "eof") {
      throw new DslError(`unexpected trailing input '${tail.text}'`, tail.line);
    }
    return { statements, final };
  }

  // precedence, loosest first: or < and < comparison < | < & < +- < * < unary
  private expr(): SurfaceExpr {
    return this.orExpr();
  }

  private binaryLevel(ops: string[], below: () => SurfaceExpr, keyword = false): SurfaceExpr {
    let lhs = below.call(this);
    for (;;) {
      const tok = this.peek();
      const matches = keyword
        ? tok.type === "keyword" && ops.includes(tok.text)
        : tok.type === "op" && ops.includes(tok.text);
      if (!matches) {
        return lhs;
      }
      this.next();
      lhs = { kind: "binop", op: tok.text, lhs, rhs: below.call(this), line: tok.line };
    }
  }

  private orExpr(): SurfaceExpr {
    return this.binaryLevel(["or"], this.andExpr, true);
  }

  private andExpr(): SurfaceExpr {
    return this.binaryLevel(["and"], this.cmpExpr, true);
  }

  private cmpExpr(): SurfaceExpr {
    return this.binaryLevel(["==", "~=", "<", "<=", ">", ">="], this.borExpr);
  }

  private borExpr(): SurfaceExpr {
    return this.binaryLevel(["|"], this.bandExpr);
  }

  private bandExpr(): SurfaceExpr {
    return this.binaryLevel(["&"], this.addExpr);
  }

  private addExpr(): SurfaceExpr {
    return this.binaryLevel(["+", "-"], this.mulExpr);
  }

  private mulExpr(): SurfaceExpr {
    return this.binaryLevel(["*"], this.unary);
  }

  private unary(): SurfaceExpr {
    const tok = this.peek();
    if (tok.type === "keyword" && tok.text === "not") {
      this.next();
      return { kind: "not", operand: this.unary(), line: tok.line };
    }
    return this.primary();
  }

  private primary(): SurfaceExpr {
    const tok = this.next();
    if (tok.type === "number") {
      return { kind: "num", value: tok.value!, line: tok.line };
    }
    if (tok.type === "string") {
      return { kind: "str", value: tok.text, line: tok.line };
    }
    if (tok.type === "keyword" && (tok.text === "true" || tok.text === "false")) {
      return { kind: "bool", value: tok.text === "true", line: tok.line };
    }
    if (tok.type === "op" && tok.text === "(") {
      const inner = this.expr();
      this.expectOp(")");
      return inner;
    }
    if (tok.type === "name") {
      if (tok.text === "DC") {
        this.expectOp("[");
        const slot = this.next();
        if (slot.type !== "name" && slot.type !== "number") {
          throw new DslError(`expected a slot name or index, got '${slot.text}'`, slot.line);
        }
        this.expectOp("]");
        return { kind: "slot", name: slot.text, line: tok.line };
      }
      if (this.peek().type === "op" && this.peek().text === ".") {
        this.next();
        const member = this.next();
        if (member.type !== "name") {
          throw new DslError(`expected a function name after '${tok.text}.'`, member.line);
        }
        const name = `${tok.text}.${member.text}`;
        this.expectOp("(");
        const args: SurfaceExpr[] = [this.expr()];
        while (this.peek().type === "op" && this.peek().text === ",") {
          this.next();
          args.push(this.expr());
        }
        this.expectOp(")");
        return { kind: "call", name, args, line: tok.line };
      }
      return { kind: "name", name: tok.text, line: tok.line };
    }
    throw new DslError(`unexpected token '${tok.text}'`, tok.line);
  }
}

// ---------------------------------------------------------------------------
// typed core
// ---------------------------------------------------------------------------

export type ArithOp = "&" | "|" | "+" | "-" | "*";
export type CmpOp = "==" | "~=" | "<" | "<=" | ">" | ">=";

export type NumExpr =
  | { t: "num"; kind: "const"; value: bigint }
  | { t: "num"; kind: "slot"; slot: number }
  | { t: "num"; kind: "arith"; op: ArithOp; lhs: NumExpr; rhs: NumExpr };

export type BoolExpr =
  | { t: "bool"; kind: "const"; value: boolean }
  | { t: "bool"; kind: "cmp"; op: CmpOp; lhs: NumExpr; rhs: NumExpr }
  | { t: "bool"; kind: "logic"; op: "and" | "or"; lhs: BoolExpr; rhs: BoolExpr }
  | { t: "bool"; kind: "not"; operand: BoolExpr };

export type TypedExpr = NumExpr | BoolExpr;

/** A checked script; the final expression's truthiness is the verdict. */
export interface RuleScript {
  final: TypedExpr;
}

type Checked = TypedExpr | { t: "strlit"; value: string; line: number };

const CALLS: Record<string, ArithOp> = { "bit.band": "&", "bit.bor": "|" };

function check(expr: SurfaceExpr, names: Map<string, TypedExpr>): Checked {
  switch (expr.kind) {
    case "num":
      return { t: "num", kind: "const", value: expr.value & ((1n << 64n) - 1n) };
    case "bool":
      return { t: "bool", kind: "const", value: expr.value };
    case "str":
      return { t: "strlit", value: expr.value, line: expr.line };
    case "slot": {
      let slot: number;
      if (/^\d+$/.test(expr.name) || /^0x/.test(expr.name)) {
        slot = Number(expr.name);
      } else if (expr.name in SLOTS) {
        slot = SLOTS[expr.name];
      } else {
        throw new DslError(`undeclared parameter '${expr.name}'`, expr.line);
      }
      if (slot < 0 || slot >= NUM_DC_SLOTS) {
        throw new DslError(`undeclared parameter '${expr.name}' (slot index out of range)`, expr.line);
      }
      return { t: "num", kind: "slot", slot };
    }
    case "name": {
      const bound = names.get(expr.name);
      if (bound !== undefined) {
        return bound;
      }
      if (expr.name in CONSTANTS) {
        return { t: "num", kind: "const", value: CONSTANTS[expr.name] };
      }
      throw new DslError(`undeclared parameter '${expr.name}'`, expr.line);
    }
    case "call": {
      const op = CALLS[expr.name];
      if (op === undefined) {
        throw new DslError(`unknown function '${expr.name}'`, expr.line);
      }
      if (expr.args.length !== 2) {
        throw new DslError(`'${expr.name}' takes 2 arguments, got ${expr.args.length}`, expr.line);
      }
      const lhs = requireNum(check(expr.args[0], names), expr.name, expr.line);
      const rhs = requireNum(check(expr.args[1], names), expr.name, expr.line);
      return { t: "num", kind: "arith", op, lhs, rhs };
    }
    case "not": {
      const operand = check(expr.operand, names);
      if (operand.t !== "bool") {
        throw new DslError("type error: 'not' needs a boolean operand", expr.line);
      }
      return { t: "bool", kind: "not", operand };
    }
    case "binop":
      return checkBinop(expr, names);
  }
}

function requireNum(value: Checked, where: string, line: number): NumExpr {
  if (value.t === "strlit") {
    throw new DslError("type error: string literal only compares with == or ~=", value.line);
  }
  if (value.t !== "num") {
    throw new DslError(`type error: '${where}' needs numeric operands`, line);
  }
  return value;
}

function resolveMethod(value: { value: string; line: number }): NumExpr {
  const method = METHODS[value.value];
  if (method === undefined) {
    throw new DslError(`unknown association method '${value.value}'`, value.line);
  }
  return { t: "num", kind: "const", value: method };
}

function checkBinop(
  expr: Extract<SurfaceExpr, { kind: "binop" }>,
  names: Map<string, TypedExpr>,
): Checked {
  const op = expr.op;
  const lhs = check(expr.lhs, names);
  const rhs = check(expr.rhs, names);

  if (op === "and" || op === "or") {
    if (lhs.t === "bool" && rhs.t === "bool") {
      return { t: "bool", kind: "logic", op, lhs, rhs };
    }
    if (lhs.t === "num" && rhs.t === "num") {
      // numbers are always truthy, so the operator just selects an operand
      return op === "or" ? lhs : rhs;
    }
    throw new DslError(
      `type error: operands of '${op}' must both be numbers or both booleans`, expr.line);
  }

  if (op === "==" || op === "~=" || op === "<" || op === "<=" || op === ">" || op === ">=") {
    let left = lhs;
    let right = rhs;
    if (left.t === "strlit" || right.t === "strlit") {
      if (op !== "==" && op !== "~=") {
        throw new DslError("type error: string literal only compares with == or ~=", expr.line);
      }
      if (left.t === "strlit") {
        left = resolveMethod(left);
      }
      if (right.t === "strlit") {
        right = resolveMethod(right);
      }
    }
    if (left.t !== "num" || right.t !== "num") {
      throw new DslError(`type error: comparison '${op}' needs numeric operands`, expr.line);
    }
    return { t: "bool", kind: "cmp", op, lhs: left, rhs: right };
  }

  // arithmetic / bitwise
  const left = requireNum(lhs, op, expr.line);
  const right = requireNum(rhs, op, expr.line);
  return { t: "num", kind: "arith", op: op as ArithOp, lhs: left, rhs: right };
}

/** Parse and type-check a rule script. */
export function parseRule(source: string): RuleScript {
  const surface = new Parser(lex(source)).script();
  const names = new Map<string, TypedExpr>();
  for (const stmt of surface.statements) {
    if (names.has(stmt.name) || stmt.name in CONSTANTS || stmt.name === "DC") {
      throw new DslError(`name '${stmt.name}' already defined`, stmt.line);
    }
    const value = check(stmt.expr, names);
    if (value.t === "strlit") {
      throw new DslError("type error: string literal only compares with == or ~=", stmt.line);
    }
    names.set(stmt.name, value);
  }
  const final = check(surface.final, names);
  if (final.t === "strlit") {
    throw new DslError("type error: string literal only compares with == or ~=", final.line);
  }
  return { final };
}
