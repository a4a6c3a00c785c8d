import * as fs from "fs";
import * as path from "path";
import { describe, expect, it } from "vitest";

import { AsmError, assemble } from "../src/asm";
import { disassemble } from "../src/disasm";

const FIXTURE = path.join(__dirname, "..", "fixtures", "knob.asm");

// Frozen bytecode for the key-size history program, derived from the
// rule prose: only pairing requests from a bonded peer are examined; a
// shrink of the negotiated size (or, under the strict knob, anything
// but an exact match) is rejected.
const KNOB_HEX =
  "7912880000000000" + // ldxdw r2, [r1+136]
  "55020a0001000000" + // jne r2, 1, +10
  "7912480000000000" + // ldxdw r2, [r1+72]
  "1502080000000000" + // jeq r2, 0, +8
  "7912280000000000" + // ldxdw r2, [r1+40]
  "7913300000000000" + // ldxdw r3, [r1+48]
  "ad32030000000000" + // jlt r2, r3, +3
  "7914a00000000000" + // ldxdw r4, [r1+160]
  "1504030000000000" + // jeq r4, 0, +3
  "1d32020000000000" + // jeq r2, r3, +2
  "b700000001000000" + // mov r0, 1
  "9500000000000000" + // exit
  "b700000000000000" + // mov r0, 0
  "9500000000000000"; //  exit

describe("key-size history fixture", () => {
  const source = fs.readFileSync(FIXTURE, "utf-8");

  it("assembles to the frozen bytecode", () => {
    const sections = assemble(source);
    expect(sections).toHaveLength(1);
    expect(sections[0].id).toBe("keysize-history");
    expect(sections[0].attach).toEqual({ hook: 3, event: 0xff, state: 3 });
    expect(sections[0].bytecode.toString("hex")).toBe(KNOB_HEX);
  });

  it("disassembles back to the authored mnemonics", () => {
    expect(disassemble(Buffer.from(KNOB_HEX, "hex"))).toBe(
      [
        "ldxdw r2, [r1+136]",
        "jne r2, 1, +10",
        "ldxdw r2, [r1+72]",
        "jeq r2, 0, +8",
        "ldxdw r2, [r1+40]",
        "ldxdw r3, [r1+48]",
        "jlt r2, r3, +3",
        "ldxdw r4, [r1+160]",
        "jeq r4, 0, +3",
        "jeq r2, r3, +2",
        "mov r0, 1",
        "exit",
        "mov r0, 0",
        "exit",
      ].join("\n") + "\n",
    );
  });

  it("assembles identically when written with labels", () => {
    const labeled = `
      ldxdw r2, [r1+136]
      jne r2, 1, allow
      ldxdw r2, [r1+72]
      jeq r2, 0, allow
      ldxdw r2, [r1+40]
      ldxdw r3, [r1+48]
      jlt r2, r3, deny
      ldxdw r4, [r1+160]
      jeq r4, 0, allow
      jeq r2, r3, allow
    deny:
      mov r0, 1
      exit
    allow:
      mov r0, 0
      exit
    `;
    expect(assemble(labeled)[0].bytecode.toString("hex")).toBe(KNOB_HEX);
  });
});

describe("operand parsing", () => {
  it("accepts hex immediates as the 32-bit pattern", () => {
    const viaHex = assemble("mov r2, 0xffffffff")[0].bytecode;
    const viaDec = assemble("mov r2, -1")[0].bytecode;
    expect(viaHex.equals(viaDec)).toBe(true);
  });

  it("accepts backward jumps by label", () => {
    const text = "top:\nmov r2, 1\njne r2, 0, top\nexit";
    const direct = "mov r2, 1\njne r2, 0, -2\nexit";
    expect(assemble(text)[0].bytecode.equals(assemble(direct)[0].bytecode)).toBe(true);
  });

  it("treats [rN] as offset zero", () => {
    expect(assemble("ldxb r2, [r1]")[0].bytecode.toString("hex")).toBe("7112000000000000");
  });

  it("strips ; and # comments", () => {
    const text = "mov r0, 0 ; allow\nexit # done";
    expect(assemble(text)[0].bytecode.toString("hex")).toBe(
      "b700000000000000" + "9500000000000000",
    );
  });
});

describe("assembly errors", () => {
  const cases: Array<[string, string, RegExp]> = [
    ["unknown mnemonic", "frob r1, r2", /line 1: unknown mnemonic 'frob'/],
    ["unresolved label", "ja nowhere\nexit", /unresolved label 'nowhere'/],
    ["immediate overflow", "mov r2, 2147483648", /immediate overflow/],
    ["immediate overflow negative", "mov r2, -2147483649", /immediate overflow/],
    ["offset overflow", "ja +40000", /offset overflow/],
    ["register out of range", "mov r11, 1", /register out of range/],
    ["duplicate label", "x:\nx:\nexit", /duplicate label 'x'/],
    ["operand count", "mov r1", /'mov' takes 2 operand\(s\), got 1/],
    ["bad memory operand", "ldxdw r2, [x+1]", /expected memory operand/],
    ["unknown directive", ".frobnicate 1", /unknown directive '\.frobnicate'/],
    ["bad raw payload", ".raw 12345", /\.raw takes exactly 16 hex digits/],
    ["empty program", "; nothing here", /empty program/],
    ["section with no instructions", ".id empty\n.id next\nexit", /program 'empty' has no instructions/],
    ["bad attach spec", ".attach smp_rx:any\nexit", /must be <hook>:<event>:<state>/],
    ["unknown attach name", ".attach bogus:any:any\nexit", /unknown attach field 'bogus'/],
  ];

  it.each(cases)("%s", (_name, source, pattern) => {
    expect(() => assemble(source)).toThrow(AsmError);
    expect(() => assemble(source)).toThrow(pattern);
  });

  it("reports the failing line number", () => {
    try {
      assemble("mov r0, 0\nbogus r1\nexit");
      expect.unreachable();
    } catch (err) {
      expect((err as AsmError).line).toBe(2);
      expect((err as AsmError).message).toMatch(/^line 2: /);
    }
  });
});

describe("sections", () => {
  it("splits programs at .id directives", () => {
    const text = [
      ".id first", ".attach smp_rx:any:any", "mov r0, 0", "exit",
      ".id second", ".attach ll_tx:alert:standby", "mov r0, 1", "exit",
    ].join("\n");
    const sections = assemble(text);
    expect(sections.map((s) => s.id)).toEqual(["first", "second"]);
    expect(sections[1].attach).toEqual({ hook: 2, event: 6, state: 0 });
    expect(sections[0].bytecode.toString("hex")).toBe("b700000000000000" + "9500000000000000");
    expect(sections[1].bytecode.toString("hex")).toBe("b700000001000000" + "9500000000000000");
  });

  it("scopes labels to their section", () => {
    const text = ".id a\nja out\nout:\nexit\n.id b\nja out\nexit";
    expect(() => assemble(text)).toThrow(/unresolved label 'out'/);
  });

  it("allows plain bytecode with no directives", () => {
    const sections = assemble("mov r0, 0\nexit");
    expect(sections[0].id).toBeUndefined();
    expect(sections[0].attach).toBeUndefined();
  });
});
