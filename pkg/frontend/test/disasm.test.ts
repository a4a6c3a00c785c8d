import { describe, expect, it } from "vitest";

import { assemble } from "../src/asm";
import { disassemble, disassembleContainers } from "../src/disasm";
import { decodeContainers, encodeContainer } from "../src/container";

// text <-> bytes pairs where the canonical mnemonic must win
const CANONICAL: Array<[string, string]> = [
  ["add r3, r2", "0f23000000000000"],
  ["sub r2, 7", "1702000007000000"],
  ["mov r4, 10", "b70400000a000000"],
  ["mov32 r4, 5", "b404000005000000"],
  ["neg r2", "8702000000000000"],
  ["neg32 r2", "8402000000000000"],
  ["ldxb r2, [r1+0]", "7112000000000000"],
  ["ldxdw r2, [r1+136]", "7912880000000000"],
  ["stw [r10-4], 7", "620afcff07000000"],
  ["stxh [r10-4], r3", "6b3afcff00000000"],
  ["ja +0", "0500000000000000"],
  ["ja -2", "05 00 feff 00000000".replace(/ /g, "")],
  ["jset r2, 4, +1", "4502010004000000"],
  ["jne r2, r3, -1", "5d32ffff00000000"],
  ["call 1", "8500000001000000"],
  ["exit", "9500000000000000"],
];

// encodings the engine accepts (or plain garbage) that have no canonical
// spelling; these must survive as .raw lines, not get prettified
const RAW_ONLY = [
  "8732000000000000", // neg with a source register set
  "87020000ffffffff", // neg with an immediate set
  "b704050000000000", // ALU with a nonzero offset
  "62fafcff07000000", // immediate store with a source register set
  "7912880001000000", // load with an immediate set
  "b70c000000000000", // destination register out of range
  "0000000000000000", // not an opcode at all
];

describe("canonical rendering", () => {
  it.each(CANONICAL)("%s", (text, hex) => {
    const bytecode = Buffer.from(hex, "hex");
    expect(disassemble(bytecode)).toBe(text + "\n");
    expect(assemble(text)[0].bytecode.equals(bytecode)).toBe(true);
  });
});

describe("raw escape", () => {
  it.each(RAW_ONLY)("%s", (hex) => {
    const bytecode = Buffer.from(hex, "hex");
    const text = disassemble(bytecode);
    expect(text).toBe(`.raw ${hex}\n`);
    expect(assemble(text)[0].bytecode.equals(bytecode)).toBe(true);
  });
});

describe("round-trip identity", () => {
  it("holds for every 8-byte-multiple byte string (seeded sample)", () => {
    let x = 0xdeadbeefcafen;
    const next = () => {
      x = (x * 0x5deece66dn + 0xbn) & ((1n << 48n) - 1n);
      return Number(x >> 16n) & 0xff;
    };
    for (let round = 0; round < 64; round++) {
      const program = Buffer.alloc(8 * (1 + (round % 7)));
      for (let i = 0; i < program.length; i++) {
        program[i] = next();
      }
      const back = assemble(disassemble(program))[0].bytecode;
      expect(back.equals(program)).toBe(true);
    }
  });

  it("holds for container batches including directives", () => {
    const first = encodeContainer({
      id: "first", hook: 3, event: 0xff, state: 3,
      bytecode: Buffer.from("b700000000000000" + "9500000000000000", "hex"),
    });
    const second = encodeContainer({
      id: "second", hook: 0, event: 7, state: 0xff,
      bytecode: Buffer.from("8732000000000000" + "9500000000000000", "hex"),
    });
    const blob = Buffer.concat([first, second]);
    const text = disassembleContainers(blob);
    expect(text).toContain(".id first");
    expect(text).toContain(".attach smp_rx:any:key_sharing");
    expect(text).toContain(".attach ll_rx_ctrl:packet_observed:any");
    expect(text).toContain(".raw 8732000000000000");

    const sections = assemble(text);
    const rebuilt = Buffer.concat(sections.map((s) => encodeContainer({
      id: s.id!, hook: s.attach!.hook, event: s.attach!.event, state: s.attach!.state,
      bytecode: s.bytecode,
    })));
    expect(rebuilt.equals(blob)).toBe(true);
    expect(decodeContainers(rebuilt).map((c) => c.id)).toEqual(["first", "second"]);
  });
});
