#!/usr/bin/env node
/** Disassemble container files (or raw bytecode) to policy text. */

import * as fs from "fs";
import yargs from "yargs";

import { MAGIC } from "../container";
import { disassemble, disassembleContainers } from "../disasm";

function main(): void {
  const argv = yargs(process.argv.slice(2))
    .usage("$0 <input>", "Disassemble a policy container file", (y) =>
      y.positional("input", { type: "string", demandOption: true, describe: "input .prog file" }))
    .strict()
    .parseSync();

  const blob = fs.readFileSync(argv.input as string);
  const text = blob.subarray(0, MAGIC.length).equals(MAGIC)
    ? disassembleContainers(blob)
    : disassemble(blob);
  process.stdout.write(text);
}

try {
  main();
} catch (err) {
  process.stderr.write(`swat-disasm: ${(err as Error).message}\n`);
  process.exit(1);
}
