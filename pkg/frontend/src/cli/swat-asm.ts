#!/usr/bin/env node
/** Assemble policy text into container files. */

import * as fs from "fs";
import yargs from "yargs";

import { assemble } from "../asm";
import { encodeContainer } from "../container";

function main(): void {
  const argv = yargs(process.argv.slice(2))
    .usage("$0 <input>", "Assemble a policy text file", (y) =>
      y.positional("input", { type: "string", demandOption: true, describe: "input .asm file" }))
    .option("o", { alias: "output", type: "string", demandOption: true, describe: "output container file" })
    .strict()
    .parseSync();

  const source = fs.readFileSync(argv.input as string, "utf-8");
  const sections = assemble(source);
  const parts = sections.map((section, index) => {
    if (section.id === undefined) {
      throw new Error(`section ${index + 1}: missing .id directive`);
    }
    if (section.attach === undefined) {
      throw new Error(`program '${section.id}': missing .attach directive`);
    }
    return encodeContainer({
      id: section.id,
      hook: section.attach.hook,
      event: section.attach.event,
      state: section.attach.state,
      bytecode: section.bytecode,
    });
  });
  fs.writeFileSync(argv.o, Buffer.concat(parts));
}

try {
  main();
} catch (err) {
  process.stderr.write(`swat-asm: ${(err as Error).message}\n`);
  process.exit(1);
}
