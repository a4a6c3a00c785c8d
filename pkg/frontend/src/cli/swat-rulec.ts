#!/usr/bin/env node
/** Compile a rule script into a policy container file. */

import * as fs from "fs";
import yargs from "yargs";

import { parseAttach } from "../abi";
import { compileRule } from "../compile";

function main(): void {
  const argv = yargs(process.argv.slice(2))
    .usage("$0 <input>", "Compile a rule script", (y) =>
      y.positional("input", { type: "string", demandOption: true, describe: "input .rule file" }))
    .option("attach", {
      type: "string",
      demandOption: true,
      describe: "attachment point, <hook>:<event>:<state>",
    })
    .option("id", { type: "string", demandOption: true, describe: "program id (1..16 bytes)" })
    .option("o", { alias: "output", type: "string", demandOption: true, describe: "output container file" })
    .strict()
    .parseSync();

  const source = fs.readFileSync(argv.input as string, "utf-8");
  const container = compileRule(source, parseAttach(argv.attach), argv.id);
  fs.writeFileSync(argv.o, container);
}

try {
  main();
} catch (err) {
  process.stderr.write(`swat-rulec: ${(err as Error).message}\n`);
  process.exit(1);
}
