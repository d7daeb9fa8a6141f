#!/usr/bin/env node
/**
 * export --prompts prompts.txt --out embeddings.txemb [--model NAME]
 *
 * Reads one prompt per line (blank lines skipped), embeds each with the
 * frozen text encoder, and writes a TXEMB interchange file with
 * L2-normalized vectors keyed by the exact prompt strings.
 */

import { readFileSync, writeFileSync } from "node:fs";
import { DEFAULT_MODEL, TEST_BACKEND, makeBackend } from "./backends.js";
import { formatTxemb } from "./txemb.js";

interface Args {
  prompts: string;
  out: string;
  model: string;
}

function usage(): string {
  return (
    "usage: txemb-export --prompts prompts.txt --out embeddings.txemb " +
    `[--model NAME]\n  default model: ${DEFAULT_MODEL}\n` +
    `  offline stand-in: --model ${TEST_BACKEND}`
  );
}

export function parseArgs(argv: string[]): Args {
  const args: Partial<Args> = { model: DEFAULT_MODEL };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const value = argv[i + 1];
    switch (flag) {
      case "--prompts":
      case "--out":
      case "--model":
        if (value === undefined) throw new Error(`${flag} needs a value`);
        args[flag.slice(2) as keyof Args] = value;
        i++;
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!args.prompts || !args.out) throw new Error("--prompts and --out are required");
  return args as Args;
}

export function readPrompts(path: string): string[] {
  const lines = readFileSync(path, "utf-8").split("\n");
  const prompts = lines.map((l) => l.replace(/\r$/, "")).filter((l) => l.trim().length > 0);
  if (prompts.length === 0) throw new Error(`${path}: no prompts found`);
  const seen = new Set<string>();
  for (const p of prompts) {
    if (seen.has(p)) throw new Error(`duplicate prompt rejected: ${JSON.stringify(p)}`);
    seen.add(p);
  }
  return prompts;
}

export async function runExport(args: Args): Promise<number> {
  const prompts = readPrompts(args.prompts);
  const backend = await makeBackend(args.model);
  const vectors = await backend.embed(prompts);
  const entries = prompts.map((prompt, i) => ({ prompt, vector: vectors[i] }));
  writeFileSync(args.out, formatTxemb(entries), "utf-8");
  console.log(`prompts=${prompts.length} dim=${backend.dim} model=${backend.name} out=${args.out}`);
  return 0;
}

async function main(): Promise<number> {
  try {
    return await runExport(parseArgs(process.argv.slice(2)));
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    console.error(usage());
    return 1;
  }
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("cli.js") || entry.endsWith("txemb-export")) {
  main().then((code) => process.exit(code));
}
