/**
 * Standalone exporter CLI.
 *
 * Usage:
 *   node dist/cli.js --manifest data.tsv --modality text --encoder hash \
 *     --dim 64 --out store.rdke [--frames-per-token 4] [--seed 0]
 *     [--batch-size 32] [--summary-json]
 *
 * Prints a human summary (or one JSON line with --summary-json) including
 * every per-utterance failure. Exits 1 on fatal errors, 2 on usage errors.
 */

import { runExport } from "./export";
import { Modality } from "./binary";

interface CliArgs {
  manifest: string;
  modality: Modality;
  encoder: string;
  dim: number;
  out: string;
  framesPerToken: number;
  seed: number;
  batchSize: number;
  summaryJson: boolean;
}

function usageError(message: string): never {
  process.stderr.write(`error: usage: ${message}\n`);
  process.exit(2);
}

function parseArgs(argv: string[]): CliArgs {
  const flags = new Map<string, string | boolean>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) usageError(`unexpected argument '${arg}'`);
    const key = arg.slice(2);
    if (key === "summary-json") {
      flags.set(key, true);
    } else {
      const value = argv[++i];
      if (value === undefined) usageError(`flag --${key} needs a value`);
      flags.set(key, value);
    }
  }
  const str = (key: string, fallback?: string): string => {
    const v = flags.get(key);
    if (v === undefined) {
      if (fallback !== undefined) return fallback;
      usageError(`missing required flag --${key}`);
    }
    return String(v);
  };
  const num = (key: string, fallback: number): number => {
    const v = flags.get(key);
    if (v === undefined) return fallback;
    const parsed = Number(v);
    if (!Number.isFinite(parsed)) usageError(`flag --${key} needs a number, got '${v}'`);
    return parsed;
  };
  const known = new Set([
    "manifest", "modality", "encoder", "dim", "out",
    "frames-per-token", "seed", "batch-size", "summary-json",
  ]);
  for (const key of flags.keys()) {
    if (!known.has(key)) usageError(`unknown flag --${key}`);
  }
  const modality = str("modality");
  if (modality !== "speech" && modality !== "text") {
    usageError(`--modality must be 'speech' or 'text', got '${modality}'`);
  }
  return {
    manifest: str("manifest"),
    modality,
    encoder: str("encoder", "hash"),
    dim: num("dim", 64),
    out: str("out"),
    framesPerToken: num("frames-per-token", 4),
    seed: num("seed", 0),
    batchSize: num("batch-size", 32),
    summaryJson: flags.has("summary-json"),
  };
}

function main(): void {
  const args = parseArgs(process.argv.slice(2));
  try {
    const summary = runExport({
      manifestPath: args.manifest,
      modality: args.modality,
      encoderName: args.encoder,
      outPath: args.out,
      dim: args.dim,
      framesPerToken: args.framesPerToken,
      seed: args.seed,
      batchSize: args.batchSize,
    });
    if (args.summaryJson) {
      process.stdout.write(JSON.stringify(summary) + "\n");
    } else {
      process.stdout.write(
        `exported ${summary.count} records (dim ${summary.dim}, ` +
          `${summary.modality}) to ${args.out}\n`,
      );
      for (const failure of summary.failures) {
        process.stdout.write(`failed: ${failure.id}: ${failure.reason}\n`);
      }
    }
  } catch (err) {
    const message = err instanceof Error ? err.message : String(err);
    process.stderr.write(`error: ${message.replace(/\s+/g, " ")}\n`);
    process.exit(1);
  }
}

main();
