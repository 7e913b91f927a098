/**
 * Export job: encode every manifest utterance and write one store file.
 *
 * Failures (empty inputs, encoder errors on single items) are collected and
 * reported per utterance id, never silently dropped. Dimension drift across
 * items aborts the run: one store holds exactly one dimension.
 */

import * as fs from "fs";
import * as path from "path";

import { encodeStore, Modality, StoreRecord } from "./binary";
import { createEncoder, Encoder } from "./encoders";
import { parseManifest } from "./manifest";

export interface ExportJob {
  manifestPath: string;
  modality: Modality;
  encoderName: string;
  outPath: string;
  dim: number;
  framesPerToken: number;
  seed: number;
  batchSize: number;
}

export interface ExportFailure {
  id: string;
  reason: string;
}

export interface ExportSummary {
  count: number;
  dim: number;
  modality: Modality;
  failures: ExportFailure[];
}

export function runExport(job: ExportJob): ExportSummary {
  const manifest = parseManifest(fs.readFileSync(job.manifestPath, "utf-8"));
  const encoder: Encoder = createEncoder(job.encoderName, {
    dim: job.dim,
    framesPerToken: job.modality === "speech" ? job.framesPerToken : 1,
    seed: job.seed,
  });

  const records: StoreRecord[] = [];
  const failures: ExportFailure[] = [];
  let dim: number | null = null;
  for (let start = 0; start < manifest.length; start += job.batchSize) {
    for (const row of manifest.slice(start, start + job.batchSize)) {
      let encoded;
      try {
        encoded = encoder.encode(row.transcript);
      } catch (err) {
        failures.push({ id: row.id, reason: String(err instanceof Error ? err.message : err) });
        continue;
      }
      if (encoded === null) {
        failures.push({ id: row.id, reason: "empty input" });
        continue;
      }
      const itemDim = encoded.frames.length / encoded.frameCount;
      if (dim === null) {
        dim = itemDim;
      } else if (itemDim !== dim) {
        throw new Error(
          `dimension drift at '${row.id}': got ${itemDim}, store dimension is ${dim}`,
        );
      }
      records.push({
        id: row.id,
        modality: job.modality,
        frames: encoded.frames,
        frameCount: encoded.frameCount,
      });
    }
  }

  const storeDim = dim ?? encoder.dim;
  const buffer = encodeStore(storeDim, records);
  // Write to a temp sibling and promote, so failures leave no partial file.
  const dir = path.dirname(path.resolve(job.outPath));
  const tmp = path.join(dir, `.tmp-export-${process.pid}~`);
  fs.writeFileSync(tmp, buffer);
  fs.renameSync(tmp, job.outPath);
  return { count: records.length, dim: storeDim, modality: job.modality, failures };
}
