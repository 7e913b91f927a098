/**
 * Manifest TSV reader (format owned by the Python toolkit).
 *
 * Header row plus columns id, speaker, duration_s, transcript, translation,
 * embedding_ref; tab/newline/backslash inside fields are escaped as \t, \n,
 * and \\.
 */

export interface ManifestRow {
  id: string;
  speaker: string;
  durationS: number;
  transcript: string;
  translation: string;
  embeddingRef: string;
}

const COLUMNS = ["id", "speaker", "duration_s", "transcript", "translation", "embedding_ref"];

export class ManifestError extends Error {
  public constructor(message: string, public readonly line: number) {
    super(`line ${line}: ${message}`);
  }
}

export function unescapeField(value: string, line: number): string {
  let out = "";
  for (let i = 0; i < value.length; i++) {
    const ch = value[i];
    if (ch !== "\\") {
      out += ch;
      continue;
    }
    const next = value[++i];
    if (next === "t") out += "\t";
    else if (next === "n") out += "\n";
    else if (next === "\\") out += "\\";
    else if (next === undefined) throw new ManifestError("dangling backslash in field", line);
    else throw new ManifestError(`unknown escape sequence \\${next}`, line);
  }
  return out;
}

export function parseManifest(content: string): ManifestRow[] {
  const lines = content.split("\n");
  if (lines.length > 0 && lines[lines.length - 1] === "") lines.pop();
  if (lines.length === 0) throw new ManifestError("empty manifest: missing header row", 1);
  if (lines[0] !== COLUMNS.join("\t")) {
    throw new ManifestError(`bad header; expected ${COLUMNS.join(", ")}`, 1);
  }
  const rows: ManifestRow[] = [];
  const seen = new Set<string>();
  for (let i = 1; i < lines.length; i++) {
    const lineNo = i + 1;
    const cols = lines[i].split("\t");
    if (cols.length !== COLUMNS.length) {
      throw new ManifestError(`expected ${COLUMNS.length} columns, found ${cols.length}`, lineNo);
    }
    const [id, speaker, duration, transcript, translation, ref] = cols.map((c) =>
      unescapeField(c, lineNo),
    );
    if (id === "") throw new ManifestError("empty utterance id", lineNo);
    if (seen.has(id)) throw new ManifestError(`duplicate utterance id '${id}'`, lineNo);
    seen.add(id);
    const durationS = Number(duration);
    if (!Number.isFinite(durationS) || durationS < 0) {
      throw new ManifestError(`bad duration_s '${duration}'`, lineNo);
    }
    rows.push({ id, speaker, durationS, transcript, translation, embeddingRef: ref });
  }
  return rows;
}
