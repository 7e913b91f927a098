/**
 * Embedding store binary format (shared with the Python toolkit).
 *
 * Layout, little-endian throughout:
 *   "RDKE" | u32 version=1 | u32 dim | u32 recordCount
 *   per record: u16 idLength | id bytes (UTF-8) | u8 modality (0=speech,
 *   1=text) | u32 frameCount | frameCount*dim float32, row-major.
 */

export const STORE_MAGIC = "RDKE";
export const STORE_VERSION = 1;

export type Modality = "speech" | "text";

const MODALITY_CODE: Record<Modality, number> = { speech: 0, text: 1 };
const MODALITY_NAME: Record<number, Modality> = { 0: "speech", 1: "text" };

export interface StoreRecord {
  id: string;
  modality: Modality;
  /** frameCount x dim values, row-major. */
  frames: Float32Array;
  frameCount: number;
}

export class FormatError extends Error {
  public constructor(message: string, public readonly offset: number) {
    super(`byte ${offset}: ${message}`);
  }
}

export class BinaryWriter {
  private readonly chunks: Buffer[] = [];

  public writeTag(tag: string): void {
    if (tag.length !== 4) throw new Error(`tag must be 4 chars: '${tag}'`);
    this.chunks.push(Buffer.from(tag, "ascii"));
  }

  public writeU8(v: number): void {
    if (!Number.isInteger(v) || v < 0 || v > 0xff) throw new Error(`u8 out of range: ${v}`);
    const b = Buffer.alloc(1);
    b.writeUInt8(v, 0);
    this.chunks.push(b);
  }

  public writeU16(v: number): void {
    if (!Number.isInteger(v) || v < 0 || v > 0xffff) throw new Error(`u16 out of range: ${v}`);
    const b = Buffer.alloc(2);
    b.writeUInt16LE(v, 0);
    this.chunks.push(b);
  }

  public writeU32(v: number): void {
    if (!Number.isInteger(v) || v < 0 || v > 0xffffffff) throw new Error(`u32 out of range: ${v}`);
    const b = Buffer.alloc(4);
    b.writeUInt32LE(v >>> 0, 0);
    this.chunks.push(b);
  }

  public writeBytes(bytes: Uint8Array): void {
    this.chunks.push(Buffer.from(bytes));
  }

  public writeFloat32Array(values: Float32Array): void {
    const b = Buffer.alloc(values.length * 4);
    for (let i = 0; i < values.length; i++) {
      b.writeFloatLE(values[i], i * 4);
    }
    this.chunks.push(b);
  }

  public toBuffer(): Buffer {
    return Buffer.concat(this.chunks);
  }
}

export class BinaryReader {
  private offset = 0;

  public constructor(private readonly buf: Buffer) {}

  public get position(): number {
    return this.offset;
  }

  public get remaining(): number {
    return this.buf.length - this.offset;
  }

  private ensure(n: number, what: string): void {
    if (this.offset + n > this.buf.length) {
      throw new FormatError(`truncated while reading ${what}`, this.offset);
    }
  }

  public readTag(what: string): string {
    this.ensure(4, what);
    const v = this.buf.toString("ascii", this.offset, this.offset + 4);
    this.offset += 4;
    return v;
  }

  public readU8(what: string): number {
    this.ensure(1, what);
    return this.buf.readUInt8(this.offset++);
  }

  public readU16(what: string): number {
    this.ensure(2, what);
    const v = this.buf.readUInt16LE(this.offset);
    this.offset += 2;
    return v;
  }

  public readU32(what: string): number {
    this.ensure(4, what);
    const v = this.buf.readUInt32LE(this.offset);
    this.offset += 4;
    return v;
  }

  public readBytes(n: number, what: string): Buffer {
    this.ensure(n, what);
    const v = this.buf.subarray(this.offset, this.offset + n);
    this.offset += n;
    return v;
  }
}

export function encodeStore(dim: number, records: StoreRecord[]): Buffer {
  if (!Number.isInteger(dim) || dim < 1) throw new Error(`invalid dimension ${dim}`);
  const w = new BinaryWriter();
  w.writeTag(STORE_MAGIC);
  w.writeU32(STORE_VERSION);
  w.writeU32(dim);
  w.writeU32(records.length);
  for (const record of records) {
    const idBytes = Buffer.from(record.id, "utf-8");
    if (idBytes.length > 0xffff) throw new Error(`id too long: ${record.id.slice(0, 40)}...`);
    if (record.frames.length !== record.frameCount * dim) {
      throw new Error(
        `record ${record.id}: ${record.frames.length} values for ` +
          `${record.frameCount} x ${dim} frames`,
      );
    }
    if (record.frameCount < 1) throw new Error(`record ${record.id}: no frames`);
    for (const v of record.frames) {
      if (!Number.isFinite(v)) throw new Error(`record ${record.id}: non-finite value`);
    }
    w.writeU16(idBytes.length);
    w.writeBytes(idBytes);
    w.writeU8(MODALITY_CODE[record.modality]);
    w.writeU32(record.frameCount);
    w.writeFloat32Array(record.frames);
  }
  return w.toBuffer();
}

export interface DecodedStore {
  dim: number;
  modality: Modality | null;
  records: StoreRecord[];
}

export function decodeStore(buf: Buffer): DecodedStore {
  const r = new BinaryReader(buf);
  const magic = r.readTag("magic");
  if (magic !== STORE_MAGIC) {
    throw new FormatError(`bad magic '${magic}', expected '${STORE_MAGIC}'`, 0);
  }
  const version = r.readU32("version");
  if (version !== STORE_VERSION) throw new FormatError(`unsupported version ${version}`, 4);
  const dim = r.readU32("dimension");
  if (dim < 1) throw new FormatError(`invalid dimension ${dim}`, 8);
  const count = r.readU32("record count");
  const records: StoreRecord[] = [];
  const seen = new Set<string>();
  let modality: Modality | null = null;
  for (let i = 0; i < count; i++) {
    const idLength = r.readU16(`record ${i} id length`);
    const idAt = r.position;
    const id = r.readBytes(idLength, `record ${i} id`).toString("utf-8");
    if (seen.has(id)) throw new FormatError(`duplicate record id '${id}'`, idAt);
    seen.add(id);
    const modCode = r.readU8(`record ${i} modality`);
    const mod = MODALITY_NAME[modCode];
    if (mod === undefined) {
      throw new FormatError(`record ${i}: unknown modality code ${modCode}`, r.position - 1);
    }
    if (modality === null) modality = mod;
    else if (modality !== mod) {
      throw new FormatError(`record ${i}: mixed modalities in one store`, r.position - 1);
    }
    const frameCount = r.readU32(`record ${i} frame count`);
    if (frameCount < 1) {
      throw new FormatError(`record ${i}: frame count must be >= 1`, r.position - 4);
    }
    const payload = r.readBytes(frameCount * dim * 4, `record ${i} payload`);
    const frames = new Float32Array(frameCount * dim);
    for (let j = 0; j < frames.length; j++) {
      frames[j] = payload.readFloatLE(j * 4);
      if (!Number.isFinite(frames[j])) {
        throw new FormatError(`record ${i} ('${id}'): non-finite payload value`, r.position);
      }
    }
    records.push({ id, modality: mod, frames, frameCount });
  }
  if (r.remaining !== 0) {
    throw new FormatError(`${r.remaining} trailing bytes after last record`, r.position);
  }
  return { dim, modality, records };
}
