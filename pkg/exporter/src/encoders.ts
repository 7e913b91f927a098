/**
 * Encoder registry.
 *
 * An encoder turns one utterance's transcript (or, for speech front ends,
 * its audio) into a frame matrix. The built-in `hash` encoder is a
 * deterministic reference featurizer that needs no model downloads: every
 * whitespace token maps to a fixed pseudo-random vector of unit scale.
 * Heavyweight pretrained encoders plug in through the same interface.
 */

export interface EncodedFrames {
  frames: Float32Array;
  frameCount: number;
}

export interface Encoder {
  readonly name: string;
  readonly dim: number;
  /** Returns null when the input is empty (reported as a failure upstream). */
  encode(text: string): EncodedFrames | null;
}

/** FNV-1a 32-bit hash of a string. */
function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h >>> 0;
}

/** mulberry32: small deterministic PRNG over a 32-bit seed. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export class HashEncoder implements Encoder {
  public readonly name = "hash";

  public constructor(
    public readonly dim: number,
    private readonly framesPerToken: number = 1,
    private readonly seed: number = 0,
  ) {
    if (!Number.isInteger(dim) || dim < 1) throw new Error(`invalid dimension ${dim}`);
    if (!Number.isInteger(framesPerToken) || framesPerToken < 1) {
      throw new Error(`invalid frames per token ${framesPerToken}`);
    }
  }

  private tokenVector(token: string): Float32Array {
    const rand = mulberry32(fnv1a(`${this.seed}:${token}`));
    const v = new Float32Array(this.dim);
    for (let i = 0; i < this.dim; i++) {
      // Box-Muller normal deviates, scaled so the vector norm is near 1.
      const u1 = Math.max(rand(), 1e-12);
      const u2 = rand();
      v[i] = Math.fround(
        (Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2)) / Math.sqrt(this.dim),
      );
    }
    return v;
  }

  public encode(text: string): EncodedFrames | null {
    const tokens = text.split(/\s+/).filter((t) => t.length > 0);
    if (tokens.length === 0) return null;
    const frameCount = tokens.length * this.framesPerToken;
    const frames = new Float32Array(frameCount * this.dim);
    let row = 0;
    for (const token of tokens) {
      const v = this.tokenVector(token);
      for (let r = 0; r < this.framesPerToken; r++) {
        frames.set(v, row * this.dim);
        row += 1;
      }
    }
    return { frames, frameCount };
  }
}

export interface EncoderOptions {
  dim: number;
  framesPerToken: number;
  seed: number;
}

const REGISTRY: Record<string, (opts: EncoderOptions) => Encoder> = {
  hash: (opts) => new HashEncoder(opts.dim, opts.framesPerToken, opts.seed),
};

export function createEncoder(name: string, opts: EncoderOptions): Encoder {
  const factory = REGISTRY[name];
  if (!factory) {
    const known = Object.keys(REGISTRY).join(", ");
    throw new Error(`unknown encoder '${name}' (available: ${known})`);
  }
  return factory(opts);
}
