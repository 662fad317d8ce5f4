/**
 * Joint image/text encoder used by the bridge verifier.
 *
 * This is a linear stand-in for the production CLIP encoder. Text embedding
 * mimics how a contrastively trained model treats the scoring prompts: each
 * template contributes a fixed modality direction plus a smaller
 * content-dependent component, so prompts about different scenes stay close
 * when they ask for the same modality. Image embedding is a learned linear
 * projection of centered pixels with a bias feature; finetuning fits that
 * projection so infrared renders align with the infrared direction and
 * grayscale renders with the grayscale one.
 */

import { DeterministicRng, deriveSeed } from "./rng.js";

export const INFRARED_PREFIX = "An INFRARED photo of ";
export const GRAYSCALE_PREFIX = "A GRAYSCALE photo of ";

export function infraredPrompt(caption: string): string {
  return `${INFRARED_PREFIX}${caption}.`;
}

export function grayscalePrompt(caption: string): string {
  return `${GRAYSCALE_PREFIX}${caption}.`;
}

const TOKEN_WEIGHT = 0.3;
const ANCHOR_SEED = 101;
const EPSILON = 1e-12;

export interface EncoderWeights {
  featureDim: number;
  embedDim: number;
  /** Row-major embedDim x (featureDim + 1); the extra column is a bias feature. */
  w: number[];
}

function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i += 1) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

function normalize(values: Float64Array): Float64Array {
  let sum = 0;
  for (let i = 0; i < values.length; i += 1) {
    sum += values[i] * values[i];
  }
  const norm = Math.sqrt(sum);
  if (norm < EPSILON) {
    const basis = new Float64Array(values.length);
    basis[0] = 1;
    return basis;
  }
  const out = new Float64Array(values.length);
  for (let i = 0; i < values.length; i += 1) {
    out[i] = values[i] / norm;
  }
  return out;
}

export function cosineSimilarity(a: Float64Array, b: Float64Array): number {
  if (a.length !== b.length) {
    throw new RangeError(`vectors of length ${a.length} and ${b.length} do not match`);
  }
  let dot = 0;
  let na = 0;
  let nb = 0;
  for (let i = 0; i < a.length; i += 1) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const scale = Math.sqrt(na) * Math.sqrt(nb);
  if (scale < EPSILON) {
    throw new RangeError("cosine similarity of a zero vector is undefined");
  }
  return dot / scale;
}

/** Orthonormal modality directions shared by every encoder instance. */
function modalityAnchors(embedDim: number): { ir: Float64Array; gray: Float64Array } {
  const ir = normalize(new DeterministicRng(deriveSeed(ANCHOR_SEED, 1)).normals(embedDim));
  const grayRaw = new DeterministicRng(deriveSeed(ANCHOR_SEED, 2)).normals(embedDim);
  let dot = 0;
  for (let i = 0; i < embedDim; i += 1) {
    dot += grayRaw[i] * ir[i];
  }
  for (let i = 0; i < embedDim; i += 1) {
    grayRaw[i] -= dot * ir[i];
  }
  return { ir, gray: normalize(grayRaw) };
}

export class ContrastEncoder {
  readonly featureDim: number;
  readonly embedDim: number;
  private readonly w: Float64Array;
  private readonly anchors: { ir: Float64Array; gray: Float64Array };

  constructor(weights: EncoderWeights) {
    const expected = weights.embedDim * (weights.featureDim + 1);
    if (weights.w.length !== expected) {
      throw new RangeError(
        `weights carry ${weights.w.length} values, expected ${expected}`,
      );
    }
    this.featureDim = weights.featureDim;
    this.embedDim = weights.embedDim;
    this.w = Float64Array.from(weights.w);
    this.anchors = modalityAnchors(weights.embedDim);
  }

  /** Fresh encoder with small random projection weights. */
  static seeded(featureDim: number, embedDim: number, seed: number): ContrastEncoder {
    const rng = new DeterministicRng(seed);
    const scale = 0.5 / Math.sqrt(featureDim + 1);
    const w = new Array<number>(embedDim * (featureDim + 1));
    for (let i = 0; i < w.length; i += 1) {
      w[i] = scale * rng.nextNormal();
    }
    return new ContrastEncoder({ featureDim, embedDim, w });
  }

  weights(): EncoderWeights {
    return { featureDim: this.featureDim, embedDim: this.embedDim, w: Array.from(this.w) };
  }

  modalityDirection(kind: "ir" | "gray"): Float64Array {
    return Float64Array.from(kind === "ir" ? this.anchors.ir : this.anchors.gray);
  }

  /** Unit-norm embedding of arbitrary text; deterministic per exact string. */
  embedText(text: string): Float64Array {
    const rng = new DeterministicRng(deriveSeed(ANCHOR_SEED, 3, fnv1a(text)));
    const tokens = normalize(rng.normals(this.embedDim));
    const vec = new Float64Array(this.embedDim);
    for (let i = 0; i < this.embedDim; i += 1) {
      vec[i] = TOKEN_WEIGHT * tokens[i];
    }
    if (text.startsWith(INFRARED_PREFIX)) {
      for (let i = 0; i < this.embedDim; i += 1) {
        vec[i] += this.anchors.ir[i];
      }
    } else if (text.startsWith(GRAYSCALE_PREFIX)) {
      for (let i = 0; i < this.embedDim; i += 1) {
        vec[i] += this.anchors.gray[i];
      }
    }
    return normalize(vec);
  }

  /** Unnormalized projection of centered pixels plus a bias feature. */
  project(features: ArrayLike<number>): Float64Array {
    if (features.length !== this.featureDim) {
      throw new RangeError(
        `image carries ${features.length} values, expected ${this.featureDim}`,
      );
    }
    const cols = this.featureDim + 1;
    const out = new Float64Array(this.embedDim);
    for (let row = 0; row < this.embedDim; row += 1) {
      let acc = this.w[row * cols + this.featureDim];
      for (let col = 0; col < this.featureDim; col += 1) {
        acc += this.w[row * cols + col] * (Number(features[col]) - 0.5);
      }
      out[row] = acc;
    }
    return out;
  }

  /** Unit-norm embedding of a grayscale image given as flat [0, 1] pixels. */
  embedImage(features: ArrayLike<number>): Float64Array {
    return normalize(this.project(features));
  }

  /**
   * Make the projection invariant to one pixel-space direction: W loses its
   * component along it, so images differing only by that direction embed
   * identically. The bias feature is untouched.
   */
  imposeInvariance(direction: ArrayLike<number>): void {
    if (direction.length !== this.featureDim) {
      throw new RangeError(
        `direction carries ${direction.length} values, expected ${this.featureDim}`,
      );
    }
    let sum = 0;
    for (let col = 0; col < this.featureDim; col += 1) {
      sum += Number(direction[col]) * Number(direction[col]);
    }
    const norm = Math.sqrt(sum);
    if (norm < EPSILON) {
      return;
    }
    const cols = this.featureDim + 1;
    for (let row = 0; row < this.embedDim; row += 1) {
      let coeff = 0;
      for (let col = 0; col < this.featureDim; col += 1) {
        coeff += this.w[row * cols + col] * (Number(direction[col]) / norm);
      }
      for (let col = 0; col < this.featureDim; col += 1) {
        this.w[row * cols + col] -= coeff * (Number(direction[col]) / norm);
      }
    }
  }

  /** One stochastic update of the projection toward a target direction. */
  updateToward(features: ArrayLike<number>, target: Float64Array, learningRate: number): void {
    const projected = this.project(features);
    const cols = this.featureDim + 1;
    for (let row = 0; row < this.embedDim; row += 1) {
      const residual = projected[row] - target[row];
      const step = learningRate * residual;
      for (let col = 0; col < this.featureDim; col += 1) {
        this.w[row * cols + col] -= step * (Number(features[col]) - 0.5);
      }
      this.w[row * cols + this.featureDim] -= step;
    }
  }
}
