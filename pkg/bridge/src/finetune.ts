/**
 * Encoder pretraining, finetuning, and ranking evaluation.
 *
 * Pretraining builds the un-finetuned baseline: both renders of a scene are
 * regressed onto one scene-specific content direction, so the encoder learns
 * what is in the picture while the modality axis is actively collapsed. That
 * mirrors a generic contrastive encoder, which recognizes scenes but has no
 * notion of infrared. Finetuning then regresses each render onto the text
 * embedding of its templated caption, the linear analogue of contrastive
 * alignment: infrared renders end up along the infrared reading of their
 * scene and grayscale renders along the grayscale one. Evaluation scores
 * held-out scene pairs
 * with the same dual-prompt contrast the search engine uses and reports how
 * often the true infrared render wins.
 */

import { buildDataset, renderScenePair, type LabeledImage, type ScenePair } from "./dataset.js";
import { ContrastEncoder, cosineSimilarity, grayscalePrompt, infraredPrompt } from "./encoder.js";
import { DeterministicRng, deriveSeed } from "./rng.js";

export interface TrainOptions {
  epochs: number;
  learningRate: number;
  seed: number;
}

export interface FinetuneOptions extends TrainOptions {
  /** Train on the grayscale counterparts too; turning this off weakens the contrast. */
  grayscaleAugmentation: boolean;
}

export const DEFAULT_FINETUNE: FinetuneOptions = {
  epochs: 8,
  learningRate: 0.002,
  seed: 404,
  grayscaleAugmentation: true,
};

const CONTENT_SEED = 202;

/** Scene-specific unit target shared by both renders of one scene. */
export function contentDirection(embedDim: number, sceneSeed: number): Float64Array {
  const raw = new DeterministicRng(deriveSeed(CONTENT_SEED, sceneSeed)).normals(embedDim);
  let sum = 0;
  for (const v of raw) {
    sum += v * v;
  }
  const norm = Math.sqrt(sum);
  for (let i = 0; i < raw.length; i += 1) {
    raw[i] /= norm;
  }
  return raw;
}

function sgd(
  encoder: ContrastEncoder,
  images: LabeledImage[],
  target: (image: LabeledImage) => Float64Array,
  options: TrainOptions,
): ContrastEncoder {
  const trained = new ContrastEncoder(encoder.weights());
  const rng = new DeterministicRng(deriveSeed(options.seed, images.length));
  const order = images.map((_, index) => index);
  for (let epoch = 0; epoch < options.epochs; epoch += 1) {
    for (let i = order.length - 1; i > 0; i -= 1) {
      const j = rng.nextInt(i + 1);
      const swap = order[i];
      order[i] = order[j];
      order[j] = swap;
    }
    for (const index of order) {
      const image = images[index];
      trained.updateToward(image.features, target(image), options.learningRate);
    }
  }
  return trained;
}

/** Pixel-space infrared-minus-grayscale offsets, one per complete scene pair. */
function pairOffsets(images: LabeledImage[]): Float64Array[] {
  const scenes = new Map<number, { ir?: Float64Array; gray?: Float64Array }>();
  for (const image of images) {
    const entry = scenes.get(image.sceneSeed) ?? {};
    if (image.isInfrared) {
      entry.ir = image.features;
    } else {
      entry.gray = image.features;
    }
    scenes.set(image.sceneSeed, entry);
  }
  const offsets: Float64Array[] = [];
  for (const entry of scenes.values()) {
    if (entry.ir === undefined || entry.gray === undefined) {
      continue;
    }
    const offset = new Float64Array(entry.ir.length);
    for (let i = 0; i < offset.length; i += 1) {
      offset[i] = entry.ir[i] - entry.gray[i];
    }
    offsets.push(offset);
  }
  return offsets;
}

/**
 * Orthonormal basis of the dominant modality variation: the mean offset plus
 * the leading principal components of the centered offsets, extracted by
 * power iteration with deflation.
 */
function modalitySubspace(offsets: Float64Array[], components: number): Float64Array[] {
  if (offsets.length === 0) {
    return [];
  }
  const dim = offsets[0].length;
  const mean = new Float64Array(dim);
  for (const offset of offsets) {
    for (let i = 0; i < dim; i += 1) {
      mean[i] += offset[i] / offsets.length;
    }
  }
  const covariance = new Float64Array(dim * dim);
  for (const offset of offsets) {
    for (let i = 0; i < dim; i += 1) {
      const di = offset[i] - mean[i];
      for (let j = 0; j < dim; j += 1) {
        covariance[i * dim + j] += (di * (offset[j] - mean[j])) / offsets.length;
      }
    }
  }
  const basis: Float64Array[] = [];
  const orthonormalize = (vector: Float64Array): Float64Array | null => {
    const v = Float64Array.from(vector);
    for (const b of basis) {
      let dot = 0;
      for (let i = 0; i < dim; i += 1) {
        dot += v[i] * b[i];
      }
      for (let i = 0; i < dim; i += 1) {
        v[i] -= dot * b[i];
      }
    }
    let sum = 0;
    for (let i = 0; i < dim; i += 1) {
      sum += v[i] * v[i];
    }
    const norm = Math.sqrt(sum);
    if (norm < 1e-12) {
      return null;
    }
    for (let i = 0; i < dim; i += 1) {
      v[i] /= norm;
    }
    return v;
  };
  const meanDirection = orthonormalize(mean);
  if (meanDirection !== null) {
    basis.push(meanDirection);
  }
  const scratch = new Float64Array(dim);
  for (let pc = 0; pc < components; pc += 1) {
    let v: Float64Array = new DeterministicRng(deriveSeed(CONTENT_SEED, 77, pc)).normals(dim);
    for (let iter = 0; iter < 60; iter += 1) {
      scratch.fill(0);
      for (let i = 0; i < dim; i += 1) {
        let acc = 0;
        for (let j = 0; j < dim; j += 1) {
          acc += covariance[i * dim + j] * v[j];
        }
        scratch[i] = acc;
      }
      const candidate = orthonormalize(scratch);
      if (candidate === null) {
        break;
      }
      v = candidate;
    }
    const direction = orthonormalize(v);
    if (direction !== null) {
      basis.push(direction);
    }
  }
  return basis;
}

/** Principal modality directions removed from the baseline projection. */
export const MODALITY_COMPONENTS = 64;

/**
 * Modality-blind baseline: align every render with its scene content, then
 * make the projection invariant to the dominant modality subspace, the way an
 * augmentation-trained encoder is invariant to exposure. What remains of a
 * render's modality is scene noise with no consistent direction.
 */
export function pretrainContent(
  encoder: ContrastEncoder,
  images: LabeledImage[],
  options: TrainOptions = DEFAULT_FINETUNE,
): ContrastEncoder {
  const trained = sgd(
    encoder,
    images,
    (image) => contentDirection(encoder.embedDim, image.sceneSeed),
    options,
  );
  for (const direction of modalitySubspace(pairOffsets(images), MODALITY_COMPONENTS)) {
    trained.imposeInvariance(direction);
  }
  return trained;
}

/** Exact caption string a labeled render is paired with during training. */
export function trainingCaption(image: LabeledImage): string {
  return image.isInfrared ? infraredPrompt(image.caption) : grayscalePrompt(image.caption);
}

/**
 * Modality-aware verifier: every render is regressed onto the embedding of
 * its own templated caption, so infrared renders align with the infrared
 * reading of their scene and grayscale renders with the grayscale one. The
 * input encoder is untouched.
 */
export function finetune(
  encoder: ContrastEncoder,
  images: LabeledImage[],
  options: FinetuneOptions = DEFAULT_FINETUNE,
): ContrastEncoder {
  const batch = options.grayscaleAugmentation
    ? images
    : images.filter((image) => image.isInfrared);
  if (batch.length === 0) {
    throw new Error("no training images: finetuning needs at least one labeled render");
  }
  const targets = new Map<string, Float64Array>();
  const target = (image: LabeledImage): Float64Array => {
    const key = trainingCaption(image);
    let cached = targets.get(key);
    if (cached === undefined) {
      cached = encoder.embedText(key);
      targets.set(key, cached);
    }
    return cached;
  };
  return sgd(encoder, batch, target, options);
}

/** Dual-prompt contrast: reward the infrared reading, penalize the grayscale one. */
export function combinedScore(
  encoder: ContrastEncoder,
  features: ArrayLike<number>,
  caption: string,
  alpha = 0.5,
): number {
  const embedding = encoder.embedImage(features);
  const irSim = cosineSimilarity(embedding, encoder.embedText(infraredPrompt(caption)));
  const graySim = cosineSimilarity(embedding, encoder.embedText(grayscalePrompt(caption)));
  return (1 - alpha) * irSim - alpha * graySim;
}

export interface RankingReport {
  pairs: number;
  correct: number;
  fraction: number;
}

/** How often the true infrared render outscores its grayscale counterpart. */
export function rankPairs(encoder: ContrastEncoder, pairs: ScenePair[], alpha = 0.5): RankingReport {
  let correct = 0;
  for (const pair of pairs) {
    const irScore = combinedScore(encoder, pair.ir, pair.caption, alpha);
    const grayScore = combinedScore(encoder, pair.gray, pair.caption, alpha);
    if (irScore > grayScore) {
      correct += 1;
    }
  }
  return { pairs: pairs.length, correct, fraction: pairs.length === 0 ? 0 : correct / pairs.length };
}

export interface TrainEvalSplit {
  training: LabeledImage[];
  heldOut: ScenePair[];
}

/** Disjoint seeded training images and held-out evaluation pairs. */
export function splitScenes(
  trainPairs: number,
  evalPairs: number,
  size: number,
  seed: number,
): TrainEvalSplit {
  const training = buildDataset(trainPairs, size, seed);
  const heldOut: ScenePair[] = [];
  for (let pair = 0; pair < evalPairs; pair += 1) {
    heldOut.push(renderScenePair(deriveSeed(seed, 9000 + pair), size));
  }
  return { training, heldOut };
}
