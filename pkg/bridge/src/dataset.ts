/**
 * Synthetic paired scenes for encoder finetuning.
 *
 * Each scene is rendered twice from identical geometry: once with an
 * infrared signature (sparse hot emitters on a cold, dark background) and
 * once as a grayscale visible-light photo (mid-gray tones, soft gradients,
 * gentle contrast). The pairs share content and differ only in modality,
 * which is exactly the contrast the encoder has to learn.
 */

import { DeterministicRng, deriveSeed } from "./rng.js";

export interface ScenePair {
  caption: string;
  ir: Float64Array;
  gray: Float64Array;
}

export interface LabeledImage {
  features: Float64Array;
  caption: string;
  isInfrared: boolean;
  /** Seed of the scene this render came from; both modalities share it. */
  sceneSeed: number;
}

const SUBJECTS = [
  "a parked car",
  "two pedestrians",
  "a delivery truck",
  "a cyclist",
  "a bus shelter",
  "a row of dumpsters",
  "a guard booth",
  "a stray dog",
];

const PLACES = [
  "near a warehouse",
  "on an empty street",
  "by the riverside",
  "under a bridge",
  "in a parking lot",
  "at a crossing",
  "behind a fence",
  "outside a depot",
];

/** Deterministic scene caption; drawn from its own stream so renders are unaffected. */
export function sceneCaption(seed: number): string {
  const rng = new DeterministicRng(deriveSeed(seed, 555));
  return `${SUBJECTS[rng.nextInt(SUBJECTS.length)]} ${PLACES[rng.nextInt(PLACES.length)]}`;
}

interface Blob {
  row: number;
  col: number;
  radius: number;
  heat: number;
}

function clamp01(value: number): number {
  return Math.min(1, Math.max(0, value));
}

function sampleBlobs(rng: DeterministicRng, size: number): Blob[] {
  const count = 2 + rng.nextInt(3);
  const blobs: Blob[] = [];
  for (let b = 0; b < count; b += 1) {
    blobs.push({
      row: rng.nextUniform(0.15, 0.85) * size,
      col: rng.nextUniform(0.15, 0.85) * size,
      radius: rng.nextUniform(0.08, 0.2) * size,
      heat: rng.nextUniform(0.6, 1.0),
    });
  }
  return blobs;
}

function structureField(blobs: Blob[], size: number): Float64Array {
  const field = new Float64Array(size * size);
  for (let i = 0; i < size; i += 1) {
    for (let j = 0; j < size; j += 1) {
      let value = 0;
      for (const blob of blobs) {
        const dr = i - blob.row;
        const dc = j - blob.col;
        const spread = 2 * blob.radius * blob.radius;
        value += blob.heat * Math.exp(-(dr * dr + dc * dc) / spread);
      }
      field[i * size + j] = value;
    }
  }
  return field;
}

/** Render one scene in both modalities from a single seed. */
export function renderScenePair(seed: number, size: number): ScenePair {
  const rng = new DeterministicRng(seed);
  const blobs = sampleBlobs(rng, size);
  const structure = structureField(blobs, size);
  const tiltRow = rng.nextUniform(-1, 1);
  const tiltCol = rng.nextUniform(-1, 1);
  // per-scene exposure: cameras auto-expose, so levels drift between shots
  const irFloor = rng.nextUniform(0.03, 0.15);
  const irGain = rng.nextUniform(0.65, 0.95);
  const irSharpness = rng.nextUniform(1.3, 1.8);
  const grayBase = rng.nextUniform(0.35, 0.55);
  const grayGain = rng.nextUniform(0.15, 0.3);
  const tiltGain = rng.nextUniform(0.03, 0.09);

  const ir = new Float64Array(size * size);
  const gray = new Float64Array(size * size);
  for (let i = 0; i < size; i += 1) {
    for (let j = 0; j < size; j += 1) {
      const p = i * size + j;
      const s = structure[p];
      const irNoise = 0.01 * rng.nextNormal();
      const grayNoise = 0.01 * rng.nextNormal();
      // infrared: cold background, emitters saturate toward white
      ir[p] = clamp01(irFloor + irGain * Math.pow(Math.min(1, s), irSharpness) + irNoise);
      // visible grayscale: mid-gray base, soft shading, ambient light tilt
      const tilt = tiltGain * ((tiltRow * i) / size + (tiltCol * j) / size);
      gray[p] = clamp01(grayBase + grayGain * Math.min(1, s) + tilt + grayNoise);
    }
  }
  return { caption: sceneCaption(seed), ir, gray };
}

/** Flatten pairs into a shuffled training list of labeled images. */
export function buildDataset(pairCount: number, size: number, seed: number): LabeledImage[] {
  const images: LabeledImage[] = [];
  for (let pair = 0; pair < pairCount; pair += 1) {
    const sceneSeed = seed + pair;
    const scene = renderScenePair(sceneSeed, size);
    images.push({ features: scene.ir, caption: scene.caption, isInfrared: true, sceneSeed });
    images.push({ features: scene.gray, caption: scene.caption, isInfrared: false, sceneSeed });
  }
  const rng = new DeterministicRng(seed);
  for (let i = images.length - 1; i > 0; i -= 1) {
    const j = rng.nextInt(i + 1);
    const swap = images[i];
    images[i] = images[j];
    images[j] = swap;
  }
  return images;
}
