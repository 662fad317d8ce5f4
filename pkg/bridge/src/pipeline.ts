/**
 * Desk-scale stand-in for the production denoiser.
 *
 * The real bridge target is a FLUX.1-dev transformer with an infrared LoRA
 * adapter; this module reproduces its interface contract only: a latent
 * vector plus a step budget and a prompt deterministically become a grayscale
 * image in [0, 1]. The renderer upsamples the latent, conditions it with a
 * low-frequency field derived from the prompt, and runs a fixed-horizon
 * smooth-and-sharpen recursion whose trajectory depends on the step count.
 * Every operation is pure float math, so equal requests produce bitwise
 * identical images.
 */

import type { SimulationSpec } from "./config.js";

const HORIZON = 2.0;
const DIFFUSION = 1.2;
const SHARPEN = 0.8;
const PROMPT_GAIN = 0.15;

function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i += 1) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193) >>> 0;
  }
  return hash >>> 0;
}

/** Low-frequency conditioning field standing in for text guidance. */
function promptField(prompt: string, size: number): Float64Array {
  const hash = fnv1a(prompt);
  const fx = 1 + (hash & 0x3);
  const fy = 1 + ((hash >> 2) & 0x3);
  const phase = ((hash >> 4) & 0xffff) / 0x10000 * 2 * Math.PI;
  const field = new Float64Array(size * size);
  for (let i = 0; i < size; i += 1) {
    for (let j = 0; j < size; j += 1) {
      const angle = (2 * Math.PI * (fx * i + fy * j)) / size + phase;
      field[i * size + j] = PROMPT_GAIN * Math.sin(angle);
    }
  }
  return field;
}

/** 4-neighbor average with reflecting boundaries. */
function blur(values: Float64Array, size: number, out: Float64Array): void {
  for (let i = 0; i < size; i += 1) {
    const up = i === 0 ? 0 : i - 1;
    const down = i === size - 1 ? size - 1 : i + 1;
    for (let j = 0; j < size; j += 1) {
      const left = j === 0 ? 0 : j - 1;
      const right = j === size - 1 ? size - 1 : j + 1;
      out[i * size + j] =
        0.25 *
        (values[up * size + j] +
          values[down * size + j] +
          values[i * size + left] +
          values[i * size + right]);
    }
  }
}

export class SimulatedPipeline {
  readonly latentSize: number;
  readonly imageSize: number;
  readonly latentDim: number;
  readonly featureDim: number;

  constructor(spec: SimulationSpec) {
    this.latentSize = spec.latentSize;
    this.imageSize = spec.imageSize;
    this.latentDim = spec.latentSize * spec.latentSize;
    this.featureDim = spec.imageSize * spec.imageSize;
  }

  /** Deterministically render a latent into a grayscale image in [0, 1]. */
  render(latent: ArrayLike<number>, steps: number, prompt: string): Float32Array {
    if (latent.length !== this.latentDim) {
      throw new RangeError(
        `latent carries ${latent.length} values, expected ${this.latentDim}`,
      );
    }
    if (!Number.isInteger(steps) || steps < 1) {
      throw new RangeError(`steps must be a positive integer, got ${steps}`);
    }
    const size = this.imageSize;
    const factor = size / this.latentSize;
    const field = promptField(prompt, size);

    // nearest-neighbor upsample squashed into (-1, 1), plus prompt conditioning
    let state = new Float64Array(size * size);
    for (let i = 0; i < size; i += 1) {
      const li = Math.floor(i / factor);
      for (let j = 0; j < size; j += 1) {
        const lj = Math.floor(j / factor);
        const z = Number(latent[li * this.latentSize + lj]);
        state[i * size + j] = Math.tanh(0.6 * z + field[i * size + j]);
      }
    }

    // fixed-horizon refinement; tanh re-projection keeps the recursion stable
    // for any step count, while the trajectory still depends on it
    const dt = HORIZON / steps;
    let smooth = new Float64Array(size * size);
    for (let k = 0; k < steps; k += 1) {
      blur(state, size, smooth);
      for (let p = 0; p < state.length; p += 1) {
        const drift = DIFFUSION * (smooth[p] - state[p]) + SHARPEN * state[p];
        smooth[p] = Math.tanh(state[p] + dt * drift);
      }
      const next = smooth;
      smooth = state;
      state = next;
    }

    const image = new Float32Array(size * size);
    for (let p = 0; p < state.length; p += 1) {
      image[p] = Math.fround(0.5 * (state[p] + 1));
    }
    return image;
  }
}
