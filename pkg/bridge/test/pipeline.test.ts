import { describe, expect, it } from "vitest";
import { defaultConfig } from "../src/config.js";
import { SimulatedPipeline } from "../src/pipeline.js";
import { DeterministicRng } from "../src/rng.js";

const spec = defaultConfig().simulation;

function probeLatent(seed: number, dim: number): Float64Array {
  return new DeterministicRng(seed).normals(dim);
}

describe("simulated pipeline", () => {
  const pipeline = new SimulatedPipeline(spec);
  const prompt = "An INFRARED photo of a city street at dusk.";

  it("exposes dimensions derived from the config", () => {
    expect(pipeline.latentDim).toBe(64);
    expect(pipeline.imageSize).toBe(16);
    expect(pipeline.featureDim).toBe(256);
  });

  it("renders bitwise identical images for identical requests", () => {
    const latent = probeLatent(5, pipeline.latentDim);
    const a = pipeline.render(latent, 8, prompt);
    const b = pipeline.render(latent, 8, prompt);
    expect(Buffer.from(a.buffer).equals(Buffer.from(b.buffer))).toBe(true);
  });

  it("keeps every pixel finite and inside [0, 1] across step budgets", () => {
    const latent = probeLatent(11, pipeline.latentDim);
    for (const steps of [1, 2, 8, 64, 512]) {
      const image = pipeline.render(latent, steps, prompt);
      expect(image).toHaveLength(pipeline.featureDim);
      for (const value of image) {
        expect(Number.isFinite(value)).toBe(true);
        expect(value).toBeGreaterThanOrEqual(0);
        expect(value).toBeLessThanOrEqual(1);
      }
    }
  });

  it("responds to the step budget", () => {
    const latent = probeLatent(7, pipeline.latentDim);
    const coarse = pipeline.render(latent, 2, prompt);
    const fine = pipeline.render(latent, 9, prompt);
    expect(Buffer.from(coarse.buffer).equals(Buffer.from(fine.buffer))).toBe(false);
  });

  it("responds to the latent", () => {
    const a = pipeline.render(probeLatent(1, pipeline.latentDim), 8, prompt);
    const b = pipeline.render(probeLatent(2, pipeline.latentDim), 8, prompt);
    expect(Buffer.from(a.buffer).equals(Buffer.from(b.buffer))).toBe(false);
  });

  it("responds to the prompt", () => {
    const latent = probeLatent(3, pipeline.latentDim);
    const a = pipeline.render(latent, 8, prompt);
    const b = pipeline.render(latent, 8, "A GRAYSCALE photo of a city street at dusk.");
    expect(Buffer.from(a.buffer).equals(Buffer.from(b.buffer))).toBe(false);
  });

  it("rejects a latent of the wrong length", () => {
    expect(() => pipeline.render(new Float64Array(63), 8, prompt)).toThrow(/expected 64/);
  });

  it("rejects non-positive or fractional step counts", () => {
    const latent = probeLatent(4, pipeline.latentDim);
    expect(() => pipeline.render(latent, 0, prompt)).toThrow(RangeError);
    expect(() => pipeline.render(latent, 2.5, prompt)).toThrow(RangeError);
  });
});
