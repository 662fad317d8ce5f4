/**
 * Bridge configuration.
 *
 * One config file describes both deployment modes. The "model" and "encoder"
 * blocks point at the production text-to-image stack (a FLUX.1-dev base with
 * an infrared LoRA adapter, scored by a CLIP encoder) that a GPU host would
 * load. The "simulation" block configures the self-contained renderer this
 * process runs when no GPU stack is present, so the wire contract, budgets,
 * and scoring path can be exercised end to end on a desk machine.
 */

import { readFileSync } from "node:fs";

export interface ModelSpec {
  id: string;
  adapterPath: string;
  steps: number;
  guidance: number;
  height: number;
  width: number;
  device: string;
}

export interface EncoderSpec {
  id: string;
  weightsPath: string;
  embedDim: number;
  device: string;
}

export interface SimulationSpec {
  /** Rendered images are imageSize x imageSize grayscale. */
  imageSize: number;
  /** Latents are latentSize x latentSize, upsampled by the renderer. */
  latentSize: number;
}

export interface BridgeConfig {
  backendName: string;
  maxSteps: number;
  model: ModelSpec;
  encoder: EncoderSpec;
  simulation: SimulationSpec;
}

export function defaultConfig(): BridgeConfig {
  return {
    backendName: "flux-ir-bridge",
    maxSteps: 4096,
    model: {
      id: "black-forest-labs/FLUX.1-dev",
      adapterPath: "weights/ir-lora.safetensors",
      steps: 28,
      guidance: 3.5,
      height: 768,
      width: 1360,
      device: "cuda:0",
    },
    encoder: {
      id: "openai/clip-vit-large-patch14",
      weightsPath: "weights/encoder.json",
      embedDim: 32,
      device: "cuda:0",
    },
    simulation: {
      imageSize: 16,
      latentSize: 8,
    },
  };
}

function requirePositiveInt(value: unknown, label: string): number {
  if (typeof value !== "number" || !Number.isInteger(value) || value < 1) {
    throw new TypeError(`${label} must be a positive integer, got ${JSON.stringify(value)}`);
  }
  return value;
}

function requireString(value: unknown, label: string): string {
  if (typeof value !== "string" || value.length === 0) {
    throw new TypeError(`${label} must be a non-empty string, got ${JSON.stringify(value)}`);
  }
  return value;
}

function mergeSection<T extends object>(base: T, override: unknown, label: string): T {
  if (override === undefined) {
    return base;
  }
  if (typeof override !== "object" || override === null || Array.isArray(override)) {
    throw new TypeError(`${label} must be an object`);
  }
  for (const key of Object.keys(override)) {
    if (!(key in base)) {
      throw new TypeError(`unknown key ${label}.${key}`);
    }
  }
  return { ...base, ...(override as Partial<T>) };
}

/** Validate a parsed config document, filling gaps from the defaults. */
export function configFromDocument(document: unknown): BridgeConfig {
  const base = defaultConfig();
  if (typeof document !== "object" || document === null || Array.isArray(document)) {
    throw new TypeError("config document must be a JSON object");
  }
  const doc = document as Record<string, unknown>;
  for (const key of Object.keys(doc)) {
    if (!(key in base)) {
      throw new TypeError(`unknown config key ${key}`);
    }
  }
  const config: BridgeConfig = {
    backendName: doc.backendName === undefined ? base.backendName : requireString(doc.backendName, "backendName"),
    maxSteps: doc.maxSteps === undefined ? base.maxSteps : requirePositiveInt(doc.maxSteps, "maxSteps"),
    model: mergeSection(base.model, doc.model, "model"),
    encoder: mergeSection(base.encoder, doc.encoder, "encoder"),
    simulation: mergeSection(base.simulation, doc.simulation, "simulation"),
  };
  requireString(config.model.id, "model.id");
  requireString(config.model.adapterPath, "model.adapterPath");
  requireString(config.encoder.id, "encoder.id");
  requireString(config.encoder.weightsPath, "encoder.weightsPath");
  requirePositiveInt(config.encoder.embedDim, "encoder.embedDim");
  requirePositiveInt(config.simulation.imageSize, "simulation.imageSize");
  requirePositiveInt(config.simulation.latentSize, "simulation.latentSize");
  if (config.simulation.imageSize % config.simulation.latentSize !== 0) {
    throw new TypeError("simulation.imageSize must be a multiple of simulation.latentSize");
  }
  return config;
}

export function loadConfig(path: string): BridgeConfig {
  const text = readFileSync(path, "utf-8");
  return configFromDocument(JSON.parse(text));
}
