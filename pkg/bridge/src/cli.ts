#!/usr/bin/env node
/**
 * Command-line entry points.
 *
 *   serve     start the protocol server (prints the bound address first)
 *   finetune  train encoder weights on synthetic paired scenes and save them
 */

import { existsSync, mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { dirname } from "node:path";
import { defaultConfig, loadConfig, type BridgeConfig } from "./config.js";
import { ContrastEncoder, type EncoderWeights } from "./encoder.js";
import {
  DEFAULT_FINETUNE,
  finetune,
  pretrainContent,
  rankPairs,
  splitScenes,
} from "./finetune.js";
import { SimulatedPipeline } from "./pipeline.js";
import { BridgeHost, startServer } from "./server.js";

export const ENCODER_INIT_SEED = 2026;
export const PRETRAIN_SEED = 404;
export const PRETRAIN_PAIRS = 120;

interface ParsedArgs {
  command: string;
  flags: Map<string, string>;
}

function parseArgs(argv: string[]): ParsedArgs {
  const command = argv[0] ?? "";
  const flags = new Map<string, string>();
  for (let i = 1; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new RangeError(`expected --flag value pairs, got ${JSON.stringify(argv.slice(1))}`);
    }
    flags.set(key.slice(2), argv[i + 1]);
  }
  return { command, flags };
}

function intFlag(flags: Map<string, string>, name: string, fallback: number): number {
  const raw = flags.get(name);
  if (raw === undefined) {
    return fallback;
  }
  const value = Number(raw);
  if (!Number.isInteger(value)) {
    throw new RangeError(`--${name} must be an integer, got ${raw}`);
  }
  return value;
}

function floatFlag(flags: Map<string, string>, name: string, fallback: number): number {
  const raw = flags.get(name);
  if (raw === undefined) {
    return fallback;
  }
  const value = Number(raw);
  if (!Number.isFinite(value)) {
    throw new RangeError(`--${name} must be a number, got ${raw}`);
  }
  return value;
}

function onOffFlag(flags: Map<string, string>, name: string, fallback: boolean): boolean {
  const raw = flags.get(name);
  if (raw === undefined) {
    return fallback;
  }
  if (raw === "on") {
    return true;
  }
  if (raw === "off") {
    return false;
  }
  throw new RangeError(`--${name} must be "on" or "off", got ${raw}`);
}

function resolveConfig(flags: Map<string, string>): BridgeConfig {
  const path = flags.get("config");
  return path === undefined ? defaultConfig() : loadConfig(path);
}

/** The modality-blind encoder the bridge serves before any finetuning. */
export function baselineEncoder(pipeline: SimulatedPipeline, embedDim: number): ContrastEncoder {
  const seeded = ContrastEncoder.seeded(pipeline.featureDim, embedDim, ENCODER_INIT_SEED);
  const split = splitScenes(PRETRAIN_PAIRS, 0, pipeline.imageSize, PRETRAIN_SEED);
  return pretrainContent(seeded, split.training);
}

export interface LoadedEncoder {
  encoder: ContrastEncoder;
  /** Set when configured weights exist but cannot be loaded; the host refuses requests. */
  fault?: string;
}

export function loadEncoder(config: BridgeConfig, pipeline: SimulatedPipeline): LoadedEncoder {
  const path = config.encoder.weightsPath;
  if (!existsSync(path)) {
    return { encoder: baselineEncoder(pipeline, config.encoder.embedDim) };
  }
  try {
    const weights = JSON.parse(readFileSync(path, "utf-8")) as EncoderWeights;
    return { encoder: new ContrastEncoder(weights) };
  } catch (err) {
    const detail = err instanceof Error ? err.message : String(err);
    return {
      encoder: baselineEncoder(pipeline, config.encoder.embedDim),
      fault: `encoder weights at ${path} failed to load: ${detail}`,
    };
  }
}

async function runServe(flags: Map<string, string>): Promise<number> {
  const config = resolveConfig(flags);
  const address = flags.get("addr") ?? "127.0.0.1:0";
  const pipeline = new SimulatedPipeline(config.simulation);
  const loaded = loadEncoder(config, pipeline);
  if (loaded.fault !== undefined) {
    process.stderr.write(`warning: ${loaded.fault}\n`);
  }
  const host = new BridgeHost(config, pipeline, loaded.encoder, loaded.fault);
  const running = await startServer(host, address);
  // the bound address goes out first so callers can connect immediately
  process.stdout.write(`${running.address}\n`);
  await new Promise<void>((resolve) => {
    const stop = () => {
      void running.close().then(resolve, resolve);
    };
    process.once("SIGINT", stop);
    process.once("SIGTERM", stop);
  });
  return 0;
}

function runFinetune(flags: Map<string, string>): number {
  const config = resolveConfig(flags);
  const out = flags.get("out") ?? config.encoder.weightsPath;
  const trainPairs = intFlag(flags, "pairs", 120);
  const evalPairs = intFlag(flags, "eval-pairs", 120);
  if (trainPairs < 1) {
    throw new RangeError(`--pairs must be at least 1, got ${trainPairs}`);
  }
  const seed = intFlag(flags, "seed", DEFAULT_FINETUNE.seed);
  const options = {
    epochs: intFlag(flags, "epochs", DEFAULT_FINETUNE.epochs),
    learningRate: floatFlag(flags, "lr", DEFAULT_FINETUNE.learningRate),
    seed,
    grayscaleAugmentation: onOffFlag(flags, "grayscale-augmentation", true),
  };
  if (!options.grayscaleAugmentation) {
    process.stderr.write(
      "warning: grayscale augmentation is off; training uses infrared renders only " +
        "and deviates from the paired-caption recipe\n",
    );
  }

  const pipeline = new SimulatedPipeline(config.simulation);
  const split = splitScenes(trainPairs, evalPairs, pipeline.imageSize, seed);
  const seeded = ContrastEncoder.seeded(
    pipeline.featureDim,
    config.encoder.embedDim,
    ENCODER_INIT_SEED,
  );
  const baseline = pretrainContent(seeded, split.training, options);
  const before = rankPairs(baseline, split.heldOut);
  const trained = finetune(baseline, split.training, options);
  const after = rankPairs(trained, split.heldOut);

  const directory = dirname(out);
  if (directory !== "." && directory !== "") {
    mkdirSync(directory, { recursive: true });
  }
  writeFileSync(out, JSON.stringify(trained.weights()));
  process.stdout.write(
    `trained on ${split.training.length} images, held-out pairs ${evalPairs}\n` +
      `baseline ranks infrared first in ${before.correct}/${before.pairs}\n` +
      `finetuned ranks infrared first in ${after.correct}/${after.pairs}\n` +
      `weights written to ${out}\n`,
  );
  return 0;
}

export async function main(argv: string[]): Promise<number> {
  const { command, flags } = parseArgs(argv);
  if (command === "serve") {
    return runServe(flags);
  }
  if (command === "finetune") {
    return runFinetune(flags);
  }
  process.stderr.write("usage: noisesearch-bridge <serve|finetune> [--flag value ...]\n");
  return 2;
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("cli.js") || entry.endsWith("cli.ts")) {
  main(process.argv.slice(2)).then(
    (code) => {
      process.exitCode = code;
    },
    (err) => {
      process.stderr.write(`${err instanceof Error ? err.message : String(err)}\n`);
      process.exitCode = 1;
    },
  );
}
