/**
 * TCP host speaking protocol version 1.
 *
 * Frames are handled strictly in arrival order per connection. Application
 * failures travel back as error frames and leave the connection usable;
 * framing violations (oversized or malformed frames) get one error frame and
 * then the connection is closed.
 */

import net from "node:net";
import type { BridgeConfig } from "./config.js";
import { ContrastEncoder } from "./encoder.js";
import {
  FrameParser,
  PROTOCOL_VERSION,
  ProtocolViolation,
  decodeImage,
  encodeFrame,
  encodeImage,
  parsePayload,
  type ImagePayload,
} from "./framing.js";
import { SimulatedPipeline } from "./pipeline.js";

export interface Descriptor {
  name: string;
  modality: "image_gray";
  latent_dim: number;
  embed_dim: number;
  max_steps: number;
  extensions: Record<string, unknown>;
}

type Message = Record<string, unknown>;

function errorFrame(message: string): Message {
  return { type: "error", message };
}

function flattenNumbers(data: unknown, label: string): number[] {
  if (!Array.isArray(data)) {
    throw new ProtocolViolation(`${label} must be an array of numbers`);
  }
  const flat: number[] = [];
  for (const entry of data) {
    if (Array.isArray(entry)) {
      for (const inner of entry) {
        flat.push(inner as number);
      }
    } else {
      flat.push(entry as number);
    }
  }
  for (const value of flat) {
    if (typeof value !== "number" || !Number.isFinite(value)) {
      throw new ProtocolViolation(`${label} contains a non-finite or non-numeric entry`);
    }
  }
  return flat;
}

export class BridgeHost {
  readonly descriptor: Descriptor;

  constructor(
    config: BridgeConfig,
    private readonly pipeline: SimulatedPipeline,
    private readonly encoder: ContrastEncoder,
    private readonly fault?: string,
  ) {
    this.descriptor = {
      name: config.backendName,
      modality: "image_gray",
      latent_dim: pipeline.latentDim,
      embed_dim: encoder.embedDim,
      max_steps: config.maxSteps,
      extensions: { max_concurrency: 1 },
    };
  }

  /** Map one request message to one response message; never throws. */
  handle(message: Message): Message {
    try {
      if (this.fault !== undefined) {
        return errorFrame(`ModelLoadError: ${this.fault}`);
      }
      const mtype = message.type;
      if (mtype === "hello") {
        if (message.version !== PROTOCOL_VERSION) {
          return errorFrame(
            `version mismatch: server speaks ${PROTOCOL_VERSION}, client sent ${JSON.stringify(message.version)}`,
          );
        }
        return { type: "welcome", version: PROTOCOL_VERSION, descriptor: this.descriptor };
      }
      if (mtype === "denoise") {
        return this.handleDenoise(message);
      }
      if (mtype === "embed") {
        return this.handleEmbed(message);
      }
      return errorFrame(`unknown message type ${JSON.stringify(mtype)}`);
    } catch (err) {
      const detail = err instanceof Error ? `${err.name}: ${err.message}` : String(err);
      return errorFrame(detail);
    }
  }

  private handleDenoise(message: Message): Message {
    const latent = flattenNumbers(message.latent, "latent");
    if (latent.length !== this.descriptor.latent_dim) {
      return errorFrame(
        `latent has shape (${latent.length},), backend expects (${this.descriptor.latent_dim},)`,
      );
    }
    const steps = message.steps;
    if (typeof steps !== "number" || !Number.isInteger(steps) || steps < 1 || steps > this.descriptor.max_steps) {
      return errorFrame(`steps ${JSON.stringify(steps)} outside [1, ${this.descriptor.max_steps}]`);
    }
    const prompt = typeof message.prompt === "string" ? message.prompt : "";
    const image = this.pipeline.render(latent, steps, prompt);
    const payload = encodeImage(image, this.pipeline.imageSize, this.pipeline.imageSize);
    return { type: "sample", ...payload };
  }

  private handleEmbed(message: Message): Message {
    const kind = message.kind;
    const data = message.data;
    let values: Float64Array;
    if (kind === "text") {
      values = this.encoder.embedText(String(data));
    } else if (kind === "image") {
      if (typeof data !== "object" || data === null) {
        return errorFrame("embed image payload needs values or image");
      }
      const record = data as Record<string, unknown>;
      let features: ArrayLike<number>;
      if ("values" in record) {
        features = flattenNumbers(record.values, "values");
      } else if ("image" in record) {
        features = decodeImage(record as unknown as ImagePayload).values;
      } else {
        return errorFrame("embed image payload needs values or image");
      }
      values = this.encoder.embedImage(features);
    } else {
      return errorFrame(`unknown embed kind ${JSON.stringify(kind)}`);
    }
    return { type: "embedding", values: Array.from(values) };
  }
}

export interface RunningServer {
  /** host:port actually bound, with any wildcard port resolved. */
  address: string;
  close(): Promise<void>;
}

export function parseAddress(address: string): { host: string; port: number } {
  const split = address.lastIndexOf(":");
  if (split <= 0) {
    throw new RangeError(`address must look like host:port, got ${JSON.stringify(address)}`);
  }
  const host = address.slice(0, split);
  const port = Number(address.slice(split + 1));
  if (!Number.isInteger(port) || port < 0 || port > 65535) {
    throw new RangeError(`port must be an integer in [0, 65535], got ${address.slice(split + 1)}`);
  }
  return { host, port };
}

export function startServer(host: BridgeHost, address: string): Promise<RunningServer> {
  const target = parseAddress(address);
  const server = net.createServer((socket) => {
    const parser = new FrameParser();
    socket.on("data", (chunk) => {
      let payloads: Buffer[];
      try {
        payloads = parser.push(chunk);
      } catch (err) {
        const detail = err instanceof Error ? err.message : String(err);
        socket.end(encodeFrame(errorFrame(detail)));
        return;
      }
      for (const payload of payloads) {
        let message: Message;
        try {
          message = parsePayload(payload);
        } catch (err) {
          const detail = err instanceof Error ? err.message : String(err);
          socket.end(encodeFrame(errorFrame(detail)));
          return;
        }
        socket.write(encodeFrame(host.handle(message)));
      }
    });
    socket.on("error", () => {
      socket.destroy();
    });
  });
  return new Promise((resolve, reject) => {
    server.once("error", reject);
    server.listen(target.port, target.host, () => {
      const bound = server.address() as net.AddressInfo;
      resolve({
        address: `${target.host}:${bound.port}`,
        close: () =>
          new Promise((done, fail) => {
            server.close((err) => (err ? fail(err) : done()));
          }),
      });
    });
  });
}
