/** Minimal frame-level TCP client used by the server tests. */

import net from "node:net";
import { FrameParser, encodeFrame, parsePayload } from "../src/framing.js";

export class TestClient {
  private readonly parser = new FrameParser();
  private readonly queue: Buffer[] = [];
  private readonly waiters: Array<{
    resolve: (payload: Buffer) => void;
    reject: (err: Error) => void;
  }> = [];
  private closed = false;

  private constructor(private readonly socket: net.Socket) {
    socket.on("data", (chunk) => {
      for (const payload of this.parser.push(chunk)) {
        const waiter = this.waiters.shift();
        if (waiter) {
          waiter.resolve(payload);
        } else {
          this.queue.push(payload);
        }
      }
    });
    socket.on("close", () => {
      this.closed = true;
      for (const waiter of this.waiters.splice(0)) {
        waiter.reject(new Error("connection closed"));
      }
    });
    socket.on("error", () => {
      socket.destroy();
    });
  }

  static connect(address: string): Promise<TestClient> {
    const split = address.lastIndexOf(":");
    const host = address.slice(0, split);
    const port = Number(address.slice(split + 1));
    return new Promise((resolve, reject) => {
      const socket = net.connect(port, host, () => resolve(new TestClient(socket)));
      socket.once("error", reject);
    });
  }

  send(message: unknown): void {
    this.socket.write(encodeFrame(message));
  }

  sendRaw(bytes: Buffer): void {
    this.socket.write(bytes);
  }

  nextPayload(): Promise<Buffer> {
    const ready = this.queue.shift();
    if (ready !== undefined) {
      return Promise.resolve(ready);
    }
    if (this.closed) {
      return Promise.reject(new Error("connection closed"));
    }
    return new Promise((resolve, reject) => {
      this.waiters.push({ resolve, reject });
    });
  }

  async next(): Promise<Record<string, unknown>> {
    return parsePayload(await this.nextPayload());
  }

  async roundtrip(message: unknown): Promise<Record<string, unknown>> {
    this.send(message);
    return this.next();
  }

  /** Resolves once the server has closed the connection. */
  waitClose(): Promise<void> {
    if (this.closed) {
      return Promise.resolve();
    }
    return new Promise((resolve) => {
      this.socket.once("close", () => resolve());
    });
  }

  close(): void {
    this.socket.destroy();
  }
}
