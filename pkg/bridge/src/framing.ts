/**
 * Wire codec: 4-byte big-endian length header followed by a UTF-8 JSON
 * object. Frames above MAX_FRAME_BYTES are refused in both directions, and
 * malformed payloads are reported with the byte offset of the first error so
 * peers can log actionable diagnostics.
 */

export const PROTOCOL_VERSION = 1;
export const MAX_FRAME_BYTES = 64 * 1024 * 1024;

export class ProtocolViolation extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ProtocolViolation";
  }
}

const WHITESPACE = new Set([" ", "\t", "\n", "\r"]);

class JsonScanError extends Error {
  constructor(public readonly index: number) {
    super(`invalid JSON at index ${index}`);
  }
}

/**
 * Minimal JSON validator used only to locate the first offending character
 * once JSON.parse has already rejected the text; V8 error messages do not
 * reliably carry a position.
 */
class JsonScanner {
  private pos = 0;

  constructor(private readonly text: string) {}

  scan(): void {
    this.skipWhitespace();
    this.value();
    this.skipWhitespace();
    if (this.pos !== this.text.length) {
      throw new JsonScanError(this.pos);
    }
  }

  private fail(): never {
    throw new JsonScanError(this.pos);
  }

  private peek(): string {
    if (this.pos >= this.text.length) {
      this.fail();
    }
    return this.text[this.pos];
  }

  private skipWhitespace(): void {
    while (this.pos < this.text.length && WHITESPACE.has(this.text[this.pos])) {
      this.pos += 1;
    }
  }

  private value(): void {
    const ch = this.peek();
    if (ch === "{") {
      this.object();
    } else if (ch === "[") {
      this.array();
    } else if (ch === "\"") {
      this.string();
    } else if (ch === "-" || (ch >= "0" && ch <= "9")) {
      this.number();
    } else if (ch === "t") {
      this.literal("true");
    } else if (ch === "f") {
      this.literal("false");
    } else if (ch === "n") {
      this.literal("null");
    } else {
      this.fail();
    }
  }

  private object(): void {
    this.pos += 1;
    this.skipWhitespace();
    if (this.peek() === "}") {
      this.pos += 1;
      return;
    }
    for (;;) {
      this.skipWhitespace();
      if (this.peek() !== "\"") {
        this.fail();
      }
      this.string();
      this.skipWhitespace();
      if (this.peek() !== ":") {
        this.fail();
      }
      this.pos += 1;
      this.skipWhitespace();
      this.value();
      this.skipWhitespace();
      const ch = this.peek();
      if (ch === ",") {
        this.pos += 1;
      } else if (ch === "}") {
        this.pos += 1;
        return;
      } else {
        this.fail();
      }
    }
  }

  private array(): void {
    this.pos += 1;
    this.skipWhitespace();
    if (this.peek() === "]") {
      this.pos += 1;
      return;
    }
    for (;;) {
      this.skipWhitespace();
      this.value();
      this.skipWhitespace();
      const ch = this.peek();
      if (ch === ",") {
        this.pos += 1;
      } else if (ch === "]") {
        this.pos += 1;
        return;
      } else {
        this.fail();
      }
    }
  }

  private string(): void {
    this.pos += 1;
    for (;;) {
      const ch = this.peek();
      if (ch === "\"") {
        this.pos += 1;
        return;
      }
      if (ch === "\\") {
        this.pos += 1;
        const escape = this.peek();
        if ("\"\\/bfnrt".includes(escape)) {
          this.pos += 1;
        } else if (escape === "u") {
          this.pos += 1;
          for (let i = 0; i < 4; i += 1) {
            if (!/[0-9a-fA-F]/.test(this.peek())) {
              this.fail();
            }
            this.pos += 1;
          }
        } else {
          this.fail();
        }
      } else if (ch.charCodeAt(0) < 0x20) {
        this.fail();
      } else {
        this.pos += 1;
      }
    }
  }

  private number(): void {
    if (this.peek() === "-") {
      this.pos += 1;
    }
    if (this.peek() === "0") {
      this.pos += 1;
    } else if (this.peek() >= "1" && this.peek() <= "9") {
      while (this.pos < this.text.length && /[0-9]/.test(this.text[this.pos])) {
        this.pos += 1;
      }
    } else {
      this.fail();
    }
    if (this.pos < this.text.length && this.text[this.pos] === ".") {
      this.pos += 1;
      if (!/[0-9]/.test(this.peek())) {
        this.fail();
      }
      while (this.pos < this.text.length && /[0-9]/.test(this.text[this.pos])) {
        this.pos += 1;
      }
    }
    if (this.pos < this.text.length && (this.text[this.pos] === "e" || this.text[this.pos] === "E")) {
      this.pos += 1;
      if (this.pos < this.text.length && (this.text[this.pos] === "+" || this.text[this.pos] === "-")) {
        this.pos += 1;
      }
      if (!/[0-9]/.test(this.peek())) {
        this.fail();
      }
      while (this.pos < this.text.length && /[0-9]/.test(this.text[this.pos])) {
        this.pos += 1;
      }
    }
  }

  private literal(word: string): void {
    if (!this.text.startsWith(word, this.pos)) {
      this.fail();
    }
    this.pos += word.length;
  }
}

function jsonErrorByteOffset(text: string): number {
  try {
    new JsonScanner(text).scan();
  } catch (err) {
    if (err instanceof JsonScanError) {
      return Buffer.byteLength(text.slice(0, err.index), "utf-8");
    }
    throw err;
  }
  return 0;
}

/** Serialize a message into a length-prefixed frame. Non-finite numbers are refused. */
export function encodeFrame(message: unknown): Buffer {
  const text = JSON.stringify(message, (_key, value) => {
    if (typeof value === "number" && !Number.isFinite(value)) {
      throw new TypeError("cannot encode a non-finite number in a protocol frame");
    }
    return value;
  });
  if (text === undefined) {
    throw new TypeError("message is not JSON-serializable");
  }
  const payload = Buffer.from(text, "utf-8");
  if (payload.length > MAX_FRAME_BYTES) {
    throw new ProtocolViolation(
      `frame of ${payload.length} bytes exceeds cap ${MAX_FRAME_BYTES}`,
    );
  }
  const header = Buffer.alloc(4);
  header.writeUInt32BE(payload.length, 0);
  return Buffer.concat([header, payload]);
}

/** Parse one frame payload into a message object with a string "type" field. */
export function parsePayload(payload: Buffer): Record<string, unknown> {
  const text = payload.toString("utf-8");
  let message: unknown;
  try {
    message = JSON.parse(text);
  } catch (err) {
    const detail = err instanceof Error ? err.message : String(err);
    throw new ProtocolViolation(
      `malformed JSON at byte ${jsonErrorByteOffset(text)}: ${detail}`,
    );
  }
  if (typeof message !== "object" || message === null || Array.isArray(message)) {
    throw new ProtocolViolation("frame payload must be a JSON object");
  }
  const record = message as Record<string, unknown>;
  if (typeof record.type !== "string") {
    throw new ProtocolViolation("frame payload is missing a string 'type' field");
  }
  return record;
}

/** Incremental frame reassembler for a byte stream. */
export class FrameParser {
  private buffer: Buffer = Buffer.alloc(0);

  /** Absorb a chunk and return every completed frame payload. */
  push(chunk: Buffer): Buffer[] {
    this.buffer = this.buffer.length === 0 ? chunk : Buffer.concat([this.buffer, chunk]);
    const payloads: Buffer[] = [];
    for (;;) {
      if (this.buffer.length < 4) {
        break;
      }
      const length = this.buffer.readUInt32BE(0);
      if (length > MAX_FRAME_BYTES) {
        throw new ProtocolViolation(
          `frame of ${length} bytes exceeds cap ${MAX_FRAME_BYTES}`,
        );
      }
      if (this.buffer.length < 4 + length) {
        break;
      }
      payloads.push(this.buffer.subarray(4, 4 + length));
      this.buffer = this.buffer.subarray(4 + length);
    }
    return payloads;
  }

  get pendingBytes(): number {
    return this.buffer.length;
  }
}

export interface ImagePayload {
  image: string;
  height: number;
  width: number;
}

/** Pack a row-major float32 image as base64 for transport. */
export function encodeImage(values: Float32Array, height: number, width: number): ImagePayload {
  if (values.length !== height * width) {
    throw new RangeError(
      `image carries ${values.length} values, expected ${height}x${width}`,
    );
  }
  const bytes = Buffer.from(values.buffer, values.byteOffset, values.byteLength);
  return { image: bytes.toString("base64"), height, width };
}

/** Unpack a transported image back into float64 values. */
export function decodeImage(payload: ImagePayload): { values: Float64Array; height: number; width: number } {
  const { image, height, width } = payload;
  if (typeof image !== "string" || !Number.isInteger(height) || !Number.isInteger(width) || height < 1 || width < 1) {
    throw new ProtocolViolation("image payload requires base64 data and positive height/width");
  }
  const raw = Buffer.from(image, "base64");
  const expected = height * width * 4;
  if (raw.length !== expected) {
    throw new ProtocolViolation(
      `image payload carries ${raw.length} bytes, expected ${expected}`,
    );
  }
  // copy before viewing: pooled buffers are not 4-byte aligned in general
  const aligned = new Uint8Array(raw).slice();
  const packed = new Float32Array(aligned.buffer, 0, height * width);
  return { values: Float64Array.from(packed), height, width };
}
