/**
 * Deterministic random number generation.
 *
 * All bridge randomness flows through this counter-free splitmix64 stream so
 * that every artifact (simulated renders, encoder init, dataset shuffles) is
 * reproducible from a single integer seed, independent of platform.
 */

const MASK64 = (1n << 64n) - 1n;
const GAMMA = 0x9e3779b97f4a7c15n;

function mix(value: bigint): bigint {
  let z = value & MASK64;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
  return z ^ (z >> 31n);
}

/** Fold extra integers into a base seed to get independent substreams. */
export function deriveSeed(base: number, ...parts: number[]): number {
  let state = mix(BigInt(base) & MASK64);
  for (const part of parts) {
    state = mix((state + GAMMA + (BigInt(part) & MASK64)) & MASK64);
  }
  // keep the result inside the safe-integer range so it survives JSON
  return Number(state & ((1n << 53n) - 1n));
}

export class DeterministicRng {
  private state: bigint;
  private spare: number | null = null;

  constructor(seed: number) {
    if (!Number.isSafeInteger(seed) || seed < 0) {
      throw new RangeError(`seed must be a non-negative safe integer, got ${seed}`);
    }
    this.state = BigInt(seed) & MASK64;
  }

  nextUint64(): bigint {
    this.state = (this.state + GAMMA) & MASK64;
    return mix(this.state);
  }

  /** Uniform float in [0, 1) with 53 bits of precision. */
  nextFloat(): number {
    return Number(this.nextUint64() >> 11n) / 2 ** 53;
  }

  /** Uniform float in [low, high). */
  nextUniform(low: number, high: number): number {
    return low + (high - low) * this.nextFloat();
  }

  /** Integer in [0, bound) by rejection-free scaling; bound <= 2^32. */
  nextInt(bound: number): number {
    if (!Number.isInteger(bound) || bound <= 0 || bound > 2 ** 32) {
      throw new RangeError(`bound must be an integer in [1, 2^32], got ${bound}`);
    }
    return Number((this.nextUint64() * BigInt(bound)) >> 64n);
  }

  /** Standard normal via Box-Muller; the second draw is cached. */
  nextNormal(): number {
    if (this.spare !== null) {
      const value = this.spare;
      this.spare = null;
      return value;
    }
    // shift into (0, 1] so the log never sees zero
    const u1 = (Number(this.nextUint64() >> 11n) + 1) / 2 ** 53;
    const u2 = this.nextFloat();
    const radius = Math.sqrt(-2 * Math.log(u1));
    const angle = 2 * Math.PI * u2;
    this.spare = radius * Math.sin(angle);
    return radius * Math.cos(angle);
  }

  /** Fill a fresh array with iid standard normals. */
  normals(count: number): Float64Array {
    const out = new Float64Array(count);
    for (let i = 0; i < count; i += 1) {
      out[i] = this.nextNormal();
    }
    return out;
  }
}
