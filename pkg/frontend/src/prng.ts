/** Deterministic PRNG utilities for seeded weight initialization.
 *
 * sfc32 gives a fast, well-mixed 32-bit stream from a 4-word state; the
 * Box-Muller transform turns it into Gaussians. Everything downstream of a
 * seed is a pure function of it, so identical configs rebuild identical
 * models on any platform.
 */

export type Rng = () => number;

export function sfc32(a: number, b: number, c: number, d: number): Rng {
  return function () {
    a |= 0;
    b |= 0;
    c |= 0;
    d |= 0;
    const t = (((a + b) | 0) + d) | 0;
    d = (d + 1) | 0;
    a = b ^ (b >>> 9);
    b = (c + (c << 3)) | 0;
    c = (c << 21) | (c >>> 11);
    c = (c + t) | 0;
    return (t >>> 0) / 4294967296;
  };
}

export function seededRng(seed: number): Rng {
  // splitmix-style expansion of one integer seed into the sfc32 state
  let s = seed >>> 0;
  const next = () => {
    s = (s + 0x9e3779b9) | 0;
    let z = s >>> 0;
    z = Math.imul(z ^ (z >>> 16), 0x21f0aaad);
    z = Math.imul(z ^ (z >>> 15), 0x735a2d97);
    return (z ^ (z >>> 15)) >>> 0;
  };
  const rng = sfc32(next(), next(), next(), next());
  for (let i = 0; i < 12; i++) rng(); // warm up the state
  return rng;
}

export function gaussian(rng: Rng): number {
  let u = 0;
  let v = 0;
  while (u === 0) u = rng();
  while (v === 0) v = rng();
  return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v);
}

/** Gaussian matrix (rows x cols) scaled by 1/sqrt(cols), row-major. */
export function gaussianMatrix(rng: Rng, rows: number, cols: number): Float64Array {
  const out = new Float64Array(rows * cols);
  const scale = 1.0 / Math.sqrt(cols);
  for (let i = 0; i < out.length; i++) out[i] = gaussian(rng) * scale;
  return out;
}
