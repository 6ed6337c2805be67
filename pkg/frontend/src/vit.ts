/** Minimal vision transformer for dense feature extraction.
 *
 * Pre-norm encoder blocks over a CLS token plus one token per image patch
 * (patches may overlap when stride < patch size). The exporter reads two
 * signals out of the forward pass: the attention *keys* at a chosen
 * intermediate layer, which serve as dense per-patch descriptors, and the
 * CLS-query attention of the final layer, averaged over heads, which serves
 * as per-patch saliency.
 *
 * Weights come from a seeded deterministic initialization ("seeded:<n>"
 * model identifiers): pre-trained checkpoints are not bundled, and every
 * property the pipeline relies on (determinism, distinctive per-patch keys,
 * normalized saliency) is weight-agnostic.
 */

import { Image } from "./image";
import { Rng, gaussianMatrix, seededRng } from "./prng";

export interface VitConfig {
  dim: number;
  heads: number;
  depth: number;
  patchSize: number;
  stride: number;
  seed: number;
}

interface Block {
  wq: Float64Array;
  wk: Float64Array;
  wv: Float64Array;
  wo: Float64Array;
  w1: Float64Array;
  w2: Float64Array;
}

export interface VitModel {
  config: VitConfig;
  channels: number;
  embed: Float64Array; // patchDim x dim
  cls: Float64Array; // dim
  blocks: Block[];
}

export function gridRows(extent: number, patchSize: number, stride: number): number {
  return 1 + Math.floor((extent - patchSize) / stride);
}

export function buildModel(config: VitConfig, channels: number): VitModel {
  if (config.dim % config.heads !== 0) throw new Error("dim must divide evenly into heads");
  if (config.stride > config.patchSize) throw new Error("stride must not exceed patch size");
  const rng = seededRng(config.seed);
  const patchDim = config.patchSize * config.patchSize * channels;
  const embed = gaussianMatrix(rng, patchDim, config.dim);
  const cls = gaussianMatrix(rng, 1, config.dim);
  const blocks: Block[] = [];
  for (let l = 0; l < config.depth; l++) {
    blocks.push({
      wq: gaussianMatrix(rng, config.dim, config.dim),
      wk: gaussianMatrix(rng, config.dim, config.dim),
      wv: gaussianMatrix(rng, config.dim, config.dim),
      wo: gaussianMatrix(rng, config.dim, config.dim),
      w1: gaussianMatrix(rng, config.dim, config.dim * 2),
      w2: gaussianMatrix(rng, config.dim * 2, config.dim),
    });
  }
  return { config, channels, embed, cls, blocks };
}

/** out[n x cols] = a[n x inner] @ b[inner x cols] */
function matmul(a: Float64Array, n: number, inner: number, b: Float64Array, cols: number): Float64Array {
  const out = new Float64Array(n * cols);
  for (let i = 0; i < n; i++) {
    const arow = i * inner;
    const orow = i * cols;
    for (let k = 0; k < inner; k++) {
      const av = a[arow + k];
      if (av === 0) continue;
      const brow = k * cols;
      for (let j = 0; j < cols; j++) out[orow + j] += av * b[brow + j];
    }
  }
  return out;
}

function layerNorm(x: Float64Array, n: number, dim: number): Float64Array {
  const out = new Float64Array(n * dim);
  for (let i = 0; i < n; i++) {
    const row = i * dim;
    let mean = 0;
    for (let j = 0; j < dim; j++) mean += x[row + j];
    mean /= dim;
    let varsum = 0;
    for (let j = 0; j < dim; j++) {
      const d = x[row + j] - mean;
      varsum += d * d;
    }
    const inv = 1.0 / Math.sqrt(varsum / dim + 1e-6);
    for (let j = 0; j < dim; j++) out[row + j] = (x[row + j] - mean) * inv;
  }
  return out;
}

function gelu(v: number): number {
  return 0.5 * v * (1.0 + Math.tanh(0.7978845608028654 * (v + 0.044715 * v * v * v)));
}

/** Sinusoidal 2D positional encoding: works for any grid size without interpolation. */
function positional(rows: number, cols: number, dim: number): Float64Array {
  const out = new Float64Array(rows * cols * dim);
  const half = Math.floor(dim / 2);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      const base = (r * cols + c) * dim;
      for (let j = 0; j < half; j++) {
        const freq = 1.0 / Math.pow(10000, (2 * Math.floor(j / 2)) / half);
        out[base + j] = j % 2 === 0 ? Math.sin(r * freq) : Math.cos(r * freq);
      }
      for (let j = half; j < dim; j++) {
        const jj = j - half;
        const freq = 1.0 / Math.pow(10000, (2 * Math.floor(jj / 2)) / (dim - half));
        out[base + j] = jj % 2 === 0 ? Math.sin(c * freq) : Math.cos(c * freq);
      }
    }
  }
  return out;
}

export interface VitFeatures {
  rows: number;
  cols: number;
  /** Keys of the configured intermediate layer, one dim-vector per patch token. */
  keys: Float64Array;
  /** Last-layer CLS attention per patch token, averaged over heads. */
  clsAttention: Float64Array;
}

/** Multi-head self-attention; returns the block output and the CLS attention row. */
function attention(
  xn: Float64Array,
  n: number,
  block: Block,
  dim: number,
  heads: number
): { out: Float64Array; clsRow: Float64Array } {
  const dHead = dim / heads;
  const scale = 1.0 / Math.sqrt(dHead);
  const q = matmul(xn, n, dim, block.wq, dim);
  const k = matmul(xn, n, dim, block.wk, dim);
  const v = matmul(xn, n, dim, block.wv, dim);
  const ctx = new Float64Array(n * dim);
  const clsRow = new Float64Array(n);
  const scores = new Float64Array(n);
  for (let h = 0; h < heads; h++) {
    const off = h * dHead;
    for (let i = 0; i < n; i++) {
      const qrow = i * dim + off;
      let maxScore = -Infinity;
      for (let j = 0; j < n; j++) {
        const krow = j * dim + off;
        let s = 0;
        for (let d = 0; d < dHead; d++) s += q[qrow + d] * k[krow + d];
        s *= scale;
        scores[j] = s;
        if (s > maxScore) maxScore = s;
      }
      let z = 0;
      for (let j = 0; j < n; j++) {
        scores[j] = Math.exp(scores[j] - maxScore);
        z += scores[j];
      }
      const crow = i * dim + off;
      for (let j = 0; j < n; j++) {
        const w = scores[j] / z;
        if (i === 0) clsRow[j] += w / heads;
        const vrow = j * dim + off;
        for (let d = 0; d < dHead; d++) ctx[crow + d] += w * v[vrow + d];
      }
    }
  }
  return { out: matmul(ctx, n, dim, block.wo, dim), clsRow };
}

export function extractFeatures(model: VitModel, image: Image, keyLayer: number): VitFeatures {
  const { dim, heads, depth, patchSize, stride } = model.config;
  if (image.channels !== model.channels) {
    throw new Error(`model expects ${model.channels}-channel images, got ${image.channels}`);
  }
  if (!(keyLayer >= 0 && keyLayer < depth)) {
    throw new Error(`key layer ${keyLayer} outside model depth ${depth}`);
  }
  const rows = gridRows(image.height, patchSize, stride);
  const cols = gridRows(image.width, patchSize, stride);
  if (rows < 1 || cols < 1) throw new Error("image smaller than one patch");
  const nTokens = rows * cols;
  const n = nTokens + 1; // leading CLS token
  const patchDim = patchSize * patchSize * image.channels;

  // tokenize: flattened patch pixels, zero-centered
  const patches = new Float64Array(nTokens * patchDim);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      const t = r * cols + c;
      let w = 0;
      for (let py = 0; py < patchSize; py++) {
        const y = r * stride + py;
        for (let px = 0; px < patchSize; px++) {
          const x = c * stride + px;
          const src = (y * image.width + x) * image.channels;
          for (let ch = 0; ch < image.channels; ch++) {
            patches[t * patchDim + w++] = image.data[src + ch] - 0.5;
          }
        }
      }
    }
  }

  const embedded = matmul(patches, nTokens, patchDim, model.embed, dim);
  const pos = positional(rows, cols, dim);
  const x = new Float64Array(n * dim);
  x.set(model.cls, 0);
  for (let t = 0; t < nTokens; t++) {
    for (let j = 0; j < dim; j++) x[(t + 1) * dim + j] = embedded[t * dim + j] + pos[t * dim + j];
  }

  let keys: Float64Array | null = null;
  let clsAttention: Float64Array | null = null;
  for (let l = 0; l < depth; l++) {
    const xn = layerNorm(x, n, dim);
    if (l === keyLayer) {
      keys = matmul(xn, n, dim, model.blocks[l].wk, dim).slice(dim); // drop CLS
    }
    const { out, clsRow } = attention(xn, n, model.blocks[l], dim, heads);
    for (let i = 0; i < n * dim; i++) x[i] += out[i];
    const xn2 = layerNorm(x, n, dim);
    const hidden = matmul(xn2, n, dim, model.blocks[l].w1, dim * 2);
    for (let i = 0; i < hidden.length; i++) hidden[i] = gelu(hidden[i]);
    const mlp = matmul(hidden, n, dim * 2, model.blocks[l].w2, dim);
    for (let i = 0; i < n * dim; i++) x[i] += mlp[i];
    if (l === depth - 1) clsAttention = clsRow.slice(1); // drop CLS self-attention
  }

  if (keys === null || clsAttention === null) {
    throw new Error("feature capture failed: key layer never executed");
  }
  return { rows, cols, keys, clsAttention };
}
