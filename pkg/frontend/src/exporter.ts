/** Grid and depth export pipeline.
 *
 * exportGrid: image -> ViT forward pass -> intermediate-layer keys ->
 * log-binned context aggregation -> unit normalization -> DGRD file, with
 * min-max normalized last-layer CLS attention as the saliency channel.
 *
 * exportDepth: 16-bit millimeter PGM -> float32 meters DPTH file, zero kept
 * as the missing-value sentinel.
 *
 * Every export writes an adjacent .provenance.txt recording the exact model
 * and binning configuration, since those choices are configuration rather
 * than ground truth.
 */

import { mkdirSync, writeFileSync } from "fs";
import { basename, join } from "path";

import { Image, readNetpbm, readPgm16Raw } from "./image";
import { GridHeader, readGrid, writeDepth, writeGrid } from "./grid";
import { VitModel, buildModel, extractFeatures, gridRows } from "./vit";

export interface ExportConfig {
  /** Weight source; "seeded:<n>" builds the deterministic initialization. */
  model: string;
  dim: number;
  heads: number;
  depth: number;
  /** Intermediate layer whose attention keys become the descriptors. */
  layer: number;
  /** Log-binning ring radii (in grid cells) aggregated around each token. */
  binRadii: number[];
  patchSize: number;
  stride: number;
}

export const DEFAULT_CONFIG: ExportConfig = {
  model: "seeded:42",
  dim: 48,
  heads: 4,
  depth: 3,
  layer: 1,
  binRadii: [1, 2],
  patchSize: 8,
  stride: 8,
};

export function parseConfig(raw: Partial<ExportConfig>): ExportConfig {
  const cfg = { ...DEFAULT_CONFIG, ...raw };
  if (!(cfg.layer >= 0 && cfg.layer < cfg.depth)) {
    throw new Error(`layer ${cfg.layer} outside model depth ${cfg.depth}`);
  }
  if (cfg.stride > cfg.patchSize) throw new Error("stride must not exceed patch size");
  if (cfg.binRadii.some((r) => !(Number.isInteger(r) && r > 0))) {
    throw new Error("bin radii must be positive integers");
  }
  return cfg;
}

export function modelSeed(identifier: string): number {
  const match = /^seeded:(\d+)$/.exec(identifier);
  if (!match) {
    throw new Error(
      `model ${identifier!} is not available; use a "seeded:<n>" deterministic identifier`
    );
  }
  return parseInt(match[1], 10);
}

const RING_OFFSETS: Array<[number, number]> = [
  [-1, -1], [-1, 0], [-1, 1], [0, -1], [0, 1], [1, -1], [1, 0], [1, 1],
];

/** Concatenate each token's key with the mean key of each log-spaced ring. */
export function logBinDescriptors(
  keys: Float64Array,
  rows: number,
  cols: number,
  dim: number,
  radii: number[]
): Float64Array {
  const outDim = dim * (1 + radii.length);
  const out = new Float64Array(rows * cols * outDim);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      const t = r * cols + c;
      const base = t * outDim;
      for (let d = 0; d < dim; d++) out[base + d] = keys[t * dim + d];
      radii.forEach((radius, ring) => {
        const dst = base + dim * (1 + ring);
        for (const [dr, dc] of RING_OFFSETS) {
          // clamp at the image border so every ring has eight contributors
          const rr = Math.min(rows - 1, Math.max(0, r + dr * radius));
          const cc = Math.min(cols - 1, Math.max(0, c + dc * radius));
          const src = (rr * cols + cc) * dim;
          for (let d = 0; d < dim; d++) out[dst + d] += keys[src + d] / RING_OFFSETS.length;
        }
      });
    }
  }
  return out;
}

function unitNormalizeRows(data: Float64Array, n: number, dim: number): Float32Array {
  const out = new Float32Array(n * dim);
  for (let i = 0; i < n; i++) {
    let norm = 0;
    for (let d = 0; d < dim; d++) {
      const v = data[i * dim + d];
      norm += v * v;
    }
    norm = Math.sqrt(norm);
    if (norm === 0) {
      out[i * dim] = 1.0; // degenerate token: fixed unit basis vector
      continue;
    }
    for (let d = 0; d < dim; d++) out[i * dim + d] = data[i * dim + d] / norm;
  }
  return out;
}

function minMaxNormalize(values: Float64Array): Float32Array {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  const out = new Float32Array(values.length);
  const span = hi - lo;
  for (let i = 0; i < values.length; i++) out[i] = span > 0 ? (values[i] - lo) / span : 0.0;
  return out;
}

function provenance(cfg: ExportConfig, source: string, kind: string): string {
  return [
    `kind: ${kind}`,
    `source: ${source}`,
    `model: ${cfg.model}`,
    `dim: ${cfg.dim}`,
    `heads: ${cfg.heads}`,
    `depth: ${cfg.depth}`,
    `key_layer: ${cfg.layer}`,
    `facet: keys`,
    `bin_radii: [${cfg.binRadii.join(", ")}]`,
    `patch_size: ${cfg.patchSize}`,
    `stride: ${cfg.stride}`,
    `descriptor_dim: ${cfg.dim * (1 + cfg.binRadii.length)}`,
    "",
  ].join("\n");
}

export interface ExportResult {
  outputPath: string;
  provenancePath: string;
  rows: number;
  cols: number;
  dim: number;
}

export function exportGrid(imagePath: string, cfg: ExportConfig, outDir: string): ExportResult {
  const image = readNetpbm(imagePath);
  const model: VitModel = buildModel(
    {
      dim: cfg.dim,
      heads: cfg.heads,
      depth: cfg.depth,
      patchSize: cfg.patchSize,
      stride: cfg.stride,
      seed: modelSeed(cfg.model),
    },
    image.channels
  );
  const features = extractFeatures(model, image, cfg.layer);
  const binned = logBinDescriptors(features.keys, features.rows, features.cols, cfg.dim, cfg.binRadii);
  const outDim = cfg.dim * (1 + cfg.binRadii.length);
  const descriptors = unitNormalizeRows(binned, features.rows * features.cols, outDim);
  const saliency = minMaxNormalize(features.clsAttention);

  mkdirSync(outDir, { recursive: true });
  const stem = basename(imagePath).replace(/\.[^.]+$/, "");
  const outputPath = join(outDir, `${stem}.dgrd`);
  const header: GridHeader = {
    rows: features.rows,
    cols: features.cols,
    dim: outDim,
    patchSize: cfg.patchSize,
    stride: cfg.stride,
    imageWidth: image.width,
    imageHeight: image.height,
  };
  writeGrid(outputPath, header, descriptors, saliency);
  const provenancePath = join(outDir, `${stem}.provenance.txt`);
  writeFileSync(provenancePath, provenance(cfg, imagePath, "descriptor-grid"));
  return { outputPath, provenancePath, rows: features.rows, cols: features.cols, dim: outDim };
}

export interface DepthExportResult {
  outputPath: string;
  provenancePath: string;
  width: number;
  height: number;
}

export function exportDepth(
  depthPath: string,
  cfg: ExportConfig,
  outDir: string,
  matchGridPath?: string
): DepthExportResult {
  const { width, height, values } = readPgm16Raw(depthPath);
  if (matchGridPath) {
    const grid = readGrid(matchGridPath);
    if (grid.imageWidth !== width || grid.imageHeight !== height) {
      throw new Error(
        `depth ${width}x${height} does not match grid image ` +
          `${grid.imageWidth}x${grid.imageHeight}`
      );
    }
  }
  const meters = new Float32Array(width * height);
  for (let i = 0; i < values.length; i++) meters[i] = values[i] / 1000.0; // mm -> m; 0 stays missing

  mkdirSync(outDir, { recursive: true });
  const stem = basename(depthPath).replace(/\.[^.]+$/, "");
  const outputPath = join(outDir, `${stem}.dpth`);
  writeDepth(outputPath, width, height, meters);
  const provenancePath = join(outDir, `${stem}.provenance.txt`);
  writeFileSync(provenancePath, provenance(cfg, depthPath, "depth-map"));
  return { outputPath, provenancePath, width, height };
}

export { gridRows };
