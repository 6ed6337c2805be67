#!/usr/bin/env node
/** Command line for the descriptor/depth exporter.
 *
 * Usage:
 *   descriptor-export grid  <image.ppm|pgm> [more images...] --out-dir DIR [--config cfg.json]
 *   descriptor-export depth <depth.pgm> [more...] --out-dir DIR [--config cfg.json] [--match-grid g.dgrd]
 *
 * Images are binary netpbm (P6 RGB or P5 gray, 8/16-bit); depth inputs are
 * 16-bit P5 PGM in millimeters. Each export writes the binary output plus a
 * .provenance.txt with the full model/binning configuration.
 */

import { readFileSync } from "fs";

import { DEFAULT_CONFIG, ExportConfig, exportDepth, exportGrid, parseConfig } from "./exporter";

interface Args {
  command: string;
  inputs: string[];
  outDir: string;
  configPath?: string;
  matchGrid?: string;
}

function parseArgs(argv: string[]): Args {
  const [command, ...rest] = argv;
  if (command !== "grid" && command !== "depth") {
    throw new Error("expected a command: grid or depth");
  }
  const args: Args = { command, inputs: [], outDir: "." };
  for (let i = 0; i < rest.length; i++) {
    const a = rest[i];
    if (a === "--out-dir") args.outDir = rest[++i];
    else if (a === "--config") args.configPath = rest[++i];
    else if (a === "--match-grid") args.matchGrid = rest[++i];
    else if (a.startsWith("--")) throw new Error(`unknown flag ${a}`);
    else args.inputs.push(a);
  }
  if (args.inputs.length === 0) throw new Error("no input files given");
  return args;
}

function loadConfig(path?: string): ExportConfig {
  if (!path) return DEFAULT_CONFIG;
  const raw = JSON.parse(readFileSync(path, "utf-8"));
  if (raw.bin_radii && !raw.binRadii) raw.binRadii = raw.bin_radii;
  if (raw.patch_size && !raw.patchSize) raw.patchSize = raw.patch_size;
  return parseConfig(raw);
}

export function main(argv: string[]): number {
  let args: Args;
  let cfg: ExportConfig;
  try {
    args = parseArgs(argv);
    cfg = loadConfig(args.configPath);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
  for (const input of args.inputs) {
    try {
      if (args.command === "grid") {
        const result = exportGrid(input, cfg, args.outDir);
        console.log(
          `${input} -> ${result.outputPath} (${result.rows}x${result.cols}, dim ${result.dim})`
        );
      } else {
        const result = exportDepth(input, cfg, args.outDir, args.matchGrid);
        console.log(`${input} -> ${result.outputPath} (${result.width}x${result.height})`);
      }
    } catch (err) {
      console.error(`error: ${input}: ${(err as Error).message}`);
      return 1;
    }
  }
  return 0;
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
