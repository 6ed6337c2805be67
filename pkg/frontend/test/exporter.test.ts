import { execFileSync } from "child_process";
import { mkdtempSync, readFileSync, writeFileSync } from "fs";
import { tmpdir } from "os";
import { join } from "path";
import { describe, expect, it } from "vitest";

import { main } from "../src/cli";
import { DEFAULT_CONFIG, exportDepth, exportGrid, parseConfig } from "../src/exporter";
import { writePgm16, writePpm } from "../src/image";
import { readDepth, readGrid } from "../src/grid";

function tmp(): string {
  return mkdtempSync(join(tmpdir(), "export-"));
}

function testPpm(dir: string, name = "img.ppm", width = 64, height = 64): string {
  const rgb = new Uint8Array(width * height * 3);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const i = (y * width + x) * 3;
      rgb[i] = (x * 4) & 255;
      rgb[i + 1] = (y * 4) & 255;
      rgb[i + 2] = ((x ^ y) * 7) & 255;
    }
  }
  const path = join(dir, name);
  writePpm(path, width, height, rgb);
  return path;
}

describe("exportGrid", () => {
  it("224x224 with patch 8 stride 4 yields a 55x55 grid", () => {
    const dir = tmp();
    const path = testPpm(dir, "big.ppm", 224, 224);
    const cfg = parseConfig({ dim: 16, heads: 2, depth: 1, layer: 0, binRadii: [1], stride: 4 });
    const res = exportGrid(path, cfg, join(dir, "out"));
    expect(res.rows).toBe(55);
    expect(res.cols).toBe(55);
    const grid = readGrid(res.outputPath);
    expect(grid.rows).toBe(1 + Math.floor((224 - cfg.patchSize) / cfg.stride));
  }, 30_000);

  it("is byte-identical across repeated exports", () => {
    const dir = tmp();
    const path = testPpm(dir);
    const a = exportGrid(path, DEFAULT_CONFIG, join(dir, "a"));
    const b = exportGrid(path, DEFAULT_CONFIG, join(dir, "b"));
    expect(readFileSync(a.outputPath).equals(readFileSync(b.outputPath))).toBe(true);
  });

  it("descriptors are unit-normalized within 1e-4", () => {
    const dir = tmp();
    const grid = readGrid(exportGrid(testPpm(dir), DEFAULT_CONFIG, join(dir, "out")).outputPath);
    for (let t = 0; t < grid.rows * grid.cols; t++) {
      let norm = 0;
      for (let d = 0; d < grid.dim; d++) norm += grid.descriptors[t * grid.dim + d] ** 2;
      expect(Math.abs(Math.sqrt(norm) - 1.0)).toBeLessThan(1e-4);
    }
  });

  it("saliency is min-max normalized into [0, 1]", () => {
    const dir = tmp();
    const grid = readGrid(exportGrid(testPpm(dir), DEFAULT_CONFIG, join(dir, "out")).outputPath);
    let lo = Infinity;
    let hi = -Infinity;
    for (const s of grid.saliency) {
      expect(s).toBeGreaterThanOrEqual(0);
      expect(s).toBeLessThanOrEqual(1);
      lo = Math.min(lo, s);
      hi = Math.max(hi, s);
    }
    expect(lo).toBe(0);
    expect(hi).toBe(1);
  });

  it("writes a provenance file recording the configuration", () => {
    const dir = tmp();
    const res = exportGrid(testPpm(dir), DEFAULT_CONFIG, join(dir, "out"));
    const text = readFileSync(res.provenancePath, "utf-8");
    expect(text).toContain("model: seeded:42");
    expect(text).toContain("key_layer: 1");
    expect(text).toContain("facet: keys");
    expect(text).toContain("bin_radii: [1, 2]");
  });

  it("log binning extends the descriptor dimension", () => {
    const dir = tmp();
    const narrow = parseConfig({ binRadii: [1] });
    const wide = parseConfig({ binRadii: [1, 2, 4] });
    const a = exportGrid(testPpm(dir), narrow, join(dir, "a"));
    const b = exportGrid(testPpm(dir), wide, join(dir, "b"));
    expect(a.dim).toBe(DEFAULT_CONFIG.dim * 2);
    expect(b.dim).toBe(DEFAULT_CONFIG.dim * 4);
  });

  it("rejects unavailable model identifiers", () => {
    const dir = tmp();
    expect(() =>
      exportGrid(testPpm(dir), parseConfig({ model: "dino-vits8" }), join(dir, "out"))
    ).toThrow(/not available/);
  });
});

describe("self-match through the alignment library", () => {
  it("mutual matching of a grid with itself is at least 99% identity", () => {
    const dir = tmp();
    const res = exportGrid(testPpm(dir), DEFAULT_CONFIG, join(dir, "out"));
    const script = [
      "import sys",
      "from viewalign.correspondence import load_grid, mutual_nearest_matches",
      "g = load_grid(sys.argv[1])",
      "pairs = mutual_nearest_matches(g, g)",
      "ident = sum(1 for p in pairs if p.cell_a == p.cell_b)",
      "print(f'{ident}/{g.rows * g.cols}')",
    ].join("\n");
    const out = execFileSync("python3", ["-c", script, res.outputPath], { encoding: "utf-8" });
    const [ident, total] = out.trim().split("/").map(Number);
    expect(total).toBe(res.rows * res.cols);
    expect(ident / total).toBeGreaterThanOrEqual(0.99);
  });
});

describe("exportDepth", () => {
  function depthPgm(dir: string, values: (i: number) => number, w = 32, h = 24): string {
    const data = new Uint16Array(w * h);
    for (let i = 0; i < data.length; i++) data[i] = values(i);
    const path = join(dir, "depth.pgm");
    writePgm16(path, w, h, data);
    return path;
  }

  it("converts 16-bit millimeters to float32 meters exactly", () => {
    const dir = tmp();
    const path = depthPgm(dir, (i) => (i === 0 ? 2000 : 1234));
    const res = exportDepth(path, DEFAULT_CONFIG, join(dir, "out"));
    const back = readDepth(res.outputPath);
    expect(back.meters[0]).toBe(2.0);
    expect(back.meters[1]).toBe(Math.fround(1.234));
  });

  it("keeps zero as the missing-value sentinel", () => {
    const dir = tmp();
    const path = depthPgm(dir, (i) => (i % 7 === 0 ? 0 : 1500));
    const res = exportDepth(path, DEFAULT_CONFIG, join(dir, "out"));
    const back = readDepth(res.outputPath);
    expect(back.meters[0]).toBe(0.0);
    expect(back.meters[7]).toBe(0.0);
    expect(back.meters[1]).toBe(1.5);
  });

  it("rejects depth whose dimensions disagree with a paired grid", () => {
    const dir = tmp();
    const gridRes = exportGrid(testPpm(dir), DEFAULT_CONFIG, join(dir, "out"));
    const path = depthPgm(dir, () => 1500, 16, 16);
    expect(() =>
      exportDepth(path, DEFAULT_CONFIG, join(dir, "out"), gridRes.outputPath)
    ).toThrow(/does not match grid/);
  });

  it("accepts depth matching the paired grid", () => {
    const dir = tmp();
    const gridRes = exportGrid(testPpm(dir), DEFAULT_CONFIG, join(dir, "out"));
    const path = depthPgm(dir, () => 1500, 64, 64);
    const res = exportDepth(path, DEFAULT_CONFIG, join(dir, "out"), gridRes.outputPath);
    expect(res.width).toBe(64);
  });
});

describe("cli", () => {
  it("exports through the command line", () => {
    const dir = tmp();
    const img = testPpm(dir);
    const code = main(["grid", img, "--out-dir", join(dir, "out")]);
    expect(code).toBe(0);
  });

  it("reads a config file with snake_case keys", () => {
    const dir = tmp();
    const img = testPpm(dir);
    const cfgPath = join(dir, "cfg.json");
    writeFileSync(
      cfgPath,
      JSON.stringify({ model: "seeded:7", bin_radii: [1], patch_size: 8, stride: 8 })
    );
    const code = main(["grid", img, "--out-dir", join(dir, "out"), "--config", cfgPath]);
    expect(code).toBe(0);
    const text = readFileSync(join(dir, "out", "img.provenance.txt"), "utf-8");
    expect(text).toContain("model: seeded:7");
  });

  it("fails with exit 1 on unreadable input", () => {
    const dir = tmp();
    expect(main(["grid", join(dir, "missing.ppm"), "--out-dir", dir])).toBe(1);
  });

  it("fails with exit 1 on an unknown command", () => {
    expect(main(["transmogrify"])).toBe(1);
  });
});
